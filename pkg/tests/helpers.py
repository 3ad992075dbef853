"""Shared oracles for the test suite."""

import numpy as np

from a2p import nn, sac

FD_STEP = 1e-5
# Per-component relative error |a - b| / max(|a|, |b|, REL_FLOOR); the floor
# keeps near-zero components from turning round-off into huge ratios.
REL_FLOOR = 1e-4

# one "PASS/FAIL Cn ..." line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def central_difference(f, arrays, step=FD_STEP):
    """Central finite differences of the scalar ``f()`` w.r.t. every entry of ``arrays`` (in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f()
            flat[i] = orig - step
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        out.append(g)
    return out


def max_rel_error(analytic, numeric, floor=REL_FLOOR):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a, n = np.asarray(a, float), np.asarray(n, float)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


OBS, ACT = 3, 1


def make_batch(rng, n=6, obs_dim=OBS, act_dim=ACT, dones=None):
    return sac.Batch(rng.normal(size=(n, obs_dim)), rng.uniform(-1, 1, (n, act_dim)),
                     rng.normal(size=n), rng.normal(size=(n, obs_dim)),
                     np.zeros(n) if dones is None else np.asarray(dones, float))


def sac_fixture(seed, n=6, gap=1e-3):
    """Small bundle and batch whose twin critics never tie on the policy actions."""
    rng = np.random.default_rng(seed)
    while True:
        bundle = sac.AgentBundle.init(OBS, ACT, hidden=(8, 8), random_state=rng,
                                      log_alpha=rng.uniform(-2, 0.5))
        batch = make_batch(rng, n)
        noise = sac.draw_update_noise(rng, n, ACT)
        eps = float(rng.uniform(0, 1))
        ok = True
        for obs, na, nb in ((batch.obs, noise.actor, noise.adversary),
                            (batch.next_obs, noise.next_actor, noise.next_adversary)):
            a, _ = nn.sample_action(nn.policy_head(bundle.actor, obs), na)
            b, _ = nn.sample_action(nn.policy_head(bundle.adversary, obs), nb)
            m = (1 - eps) * a + eps * b
            for c1, c2 in ((bundle.critic1, bundle.critic2), (bundle.target1, bundle.target2)):
                if np.min(np.abs(sac.q_value(c1, obs, m) - sac.q_value(c2, obs, m))) < gap:
                    ok = False
        if ok:
            return bundle, batch, noise, eps


def sac_gradient_errors(seed):
    """Max relative FD error of the critic, actor, adversary and temperature gradients."""
    from dataclasses import replace

    bundle, batch, noise, eps = sac_fixture(seed, n=4)
    (_, g1), _ = sac.critic_grads(bundle, eps, batch, noise)
    _, ga, _, gb, logp = sac.policy_grads(bundle, eps, batch, noise)
    _, g_alpha = sac.temperature_grad(bundle, logp)
    h = 1e-6
    num_t = (sac.temperature_loss(replace(bundle, log_alpha=bundle.log_alpha + h), batch, noise)
             - sac.temperature_loss(replace(bundle, log_alpha=bundle.log_alpha - h), batch, noise)) / (2 * h)
    return {
        "critic": max_rel_error(g1, central_difference(
            lambda: sac.critic_loss(bundle, eps, batch, noise)[0], bundle.critic1.arrays())),
        "actor": max_rel_error(ga, central_difference(
            lambda: sac.actor_loss(bundle, eps, batch, noise), bundle.actor.arrays())),
        "adversary": max_rel_error(gb, central_difference(
            lambda: sac.adversary_loss(bundle, eps, batch, noise), bundle.adversary.arrays())),
        "temperature": max_rel_error([g_alpha], [num_t]),
    }
