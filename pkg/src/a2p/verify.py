"""Brute-force checks of the adversarial Bellman operator on finite games.

A :class:`TabularGame` has finitely many states, a grid of scalar actions
shared by protagonist and adversary, and rewards/transitions indexed by the
*mixed* action ``(1 - eps) a + eps a_bar`` snapped to the nearest point of a
``mix_resolution``-point grid on ``[-1, 1]``. Value tensors are indexed
``Q[s, a, a_bar]`` by grid position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_random_state, check_scalar
from .exceptions import ConfigurationError, PropertyViolation


@dataclass
class TabularGame:
    action_grid: np.ndarray
    transition: np.ndarray   # (n_states, mix_resolution, n_states)
    reward: np.ndarray       # (n_states, mix_resolution)
    gamma: float = 0.9

    def __post_init__(self):
        self.action_grid = np.asarray(self.action_grid, dtype=np.float64)
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        check_scalar(self.gamma, "gamma", low=0.0, high=1.0, high_inclusive=False)
        if self.action_grid.ndim != 1 or np.any(np.abs(self.action_grid) > 1.0):
            raise ConfigurationError("action_grid must be a 1-D array inside [-1, 1]")
        s, r = self.reward.shape
        if self.transition.shape != (s, r, s):
            raise ConfigurationError(
                f"transition shape {self.transition.shape} does not match reward shape {(s, r)}"
            )
        if np.any(self.transition < 0) or np.max(np.abs(self.transition.sum(axis=2) - 1.0)) > 1e-12:
            raise ConfigurationError("transition rows must be non-negative and sum to 1")

    @property
    def n_states(self):
        return self.reward.shape[0]

    @property
    def n_actions(self):
        return self.action_grid.size

    @property
    def mix_resolution(self):
        return self.reward.shape[1]

    @property
    def mix_grid(self):
        return np.linspace(-1.0, 1.0, self.mix_resolution)

    @property
    def r_max(self):
        return float(np.max(np.abs(self.reward)))


@dataclass
class TabularPolicyPair:
    protagonist: np.ndarray   # (n_states, n_actions), rows are distributions
    adversary: np.ndarray     # (n_states,), action-grid indices

    def __post_init__(self):
        self.protagonist = np.asarray(self.protagonist, dtype=np.float64)
        self.adversary = np.asarray(self.adversary, dtype=np.int64)
        if np.any(self.protagonist < 0) or np.max(np.abs(self.protagonist.sum(axis=1) - 1.0)) > 1e-12:
            raise ConfigurationError("protagonist rows must be probability distributions")
        if self.adversary.shape != (self.protagonist.shape[0],):
            raise ConfigurationError("need one adversary action per state")
        if np.any(self.adversary < 0) or np.any(self.adversary >= self.protagonist.shape[1]):
            raise ConfigurationError("adversary index out of range")


def random_game(n_states=4, n_actions=5, gamma=0.9, random_state=None, mix_resolution=11,
                r_max=1.0):
    """Game with Dirichlet(1) transitions and uniform rewards in ``[-r_max, r_max]``."""
    rng = check_random_state(random_state)
    grid = np.linspace(-1.0, 1.0, n_actions)
    p = rng.gamma(1.0, size=(n_states, mix_resolution, n_states))
    p /= p.sum(axis=2, keepdims=True)
    r = rng.uniform(-r_max, r_max, size=(n_states, mix_resolution))
    return TabularGame(grid, p, r, gamma)


def random_policies(game, random_state=None, deterministic=False):
    rng = check_random_state(random_state)
    if deterministic:
        prot = np.eye(game.n_actions)[rng.integers(game.n_actions, size=game.n_states)]
    else:
        prot = rng.gamma(1.0, size=(game.n_states, game.n_actions))
        prot /= prot.sum(axis=1, keepdims=True)
    return TabularPolicyPair(prot, rng.integers(game.n_actions, size=game.n_states))


def mix_indices(game, epsilon):
    """``idx[a, a_bar]``: mix-grid index nearest to ``(1-eps) a + eps a_bar``.

    Ties go to the lower index.
    """
    check_scalar(epsilon, "epsilon", low=0.0, high=1.0)
    g = game.action_grid
    mixed = (1.0 - epsilon) * g[:, None] + epsilon * g[None, :]
    return np.argmin(np.abs(mixed[..., None] - game.mix_grid), axis=-1)


def apply_operator(game, policies, epsilon, Q, *, adversary="min", discount=None):
    """One application of the adversarial Bellman operator.

    ``Q'(s, a, a_bar) = r(s, m) + gamma * sum_s1 P(s1 | s, m) V(s1)`` with
    ``m`` the snapped mix of ``a`` and ``a_bar`` and
    ``V(s1) = min_{a_bar1} sum_{a1} pi(a1 | s1) Q(s1, a1, a_bar1)``.
    ``adversary="policy"`` evaluates the fixed adversary map instead of the
    minimum. ``discount`` overrides ``game.gamma`` (used for negative controls).
    """
    Q = np.asarray(Q, dtype=np.float64)
    expected = (game.n_states, game.n_actions, game.n_actions)
    if Q.shape != expected:
        raise ConfigurationError(f"Q has shape {Q.shape}, expected {expected}")
    gamma = game.gamma if discount is None else discount
    idx = mix_indices(game, epsilon)
    inner = np.einsum("sa,sab->sb", policies.protagonist, Q)
    if adversary == "min":
        v = inner.min(axis=1)
    elif adversary == "policy":
        v = inner[np.arange(game.n_states), policies.adversary]
    else:
        raise ConfigurationError(f"adversary must be 'min' or 'policy', got {adversary!r}")
    return game.reward[:, idx] + gamma * (game.transition[:, idx, :] @ v)


def contraction_ratios(game, policies, epsilon, trials, random_state=None, **op_kwargs):
    """``||BQ1 - BQ2||_inf / ||Q1 - Q2||_inf`` for random pairs; 0/0 pairs are skipped."""
    check_scalar(trials, "trials", low=1, integer=True)
    rng = check_random_state(random_state)
    shape = (game.n_states, game.n_actions, game.n_actions)
    ratios = []
    for _ in range(trials):
        scale = 10.0 ** rng.uniform(-2, 2)
        q1 = rng.normal(scale=scale, size=shape)
        q2 = rng.normal(scale=scale, size=shape)
        den = np.max(np.abs(q1 - q2))
        if den == 0.0:
            continue
        num = np.max(np.abs(apply_operator(game, policies, epsilon, q1, **op_kwargs)
                            - apply_operator(game, policies, epsilon, q2, **op_kwargs)))
        ratios.append(num / den)
    return ratios


def check_contraction(game, policies, epsilon, trials, random_state=None, **op_kwargs):
    """Largest observed Lipschitz ratio of the operator (``0.0`` if all pairs were degenerate)."""
    ratios = contraction_ratios(game, policies, epsilon, trials, random_state, **op_kwargs)
    return max(ratios, default=0.0)


def iteration_cap(gamma, initial_gap, tol):
    """Iterations that suffice for the step size to fall below ``tol``.

    ``log(gap / ((1 - gamma) tol)) / log(1 / gamma) + 1``, where ``gap`` is
    ``||BQ0 - Q0||`` (at most ``r_max`` when starting from zero).
    """
    if initial_gap <= 0.0:
        return 1
    if gamma == 0.0:
        return 2
    return int(math.ceil(math.log(max(initial_gap / ((1.0 - gamma) * tol), 1.0))
                         / math.log(1.0 / gamma))) + 1


def fixed_point(game, policies, epsilon, tol=1e-10, Q0=None, *, return_iterations=False,
                **op_kwargs):
    """Iterate the operator from ``Q0`` (zeros by default) until the step is below ``tol``."""
    check_scalar(tol, "tol", low=0.0, low_inclusive=False)
    shape = (game.n_states, game.n_actions, game.n_actions)
    Q = np.zeros(shape) if Q0 is None else np.array(Q0, dtype=np.float64)
    nxt = apply_operator(game, policies, epsilon, Q, **op_kwargs)
    gamma = op_kwargs.get("discount", game.gamma)
    cap = iteration_cap(gamma, float(np.max(np.abs(nxt - Q))), tol)
    n = 1
    while np.max(np.abs(nxt - Q)) >= tol:
        if n >= cap:
            raise PropertyViolation(
                f"value iteration did not converge within {cap} iterations; operator is not a contraction"
            )
        Q, nxt = nxt, apply_operator(game, policies, epsilon, nxt, **op_kwargs)
        n += 1
    return (nxt, n) if return_iterations else nxt


def greedy_protagonist(Q, current=None, atol=1e-12):
    """Deterministic ``argmax_a min_a_bar Q[s, a, a_bar]`` per state.

    If the current action of a deterministic ``current`` policy already
    attains the maximum (within ``atol``) it is kept, so greedy policies are
    fixed points.
    """
    worst = Q.min(axis=2)
    best = worst.argmax(axis=1)
    if current is not None:
        cur = current.argmax(axis=1)
        states = np.arange(Q.shape[0])
        keep = worst[states, cur] >= worst[states, best] - atol
        best = np.where(keep, cur, best)
    return np.eye(Q.shape[1])[best]


@dataclass
class ImprovementResult:
    protagonist: np.ndarray
    q_old: np.ndarray
    q_new: np.ndarray
    improved: bool
    worst_drop: float


def improve_and_check(game, old_policies, epsilon, tol=1e-12, slack=1e-9):
    """Greedy improvement step and the pointwise check ``Q_new >= Q_old - slack``."""
    q_old = fixed_point(game, old_policies, epsilon, tol)
    prot = greedy_protagonist(q_old, old_policies.protagonist)
    new = TabularPolicyPair(prot, old_policies.adversary)
    q_new = fixed_point(game, new, epsilon, tol)
    drop = float(np.max(q_old - q_new))
    return ImprovementResult(prot, q_old, q_new, drop <= slack, drop)


def policy_iteration(game, epsilon, random_state=None, max_rounds=100, tol=1e-12):
    """Repeat greedy improvement until the protagonist stops changing."""
    policies = random_policies(game, random_state, deterministic=True)
    for _ in range(max_rounds):
        res = improve_and_check(game, policies, epsilon, tol)
        if np.array_equal(res.protagonist, policies.protagonist):
            return policies, res.q_new
        policies = TabularPolicyPair(res.protagonist, policies.adversary)
    raise PropertyViolation(f"policy iteration did not stabilise in {max_rounds} rounds")


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------

DEFAULT_EPSILONS = (0.0, 0.1, 0.5, 1.0)
IMPROVEMENT_EPSILONS = (0.0, 0.3, 0.7)


@dataclass
class Certificate:
    gamma: float
    contraction_rows: list = field(default_factory=list)   # (game_seed, epsilon, max ratio)
    improvement_rows: list = field(default_factory=list)   # (game_seed, epsilon, verdict, worst drop)

    @property
    def max_ratio(self):
        return max((r[2] for r in self.contraction_rows), default=0.0)

    @property
    def contraction_ok(self):
        return self.max_ratio <= self.gamma + 1e-10

    @property
    def improvement_ok(self):
        return all(r[2] for r in self.improvement_rows)

    @property
    def ok(self):
        return self.contraction_ok and self.improvement_ok

    def offending_seeds(self):
        bad = {r[0] for r in self.contraction_rows if r[2] > self.gamma + 1e-10}
        bad |= {r[0] for r in self.improvement_rows if not r[2]}
        return sorted(bad)

    def summary_lines(self):
        rel = "<=" if self.contraction_ok else ">"
        n_games = len({r[0] for r in self.contraction_rows})
        n_imp = len({r[0] for r in self.improvement_rows})
        n_fail = sum(not r[2] for r in self.improvement_rows)
        return [
            f"contraction: max ratio {self.max_ratio:.12g} {rel} gamma={self.gamma:g} "
            f"over {n_games} games, {len(self.contraction_rows)} (game, epsilon) cells",
            f"improvement: {len(self.improvement_rows) - n_fail}/{len(self.improvement_rows)} "
            f"verdicts true over {n_imp} games",
        ]


def certify(n_games=1000, n_improvement_games=100, trials=5, gamma=0.9, n_states=4,
            n_actions=5, mix_resolution=11, epsilons=DEFAULT_EPSILONS,
            improvement_epsilons=IMPROVEMENT_EPSILONS, base_seed=0, discount=None):
    """Run the contraction and improvement suites over seeded random games.

    Game ``k`` is generated from seed ``base_seed + k`` so any row of the
    certificate can be replayed with :func:`replay_contraction`.
    """
    cert = Certificate(gamma)
    for k in range(n_games):
        seed = base_seed + k
        for eps in epsilons:
            cert.contraction_rows.append(
                (seed, eps, replay_contraction(seed, eps, trials, gamma, n_states, n_actions,
                                               mix_resolution, discount)))
    for k in range(n_improvement_games):
        seed = base_seed + k
        game = random_game(n_states, n_actions, gamma, seed, mix_resolution)
        pol = random_policies(game, np.random.default_rng([seed, 1]), deterministic=True)
        for eps in improvement_epsilons:
            res = improve_and_check(game, pol, eps)
            cert.improvement_rows.append((seed, eps, res.improved, res.worst_drop))
    return cert


def replay_contraction(seed, epsilon, trials=5, gamma=0.9, n_states=4, n_actions=5,
                       mix_resolution=11, discount=None):
    """Max contraction ratio for one certificate cell, recomputed from its seed.

    Includes a constant-shift pair, for which the ratio is exactly ``gamma``.
    """
    game = random_game(n_states, n_actions, gamma, seed, mix_resolution)
    rng = np.random.default_rng([seed, 2, int(round(epsilon * 1e6))])
    pol = random_policies(game, rng)
    kw = {} if discount is None else {"discount": discount}
    ratio = check_contraction(game, pol, epsilon, trials, rng, **kw)
    q = rng.normal(size=(n_states, n_actions, n_actions))
    shift = np.max(np.abs(apply_operator(game, pol, epsilon, q + 1.0, **kw)
                          - apply_operator(game, pol, epsilon, q, **kw)))
    return max(ratio, float(shift))
