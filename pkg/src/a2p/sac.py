"""Soft actor-critic with an adversary whose influence is set by epsilon.

The protagonist (actor) and adversary are tanh-Gaussian policies; the action
sent to the environment is ``(1 - eps) a + eps a_bar``. Twin critics are
trained on that executed action, the actor maximises the clipped double-Q
value of the mixed action plus an entropy bonus scaled by ``(1 - eps)``, and
the adversary minimises the same Q value.

Every loss exists twice: a plain numpy evaluation (``critic_loss``,
``actor_loss``...) and a differentiable graph used for the updates
(``critic_grads``, ``policy_grads``). The numpy versions serve as the
finite-difference oracle in the tests.

``algorithm="sac"`` selects an untouched vanilla SAC update (no adversary
anywhere) that consumes the random streams in the same order, so an A2P run
pinned at ``eps = 0`` can be compared against it value for value.
"""

from __future__ import annotations

import time
from collections import namedtuple
from dataclasses import dataclass, field, fields, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import env as envs
from . import nn
from ._validation import check_batch, check_scalar
from .adapt import MODES, EpsilonController, action_distance
from .exceptions import ConfigurationError, NonFiniteError

TRACE_COLUMNS = ("step", "episode", "return", "epsilon", "d", "d_avg", "b",
                 "critic_loss_1", "critic_loss_2", "actor_loss", "adversary_loss", "alpha")


# ---------------------------------------------------------------------------
# Replay buffer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    mixed_action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer; the oldest transition is overwritten first."""

    def __init__(self, capacity, obs_dim, action_dim):
        self.capacity = check_scalar(capacity, "capacity", low=1, integer=True)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.actions = np.zeros((self.capacity, action_dim))
        self.rewards = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.dones = np.zeros(self.capacity)
        self.size = 0
        self.insert_count = 0

    def __len__(self):
        return self.size

    @property
    def eviction_count(self):
        return self.insert_count - self.size

    def add(self, t):
        if np.any(np.abs(t.mixed_action) > 1.0):
            raise ConfigurationError("stored actions must lie in [-1, 1]")
        i = self.insert_count % self.capacity
        self.obs[i] = t.state
        self.actions[i] = t.mixed_action
        self.rewards[i] = t.reward
        self.next_obs[i] = t.next_state
        self.dones[i] = float(t.done)
        self.insert_count += 1
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size, rng):
        """Uniform sample with replacement; returns a :class:`Batch`."""
        if self.size == 0:
            raise ConfigurationError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx],
                     self.next_obs[idx], self.dones[idx])


Batch = namedtuple("Batch", "obs actions rewards next_obs dones")

# Standard-normal draws for one update, each of shape (batch, action_dim).
UpdateNoise = namedtuple("UpdateNoise", "next_actor next_adversary actor adversary")


def draw_update_noise(rng, batch_size, action_dim):
    return UpdateNoise(*rng.standard_normal((4, batch_size, action_dim)))


# ---------------------------------------------------------------------------
# Agent parameters
# ---------------------------------------------------------------------------


@dataclass
class AgentBundle:
    actor: nn.MlpParams
    adversary: nn.MlpParams
    critic1: nn.MlpParams
    critic2: nn.MlpParams
    target1: nn.MlpParams
    target2: nn.MlpParams
    log_alpha: float = 0.0
    target_entropy: float = -1.0
    tau: float = 0.005
    gamma: float = 0.99

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha))

    @property
    def action_dim(self):
        return self.actor.n_out // 2

    @classmethod
    def init(cls, obs_dim, action_dim, hidden=(64, 64), activation="tanh", random_state=None,
             log_alpha=0.0, target_entropy=None, tau=0.005, gamma=0.99):
        rng = np.random.default_rng(random_state)
        policy_sizes = [obs_dim, *hidden, 2 * action_dim]
        critic_sizes = [obs_dim + action_dim, *hidden, 1]
        actor = nn.MlpParams.init(policy_sizes, rng, activation)
        adversary = nn.MlpParams.init(policy_sizes, rng, activation)
        critic1 = nn.MlpParams.init(critic_sizes, rng, activation)
        critic2 = nn.MlpParams.init(critic_sizes, rng, activation)
        return cls(actor, adversary, critic1, critic2, critic1.copy(), critic2.copy(),
                   float(log_alpha),
                   float(-action_dim if target_entropy is None else target_entropy),
                   float(tau), float(gamma))

    def networks(self):
        return {"actor": self.actor, "adversary": self.adversary, "critic1": self.critic1,
                "critic2": self.critic2, "target1": self.target1, "target2": self.target2}


def q_value(critic, obs, action):
    return nn.forward(critic, np.concatenate([obs, action], axis=1))[:, 0]


def _q_graph(critic, arrays, obs, action):
    return nn.columns(nn.forward_graph(critic, arrays, _concat(obs, action)), 0, 1)


def _concat(obs, action):
    """Graph node for ``[obs, action]`` where only ``action`` may carry gradient."""
    action = nn.const(action)
    k = obs.shape[1]

    def vjp(g, need):
        return (g[:, k:],)

    return nn.Var(np.concatenate([obs, action.value], axis=1), (action,), vjp)


def _sample(policy, obs, noise):
    return nn.sample_action(nn.policy_head(policy, obs), noise)


# ---------------------------------------------------------------------------
# Losses: numpy evaluation
# ---------------------------------------------------------------------------


def target_value(bundle, epsilon, next_obs, noise_actor, noise_adversary):
    """Soft value of ``next_obs`` under the mixed policy, per row.

    ``min(Qbar1, Qbar2)(s', (1-eps) a' + eps a_bar') - (1-eps) alpha log pi(a'|s')``.
    """
    a, logp = _sample(bundle.actor, next_obs, noise_actor)
    a_bar, _ = _sample(bundle.adversary, next_obs, noise_adversary)
    mixed = (1.0 - epsilon) * a + epsilon * a_bar
    q = np.minimum(q_value(bundle.target1, next_obs, mixed), q_value(bundle.target2, next_obs, mixed))
    return q - (1.0 - epsilon) * bundle.alpha * logp


def bellman_targets(bundle, epsilon, batch, noise):
    v = target_value(bundle, epsilon, batch.next_obs, noise.next_actor, noise.next_adversary)
    return batch.rewards + bundle.gamma * (1.0 - batch.dones) * v


def critic_loss(bundle, epsilon, batch, noise):
    """``(loss_1, loss_2)``: half mean squared Bellman residual per critic."""
    y = bellman_targets(bundle, epsilon, batch, noise)
    return tuple(0.5 * float(np.mean((q_value(c, batch.obs, batch.actions) - y) ** 2))
                 for c in (bundle.critic1, bundle.critic2))


def _mixed_policy_q(bundle, epsilon, obs, noise):
    a, logp = _sample(bundle.actor, obs, noise.actor)
    a_bar, _ = _sample(bundle.adversary, obs, noise.adversary)
    mixed = (1.0 - epsilon) * a + epsilon * a_bar
    q = np.minimum(q_value(bundle.critic1, obs, mixed), q_value(bundle.critic2, obs, mixed))
    return q, logp


def actor_loss(bundle, epsilon, batch, noise):
    q, logp = _mixed_policy_q(bundle, epsilon, batch.obs, noise)
    return float(np.mean((1.0 - epsilon) * bundle.alpha * logp - q))


def adversary_loss(bundle, epsilon, batch, noise):
    q, _ = _mixed_policy_q(bundle, epsilon, batch.obs, noise)
    return float(np.mean(q))


def temperature_loss(bundle, batch, noise):
    _, logp = _sample(bundle.actor, batch.obs, noise.actor)
    alpha = bundle.alpha
    return float(np.mean(-alpha * logp - alpha * bundle.target_entropy))


# ---------------------------------------------------------------------------
# Losses: gradients
# ---------------------------------------------------------------------------


def critic_grads(bundle, epsilon, batch, noise):
    """Critic losses and gradients; the Bellman target carries no gradient."""
    y = bellman_targets(bundle, epsilon, batch, noise)
    out = []
    for critic in (bundle.critic1, bundle.critic2):
        leaves = nn.param_arrays(critic)
        q = _q_graph(critic, leaves, batch.obs, batch.actions)
        residual = q - y[:, None]
        loss = 0.5 * nn.mean(nn.square(residual))
        out.append((float(loss.value), nn.grad(loss, leaves)))
    return out


def policy_grads(bundle, epsilon, batch, noise):
    """Actor and adversary losses with their gradients from one shared graph.

    Returns ``(actor_loss, actor_grads, adversary_loss, adversary_grads, log_prob)``.
    The actor gradient treats the adversary sample as constant and vice versa.
    """
    actor_leaves = nn.param_arrays(bundle.actor)
    adv_leaves = nn.param_arrays(bundle.adversary)
    a, logp = nn.sample_action_graph(bundle.actor, actor_leaves, batch.obs, noise.actor)
    a_bar, _ = nn.sample_action_graph(bundle.adversary, adv_leaves, batch.obs, noise.adversary)
    mixed = (1.0 - epsilon) * a + epsilon * a_bar
    q = nn.minimum(_q_graph(bundle.critic1, nn.const_arrays(bundle.critic1), batch.obs, mixed),
                   _q_graph(bundle.critic2, nn.const_arrays(bundle.critic2), batch.obs, mixed))
    q_mean = nn.mean(q)
    entropy_coef = (1.0 - epsilon) * bundle.alpha
    actor_obj = nn.mean(entropy_coef * logp) - q_mean
    return (float(actor_obj.value), nn.grad(actor_obj, actor_leaves),
            float(q_mean.value), nn.grad(q_mean, adv_leaves), logp.value.copy())


def temperature_grad(bundle, log_prob):
    """Loss and d(loss)/d(log alpha) for the sampled log-probabilities."""
    alpha = bundle.alpha
    loss = float(np.mean(-alpha * log_prob - alpha * bundle.target_entropy))
    return loss, -alpha * float(np.mean(log_prob + bundle.target_entropy))


# Vanilla SAC: the same structure with no adversary anywhere.


def vanilla_critic_grads(bundle, batch, noise):
    a, logp = _sample(bundle.actor, batch.next_obs, noise.next_actor)
    q_next = np.minimum(q_value(bundle.target1, batch.next_obs, a),
                        q_value(bundle.target2, batch.next_obs, a))
    v = q_next - bundle.alpha * logp
    y = batch.rewards + bundle.gamma * (1.0 - batch.dones) * v
    out = []
    for critic in (bundle.critic1, bundle.critic2):
        leaves = nn.param_arrays(critic)
        q = _q_graph(critic, leaves, batch.obs, batch.actions)
        loss = 0.5 * nn.mean(nn.square(q - y[:, None]))
        out.append((float(loss.value), nn.grad(loss, leaves)))
    return out


def vanilla_actor_grads(bundle, batch, noise):
    leaves = nn.param_arrays(bundle.actor)
    a, logp = nn.sample_action_graph(bundle.actor, leaves, batch.obs, noise.actor)
    q = nn.minimum(_q_graph(bundle.critic1, nn.const_arrays(bundle.critic1), batch.obs, a),
                   _q_graph(bundle.critic2, nn.const_arrays(bundle.critic2), batch.obs, a))
    obj = nn.mean(bundle.alpha * logp) - nn.mean(q)
    return float(obj.value), nn.grad(obj, leaves), logp.value.copy()


def soft_update(bundle):
    """Blend online critics into the targets with weight ``tau``."""
    tau = bundle.tau

    def blend(online, target):
        return target.with_arrays([tau * o + (1.0 - tau) * t
                                   for o, t in zip(online.arrays(), target.arrays())])

    return replace(bundle, target1=blend(bundle.critic1, bundle.target1),
                   target2=blend(bundle.critic2, bundle.target2))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    env_id: str = "pendulum"
    total_steps: int = 30_000
    seed: int = 0
    algorithm: str = "a2p"
    mode: str = "adaptive"
    epsilon0: float = 0.1
    beta: float = 0.5
    c: float = 0.01
    sign_flip: bool = False
    centered: bool = False
    random_low: float = 0.0
    random_high: float = 0.2
    hidden: tuple = (64, 64)
    activation: str = "tanh"
    learning_rate: float = 3e-4
    batch_size: int = 256
    buffer_capacity: int = 100_000
    warmup_steps: int = 1000
    gamma: float = 0.99
    tau: float = 0.005
    init_log_alpha: float = 0.0
    target_entropy: float | None = None
    mass_rel: float = 1.0
    friction_rel: float = 1.0
    keep_last: int = 10

    def __post_init__(self):
        envs.task(self.env_id)
        check_scalar(self.total_steps, "total_steps", low=0, integer=True)
        check_scalar(self.seed, "seed", low=0, integer=True)
        if self.algorithm not in ("a2p", "sac"):
            raise ConfigurationError(f"algorithm must be 'a2p' or 'sac', got {self.algorithm!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        check_scalar(self.epsilon0, "epsilon0", low=0.0, high=1.0)
        check_scalar(self.beta, "beta", low=0.0, high=1.0)
        check_scalar(self.c, "c", low=0.0)
        check_scalar(self.batch_size, "batch_size", low=1, integer=True)
        check_scalar(self.buffer_capacity, "buffer_capacity", low=1, integer=True)
        check_scalar(self.warmup_steps, "warmup_steps", low=0, integer=True)
        check_scalar(self.gamma, "gamma", low=0.0, high=1.0, high_inclusive=False)
        check_scalar(self.tau, "tau", low=0.0, high=1.0)
        check_scalar(self.learning_rate, "learning_rate", low=0.0, low_inclusive=False)
        check_scalar(self.keep_last, "keep_last", low=0, integer=True)
        self.hidden = tuple(int(h) for h in self.hidden)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class TrainResult:
    bundle: AgentBundle
    adapt_state: object
    trace: list = field(default_factory=list)
    episode_returns: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)   # (episode index, AgentBundle)
    elapsed: float = 0.0


class _Learner:
    """Optimiser state and the per-step update for one agent."""

    def __init__(self, bundle, config):
        lr = config.learning_rate
        self.opts = {name: nn.OptState.zeros_like(net.arrays(), lr)
                     for name, net in bundle.networks().items() if not name.startswith("target")}
        self.alpha_opt = nn.OptState.zeros_like([np.zeros(1)], lr)
        self.vanilla = config.algorithm == "sac"

    def _apply(self, net, name, grads):
        arrays, self.opts[name] = nn.optimizer_step(net.arrays(), grads, self.opts[name])
        return net.with_arrays(arrays)

    def update(self, bundle, epsilon, batch, noise):
        if self.vanilla:
            (l1, g1), (l2, g2) = vanilla_critic_grads(bundle, batch, noise)
        else:
            (l1, g1), (l2, g2) = critic_grads(bundle, epsilon, batch, noise)
        bundle = replace(bundle, critic1=self._apply(bundle.critic1, "critic1", g1),
                         critic2=self._apply(bundle.critic2, "critic2", g2))
        if self.vanilla:
            la, ga, logp = vanilla_actor_grads(bundle, batch, noise)
            lb = float("nan")
            bundle = replace(bundle, actor=self._apply(bundle.actor, "actor", ga))
        else:
            la, ga, lb, gb, logp = policy_grads(bundle, epsilon, batch, noise)
            bundle = replace(bundle, actor=self._apply(bundle.actor, "actor", ga),
                             adversary=self._apply(bundle.adversary, "adversary", gb))
        _, g_alpha = temperature_grad(bundle, logp)
        (log_alpha,), self.alpha_opt = nn.optimizer_step(
            [np.array([bundle.log_alpha])], [np.array([g_alpha])], self.alpha_opt)
        bundle = soft_update(replace(bundle, log_alpha=float(log_alpha[0])))
        losses = (l1, l2, la, lb)
        if not all(np.isfinite(v) for v in losses[:3]) or not np.isfinite(bundle.log_alpha):
            raise NonFiniteError(f"non-finite loss {losses}, log_alpha={bundle.log_alpha}")
        return bundle, losses


def collect_step(bundle, controller, env_state, env_params, rng, *, random_action=False,
                 vanilla=False):
    """One environment interaction.

    The controller sees the distance between the two policies' mean actions
    before the reparameterised samples are mixed with the updated epsilon.
    Returns ``(transition, next_env_state, reward, done)``.
    """
    obs = envs.observe(env_state, env_params)
    k = bundle.action_dim
    noise = rng.standard_normal((2, k))
    uniform = rng.uniform(-1.0, 1.0, size=k) if random_action else None
    head = nn.policy_head(bundle.actor, obs)
    adv_head = nn.policy_head(bundle.adversary, obs)
    controller.observe(action_distance(nn.mean_action(head), nn.mean_action(adv_head)))
    if random_action:
        executed = uniform
    else:
        a, _ = nn.sample_action(head, noise[0])
        if vanilla:
            executed = a
        else:
            a_bar, _ = nn.sample_action(adv_head, noise[1])
            eps = controller.epsilon
            executed = (1.0 - eps) * a + eps * a_bar
    executed = np.clip(executed, -1.0, 1.0)
    result = envs.step(env_state, env_params, executed)
    next_obs = envs.observe(result.next_state, env_params)
    # the horizon is a time limit, not a terminal state, so bootstrapping continues
    transition = Transition(obs, executed, result.reward, next_obs, False)
    return transition, result.next_state, result.reward, result.done


def train(config, callback=None):
    """Run the interleaved collect/update loop.

    ``callback(step, bundle, losses)``, when given, is called after each
    gradient update.
    """
    if not isinstance(config, TrainConfig):
        config = TrainConfig(**config)
    t0 = time.perf_counter()
    spec = envs.task(config.env_id)
    streams = np.random.SeedSequence(config.seed).spawn(5)
    init_rng, env_rng, act_rng, batch_rng, noise_rng = (np.random.default_rng(s) for s in streams)
    bundle = AgentBundle.init(spec.obs_dim, spec.action_dim, config.hidden, config.activation,
                              init_rng, config.init_log_alpha, config.target_entropy,
                              config.tau, config.gamma)
    mode = "off" if config.algorithm == "sac" else config.mode
    controller = EpsilonController(mode, config.epsilon0, config.beta, config.c,
                                   config.sign_flip, config.centered,
                                   (config.random_low, config.random_high))
    result = TrainResult(bundle, controller.state)
    if config.total_steps == 0:
        return result
    params = envs.EnvParams(config.env_id, config.mass_rel, config.friction_rel)
    buffer = ReplayBuffer(min(config.buffer_capacity, config.total_steps), spec.obs_dim, spec.action_dim)
    learner = _Learner(bundle, config)
    n_episodes = -(-config.total_steps // params.horizon)
    episode, ep_return = 0, 0.0
    env_state = envs.reset(params, int(env_rng.integers(2**31)))
    controller.begin_episode(act_rng)
    losses = (float("nan"),) * 4
    for step in range(config.total_steps):
        transition, env_state, reward, done = collect_step(
            bundle, controller, env_state, params, act_rng,
            random_action=step < config.warmup_steps, vanilla=config.algorithm == "sac")
        buffer.add(transition)
        ep_return += reward
        if step >= config.warmup_steps:
            batch = buffer.sample(config.batch_size, batch_rng)
            noise = draw_update_noise(noise_rng, config.batch_size, spec.action_dim)
            bundle, losses = learner.update(bundle, controller.epsilon, batch, noise)
            if callback is not None:
                callback(step, bundle, losses)
        finished = done or step == config.total_steps - 1
        result.trace.append((step, episode, ep_return if finished else None,
                             controller.epsilon, controller.last_d, controller.state.d_avg,
                             controller.last_b, *losses, bundle.alpha))
        if finished:
            result.episode_returns.append(ep_return)
            if episode >= n_episodes - config.keep_last:
                result.snapshots.append((episode, bundle))
            episode += 1
            ep_return = 0.0
            env_state = envs.reset(params, int(env_rng.integers(2**31)))
            controller.begin_episode(act_rng)
    result.bundle = bundle
    result.adapt_state = controller.state
    result.elapsed = time.perf_counter() - t0
    return result


def deterministic_policy(actor):
    """Deployment policy: ``tanh`` of the Gaussian mean, no adversary."""

    def act(obs):
        return nn.mean_action(nn.policy_head(actor, obs))

    return act


def evaluate(actor, variants, seeds, env_id=None):
    """Returns of the deterministic policy, one episode per (variant, seed)."""
    env_id = env_id or variants[0].env_id
    return envs.rollout_returns(env_id, deterministic_policy(actor), variants, seeds)


class A2PSAC(BaseEstimator):
    """Estimator wrapper around :func:`train`.

    Hyperparameters are the fields of :class:`TrainConfig`. ``fit`` trains on
    the configured environment (no data arguments are needed), ``predict``
    maps observations to deterministic actions.

    Attributes
    ----------
    bundle_ : AgentBundle
        Final networks.
    adapt_state_ : AdaptState
        Controller state at the end of training.
    trace_ : list of tuples
        One row per environment step, columns ``TRACE_COLUMNS``.
    episode_returns_ : ndarray
        Training-episode returns (with the adversary mixed in).
    snapshots_ : list of (int, AgentBundle)
        Networks at the end of each of the last ``keep_last`` episodes.
    """

    def __init__(self, env_id="pendulum", total_steps=30_000, seed=0, algorithm="a2p",
                 mode="adaptive", epsilon0=0.1, beta=0.5, c=0.01, sign_flip=False,
                 centered=False, random_low=0.0, random_high=0.2, hidden=(64, 64),
                 activation="tanh", learning_rate=3e-4, batch_size=256,
                 buffer_capacity=100_000, warmup_steps=1000, gamma=0.99, tau=0.005,
                 init_log_alpha=0.0, target_entropy=None, mass_rel=1.0, friction_rel=1.0,
                 keep_last=10):
        self.env_id = env_id
        self.total_steps = total_steps
        self.seed = seed
        self.algorithm = algorithm
        self.mode = mode
        self.epsilon0 = epsilon0
        self.beta = beta
        self.c = c
        self.sign_flip = sign_flip
        self.centered = centered
        self.random_low = random_low
        self.random_high = random_high
        self.hidden = hidden
        self.activation = activation
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.buffer_capacity = buffer_capacity
        self.warmup_steps = warmup_steps
        self.gamma = gamma
        self.tau = tau
        self.init_log_alpha = init_log_alpha
        self.target_entropy = target_entropy
        self.mass_rel = mass_rel
        self.friction_rel = friction_rel
        self.keep_last = keep_last

    def to_config(self):
        return TrainConfig(**self.get_params())

    def fit(self, X=None, y=None, callback=None):
        result = train(self.to_config(), callback=callback)
        self.bundle_ = result.bundle
        self.adapt_state_ = result.adapt_state
        self.trace_ = result.trace
        self.episode_returns_ = np.asarray(result.episode_returns)
        self.snapshots_ = result.snapshots
        self.fit_time_ = result.elapsed
        return self

    def predict(self, X):
        check_is_fitted(self, "bundle_")
        spec = envs.task(self.env_id)
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        out = deterministic_policy(self.bundle_.actor)(check_batch(X, "X", spec.obs_dim))
        return out[0] if single else out

    def score(self, X=None, y=None, n_episodes=10):
        """Mean deterministic return on the training variant of the task."""
        check_is_fitted(self, "bundle_")
        base = envs.EnvParams(self.env_id, self.mass_rel, self.friction_rel)
        seeds = [10_000 + i for i in range(n_episodes)]
        return float(np.mean(evaluate(self.bundle_.actor, [base] * n_episodes, seeds)))
