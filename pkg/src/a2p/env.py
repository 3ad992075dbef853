"""Analytic continuous-control tasks with scalable mass and friction.

Two tasks are provided:

``pendulum``
    Torque-limited swing-up. State ``[theta, theta_dot]`` with ``theta = 0``
    upright. ``theta_ddot = 3g/(2l) sin(theta) + 3u/(m l^2) - (k_f/m) theta_dot``
    with ``g = 10``, ``l = 1``, ``m = mass_rel``, ``k_f = 0.1 friction_rel`` and
    torque ``u = 2 action``. Velocity is clamped to ``[-8, 8]``. The reward
    for a step is ``-(theta^2 + 0.1 theta_dot^2 + 0.001 u^2)``, evaluated on
    the state the action is applied in. Episodes last 200 steps.

``point_mass``
    2-D point mass driven toward ``(0.8, 0.8)`` from ``[0, 0.2]^2``.
    ``p_dot = v``, ``v_dot = (F - c v) / m`` with ``F = action``,
    ``m = mass_rel``, ``c = 0.5 friction_rel``. Velocity components are
    clamped to ``[-2, 2]``. Reward ``-||p - goal|| - 0.01 ||action||^2`` on the
    pre-step state. Episodes last 150 steps.

Both integrate with semi-implicit Euler (velocity first, ``dt = 0.05``) and
never terminate early. Every stepping function works on a batch of states so
robustness sweeps can run many variants at once; the single-state API is the
same code path with a batch of one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_random_state, check_scalar
from .exceptions import ConfigurationError, EnvironmentFault

GRAVITY = 10.0
LENGTH = 1.0
MAX_TORQUE = 2.0
MAX_SPEED = 8.0
PENDULUM_DAMPING = 0.1

POINT_FORCE = 1.0
POINT_DAMPING = 0.5
POINT_MAX_SPEED = 2.0
GOAL = np.array([0.8, 0.8])
START_LOW, START_HIGH = 0.0, 0.2


@dataclass(frozen=True)
class TaskSpec:
    env_id: str
    state_dim: int
    obs_dim: int
    action_dim: int
    horizon: int


TASKS = {
    "pendulum": TaskSpec("pendulum", 2, 3, 1, 200),
    "point_mass": TaskSpec("point_mass", 4, 4, 2, 150),
}


def task(env_id):
    try:
        return TASKS[env_id]
    except KeyError:
        raise ConfigurationError(f"unknown env_id {env_id!r}; choose from {sorted(TASKS)}") from None


@dataclass(frozen=True)
class EnvParams:
    """A (possibly perturbed) variant of one task."""

    env_id: str = "pendulum"
    mass_rel: float = 1.0
    friction_rel: float = 1.0
    dt: float = 0.05
    horizon: int | None = None

    def __post_init__(self):
        spec = task(self.env_id)
        check_scalar(self.mass_rel, "mass_rel", low=0.0, low_inclusive=False)
        check_scalar(self.friction_rel, "friction_rel", low=0.0)
        check_scalar(self.dt, "dt", low=0.0, low_inclusive=False)
        if self.horizon is None:
            object.__setattr__(self, "horizon", spec.horizon)
        check_scalar(self.horizon, "horizon", low=1, integer=True)

    @property
    def spec(self):
        return task(self.env_id)

    def encode(self):
        """``env_id:mass_rel:friction_rel``, e.g. ``pendulum:0.8:1.2``."""
        return f"{self.env_id}:{self.mass_rel:g}:{self.friction_rel:g}"

    @classmethod
    def decode(cls, text, **kwargs):
        parts = text.strip().split(":")
        if len(parts) != 3:
            raise ConfigurationError(f"variant {text!r} is not env_id:mass_rel:friction_rel")
        try:
            mass, friction = float(parts[1]), float(parts[2])
        except ValueError:
            raise ConfigurationError(f"variant {text!r} has non-numeric scales") from None
        return cls(parts[0], mass, friction, **kwargs)


def with_params(base, mass_rel, friction_rel):
    """Copy of ``base`` with new mass and friction multipliers."""
    return replace(base, mass_rel=mass_rel, friction_rel=friction_rel)


def perturbation_grid(low=0.5, high=1.5, n=11):
    """Evenly spaced multipliers, rounded so that 1.0 appears exactly."""
    check_scalar(n, "n", low=1, integer=True)
    return [round(float(v), 10) for v in np.linspace(low, high, n)]


def grid_variants(base, mass_grid=None, friction_grid=None):
    """All ``(mass, friction)`` variants of ``base``, mass-major."""
    mass_grid = perturbation_grid() if mass_grid is None else mass_grid
    friction_grid = perturbation_grid() if friction_grid is None else friction_grid
    return [with_params(base, m, f) for m in mass_grid for f in friction_grid]


@dataclass(frozen=True)
class EnvState:
    x: np.ndarray
    step_index: int = 0


@dataclass(frozen=True)
class StepResult:
    next_state: EnvState
    reward: float
    done: bool


def wrap_angle(theta):
    """Map angles into ``(-pi, pi]``."""
    return math.pi - np.mod(math.pi - theta, 2.0 * math.pi)


# ---------------------------------------------------------------------------
# Batched dynamics
# ---------------------------------------------------------------------------


def reset_batch(env_id, rngs):
    """Initial states, one row per generator in ``rngs``."""
    rows = []
    for rng in rngs:
        if env_id == "pendulum":
            theta = wrap_angle(rng.uniform(-math.pi, math.pi))
            rows.append([theta, rng.uniform(-1.0, 1.0)])
        else:
            p = rng.uniform(START_LOW, START_HIGH, size=2)
            rows.append([p[0], p[1], 0.0, 0.0])
    if not rows:
        return np.zeros((0, task(env_id).state_dim))
    return np.asarray(rows, dtype=np.float64)


def observe_batch(env_id, x):
    """Policy inputs for a batch of states."""
    if env_id == "pendulum":
        return np.stack([np.cos(x[:, 0]), np.sin(x[:, 0]), x[:, 1]], axis=1)
    return np.concatenate([x[:, :2] - GOAL, x[:, 2:]], axis=1)


def step_batch(env_id, x, action, mass_rel, friction_rel, dt):
    """Advance a batch of states one step.

    ``mass_rel`` and ``friction_rel`` may be scalars or per-row arrays.
    Returns ``(next_x, reward)``.
    """
    action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    mass = np.asarray(mass_rel, dtype=np.float64)
    friction = np.asarray(friction_rel, dtype=np.float64)
    if env_id == "pendulum":
        theta, omega = x[:, 0], x[:, 1]
        u = MAX_TORQUE * action[:, 0]
        reward = -(wrap_angle(theta) ** 2 + 0.1 * omega ** 2 + 0.001 * u ** 2)
        k_f = PENDULUM_DAMPING * friction
        accel = (3.0 * GRAVITY / (2.0 * LENGTH)) * np.sin(theta) \
            + 3.0 * u / (mass * LENGTH ** 2) - (k_f / mass) * omega
        omega_next = np.clip(omega + accel * dt, -MAX_SPEED, MAX_SPEED)
        theta_next = wrap_angle(theta + omega_next * dt)
        nxt = np.stack([theta_next, omega_next], axis=1)
    elif env_id == "point_mass":
        p, v = x[:, :2], x[:, 2:]
        force = POINT_FORCE * action
        reward = -np.sqrt(((p - GOAL) ** 2).sum(axis=1)) - 0.01 * (action ** 2).sum(axis=1)
        c = POINT_DAMPING * friction
        m = mass[..., None] if mass.ndim else mass
        c = c[..., None] if np.ndim(c) else c
        v_next = np.clip(v + (force - c * v) / m * dt, -POINT_MAX_SPEED, POINT_MAX_SPEED)
        nxt = np.concatenate([p + v_next * dt, v_next], axis=1)
    else:
        raise ConfigurationError(f"unknown env_id {env_id!r}")
    if not np.all(np.isfinite(nxt)):
        raise EnvironmentFault(f"non-finite state after integrating {env_id} with dt={dt}")
    return nxt, reward


# ---------------------------------------------------------------------------
# Single-state API
# ---------------------------------------------------------------------------


def reset(params, seed):
    """Initial state for ``params``, deterministic in ``seed``."""
    rng = check_random_state(seed)
    return EnvState(reset_batch(params.env_id, [rng])[0], 0)


def observe(state, params):
    return observe_batch(params.env_id, state.x[None, :])[0]


def step(state, params, action):
    """Integrate one step; ``done`` is true exactly when the horizon is reached."""
    action = np.asarray(action, dtype=np.float64).reshape(1, -1)
    if action.shape[1] != params.spec.action_dim:
        raise ConfigurationError(
            f"{params.env_id} expects {params.spec.action_dim}-D actions, got {action.shape[1]}"
        )
    nxt, reward = step_batch(params.env_id, state.x[None, :], action,
                             params.mass_rel, params.friction_rel, params.dt)
    k = state.step_index + 1
    return StepResult(EnvState(nxt[0], k), float(reward[0]), k >= params.horizon)


def reward_bounds(env_id):
    """Closed interval containing every reward the task can emit."""
    if env_id == "pendulum":
        return -(math.pi ** 2 + 0.1 * MAX_SPEED ** 2 + 0.001 * MAX_TORQUE ** 2), 0.0
    return -math.inf, 0.0


def pendulum_energy(x, mass_rel=1.0):
    """Mechanical energy of the uniform-rod pendulum these dynamics describe.

    ``E = m l^2 theta_dot^2 / 6 + m g l cos(theta) / 2`` (pivot at the end,
    inertia ``m l^2 / 3``, centre of mass at ``l / 2``).
    """
    x = np.asarray(x, dtype=np.float64)
    m = mass_rel
    return m * LENGTH ** 2 * x[..., 1] ** 2 / 6.0 + 0.5 * m * GRAVITY * LENGTH * np.cos(x[..., 0])


def rollout_returns(env_id, act_fn, variants, seeds):
    """Undiscounted episode returns for many variants and seeds at once.

    Parameters
    ----------
    env_id : str
    act_fn : callable
        Maps a batch of observations to a batch of actions in ``[-1, 1]``.
    variants : sequence of EnvParams
        One entry per episode (all with the same ``env_id``, ``dt`` and horizon).
    seeds : sequence of int
        Reset seed per episode.
    """
    if len(variants) != len(seeds):
        raise ConfigurationError("need one seed per variant")
    if not variants:
        return np.zeros(0)
    horizon, dt = variants[0].horizon, variants[0].dt
    if any(v.env_id != env_id or v.horizon != horizon or v.dt != dt for v in variants):
        raise ConfigurationError("batched rollouts need a shared env_id, dt and horizon")
    mass = np.array([v.mass_rel for v in variants])
    friction = np.array([v.friction_rel for v in variants])
    x = reset_batch(env_id, [np.random.default_rng(s) for s in seeds])
    total = np.zeros(len(variants))
    for _ in range(horizon):
        a = act_fn(observe_batch(env_id, x))
        x, r = step_batch(env_id, x, a, mass, friction, dt)
        total += r
    return total
