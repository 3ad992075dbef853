"""Online adjustment of the adversary's mixing coefficient epsilon.

The controller watches the Euclidean distance between the protagonist's and
the adversary's actions. It keeps an exponential moving average of that
distance, turns the change ``d_avg - d`` into a bounded signal ``b`` and
nudges epsilon by ``c * b``. The executed action is the convex mix
``(1 - epsilon) a + epsilon a_bar``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_same_length, check_scalar
from .exceptions import ConfigurationError

MODES = ("adaptive", "fixed", "random", "off")


@dataclass(frozen=True)
class AdaptState:
    """Controller state. Defaults: epsilon 0.1, zero average, beta 0.5, c 0.01."""

    epsilon: float = 0.1
    d_avg: float = 0.0
    beta: float = 0.5
    c: float = 0.01
    update_count: int = 0

    def __post_init__(self):
        check_scalar(self.epsilon, "epsilon", low=0.0, high=1.0)
        check_scalar(self.d_avg, "d_avg", low=0.0)
        check_scalar(self.beta, "beta", low=0.0, high=1.0)
        check_scalar(self.c, "c", low=0.0)
        check_scalar(self.update_count, "update_count", low=0, integer=True)


def action_distance(a, a_bar):
    """Euclidean distance between two actions of equal length."""
    a, a_bar = check_same_length(a, a_bar, ("a", "a_bar"))
    return float(math.sqrt(float(np.sum((a - a_bar) ** 2))))


def logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


def performance_signal(prev_avg, d, *, centered=False):
    """``b = sgn(prev_avg - d) * sigma(|prev_avg - d|)`` with ``sgn(0) = 0``.

    ``centered=True`` swaps ``sigma`` for ``2 sigma - 1``, which removes the
    jump at zero.
    """
    delta = prev_avg - d
    if delta == 0.0:
        return 0.0
    mag = logistic(abs(delta))
    if centered:
        mag = 2.0 * mag - 1.0
    return math.copysign(mag, delta)


def update_coefficient(state, d, *, sign_flip=False, centered=False):
    """One controller step for a newly observed distance ``d``.

    The signal is computed from the average *before* it absorbs ``d``;
    epsilon is clamped to ``[0, 1]``.

    Examples
    --------
    >>> s = update_coefficient(AdaptState(epsilon=0.1, d_avg=1.0, beta=0.5, c=0.01), 0.5)
    >>> round(s.d_avg, 12), round(s.epsilon, 6)
    (0.75, 0.106225)
    """
    d = float(d)
    if not math.isfinite(d) or d < 0.0:
        raise ConfigurationError(f"distance must be finite and non-negative, got {d!r}")
    b = performance_signal(state.d_avg, d, centered=centered)
    if sign_flip:
        b = -b
    epsilon = min(1.0, max(0.0, state.epsilon + state.c * b))
    d_avg = state.beta * state.d_avg + (1.0 - state.beta) * d
    return replace(state, epsilon=epsilon, d_avg=d_avg, update_count=state.update_count + 1)


def mix_actions(epsilon, a, a_bar):
    """Convex combination ``(1 - epsilon) a + epsilon a_bar``."""
    check_scalar(epsilon, "epsilon", low=0.0, high=1.0)
    a, a_bar = check_same_length(a, a_bar, ("a", "a_bar"))
    return (1.0 - epsilon) * a + epsilon * a_bar


class EpsilonController:
    """Drives epsilon during training for one of the comparison modes.

    ``adaptive`` runs :func:`update_coefficient` every environment step.
    ``fixed`` keeps ``epsilon0``. ``random`` draws epsilon uniformly from
    ``random_range`` at the start of every episode. ``off`` pins epsilon to 0.
    In every mode the distance average is still tracked, so traces stay
    comparable.
    """

    def __init__(self, mode="adaptive", epsilon0=0.1, beta=0.5, c=0.01,
                 sign_flip=False, centered=False, random_range=(0.0, 0.2)):
        if mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
        low, high = random_range
        if not 0.0 <= low <= high <= 1.0:
            raise ConfigurationError(f"random_range must satisfy 0 <= low <= high <= 1, got {random_range}")
        self.mode = mode
        self.sign_flip = sign_flip
        self.centered = centered
        self.random_range = (float(low), float(high))
        eps0 = 0.0 if mode == "off" else epsilon0
        self.state = AdaptState(epsilon=eps0, d_avg=0.0, beta=beta,
                                c=c if mode == "adaptive" else 0.0)
        self.last_d = 0.0
        self.last_b = 0.0

    @property
    def epsilon(self):
        return self.state.epsilon

    def begin_episode(self, rng):
        if self.mode == "random":
            self.state = replace(self.state, epsilon=float(rng.uniform(*self.random_range)))

    def observe(self, d):
        """Feed the distance for the current step and return the new epsilon."""
        prev = self.state
        b = performance_signal(prev.d_avg, d, centered=self.centered)
        self.last_b = -b if self.sign_flip else b
        new = update_coefficient(prev, d, sign_flip=self.sign_flip, centered=self.centered)
        if self.mode != "adaptive":
            new = replace(new, epsilon=prev.epsilon)
        self.state = new
        self.last_d = float(d)
        return self.state.epsilon
