"""Small reverse-mode autodiff engine and the function approximators SAC needs.

Values are numpy arrays (usually a batch of rows). A loss is built from
:class:`Var` nodes with the primitives registered in ``PRIMITIVES`` and
differentiated with :func:`grad`. Only the handful of operations used by the
actor, adversary, critic and temperature losses are supported.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._validation import check_batch, check_random_state, check_scalar
from .exceptions import (
    ConfigurationError,
    CorruptCheckpointError,
    NonFiniteError,
    UnsupportedPrimitiveError,
)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)


# ---------------------------------------------------------------------------
# Autodiff core
# ---------------------------------------------------------------------------


class Var:
    """A node in the computation graph.

    ``vjp(g, need)`` maps the upstream gradient to one gradient per parent;
    entries for parents whose ``need`` flag is false may be ``None``.
    """

    __slots__ = ("value", "parents", "vjp", "requires_grad")
    # make ``ndarray <op> Var`` dispatch to the reflected Var operators
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def param(value):
    """A leaf that gradients are taken with respect to."""
    return Var(value, requires_grad=True)


def const(value):
    return value if isinstance(value, Var) else Var(value)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    a, b = const(a), const(b)

    def vjp(g, need):
        return (_unbroadcast(g, a.shape) if need[0] else None,
                _unbroadcast(g, b.shape) if need[1] else None)

    return Var(a.value + b.value, (a, b), vjp)


def sub(a, b):
    a, b = const(a), const(b)

    def vjp(g, need):
        return (_unbroadcast(g, a.shape) if need[0] else None,
                _unbroadcast(-g, b.shape) if need[1] else None)

    return Var(a.value - b.value, (a, b), vjp)


def mul(a, b):
    a, b = const(a), const(b)

    def vjp(g, need):
        return (_unbroadcast(g * b.value, a.shape) if need[0] else None,
                _unbroadcast(g * a.value, b.shape) if need[1] else None)

    return Var(a.value * b.value, (a, b), vjp)


def neg(a):
    a = const(a)
    return Var(-a.value, (a,), lambda g, need: (-g,))


def affine(x, w, b):
    """``x @ w + b`` for a batch ``x`` of shape (n, in)."""
    x, w, b = const(x), const(w), const(b)

    def vjp(g, need):
        return (g @ w.value.T if need[0] else None,
                x.value.T @ g if need[1] else None,
                g.sum(axis=0) if need[2] else None)

    return Var(x.value @ w.value + b.value, (x, w, b), vjp)


def tanh(a):
    a = const(a)
    y = np.tanh(a.value)
    return Var(y, (a,), lambda g, need: (g * (1.0 - y * y),))


def relu(a):
    a = const(a)
    mask = a.value > 0
    return Var(a.value * mask, (a,), lambda g, need: (g * mask,))


def exp(a):
    a = const(a)
    y = np.exp(a.value)
    return Var(y, (a,), lambda g, need: (g * y,))


def log(a):
    a = const(a)
    return Var(np.log(a.value), (a,), lambda g, need: (g / a.value,))


def square(a):
    a = const(a)
    return Var(a.value * a.value, (a,), lambda g, need: (2.0 * a.value * g,))


def softplus(a):
    """``log(1 + e^a)``, evaluated without overflow."""
    a = const(a)
    return Var(np.logaddexp(0.0, a.value), (a,),
               lambda g, need: (g * _logistic(a.value),))


def clip(a, low, high):
    a = const(a)
    inside = (a.value >= low) & (a.value <= high)
    return Var(np.clip(a.value, low, high), (a,), lambda g, need: (g * inside,))


def minimum(a, b):
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = const(a), const(b)
    pick_a = a.value <= b.value

    def vjp(g, need):
        return (_unbroadcast(g * pick_a, a.shape) if need[0] else None,
                _unbroadcast(g * ~pick_a, b.shape) if need[1] else None)

    return Var(np.where(pick_a, a.value, b.value), (a, b), vjp)


def reduce_sum(a, axis=None, keepdims=False):
    a = const(a)
    shape = a.shape

    def vjp(g, need):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Var(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a):
    a = const(a)
    n = a.value.size
    return Var(a.value.mean(), (a,), lambda g, need: (np.full(a.shape, g / n),))


def columns(a, start, stop):
    """Columns ``start:stop`` of a 2-D node."""
    a = const(a)

    def vjp(g, need):
        out = np.zeros(a.shape)
        out[:, start:stop] = g
        return (out,)

    return Var(a.value[:, start:stop], (a,), vjp)


PRIMITIVES = {
    "add": add, "sub": sub, "mul": mul, "neg": neg, "affine": affine,
    "tanh": tanh, "relu": relu, "exp": exp, "log": log, "square": square,
    "softplus": softplus, "clip": clip, "minimum": minimum,
    "sum": reduce_sum, "mean": mean, "columns": columns,
}


def apply(name, *args, **kwargs):
    """Look up a primitive by name; unknown names raise immediately."""
    try:
        fn = PRIMITIVES[name]
    except KeyError:
        raise UnsupportedPrimitiveError(
            f"primitive {name!r} is not supported; known: {sorted(PRIMITIVES)}"
        ) from None
    return fn(*args, **kwargs)


def _relevant_order(root, targets):
    """Topological order of nodes lying on a path from ``targets`` to ``root``."""
    target_ids = {id(t) for t in targets}
    order, relevant = [], set()
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            if id(node) in target_ids or any(id(p) in relevant for p in node.parents):
                relevant.add(id(node))
                order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    return order, relevant


def grad(loss, wrt):
    """Gradients of the scalar ``loss`` with respect to each leaf in ``wrt``.

    Leaves that do not influence the loss get an exact zero array.
    """
    if loss.value.size != 1:
        raise ConfigurationError(f"loss must be a scalar, got shape {loss.shape}")
    order, relevant = _relevant_order(loss, wrt)
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        need = tuple(id(p) in relevant for p in node.parents)
        for p, pg, n in zip(node.parents, node.vjp(g, need), need):
            if not n:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
    return [np.asarray(grads.get(id(w), np.zeros_like(w.value))).reshape(w.shape)
            for w in wrt]


def _logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# Multilayer perceptrons
# ---------------------------------------------------------------------------

_ACTIVATIONS = {"tanh": (np.tanh, tanh), "relu": (lambda v: np.maximum(v, 0.0), relu)}


@dataclass
class MlpParams:
    """Weights and biases of a fully connected network with a linear output.

    ``weights[k]`` has shape ``(layer_sizes[k], layer_sizes[k + 1])``.
    """

    layer_sizes: list
    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ConfigurationError(f"bad layer sizes {self.layer_sizes}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        n_layers = len(self.layer_sizes) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ConfigurationError("one weight matrix and bias vector per layer required")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[k], self.layer_sizes[k + 1])
            if np.shape(w) != shape or np.shape(b) != (shape[1],):
                raise ConfigurationError(
                    f"layer {k}: weight {np.shape(w)} / bias {np.shape(b)} do not match {shape}"
                )

    @classmethod
    def init(cls, layer_sizes, random_state=None, activation="tanh"):
        """Uniform fan-in initialisation, ``U(-1/sqrt(in), 1/sqrt(in))``."""
        rng = check_random_state(random_state)
        weights, biases = [], []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / math.sqrt(n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            biases.append(rng.uniform(-bound, bound, size=n_out))
        return cls(list(layer_sizes), weights, biases, activation)

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    def arrays(self):
        """Parameters as ``[w0, b0, w1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_arrays(self, arrays):
        return replace(self, weights=list(arrays[0::2]), biases=list(arrays[1::2]))

    def copy(self):
        return self.with_arrays([a.copy() for a in self.arrays()])

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_flat(self, vector):
        vector = np.asarray(vector, dtype=np.float64)
        out, pos = [], 0
        for a in self.arrays():
            out.append(vector[pos:pos + a.size].reshape(a.shape))
            pos += a.size
        if pos != vector.size:
            raise ConfigurationError(f"expected {pos} values, got {vector.size}")
        return self.with_arrays(out)


def forward(params, x):
    """Evaluate the network on one input vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = check_batch(x, "input", params.n_in)
    act = _ACTIVATIONS[params.activation][0]
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if k < last:
            h = act(h)
    return h[0] if single else h


def forward_graph(params, arrays, x):
    """Graph version of :func:`forward`; ``arrays`` are Vars (leaves or constants)."""
    act = _ACTIVATIONS[params.activation][1]
    h = const(x)
    n_layers = len(arrays) // 2
    for k in range(n_layers):
        h = affine(h, arrays[2 * k], arrays[2 * k + 1])
        if k < n_layers - 1:
            h = act(h)
    return h


def const_arrays(params):
    return [Var(a) for a in params.arrays()]


def param_arrays(params):
    return [param(a) for a in params.arrays()]


# ---------------------------------------------------------------------------
# Squashed Gaussian policy head
# ---------------------------------------------------------------------------


@dataclass
class GaussianHead:
    """Pre-squash Gaussian with ``log_std`` clamped to ``[LOG_STD_MIN, LOG_STD_MAX]``."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_std = np.clip(np.asarray(self.log_std, dtype=np.float64),
                               LOG_STD_MIN, LOG_STD_MAX)


def policy_head(params, obs):
    """Split a policy network's output into a :class:`GaussianHead`."""
    out = forward(params, obs)
    k = out.shape[-1] // 2
    return GaussianHead(out[..., :k], out[..., k:])


def _log_one_minus_tanh_sq(u):
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), exact and overflow-free
    return 2.0 * (LOG_2 - u - np.logaddexp(0.0, -2.0 * u))


def sample_action(head, noise):
    """Reparameterised tanh-Gaussian sample and its log-density.

    Parameters
    ----------
    head : GaussianHead
        Mean and log standard deviation, one row per state (or a single vector).
    noise : array
        Standard normal draws with the same shape as ``head.mean``.

    Returns
    -------
    action : array
        ``tanh(mean + exp(log_std) * noise)``, inside ``[-1, 1]``.
    log_prob : float or array
        Log-density of ``action`` including the tanh change of variables,
        summed over action dimensions.
    """
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != head.mean.shape:
        raise ConfigurationError(f"noise shape {noise.shape} != mean shape {head.mean.shape}")
    u = head.mean + np.exp(head.log_std) * noise
    per_dim = -0.5 * noise * noise - head.log_std - HALF_LOG_2PI - _log_one_minus_tanh_sq(u)
    return np.tanh(u), per_dim.sum(axis=-1)


def mean_action(head):
    """Deterministic action ``tanh(mean)`` used for evaluation and distances."""
    return np.tanh(head.mean)


def sample_action_graph(params, arrays, obs, noise):
    """Graph version of ``sample_action(policy_head(params, obs), noise)``.

    Returns ``(action, log_prob)`` Vars with shapes ``(n, k)`` and ``(n,)``.
    """
    out = forward_graph(params, arrays, obs)
    k = out.shape[1] // 2
    mu = columns(out, 0, k)
    log_std = clip(columns(out, k, 2 * k), LOG_STD_MIN, LOG_STD_MAX)
    u = mu + exp(log_std) * noise
    correction = 2.0 * (LOG_2 - u - softplus(-2.0 * u))
    per_dim = (-0.5 * np.square(noise) - HALF_LOG_2PI) - log_std - correction
    return tanh(u), reduce_sum(per_dim, axis=1)


# ---------------------------------------------------------------------------
# Adaptive-moment optimiser
# ---------------------------------------------------------------------------


@dataclass
class OptState:
    """Adam moments for a list of parameter arrays."""

    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 3e-4
    moment_decays: tuple = (0.9, 0.999)
    numerical_floor: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays, learning_rate=3e-4, moment_decays=(0.9, 0.999),
                   numerical_floor=1e-8):
        check_scalar(learning_rate, "learning_rate", low=0.0)
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                   0, float(learning_rate), tuple(moment_decays), float(numerical_floor))


def optimizer_step(arrays, grads, opt):
    """One bias-corrected Adam step.

    Returns new ``(arrays, opt)``; inputs are left untouched. A non-finite
    gradient raises :class:`NonFiniteError` before anything is updated.
    """
    if len(arrays) != len(grads) or len(arrays) != len(opt.first_moment):
        raise ConfigurationError("parameter, gradient and moment lists differ in length")
    for i, (a, g) in enumerate(zip(arrays, grads)):
        if np.shape(g) != np.shape(a):
            raise ConfigurationError(f"gradient {i} has shape {np.shape(g)}, expected {np.shape(a)}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter array {i}; step aborted")
    b1, b2 = opt.moment_decays
    t = opt.step_count + 1
    lr_t = opt.learning_rate * math.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    new_arrays, m_new, v_new = [], [], []
    for a, g, m, v in zip(arrays, grads, opt.first_moment, opt.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        # floor applied to the bias-corrected second moment
        new_arrays.append(a - lr_t * m / (np.sqrt(v) + opt.numerical_floor * math.sqrt(1.0 - b2 ** t)))
        m_new.append(m)
        v_new.append(v)
    return new_arrays, replace(opt, first_moment=m_new, second_moment=v_new, step_count=t)


# ---------------------------------------------------------------------------
# Tensor files
# ---------------------------------------------------------------------------

_MAGIC = "A2P-TENSORS 1"


def save_tensors(path, tensors, meta=None):
    """Write named float64 tensors plus JSON metadata to a single file.

    Layout: a plain-text manifest (``tensor <name> <shape>`` lines and
    ``meta <key> <json>`` lines) followed by a ``payload <nbytes> <sha256>``
    line and the concatenated little-endian float64 data.
    """
    lines = [_MAGIC]
    for key, value in (meta or {}).items():
        _check_name(key)
        lines.append(f"meta {key} {json.dumps(value)}")
    chunks = []
    for name, arr in tensors.items():
        _check_name(name)
        arr = np.asarray(arr, dtype="<f8")
        shape = "x".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"tensor {name} {shape}")
        chunks.append(np.ascontiguousarray(arr).tobytes())
    payload = b"".join(chunks)
    lines.append(f"payload {len(payload)} {hashlib.sha256(payload).hexdigest()}")
    data = ("\n".join(lines) + "\n").encode() + payload
    Path(path).write_bytes(data)


def load_tensors(path):
    """Inverse of :func:`save_tensors`; returns ``(tensors, meta)``."""
    data = Path(path).read_bytes()
    tensors, meta, shapes = {}, {}, []
    pos = 0
    header_done = False
    first = True
    while not header_done:
        end = data.find(b"\n", pos)
        if end < 0:
            raise CorruptCheckpointError(f"{path}: manifest truncated")
        line = data[pos:end].decode("utf-8", errors="replace")
        pos = end + 1
        if first:
            if line != _MAGIC:
                raise CorruptCheckpointError(f"{path}: not a tensor file")
            first = False
            continue
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            key, _, value = rest.partition(" ")
            try:
                meta[key] = json.loads(value)
            except json.JSONDecodeError as exc:
                raise CorruptCheckpointError(f"{path}: bad meta {key!r}") from exc
        elif kind == "tensor":
            name, _, shape_txt = rest.partition(" ")
            try:
                shape = () if shape_txt == "scalar" else tuple(int(s) for s in shape_txt.split("x"))
            except ValueError as exc:
                raise CorruptCheckpointError(f"{path}: bad shape for {name!r}") from exc
            shapes.append((name, shape))
        elif kind == "payload":
            nbytes_txt, _, digest = rest.partition(" ")
            header_done = True
        else:
            raise CorruptCheckpointError(f"{path}: unexpected manifest line {line!r}")
    payload = data[pos:]
    expected = sum(8 * int(np.prod(s)) for _, s in shapes)
    if len(payload) != int(nbytes_txt) or len(payload) != expected:
        raise CorruptCheckpointError(
            f"{path}: payload has {len(payload)} bytes, manifest expects {expected}"
        )
    if hashlib.sha256(payload).hexdigest() != digest:
        raise CorruptCheckpointError(f"{path}: checksum mismatch")
    offset = 0
    for name, shape in shapes:
        n = int(np.prod(shape))
        tensors[name] = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * n
    return tensors, meta


def _check_name(name):
    if not name or any(c.isspace() for c in name):
        raise ConfigurationError(f"tensor/meta names must be non-empty without whitespace: {name!r}")


__all__ = [
    "Var", "param", "const", "apply", "grad", "PRIMITIVES",
    "add", "sub", "mul", "neg", "affine", "tanh", "relu", "exp", "log", "square",
    "softplus", "clip", "minimum", "reduce_sum", "mean", "columns",
    "MlpParams", "forward", "forward_graph", "const_arrays", "param_arrays",
    "GaussianHead", "policy_head", "sample_action", "mean_action", "sample_action_graph",
    "OptState", "optimizer_step", "save_tensors", "load_tensors",
    "LOG_STD_MIN", "LOG_STD_MAX",
]
