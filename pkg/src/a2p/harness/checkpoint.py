"""Agent checkpoints on top of the tensor file format in :mod:`a2p.nn`."""

from __future__ import annotations

import os
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .. import nn
from ..adapt import AdaptState
from ..exceptions import CorruptCheckpointError
from ..sac import AgentBundle

_NETS = ("actor", "adversary", "critic1", "critic2", "target1", "target2")
_SCALARS = ("log_alpha", "target_entropy", "tau", "gamma")


def save_checkpoint(path, bundle, adapt_state, config_echo=""):
    """Write networks, controller state and the config text to ``path`` atomically."""
    tensors, meta = {}, {}
    for name, net in bundle.networks().items():
        meta[f"{name}.layer_sizes"] = net.layer_sizes
        meta[f"{name}.activation"] = net.activation
        for k, arr in enumerate(net.arrays()):
            tensors[f"{name}/{'w' if k % 2 == 0 else 'b'}{k // 2}"] = arr
    for key in _SCALARS:
        meta[key] = getattr(bundle, key)
    meta["adapt"] = asdict(adapt_state)
    meta["config"] = config_echo
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        nn.save_tensors(tmp, tensors, meta)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def load_checkpoint(path):
    """Returns ``(bundle, adapt_state, config_echo)``."""
    try:
        tensors, meta = nn.load_tensors(path)
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from exc
    nets = {}
    try:
        for name in _NETS:
            sizes = meta[f"{name}.layer_sizes"]
            n_layers = len(sizes) - 1
            arrays = []
            for k in range(n_layers):
                arrays.append(tensors[f"{name}/w{k}"])
                arrays.append(tensors[f"{name}/b{k}"])
            nets[name] = nn.MlpParams(sizes, arrays[0::2], arrays[1::2], meta[f"{name}.activation"])
        scalars = {key: float(meta[key]) for key in _SCALARS}
        adapt = AdaptState(**meta["adapt"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: manifest does not describe an agent ({exc})") from exc
    expected = {f"{n}/{p}{k}" for n in _NETS for k in range(len(meta[f'{n}.layer_sizes']) - 1)
                for p in "wb"}
    if set(tensors) != expected:
        raise CorruptCheckpointError(f"{path}: unexpected tensors {sorted(set(tensors) ^ expected)}")
    return AgentBundle(**nets, **scalars), adapt, meta.get("config", "")


def bundles_equal(a, b):
    """Bitwise equality of two bundles (used by round-trip checks)."""
    for name, net in a.networks().items():
        other = b.networks()[name]
        if net.layer_sizes != other.layer_sizes or net.activation != other.activation:
            return False
        if not all(np.array_equal(x, y) for x, y in zip(net.arrays(), other.arrays())):
            return False
    return all(getattr(a, k) == getattr(b, k) for k in _SCALARS)
