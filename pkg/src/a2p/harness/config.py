"""Experiment configuration: INI-style sections, ``--set section.key=value`` overrides."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields

from ..adapt import MODES
from ..env import perturbation_grid, task
from ..exceptions import ConfigurationError
from ..sac import TrainConfig

TABLE_BETAS = (0.0, 0.1, 0.3, 0.5, 0.7, 1.0)


@dataclass
class AdaptConfig:
    mode: str = "adaptive"
    epsilon0: float = 0.1
    beta: float = 0.5
    c: float = 0.01
    sign_flip: bool = False
    centered: bool = False
    random_low: float = 0.0
    random_high: float = 0.2


@dataclass
class SacConfig:
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
    keep_last: int = 10


@dataclass
class SweepConfig:
    mass_grid: tuple = tuple(perturbation_grid())
    friction_grid: tuple = tuple(perturbation_grid())
    episodes_per_cell: int = 8
    policies_per_seed: int = 4
    eval_seed: int = 1_000_000


@dataclass
class AblateConfig:
    modes: tuple = ("adaptive", "random", "fixed", "off")
    betas: tuple = TABLE_BETAS
    eval_episodes: int = 10


@dataclass
class VerifyConfig:
    n_games: int = 1000
    n_improvement_games: int = 100
    trials: int = 5
    gamma: float = 0.9
    n_states: int = 4
    n_actions: int = 5
    mix_resolution: int = 11
    base_seed: int = 0


@dataclass
class ExperimentConfig:
    env_id: str = "pendulum"
    total_steps: int = 30_000
    seeds: tuple = (0, 1, 2)
    workers: int = 1
    algorithm: str = "a2p"
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)

    def validate(self):
        task(self.env_id)
        if self.adapt.mode not in MODES:
            raise ConfigurationError(f"adapt.mode must be one of {MODES}, got {self.adapt.mode!r}")
        if self.adapt.mode == "random" and not (
                0.0 <= self.adapt.random_low <= self.adapt.random_high <= 1.0):
            raise ConfigurationError("adapt.random_low/random_high must form a range inside [0, 1]")
        if not self.seeds:
            raise ConfigurationError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be distinct")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        for m in self.ablate.modes:
            if m not in MODES:
                raise ConfigurationError(f"ablate.modes contains unknown mode {m!r}")
        # builds and checks every training field
        self.train_config(self.seeds[0])
        return self

    def train_config(self, seed, **overrides):
        kw = dict(env_id=self.env_id, total_steps=self.total_steps, seed=seed,
                  algorithm=self.algorithm)
        kw.update({f.name: getattr(self.adapt, f.name) for f in fields(AdaptConfig)})
        kw.update({f.name: getattr(self.sac, f.name) for f in fields(SacConfig)})
        kw.update(overrides)
        if kw["mode"] == "off":
            kw["epsilon0"] = 0.0
        return TrainConfig(**kw)


_SECTIONS = {"adapt": AdaptConfig, "sac": SacConfig, "sweep": SweepConfig,
             "ablate": AblateConfig, "verify": VerifyConfig}


def _parse_value(text, default, name):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if default and isinstance(default[0], str):
                return tuple(items)
            if default and isinstance(default[0], float) or name.endswith(("grid", "betas")):
                return tuple(float(t) for t in items)
            return tuple(int(t) for t in items)
        if isinstance(default, int):
            return int(text.replace("_", ""))
        if isinstance(default, float) or default is None:
            if default is None and text.lower() in ("", "none", "auto"):
                return None
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"cannot parse {name}={text!r}") from None


def _format_value(value):
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _set(cfg, dotted, text):
    section, _, key = dotted.partition(".")
    if not key:
        target, key = cfg, section
    elif section in _SECTIONS:
        target = getattr(cfg, section)
    elif section == "experiment":
        target = cfg
    else:
        raise ConfigurationError(f"unknown config section {section!r} in {dotted!r}")
    if key in _SECTIONS or not hasattr(target, key):
        raise ConfigurationError(f"unknown config field {dotted!r}")
    setattr(target, key, _parse_value(text, getattr(target, key), dotted))


def loads(text, overrides=()):
    """Parse INI text plus ``key=value`` overrides into a validated config."""
    cfg = ExperimentConfig()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text or "")
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    for section in parser.sections():
        for key, value in parser.items(section):
            _set(cfg, key if section == "experiment" else f"{section}.{key}", value)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"override {item!r} is not key=value")
        _set(cfg, key.strip(), value)
    return cfg.validate()


def load(path=None, overrides=()):
    text = ""
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return loads(text, overrides)


def dumps(cfg):
    """Canonical INI text; ``loads(dumps(cfg))`` reproduces ``cfg``."""
    out = io.StringIO()
    out.write("[experiment]\n")
    for f in fields(ExperimentConfig):
        if f.name not in _SECTIONS:
            out.write(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n")
    for name, cls in _SECTIONS.items():
        out.write(f"\n[{name}]\n")
        section = getattr(cfg, name)
        for f in fields(cls):
            out.write(f"{f.name} = {_format_value(getattr(section, f.name))}\n")
    return out.getvalue()
