"""Experiment orchestration: training runs, robustness sweeps, ablations, certificates.

Everything a figure or table shows is first written to CSV; plots are
derived from those files only.
"""

from __future__ import annotations

import csv
import glob
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import env as envs
from ..exceptions import ConfigurationError
from ..sac import TRACE_COLUMNS, evaluate, train
from ..verify import certify
from . import config as cfgmod
from . import plots
from .checkpoint import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

CONFIG_ECHO = "config.echo"
_CKPT_RE = re.compile(r"ckpt_seed(\d+)_ep(\d+)\.bin$")


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _float(text):
    return float(text) if text not in ("", None) else math.nan


def episode_returns_from_trace(path):
    return [float(r["return"]) for r in read_csv(path) if r["return"] != ""]


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _snapshot_eval(env_id, bundles, episodes, eval_seed):
    base = envs.EnvParams(env_id)
    seeds = [eval_seed + i for i in range(episodes)]
    return [float(np.mean(evaluate(b.actor, [base] * episodes, seeds))) for b in bundles]


def train_seed(cfg, seed, run_dir, overrides=None, save=True):
    """Train one seed and write its trace (and checkpoints when ``save``)."""
    run_dir = Path(run_dir)
    tc = cfg.train_config(seed, **(overrides or {}))
    result = train(tc)
    write_csv(run_dir / f"trace_seed{seed}.csv", TRACE_COLUMNS, result.trace)
    echo = cfgmod.dumps(cfg)
    if save:
        save_checkpoint(run_dir / f"ckpt_seed{seed}_final.bin", result.bundle, result.adapt_state, echo)
        for episode, bundle in result.snapshots:
            save_checkpoint(run_dir / f"ckpt_seed{seed}_ep{episode:04d}.bin", bundle,
                            result.adapt_state, echo)
    last = _snapshot_eval(cfg.env_id, [b for _, b in result.snapshots], 4, cfg.sweep.eval_seed)
    final = (_snapshot_eval(cfg.env_id, [result.bundle], cfg.ablate.eval_episodes,
                            cfg.sweep.eval_seed)[0] if cfg.total_steps else math.nan)
    eps = [row[3] for row in result.trace]
    return {
        "seed": seed,
        "episodes": len(result.episode_returns),
        "train_return_last10": float(np.mean(result.episode_returns[-10:])) if result.episode_returns else math.nan,
        "eval_return_last10": float(np.mean(last)) if last else math.nan,
        "final_eval": final,
        "eps_min": min(eps) if eps else result.adapt_state.epsilon,
        "eps_max": max(eps) if eps else result.adapt_state.epsilon,
        "final_epsilon": result.adapt_state.epsilon,
        "elapsed": result.elapsed,
    }


SUMMARY_COLUMNS = ("seed", "episodes", "train_return_last10", "eval_return_last10", "final_eval",
                   "eps_min", "eps_max", "final_epsilon", "elapsed")


def _run_seeds(cfg, run_dir, overrides=None, save=True):
    jobs = [(cfg, s, str(run_dir), overrides, save) for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_train_job, jobs))
    return [_train_job(j) for j in jobs]


def _train_job(args):
    return train_seed(*args)


def cmd_train(cfg, run_dir):
    """Per-seed training with traces, checkpoints, summary, report and curve plot."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / CONFIG_ECHO).write_text(cfgmod.dumps(cfg), encoding="utf-8")
    summaries = _run_seeds(cfg, run_dir)
    write_csv(run_dir / "summary.csv", SUMMARY_COLUMNS,
              [[s[k] for k in SUMMARY_COLUMNS] for s in summaries])
    lines = [f"train env={cfg.env_id} algorithm={cfg.algorithm} mode={cfg.adapt.mode} "
             f"steps={cfg.total_steps} seeds={','.join(map(str, cfg.seeds))}"]
    for s in summaries:
        lines.append(f"seed {s['seed']}: eval_return_last10={s['eval_return_last10']:.2f} "
                     f"train_return_last10={s['train_return_last10']:.2f} "
                     f"final_epsilon={s['final_epsilon']:.6f} elapsed_s={s['elapsed']:.1f}")
    (run_dir / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if cfg.total_steps:
        plots.training_curves(sorted(run_dir.glob("trace_seed*.csv")), run_dir / "training_curve.svg")
    return run_dir


def load_run_config(run_dir):
    path = Path(run_dir) / CONFIG_ECHO
    if not path.exists():
        raise ConfigurationError(f"{run_dir} has no {CONFIG_ECHO}; not a run directory")
    return cfgmod.load(path)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


@dataclass
class EvalGrid:
    """Returns of deployed policies over a mass x friction grid."""

    mass_grid: tuple
    friction_grid: tuple
    mean: np.ndarray
    std: np.ndarray
    n: np.ndarray
    per_seed: dict = field(default_factory=dict)   # seed -> (M, F) mean returns

    def nominal_index(self):
        i = int(np.argmin(np.abs(np.asarray(self.mass_grid) - 1.0)))
        j = int(np.argmin(np.abs(np.asarray(self.friction_grid) - 1.0)))
        return i, j

    def nominal_mean(self):
        return float(self.mean[self.nominal_index()])

    def normalized(self, anchor=None):
        """``1 + (mean - anchor) / |anchor|``; equals ``mean / anchor`` for positive anchors.

        ``anchor`` defaults to this grid's own nominal cell, which then maps to 1.
        The form keeps the ordering of returns when rewards are negative.
        """
        anchor = self.nominal_mean() if anchor is None else float(anchor)
        if anchor == 0.0:
            raise ConfigurationError("normalisation anchor is zero")
        return 1.0 + (self.mean - anchor) / abs(anchor)

    def rows(self, anchor=None):
        norm = self.normalized(anchor)
        for i, m in enumerate(self.mass_grid):
            for j, f in enumerate(self.friction_grid):
                yield (m, f, self.mean[i, j], self.std[i, j], int(self.n[i, j]), norm[i, j])


GRID_COLUMNS = ("mass_rel", "friction_rel", "mean", "std", "n", "normalized")


def find_snapshots(run_dir, seed):
    paths = []
    for p in glob.glob(os.path.join(str(run_dir), f"ckpt_seed{seed}_ep*.bin")):
        m = _CKPT_RE.search(p)
        if m and int(m.group(1)) == seed:
            paths.append((int(m.group(2)), p))
    return [p for _, p in sorted(paths)]


def select_policies(run_dir, seed, k):
    """Pick ``k`` of the saved last-episode checkpoints of ``seed`` (seeded choice)."""
    paths = find_snapshots(run_dir, seed)
    if not paths:
        raise ConfigurationError(f"no checkpoints for seed {seed} in {run_dir}")
    rng = np.random.default_rng([seed, 7])
    if len(paths) <= k:
        return paths
    pick = np.sort(rng.choice(len(paths), size=k, replace=False))
    return [paths[i] for i in pick]


def evaluate_grid(run_dir, cfg, mass_grid=None, friction_grid=None):
    """Deterministic deployment returns of the selected policies on every cell."""
    mass_grid = tuple(cfg.sweep.mass_grid if mass_grid is None else mass_grid)
    friction_grid = tuple(cfg.sweep.friction_grid if friction_grid is None else friction_grid)
    base = envs.EnvParams(cfg.env_id)
    cells = [envs.with_params(base, m, f) for m in mass_grid for f in friction_grid]
    e = cfg.sweep.episodes_per_cell
    variants = [c for c in cells for _ in range(e)]
    eval_seeds = [cfg.sweep.eval_seed + k for _ in cells for k in range(e)]
    shape = (len(mass_grid), len(friction_grid))
    all_returns, per_seed = [], {}
    for seed in cfg.seeds:
        seed_returns = []
        for path in select_policies(run_dir, seed, cfg.sweep.policies_per_seed):
            bundle, _, _ = load_checkpoint(path)
            seed_returns.append(evaluate(bundle.actor, variants, eval_seeds, cfg.env_id).reshape(*shape, e))
        stacked = np.concatenate(seed_returns, axis=2)
        per_seed[seed] = stacked.mean(axis=2)
        all_returns.append(stacked)
    allr = np.concatenate(all_returns, axis=2)
    std = allr.std(axis=2, ddof=1) if allr.shape[2] > 1 else np.zeros(shape)
    return EvalGrid(mass_grid, friction_grid, allr.mean(axis=2), std,
                    np.full(shape, allr.shape[2]), per_seed)


def write_grid(grid, run_dir, anchor=None, tag="grid"):
    run_dir = Path(run_dir)
    write_csv(run_dir / f"{tag}.csv", GRID_COLUMNS, grid.rows(anchor))
    rows = [(seed, m, f, vals[i, j]) for seed, vals in grid.per_seed.items()
            for i, m in enumerate(grid.mass_grid) for j, f in enumerate(grid.friction_grid)]
    write_csv(run_dir / f"{tag}_per_seed.csv", ("seed", "mass_rel", "friction_rel", "mean"), rows)


def read_grid(path):
    """Rebuild an :class:`EvalGrid` (without per-seed data) from ``grid.csv``."""
    rows = read_csv(path)
    masses = tuple(sorted({float(r["mass_rel"]) for r in rows}))
    frictions = tuple(sorted({float(r["friction_rel"]) for r in rows}))
    shape = (len(masses), len(frictions))
    mean, std, n = np.zeros(shape), np.zeros(shape), np.zeros(shape, dtype=int)
    for r in rows:
        i, j = masses.index(float(r["mass_rel"])), frictions.index(float(r["friction_rel"]))
        mean[i, j], std[i, j], n[i, j] = float(r["mean"]), float(r["std"]), int(r["n"])
    return EvalGrid(masses, frictions, mean, std, n)


def cmd_sweep(run_dir, mass_grid=None, friction_grid=None, anchor_run=None, tag="grid"):
    """Evaluate a finished training run on a 1-D or 2-D perturbation grid."""
    cfg = load_run_config(run_dir)
    grid = evaluate_grid(run_dir, cfg, mass_grid, friction_grid)
    anchor = None
    if anchor_run is not None:
        anchor = read_grid(Path(anchor_run) / f"{tag}.csv").nominal_mean()
    write_grid(grid, run_dir, anchor, tag)
    plots.grid_plot(Path(run_dir) / f"{tag}.csv", Path(run_dir) / f"{tag}.svg",
                    title=f"{cfg.env_id} {cfg.algorithm}/{cfg.adapt.mode}")
    return grid


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

ABLATE_COLUMNS = ("group", "value", "seed", "natural_return", "eps_min", "eps_max", "final_epsilon")


def ablation_groups(cfg):
    groups = [("mode", m, {"mode": m}) for m in cfg.ablate.modes]
    groups += [("beta", b, {"mode": "adaptive", "beta": b}) for b in cfg.ablate.betas]
    return groups


def cmd_ablate(cfg, run_dir):
    """Matched-seed runs across modes and beta values, summarised like the beta table."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / CONFIG_ECHO).write_text(cfgmod.dumps(cfg), encoding="utf-8")
    rows = []
    for group, value, overrides in ablation_groups(cfg):
        sub = run_dir / f"{group}_{value}"
        sub.mkdir(exist_ok=True)
        for s in _run_seeds(cfg, sub, overrides, save=False):
            rows.append((group, str(value), s["seed"], s["final_eval"], s["eps_min"],
                         s["eps_max"], s["final_epsilon"]))
    write_csv(run_dir / "ablate_seeds.csv", ABLATE_COLUMNS, rows)
    table = ablation_table(run_dir / "ablate_seeds.csv")
    (run_dir / "report.txt").write_text(format_table(table), encoding="utf-8")
    return table


def ablation_table(seeds_csv):
    """``{(group, value): (mean, sample std, n, eps_min, eps_max)}`` from per-seed rows."""
    acc = {}
    for r in read_csv(seeds_csv):
        acc.setdefault((r["group"], r["value"]), []).append(
            (float(r["natural_return"]), float(r["eps_min"]), float(r["eps_max"])))
    table = {}
    for key, vals in acc.items():
        ret = np.array([v[0] for v in vals])
        std = float(ret.std(ddof=1)) if ret.size > 1 else math.nan
        table[key] = (float(ret.mean()), std, ret.size, min(v[1] for v in vals),
                      max(v[2] for v in vals))
    return table


def format_table(table):
    lines = []
    for group, title in (("mode", "Mode"), ("beta", "Parameter beta")):
        keys = [k for k in table if k[0] == group]
        if not keys:
            continue
        lines.append(f"{title:<16} | Natural Reward          | n | epsilon range")
        lines.append("-" * 64)
        for key in keys:
            mean, std, n, lo, hi = table[key]
            lines.append(f"{key[1]:<16} | {mean:9.1f} +/- {std:8.1f} | {n} | [{lo:.4f}, {hi:.4f}]")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(vcfg, run_dir, inject_bug=False):
    """Write the contraction/improvement certificate; returns it for exit-status decisions."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cert = certify(vcfg.n_games, vcfg.n_improvement_games, vcfg.trials, vcfg.gamma,
                   vcfg.n_states, vcfg.n_actions, vcfg.mix_resolution,
                   base_seed=vcfg.base_seed, discount=1.1 if inject_bug else None)
    write_csv(run_dir / "certificate.csv", ("kind", "game_seed", "epsilon", "value", "ok"),
              [("contraction", s, e, r, int(r <= cert.gamma + 1e-10)) for s, e, r in cert.contraction_rows]
              + [("improvement", s, e, d, int(ok)) for s, e, ok, d in cert.improvement_rows])
    lines = cert.summary_lines()
    if not cert.ok:
        lines.append(f"VIOLATION: offending game seeds {cert.offending_seeds()[:20]}")
    (run_dir / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return cert
