"""Command line entry point: ``a2p {train,sweep,ablate,verify}``.

Exit status is 0 on success, 1 on usage or configuration errors and 2 when
a certified property is violated.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..exceptions import ConfigurationError, CorruptCheckpointError
from . import config as cfgmod
from . import runner

EXIT_OK, EXIT_USAGE, EXIT_VIOLATION = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_args(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a field, e.g. adapt.c=0.02 (repeatable)")
    p.add_argument("--out", help="run directory")


def build_parser():
    parser = _Parser(prog="a2p", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train agents, one run per seed")
    _config_args(p)
    p.add_argument("--env", help="shortcut for env_id")
    p.add_argument("--mode", help="shortcut for adapt.mode")
    p.add_argument("--steps", help="shortcut for total_steps")
    p.add_argument("--seeds", help="shortcut for seeds, e.g. 0,1,2")

    p = sub.add_parser("sweep", help="evaluate a run on a mass x friction grid")
    p.add_argument("run_dir")
    p.add_argument("--mass-grid", help="comma separated multipliers")
    p.add_argument("--friction-grid", help="comma separated multipliers")
    p.add_argument("--one-d", choices=("mass", "friction"),
                   help="vary one parameter, holding the other at 1.0")
    p.add_argument("--anchor", help="run directory whose nominal cell normalises this one")
    p.add_argument("--tag", default=None, help="output file stem (default grid / sweep_<param>)")

    p = sub.add_parser("ablate", help="matched-seed comparison across modes and beta")
    _config_args(p)

    p = sub.add_parser("verify", help="certify contraction and policy improvement")
    _config_args(p)
    p.add_argument("--inject-bug", action="store_true",
                   help="test only: certify an operator with discount 1.1")
    return parser


def _load(args, shortcuts=()):
    overrides = list(args.overrides)
    for attr, key in shortcuts:
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return cfgmod.load(args.config, overrides)


def _grid(text):
    if text is None:
        return None
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigurationError(f"bad grid {text!r}") from None


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            cfg = _load(args, (("env", "env_id"), ("mode", "adapt.mode"),
                               ("steps", "total_steps"), ("seeds", "seeds")))
            out = args.out or f"runs/train_{cfg.env_id}_{cfg.adapt.mode}"
            runner.cmd_train(cfg, out)
            print((runner.Path(out) / "report.txt").read_text(), end="")
        elif args.command == "sweep":
            mass, friction = _grid(args.mass_grid), _grid(args.friction_grid)
            tag = args.tag or "grid"
            if args.one_d == "mass":
                friction, tag = (1.0,), args.tag or "sweep_mass"
            elif args.one_d == "friction":
                mass, tag = (1.0,), args.tag or "sweep_friction"
            grid = runner.cmd_sweep(args.run_dir, mass, friction, args.anchor, tag)
            print(f"{grid.mean.size} cells written to {runner.Path(args.run_dir) / (tag + '.csv')}")
        elif args.command == "ablate":
            cfg = _load(args)
            out = args.out or f"runs/ablate_{cfg.env_id}"
            table = runner.cmd_ablate(cfg, out)
            print(runner.format_table(table), end="")
        elif args.command == "verify":
            cfg = _load(args)
            out = args.out or "runs/verify"
            cert = runner.cmd_verify(cfg.verify, out, inject_bug=args.inject_bug)
            print("\n".join(cert.summary_lines()))
            if not cert.ok:
                print(f"property violated; offending game seeds: {cert.offending_seeds()[:20]}",
                      file=sys.stderr)
                return EXIT_VIOLATION
    except (ConfigurationError, CorruptCheckpointError, FileNotFoundError) as exc:
        print(f"a2p {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
