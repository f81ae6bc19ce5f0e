"""Command line front end.

    graspsynth synthesize --config run.toml [--seed N] [--workers N] [--out DIR]
    graspsynth ablate     --config run.toml --rho 0,1000,inf
    graspsynth sweep      --config run.toml --mu 0.5,0.4,0.3,0.2,0.1 [--rho ...] [--resynthesize]
    graspsynth eval       RUN_DIR [--mu LIST] [--config run.toml]
    graspsynth export     RECORD.json OUT.obj

Exit status: 0 when the batch completes (individual attempts may fail),
2 on configuration errors, 1 on other errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import batch
from .evaluation import DISTURBANCE_NOTE, EvalConfig
from .hand import HandError
from .mesh import MeshError
from .poseinit import TemplateError

DEFAULT_CONFIG = Path(__file__).parent / "assets" / "configs" / "reference.toml"


def float_list(text):
    """Comma separated floats; ``inf`` is accepted."""
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None
    if any(math.isnan(v) or v < 0 for v in vals):
        raise argparse.ArgumentTypeError(f"values must be non-negative: {text!r}")
    return vals


def _fmt(v, spec=".1f"):
    return "-" if v is None else format(v, spec)


def build_parser():
    p = argparse.ArgumentParser(prog="graspsynth", description="Grasp synthesis batches, ablations and friction sweeps.")
    p.add_argument("--verbose", "-v", action="store_true", help="debug logging and per-iteration JSONL logs")
    sub = p.add_subparsers(dest="verb", required=True)

    def run_flags(sp):
        sp.add_argument("--config", type=Path, default=DEFAULT_CONFIG, help="TOML run configuration (default: bundled reference)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--attempts", type=int, help="override attempts per object-template pair")
        sp.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    sp = sub.add_parser("synthesize", help="one synthesis batch")
    run_flags(sp)
    sp.add_argument("--rho", type=float_list, help="single penalty (overrides the config)")

    sp = sub.add_parser("ablate", help="repeat the batch per rho with shared initializations")
    run_flags(sp)
    sp.add_argument("--rho", type=float_list, default=[0.0, 1e3, math.inf])

    sp = sub.add_parser("sweep", help="evaluate grasps over tangential friction values")
    run_flags(sp)
    sp.add_argument("--mu", type=float_list, required=True)
    sp.add_argument("--rho", type=float_list)
    sp.add_argument("--resynthesize", action="store_true", help="also synthesize anew at each mu")

    sp = sub.add_parser("eval", help="re-evaluate the records of a finished run")
    sp.add_argument("run_dir", type=Path)
    sp.add_argument("--config", type=Path, help="take [eval] settings from this config")
    sp.add_argument("--mu", type=float_list)
    sp.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    sp = sub.add_parser("export", help="write an OBJ scene for one record")
    sp.add_argument("record", type=Path)
    sp.add_argument("out", type=Path)
    sp.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)
    return p


def _config(args):
    cfg = batch.load_run_config(args.config, seed=args.seed, workers=args.workers, out=args.out, attempts=args.attempts)
    return cfg


def _print_stats(label, summary):
    st = summary["stats"]
    print(
        f"{label}: GSR {st['gsr']:.1f}%  OSR {st['osr']:.1f}%  CDC {_fmt(st['cdc'], '.2f')} mm  PD {_fmt(st['pd'], '.3f')} mm  "
        f"DIV {_fmt(st['div'])}  ({st['successes']}/{st['attempts']} successes, {summary['accepted']} accepted, "
        f"{summary['prefiltered']} prefiltered, {summary['errors']} errors)"
    )


def cmd_synthesize(args):
    cfg = _config(args)
    if args.rho:
        if len(args.rho) != 1:
            raise batch.ConfigError("synthesize takes a single rho; use ablate for several")
        cfg = cfg.with_rho(args.rho[0])
    res = batch.run_synthesis(cfg, verbose=args.verbose)
    print(f"# {DISTURBANCE_NOTE}")
    _print_stats(f"rho={cfg.admm.rho:g}", res.summary)
    print(f"records in {res.out / 'records'}")


def cmd_ablate(args):
    cfg = _config(args)
    rows, _ = batch.run_ablation(cfg, args.rho, verbose=args.verbose)
    print(f"# {DISTURBANCE_NOTE}")
    print(f"{'rho':>8} {'GSR%':>6} {'OSR%':>6} {'CDC':>6} {'PD':>7} {'acc':>5} {'q-same%':>8}")
    for r in rows:
        print(f"{r['rho']:>8g} {r['gsr']:>6.1f} {r['osr']:>6.1f} {_fmt(r['cdc'], '.2f'):>6} {_fmt(r['pd'], '.3f'):>7} {r['accepted']:>5} {_fmt(r['q_unchanged']):>8}")


def cmd_sweep(args):
    cfg = _config(args)
    table = batch.run_friction_sweep(cfg, args.mu, args.rho, resynthesize=args.resynthesize, verbose=args.verbose)
    print(f"# {DISTURBANCE_NOTE}")
    for rho, rows in table["fixed"].items():
        for r in rows:
            print(f"fixed rho={rho} mu={r['mu']:g}: GSR {r['gsr']:.1f}%  OSR {r['osr']:.1f}%")
    for rho, rows in table["resynthesized"].items():
        for r in rows:
            print(f"resynth rho={rho} mu={r['mu']:g}: GSR {r['gsr']:.1f}%  OSR {r['osr']:.1f}%  accepted {r['accepted']}")


def cmd_eval(args):
    records = batch.load_records(args.run_dir)
    if not records:
        raise batch.ConfigError(f"no records under {args.run_dir / 'records'}")
    ecfg = batch.load_run_config(args.config).eval if args.config else EvalConfig()
    mus = args.mu or [ecfg.mu]
    print(f"# {DISTURBANCE_NOTE}")
    for row in batch.friction_table(records, mus, ecfg):
        print(f"mu={row['mu']:g}: GSR {row['gsr']:.1f}%  OSR {row['osr']:.1f}%  per object {json.dumps(row['per_object'])}")


def cmd_export(args):
    path = batch.export_scene(args.record, args.out)
    print(f"wrote {path}")


COMMANDS = {"synthesize": cmd_synthesize, "ablate": cmd_ablate, "sweep": cmd_sweep, "eval": cmd_eval, "export": cmd_export}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.verb](args)
    except (batch.ConfigError, TemplateError, HandError, MeshError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
