"""Penalty ablation on a reduced reference set (sphere and box, 20 attempts per pair).

Every rho starts from the same initial poses. Takes a few minutes on one core.

    python3 demos/rho_ablation.py [OUT_DIR]
"""
import dataclasses
import math
import sys

from graspsynth import batch
from graspsynth.cli import DEFAULT_CONFIG


def main(out="runs/rho_ablation"):
    cfg = batch.load_run_config(DEFAULT_CONFIG, out=out)
    cfg = dataclasses.replace(cfg, objects=cfg.objects[:2], attempts=20)
    rows, _ = batch.run_ablation(cfg, [0.0, 1e3, math.inf])
    print(f"{'rho':>6} {'GSR%':>6} {'accepted':>9} {'q unchanged%':>13}")
    for r in rows:
        q = "-" if r["q_unchanged"] is None else f"{r['q_unchanged']:.0f}"
        print(f"{r['rho']:>6g} {r['gsr']:>6.1f} {r['accepted']:>9} {q:>13}")


if __name__ == "__main__":
    main(*sys.argv[1:])
