#!/usr/bin/env python3
"""Run one shipped model and print its energy-dissipation summary.

Usage:
    python scripts/run_model.py p3 --tau 0.015625 --out runs/p3
    python scripts/run_model.py p1 --frac 8          # tau = tau_max/8
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from proxdyn.cli import parse_config_dict, run_and_emit
from proxdyn.core import tau_max
from proxdyn.stepper import admissible_tau


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("model", choices=["p1", "p2", "p3", "linear_wave"])
    ap.add_argument("--tau", type=float, default=None)
    ap.add_argument("--frac", type=float, default=8.0,
                    help="use tau = tau_max/frac when --tau is absent")
    ap.add_argument("--halvings", type=int, default=0)
    ap.add_argument("--n-nodes", type=int, default=65)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    tau = args.tau
    if tau is None:
        probe = parse_config_dict(
            {"model": args.model, "tau": 1.0, "n_nodes": args.n_nodes}
        )
        from proxdyn.cli import build_problem

        spec, _ = build_problem(probe)
        tau = admissible_tau(spec, min(tau_max(spec), spec.horizon) / args.frac)
        print(f"tau_max = {tau_max(spec):.6g}, using tau = {tau:.6g}")

    cfg = parse_config_dict(
        {
            "model": args.model,
            "tau": tau,
            "halvings": args.halvings,
            "n_nodes": args.n_nodes,
            "out_dir": args.out or f"runs/{args.model}",
        }
    )
    code = run_and_emit(cfg)
    summary = Path(cfg.out_dir) / "summary.json"
    print(f"exit {code}; outputs in {cfg.out_dir} (see {summary})")
    return code


if __name__ == "__main__":
    sys.exit(main())
