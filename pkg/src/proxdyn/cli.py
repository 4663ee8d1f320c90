"""Config ingestion, run orchestration, and bit-stable serialization.

Configs are flat JSON: a model tag, a step size, and optional overrides of
the per-model defaults below.  Outputs are plot-ready CSV (comma, header
row, UTF-8, LF) with 17 significant digits plus a summary.json; repeated
runs of the same config produce byte-identical data files (the wall-time
entry of summary.json is the one volatile field).

Exit codes: 0 all asserted invariants held, 1 invariant violation (details
in summary.json), 2 configuration error.
"""

from __future__ import annotations

import argparse
import difflib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics, models, stepper
from .core import tau_max, validate_assumptions
from .errors import ConfigError, ParseError, ProxdynError, ValidationError
from .grid import h_norm

COMMON_DEFAULTS = {
    "halvings": 0,
    "out_dir": "out",
    "seed": 0,
    "inner_tol": 1e-9,
    "n_nodes": 65,
    "horizon": 1.0,
    "emit_trajectory": True,
    "emit_edi": True,
    "emit_convergence": True,
    "emit_snapshots": True,
}

MODEL_DEFAULTS = {
    "p1": {"rho": 1.0, "nu": 1.0, "mu": 0.15, "alpha": 0.5, "u0_amplitude": 1.0},
    "p2": {"q": 2.0, "p": 2.0, "u0_amplitude": 0.5},
    "p3": {
        "q": 2.0,
        "well_scale": 1.0,
        "stiffness": 1.0,
        "force_amplitude": 0.2,
        "force_frequency": float(np.pi),
        "u0_amplitude": 0.5,
    },
    "linear_wave": {"nu": 1.0, "damping": "mass"},
}

REQUIRED_KEYS = ("model", "tau")


@dataclass(frozen=True)
class RunConfig:
    """Validated run description; round-trips losslessly through to_dict."""

    model: str
    tau: float
    halvings: int
    out_dir: str
    seed: int
    inner_tol: float
    n_nodes: int
    horizon: float
    emit: dict
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "model": self.model,
            "tau": self.tau,
            "halvings": self.halvings,
            "out_dir": self.out_dir,
            "seed": self.seed,
            "inner_tol": self.inner_tol,
            "n_nodes": self.n_nodes,
            "horizon": self.horizon,
        }
        for k, v in sorted(self.emit.items()):
            out[f"emit_{k}"] = v
        out.update({k: self.params[k] for k in sorted(self.params)})
        return out


def build_problem(cfg: RunConfig):
    """Instantiate the ProblemSpec (and exact solution, if any) for a config."""
    p = cfg.params
    if cfg.model == "p1":
        spec = models.build_p1(
            models.P1Params(
                rho=p["rho"], nu=p["nu"], mu=p["mu"], alpha=p["alpha"],
                n_nodes=cfg.n_nodes, horizon=cfg.horizon,
                u0_amplitude=p["u0_amplitude"],
            )
        )
        return spec, None
    if cfg.model == "p2":
        spec = models.build_p2(
            models.P2Params(
                q=p["q"], p=p["p"], n_nodes=cfg.n_nodes, horizon=cfg.horizon,
                u0_amplitude=p["u0_amplitude"],
            )
        )
        return spec, None
    if cfg.model == "p3":
        spec = models.build_p3(
            models.P3Params(
                q=p["q"], n_nodes=cfg.n_nodes, horizon=cfg.horizon,
                stiffness=p["stiffness"], well_scale=p["well_scale"],
                force_amplitude=p["force_amplitude"],
                force_frequency=p["force_frequency"],
                u0_amplitude=p["u0_amplitude"],
            )
        )
        return spec, None
    if cfg.model == "linear_wave":
        return models.build_linear_wave(
            p["nu"], n_nodes=cfg.n_nodes, horizon=cfg.horizon, damping=p["damping"]
        )
    raise ConfigError(f"unknown model {cfg.model!r}")


def parse_config_dict(raw: dict) -> RunConfig:
    """Strict parse of a flat config mapping; unknown keys are errors."""
    if "model" not in raw:
        raise ParseError("missing required key 'model'")
    model = raw["model"]
    if model not in MODEL_DEFAULTS:
        raise ParseError(
            f"unknown model {model!r}; choose from {sorted(MODEL_DEFAULTS)}"
        )
    legal = set(REQUIRED_KEYS) | set(COMMON_DEFAULTS) | set(MODEL_DEFAULTS[model])
    for key in raw:
        if key not in legal:
            hint = difflib.get_close_matches(key, sorted(legal), n=1)
            suffix = f"; did you mean {hint[0]!r}?" if hint else ""
            raise ParseError(f"unknown key {key!r} for model {model!r}{suffix}")
    if "tau" not in raw:
        raise ParseError("missing required key 'tau'")

    def pick(key):
        return raw.get(key, COMMON_DEFAULTS[key])

    params = {
        k: raw.get(k, default) for k, default in MODEL_DEFAULTS[model].items()
    }
    cfg = RunConfig(
        model=model,
        tau=float(raw["tau"]),
        halvings=int(pick("halvings")),
        out_dir=str(pick("out_dir")),
        seed=int(pick("seed")),
        inner_tol=float(pick("inner_tol")),
        n_nodes=int(pick("n_nodes")),
        horizon=float(pick("horizon")),
        emit={
            "trajectory": bool(pick("emit_trajectory")),
            "edi": bool(pick("emit_edi")),
            "convergence": bool(pick("emit_convergence")),
            "snapshots": bool(pick("emit_snapshots")),
        },
        params=params,
    )
    _validate(cfg)
    return cfg


def parse_config(path) -> RunConfig:
    """Parse and validate a JSON config file (see module docstring)."""
    p = Path(path)
    if not p.exists():
        raise ParseError(f"config file {p} does not exist")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON in {p}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"config root must be an object, got {type(raw).__name__}")
    return parse_config_dict(raw)


def _validate(cfg: RunConfig) -> None:
    violations = []
    if not cfg.tau > 0:
        violations.append(f"tau must be positive, got {cfg.tau}")
    if cfg.halvings < 0:
        violations.append(f"halvings must be >= 0, got {cfg.halvings}")
    if not cfg.horizon > 0:
        violations.append(f"horizon must be positive, got {cfg.horizon}")
    if cfg.n_nodes < 3:
        violations.append(f"n_nodes must be >= 3, got {cfg.n_nodes}")
    if not cfg.inner_tol > 0:
        violations.append(f"inner_tol must be positive, got {cfg.inner_tol}")
    if cfg.tau > 0 and cfg.horizon > 0:
        n = round(cfg.horizon / cfg.tau)
        if n < 1 or abs(n * cfg.tau - cfg.horizon) > 1e-12 * max(1.0, cfg.horizon):
            violations.append(
                f"tau = {cfg.tau} does not divide the horizon T = {cfg.horizon}"
            )
    spec = None
    if not violations:
        try:
            spec, _ = build_problem(cfg)
        except ConfigError as exc:
            violations.append(str(exc))
    if spec is not None:
        tmax = tau_max(spec)
        if cfg.tau > tmax * (1 + 1e-12):
            violations.append(
                f"tau = {cfg.tau} exceeds the unique-minimizer step bound "
                f"tau_max = 1/(2*lambda) = {tmax:.6g}"
            )
    if violations:
        raise ValidationError(violations)


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(cell if isinstance(cell, str) else _fmt(cell) for cell in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def run_and_emit(cfg: RunConfig) -> int:
    """Execute a configured run and serialize everything; returns exit code."""
    t_start = time.perf_counter()
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"config error: cannot create output directory: {exc}", file=sys.stderr)
        return 2
    try:
        spec, _ = build_problem(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    summary = {"config": cfg.to_dict(), "tau_max": tau_max(spec)}
    failures = []
    try:
        traj = stepper.run(
            spec, cfg.tau, inner_tol=cfg.inner_tol
        )
    except ProxdynError as exc:
        summary["error"] = str(exc)
        summary["invariants_passed"] = False
        summary["wall_time_s"] = time.perf_counter() - t_start
        (out / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"run failed: {exc}", file=sys.stderr)
        return 1

    records = diagnostics.edi_scan(spec, traj)
    if not all(r.passed for r in records):
        worst = max(records, key=lambda r: r.residual - r.tol)
        failures.append(
            f"energy-dissipation inequality violated at step {worst.n}: "
            f"residual {worst.residual:.3e} > tol {worst.tol:.3e}"
        )
    report = validate_assumptions(spec, samples=32, seed=cfg.seed)
    if not report.passed:
        names = ", ".join(c.name for c in report.failures())
        failures.append(f"assumption validation failed: {names}")

    h = spec.grid.h
    if cfg.emit["trajectory"]:
        rows = []
        kin0 = 0.5 * h_norm(traj.V[0].values, h) ** 2
        from .core import energy_total

        rows.append([0, 0.0, kin0, energy_total(spec, 0.0, traj.U[0]), 0.0, 0.0, 0.0, 0.0])
        psi_acc = psi_star_acc = 0.0
        terms = diagnostics._step_terms(spec, traj)
        for k, rec in enumerate(records, start=1):
            psi_acc += traj.tau * terms[k - 1][0]
            psi_star_acc += traj.tau * terms[k - 1][1]
            rep = traj.reports[k - 1]
            rows.append(
                [
                    k,
                    traj.times[k],
                    rep.kinetic_after,
                    rep.energy_after,
                    psi_acc,
                    psi_star_acc,
                    rep.fy_gap,
                    rec.residual,
                ]
            )
        _write_csv(
            out / "trajectory.csv",
            ["n", "t", "kinetic", "energy", "psi_accum", "psi_star_accum", "fy_gap", "edi_residual"],
            rows,
        )

    if cfg.emit["snapshots"]:
        count = min(traj.n_steps + 1, 200)
        idx = np.unique(np.linspace(0, traj.n_steps, count).round().astype(int))
        header = ["t"] + [f"x{j}" for j in range(spec.grid.n_nodes)]
        rows = []
        for n in idx:
            padded = np.zeros(spec.grid.n_nodes)
            padded[1:-1] = traj.U[n].values
            rows.append([traj.times[n], *padded])
        _write_csv(out / "snapshots.csv", header, rows)

    if cfg.halvings > 0 and cfg.emit["convergence"]:
        table = diagnostics.convergence_study(
            spec, cfg.tau, cfg.halvings, inner_tol=cfg.inner_tol
        )
        rows = []
        for k, tau_k in enumerate(table.taus):
            cau = table.cauchy[k] if k < len(table.cauchy) else float("nan")
            rate = table.rates[k] if k < len(table.rates) else float("nan")
            rows.append([tau_k, table.sup_u_devs[k], table.sup_v_devs[k], cau, rate])
        _write_csv(
            out / "convergence.csv",
            ["tau", "sup_U_dev", "sup_V_dev", "cauchy_diff", "observed_rate"],
            rows,
        )

    monitors = diagnostics.apriori_monitor(spec, traj)
    summary.update(
        {
            "n_steps": traj.n_steps,
            "monitors": {
                "sup_velocity": monitors.sup_velocity,
                "sup_energy": monitors.sup_energy,
                "psi_accum": monitors.psi_accum,
                "psi_star_accum": monitors.psi_star_accum,
                "all_finite": monitors.all_finite,
            },
            "max_edi_residual": max(r.residual for r in records),
            "max_edi_tol": max(r.tol for r in records),
            "max_fy_gap": max(r.fy_gap for r in traj.reports),
            "max_el_residual": max(r.el_residual for r in traj.reports),
            "assumption_checks": {c.name: c.passed for c in report.checks},
            "failures": failures,
            "invariants_passed": not failures,
        }
    )
    summary["wall_time_s"] = time.perf_counter() - t_start
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if failures:
        for msg in failures:
            print(f"invariant violation: {msg}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="proxdyn",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="defaults: "
        + json.dumps({"common": COMMON_DEFAULTS, **MODEL_DEFAULTS}, indent=2),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    solve = sub.add_parser("solve", help="run a configured model and emit outputs")
    solve.add_argument("--config", required=True, help="path to a JSON run config")
    solve.add_argument("--tau", type=float, default=None, help="override step size")
    solve.add_argument(
        "--halvings", type=int, default=None, help="override refinement levels"
    )
    solve.add_argument("--out", default=None, help="override output directory")
    args = parser.parse_args(argv)

    if args.command == "solve":
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
            if not isinstance(raw, dict):
                raise ParseError("config root must be an object")
            if args.tau is not None:
                raw["tau"] = args.tau
            if args.halvings is not None:
                raw["halvings"] = args.halvings
            if args.out is not None:
                raw["out_dir"] = args.out
            cfg = parse_config_dict(raw)
        except (OSError, json.JSONDecodeError, ParseError, ValidationError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        return run_and_emit(cfg)
    return 2


if __name__ == "__main__":
    sys.exit(main())
