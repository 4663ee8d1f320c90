"""Config parsing, serialization, exit codes, and determinism."""

import json
import subprocess
import sys

import numpy as np
import pytest

from proxdyn.cli import (
    main,
    parse_config,
    parse_config_dict,
    run_and_emit,
)
from proxdyn.errors import ParseError, ValidationError


def write_cfg(tmp_path, payload, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return p


class TestParseConfig:
    def test_minimal_config_fills_defaults(self, tmp_path):
        cfg = parse_config(write_cfg(tmp_path, {"model": "p3", "tau": 0.01}))
        assert cfg.model == "p3"
        assert cfg.params["q"] == 2.0
        assert cfg.n_nodes == 65
        assert cfg.horizon == 1.0
        assert cfg.halvings == 0
        assert all(cfg.emit.values())

    def test_step_bound_violation_names_the_bound(self, tmp_path):
        with pytest.raises(ValidationError) as exc:
            parse_config(write_cfg(tmp_path, {"model": "p3", "tau": 0.5}))
        msg = str(exc.value)
        assert "tau_max" in msg and "1/(2*lambda)" in msg and "0.125" in msg

    def test_unknown_key_suggests(self, tmp_path):
        with pytest.raises(ParseError) as exc:
            parse_config(write_cfg(tmp_path, {"model": "p3", "taus": 0.01}))
        assert "'tau'" in str(exc.value)

    def test_missing_required(self, tmp_path):
        with pytest.raises(ParseError):
            parse_config(write_cfg(tmp_path, {"model": "p3"}))
        with pytest.raises(ParseError):
            parse_config(write_cfg(tmp_path, {"tau": 0.01}))

    def test_collects_every_violation(self):
        with pytest.raises(ValidationError) as exc:
            parse_config_dict({"model": "p3", "tau": -1.0, "halvings": -2, "n_nodes": 2})
        assert len(exc.value.violations) >= 3

    def test_round_trip_identity(self, tmp_path):
        cfg = parse_config(write_cfg(tmp_path, {"model": "p2", "tau": 0.125, "seed": 7}))
        again = parse_config_dict(cfg.to_dict())
        assert again == cfg

    def test_tau_must_divide_horizon(self):
        with pytest.raises(ValidationError) as exc:
            parse_config_dict({"model": "linear_wave", "tau": 0.3})
        assert "divide" in str(exc.value)

    def test_nonexistent_file(self, tmp_path):
        with pytest.raises(ParseError):
            parse_config(tmp_path / "missing.json")

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ParseError):
            parse_config(p)


class TestRunAndEmit:
    def test_zero_data_run(self, tmp_path):
        cfg = parse_config_dict(
            {"model": "p2", "tau": 0.25, "u0_amplitude": 0.0,
             "out_dir": str(tmp_path / "out"), "n_nodes": 17}
        )
        assert run_and_emit(cfg) == 0
        rows = (tmp_path / "out" / "trajectory.csv").read_text().splitlines()
        assert rows[0] == "n,t,kinetic,energy,psi_accum,psi_star_accum,fy_gap,edi_residual"
        for row in rows[1:]:
            vals = [float(x) for x in row.split(",")[2:]]
            assert all(abs(v) < 1e-12 for v in vals)
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["invariants_passed"]

    def test_outputs_and_exit_zero(self, tmp_path):
        cfg = parse_config_dict(
            {"model": "p3", "tau": 0.03125, "out_dir": str(tmp_path / "out"),
             "n_nodes": 33, "halvings": 2}
        )
        assert run_and_emit(cfg) == 0
        out = tmp_path / "out"
        for name in ("trajectory.csv", "snapshots.csv", "convergence.csv", "summary.json"):
            assert (out / name).exists()
        conv = (out / "convergence.csv").read_text().splitlines()
        assert conv[0] == "tau,sup_U_dev,sup_V_dev,cauchy_diff,observed_rate"
        assert len(conv) == 4  # header + halvings + 1 rows
        # LF endings, no CR
        raw = (out / "trajectory.csv").read_bytes()
        assert b"\r" not in raw

    def test_seventeen_digit_serialization(self, tmp_path):
        cfg = parse_config_dict(
            {"model": "linear_wave", "tau": 0.125, "out_dir": str(tmp_path / "out"),
             "n_nodes": 17}
        )
        run_and_emit(cfg)
        row = (tmp_path / "out" / "trajectory.csv").read_text().splitlines()[2]
        energy = row.split(",")[3]
        value = float(energy)
        assert f"{value:.17g}" == energy

    def test_determinism_byte_identical(self, tmp_path):
        # Repeated runs of one config reproduce the data files bit for bit;
        # the wall-time entry of summary.json is the one volatile field.
        out = tmp_path / "out"
        cfg = parse_config_dict(
            {"model": "p3", "tau": 0.0625, "n_nodes": 17, "halvings": 1,
             "out_dir": str(out)}
        )
        names = ("trajectory.csv", "snapshots.csv", "convergence.csv")
        assert run_and_emit(cfg) == 0
        first = {name: (out / name).read_bytes() for name in names}
        first_summary = {
            k: v for k, v in json.loads((out / "summary.json").read_text()).items()
            if k != "wall_time_s"
        }
        assert run_and_emit(cfg) == 0
        for name in names:
            assert (out / name).read_bytes() == first[name]
        second_summary = {
            k: v for k, v in json.loads((out / "summary.json").read_text()).items()
            if k != "wall_time_s"
        }
        assert second_summary == first_summary

    def test_p3_stick_config(self, tmp_path):
        # Below-threshold initial data through the config surface: constant
        # energy column and zero velocity column.
        cfg = parse_config_dict(
            {"model": "p3", "tau": 0.001, "u0_amplitude": 0.0005,
             "force_amplitude": 0.0, "out_dir": str(tmp_path / "out")}
        )
        assert run_and_emit(cfg) == 0
        rows = (tmp_path / "out" / "trajectory.csv").read_text().splitlines()[1:]
        kinetic = [float(r.split(",")[2]) for r in rows]
        energy = [float(r.split(",")[3]) for r in rows]
        assert all(k == 0.0 for k in kinetic)
        assert max(energy) - min(energy) <= 1e-12 * (1 + abs(energy[0]))

    def test_emit_flags_suppress_files(self, tmp_path):
        cfg = parse_config_dict(
            {"model": "linear_wave", "tau": 0.25, "n_nodes": 9,
             "out_dir": str(tmp_path / "out"),
             "emit_trajectory": False, "emit_snapshots": False}
        )
        assert run_and_emit(cfg) == 0
        assert not (tmp_path / "out" / "trajectory.csv").exists()
        assert not (tmp_path / "out" / "snapshots.csv").exists()
        assert (tmp_path / "out" / "summary.json").exists()

    def test_linear_wave_convergence_rates_near_one(self, tmp_path):
        cfg = parse_config_dict(
            {"model": "linear_wave", "tau": 0.01, "halvings": 2, "n_nodes": 33,
             "out_dir": str(tmp_path / "out")}
        )
        assert run_and_emit(cfg) == 0
        rows = (tmp_path / "out" / "convergence.csv").read_text().splitlines()[1:]
        rates = [float(r.split(",")[4]) for r in rows]
        finite = [r for r in rates if np.isfinite(r)]
        assert finite and all(abs(r - 1.0) <= 0.3 for r in finite)

    def test_snapshots_capped(self, tmp_path):
        cfg = parse_config_dict(
            {"model": "linear_wave", "tau": 0.002, "out_dir": str(tmp_path / "out"),
             "n_nodes": 9}
        )
        run_and_emit(cfg)
        rows = (tmp_path / "out" / "snapshots.csv").read_text().splitlines()
        assert len(rows) - 1 <= 200


class TestMainEntry:
    def test_solve_subcommand(self, tmp_path):
        cfg = write_cfg(tmp_path, {"model": "linear_wave", "tau": 0.125, "n_nodes": 9})
        code = main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 0
        assert (tmp_path / "o" / "summary.json").exists()

    def test_flag_overrides(self, tmp_path):
        cfg = write_cfg(tmp_path, {"model": "linear_wave", "tau": 0.125, "n_nodes": 9})
        code = main(
            ["solve", "--config", str(cfg), "--tau", "0.25", "--out", str(tmp_path / "o2")]
        )
        assert code == 0
        summary = json.loads((tmp_path / "o2" / "summary.json").read_text())
        assert summary["config"]["tau"] == 0.25

    def test_config_error_exit_two(self, tmp_path):
        cfg = write_cfg(tmp_path, {"model": "p3", "tau": 0.5})
        assert main(["solve", "--config", str(cfg)]) == 2

    def test_run_failure_exit_one_still_writes_summary(self, tmp_path, monkeypatch):
        from proxdyn import cli as cli_mod
        from proxdyn.errors import InnerSolverFailed

        def boom(*args, **kwargs):
            raise InnerSolverFailed("forced failure", step_index=1)

        monkeypatch.setattr(cli_mod.stepper, "run", boom)
        cfg = parse_config_dict(
            {"model": "linear_wave", "tau": 0.25, "n_nodes": 9,
             "out_dir": str(tmp_path / "out")}
        )
        assert run_and_emit(cfg) == 1
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert not summary["invariants_passed"]
        assert "forced failure" in summary["error"]

    def test_module_invocation(self, tmp_path):
        cfg = write_cfg(tmp_path, {"model": "linear_wave", "tau": 0.25, "n_nodes": 9})
        proc = subprocess.run(
            [sys.executable, "-m", "proxdyn.cli", "solve", "--config", str(cfg),
             "--out", str(tmp_path / "o3")],
            capture_output=True,
        )
        assert proc.returncode == 0
