"""Energy-dissipation inequality scan, monitors, deviations, refinement."""

import numpy as np
import pytest

from proxdyn.core import (
    DissipationSpec,
    EnergySpec,
    PerturbationSpec,
    ProblemSpec,
)
from proxdyn.diagnostics import (
    apriori_monitor,
    convergence_study,
    deviation_norms,
    edi_scan,
    energy_balance_residual,
)
from proxdyn.errors import ConfigError, IncompleteTrajectory
from proxdyn.grid import Field, SpatialGrid, laplacian_matrix
from proxdyn.models import P2Params, P3Params, build_linear_wave, build_p2, build_p3
from proxdyn.stepper import Trajectory, run


def zero_spec(n=9):
    g = SpatialGrid(n, 1.0 / (n - 1))
    m = g.n_interior
    return ProblemSpec(
        grid=g,
        energy=EnergySpec(quad_op=laplacian_matrix(g), lambda_conv=0.0),
        dissipation=DissipationSpec(
            kind="separable",
            state_dep=lambda s: (np.ones(m), np.ones(m)),
            q=2.0, growth_c=0.4, growth_C=2.0,
        ),
        perturbation=PerturbationSpec(),
        force=None, horizon=1.0,
        u0=Field(np.zeros(m), g), v0=Field(np.zeros(m), g),
    )


class TestEDIScan:
    def test_zero_trajectory(self):
        traj = run(zero_spec(), 0.1)
        for rec in edi_scan(traj.spec, traj):
            assert rec.residual == pytest.approx(0.0, abs=1e-14)
            assert rec.passed

    def test_damped_wave_inequality_holds(self):
        spec, _ = build_linear_wave(1.0, n_nodes=33)
        traj = run(spec, 1e-3)
        records = edi_scan(spec, traj)
        assert len(records) == 1000
        assert all(r.passed for r in records)
        # inequality direction: theорem gives residual <= per-step gaps
        assert max(r.residual for r in records) <= max(r.tol for r in records)

    def test_corrupted_subgradient_detected(self):
        # A +10% corruption of one stored subgradient must trip the record
        # at that step.  With rate-independent dissipation and a moving
        # state the pairing term is first order in the velocity, so the
        # corruption dominates the scheme's natural quadratic margin.
        g_probe = build_p3(P3Params(n_nodes=17, force_amplitude=0.0)).grid
        v0 = 3.0 * np.sin(np.pi * g_probe.interior_x / g_probe.length)
        spec = build_p3(
            P3Params(n_nodes=17, force_amplitude=0.0,
                     u0=np.zeros(g_probe.n_interior), v0=v0)
        )
        traj = run(spec, 0.01)
        k_bad = 0
        eta = list(traj.eta)
        eta[k_bad] = Field(eta[k_bad].values * 1.1, spec.grid)
        bad = Trajectory(
            spec=spec, tau=traj.tau, times=traj.times, U=traj.U, V=traj.V,
            eta=tuple(eta), forcing=traj.forcing, reports=traj.reports,
        )
        records = edi_scan(spec, bad)
        assert not records[k_bad].passed

    def test_missing_eta_rejected(self):
        spec, _ = build_linear_wave(1.0, n_nodes=17)
        traj = run(spec, 0.1)
        broken = Trajectory(
            spec=spec, tau=traj.tau, times=traj.times, U=traj.U, V=traj.V,
            eta=traj.eta[:-1], forcing=traj.forcing, reports=traj.reports,
        )
        with pytest.raises(IncompleteTrajectory):
            edi_scan(spec, broken)

    def test_p3_with_time_dependent_energy(self):
        spec = build_p3(P3Params(n_nodes=33))
        traj = run(spec, 1.0 / 64)
        assert all(r.passed for r in edi_scan(spec, traj))


class TestEnergyBalance:
    def test_zero_at_initial_time(self):
        spec, _ = build_linear_wave(1.0, n_nodes=17)
        traj = run(spec, 0.1)
        assert energy_balance_residual(spec, traj, 0.0) == 0.0

    def test_zero_trajectory(self):
        traj = run(zero_spec(), 0.1)
        assert energy_balance_residual(traj.spec, traj, 0.5) == pytest.approx(0.0, abs=1e-14)

    def test_residual_shrinks_with_tau(self):
        spec, _ = build_linear_wave(1.0, n_nodes=33)
        res = []
        for tau in (0.02, 0.01, 0.005):
            traj = run(spec, tau)
            res.append(energy_balance_residual(spec, traj, 1.0))
        assert res[0] / res[1] >= 1.3
        assert res[1] / res[2] >= 1.3

    def test_requires_grid_node(self):
        spec, _ = build_linear_wave(1.0, n_nodes=17)
        traj = run(spec, 0.1)
        with pytest.raises(ConfigError):
            energy_balance_residual(spec, traj, 0.123)


class TestAprioriMonitor:
    def test_zero_trajectory(self):
        traj = run(zero_spec(), 0.1)
        rep = apriori_monitor(traj.spec, traj)
        assert rep.sup_velocity == 0.0
        assert rep.sup_energy == 0.0
        assert rep.psi_accum == 0.0
        assert rep.psi_star_accum == pytest.approx(0.0, abs=1e-15)
        assert rep.all_finite

    def test_p3_stable_under_halving(self):
        spec = build_p3(P3Params(n_nodes=17))
        reports = [apriori_monitor(spec, run(spec, tau)) for tau in (1 / 16, 1 / 32, 1 / 64)]
        base = reports[0]
        for rep in reports:
            assert rep.all_finite
            assert rep.sup_velocity <= 2 * base.sup_velocity + 1
            assert rep.sup_energy <= 2 * base.sup_energy + 1
            assert rep.psi_accum <= 2 * base.psi_accum + 1
            assert rep.psi_star_accum <= 2 * base.psi_star_accum + 1


class TestDeviationNorms:
    def test_constant_trajectory(self):
        traj = run(zero_spec(), 0.1)
        assert deviation_norms(traj) == (0.0, 0.0)

    def test_single_step_attains_increment(self):
        # One step from rest: the sup of the linear-vs-right-constant gap is
        # the full first increment, attained just above t0.
        spec, _ = build_linear_wave(0.0, n_nodes=17)
        traj = run(spec, 0.5)
        sup_u, sup_v = deviation_norms(traj)
        du = traj.U[1].values - traj.U[0].values
        q = spec.dissipation.q
        want = (spec.grid.h * np.sum(np.abs(du) ** q)) ** (1 / q)
        first = (spec.grid.h * np.sum(np.abs(du) ** q)) ** (1 / q)
        assert sup_u >= first - 1e-15

    def test_halving_decreases_deviations(self):
        spec, _ = build_linear_wave(1.0, n_nodes=33)
        sups = [deviation_norms(run(spec, tau)) for tau in (0.02, 0.01, 0.005)]
        for (u0, v0), (u1, v1) in zip(sups, sups[1:]):
            assert u1 < u0
            assert v1 < v0


class TestConvergenceStudy:
    def test_linear_wave_first_order(self):
        spec, _ = build_linear_wave(1.0, n_nodes=33)
        table = convergence_study(spec, 0.02, 3)
        assert len(table.taus) == 4
        assert len(table.cauchy) == 3
        for rate in table.rates:
            assert rate == pytest.approx(1.0, abs=0.3)

    def test_zero_problem(self):
        table = convergence_study(zero_spec(), 0.25, 2)
        assert all(c == 0.0 for c in table.cauchy)
        assert all(u == 0.0 for u in table.sup_u_devs)

    def test_p3_cauchy_monotone(self):
        spec = build_p3(P3Params(n_nodes=17))
        table = convergence_study(spec, 1 / 16, 3)
        assert all(c1 < c0 for c0, c1 in zip(table.cauchy, table.cauchy[1:]))

    def test_p2_deviations_decay(self):
        spec = build_p2(P2Params(n_nodes=17))
        table = convergence_study(spec, 1 / 8, 2)
        assert all(u1 < u0 for u0, u1 in zip(table.sup_u_devs, table.sup_u_devs[1:]))

    def test_tau0_guard(self):
        spec = build_p3(P3Params(n_nodes=17))
        with pytest.raises(ConfigError):
            convergence_study(spec, 0.5, 2)
        with pytest.raises(ConfigError):
            convergence_study(spec, 1 / 16, 0)
