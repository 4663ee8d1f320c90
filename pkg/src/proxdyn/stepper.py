"""Semi-implicit variational time stepping.

Each step minimizes

    Phi(u) = (1/(2 tau^2)) |u - 2v + w|_h^2 + tau Psi_state((u - v)/tau)
             + E_{t_n}(u) + <zeta, u>_h,        zeta = B(t_n, v, V_prev) - f_avg,

with the dissipation state and the perturbation frozen at the previous
step (v = U^{n-1}, w = U^{n-2}, synthesized as u0 - tau*v0 for n = 1).
Its stationarity reproduces the discrete inclusion

    (V^n - V^{n-1})/tau + dPsi_state(V^n) + DE_{t_n}(U^n) + B - f_avg  ∋ 0,

and the subgradient is recovered by rearrangement:
eta^n = f_avg - B - (V^n - V^{n-1})/tau - DE_{t_n}(U^n) = -grad(smooth Phi).

Runs are sequential in n; distinct runs are independent, and the returned
Trajectory is immutable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import convex
from .core import (
    ProblemSpec,
    energy_grad,
    energy_total,
    tau_max,
)
from .errors import (
    ConfigError,
    DomainError,
    EvalError,
    InnerSolverFailed,
    MaxIterExceeded,
    StepSizeTooLarge,
)
from .grid import Field, h_inner, h_norm

# 5-point Gauss-Legendre nodes and weights on [-1, 1].
_GAUSS_X = np.array(
    [
        -0.9061798459386640,
        -0.5384693101056831,
        0.0,
        0.5384693101056831,
        0.9061798459386640,
    ]
)
_GAUSS_W = np.array(
    [
        0.2369268850561891,
        0.4786286704993665,
        0.5688888888888889,
        0.4786286704993665,
        0.2369268850561891,
    ]
)

DEFAULT_INNER_TOL = 1e-9
DEFAULT_MAX_ITER = 50_000


def gauss5(fn: Callable[[float], float], t_lo: float, t_hi: float) -> float:
    """5-point Gauss quadrature of a scalar function over [t_lo, t_hi]."""
    mid = 0.5 * (t_lo + t_hi)
    half = 0.5 * (t_hi - t_lo)
    return half * sum(w * fn(mid + half * x) for x, w in zip(_GAUSS_X, _GAUSS_W))


def average_force(f: Callable, t_lo: float, t_hi: float):
    """Interval average (1/(t_hi-t_lo)) * int f, by 5-point Gauss quadrature.

    Exact for polynomial time dependence up to degree 9; in particular a
    constant force averages to itself.  Returns the same type f produces
    (Field or ndarray).
    """
    if not t_hi > t_lo:
        raise ConfigError(f"need t_hi > t_lo, got [{t_lo}, {t_hi}]")
    mid = 0.5 * (t_lo + t_hi)
    half = 0.5 * (t_hi - t_lo)
    first = f(mid + half * _GAUSS_X[0])
    grid = getattr(first, "grid", None)
    acc = _GAUSS_W[0] * np.asarray(getattr(first, "values", first), dtype=float)
    for x, w in zip(_GAUSS_X[1:], _GAUSS_W[1:]):
        val = f(mid + half * x)
        acc = acc + w * np.asarray(getattr(val, "values", val), dtype=float)
    acc = 0.5 * acc
    if not np.all(np.isfinite(acc)):
        raise EvalError(f"force non-finite on [{t_lo}, {t_hi}]")
    return Field(acc, grid) if grid is not None else acc


@dataclass(frozen=True)
class StepInput:
    """Data of one incremental minimization.

    v = U^{n-1}, w = U^{n-2}; zeta = B(t_n, U^{n-1}, V^{n-1}) - f_avg^n,
    state_for_psi = U^{n-1} freezes the dissipation state.
    """

    tau: float
    t_prev: float
    v: Field
    w: Field
    zeta: Field
    state_for_psi: Field

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("step size must be positive")


@dataclass(frozen=True)
class StepReport:
    fy_gap: float
    el_residual: float
    inner_iters: int
    phi_value: float
    energy_after: float
    kinetic_after: float
    solver_gap: float = 0.0


@dataclass(frozen=True)
class Trajectory:
    """Per-step records of a run plus the data needed by diagnostics.

    U and V have N+1 entries (including the initial data); eta, forcing
    (S^n = f_avg^n - B^n) and reports have N entries for steps 1..N.
    V is reconstructed from stored U, so V[n] equals (U[n]-U[n-1])/tau
    identically.
    """

    spec: ProblemSpec
    tau: float
    times: np.ndarray
    U: tuple
    V: tuple
    eta: tuple
    forcing: tuple
    reports: tuple

    @property
    def n_steps(self) -> int:
        return len(self.U) - 1


def _phi_smooth_parts(spec: ProblemSpec, inp: StepInput):
    """Quadratic matrix, linear vector, and leftover smooth callables of Phi.

    The quadratic block always contains the inertia and the energy
    operator; with a structured smooth part, its matrix piece folds in and
    its quartic piece moves into the site potential, leaving no explicit
    остаток.  Returns (Q, b, rho_value, rho_grad, k4).
    """
    tau = inp.tau
    t_next = inp.t_prev + tau
    m = spec.grid.n_interior
    en = spec.energy
    q_mat = en.quad_op + np.eye(m) / tau**2
    b = inp.zeta.values - (2.0 * inp.v.values - inp.w.values) / tau**2
    k4 = 0.0
    rho_value = rho_grad = None
    if en.smooth_value is not None:
        if en.smooth_structured:
            if en.quad_shift is not None:
                q_mat = q_mat + en.quad_shift
            if en.lin_part is not None:
                b = b + en.lin_part(t_next)
            k4 = en.site_quartic
        else:
            # The solver works in the h-cancelled form Phi/h; the model's
            # smooth value carries the h-weight, its gradient does not.
            inv_h = 1.0 / spec.grid.h
            rho_value = lambda u: en.smooth_value(t_next, u) * inv_h
            rho_grad = lambda u: en.smooth_grad(t_next, u)
    return q_mat, b, rho_value, rho_grad, k4


def _site_potential(spec: ProblemSpec, inp: StepInput, k4: float) -> convex.SitePotential:
    """Per-site potential of tau * Psi_state((u-v)/tau) plus quartic energy.

    The 1-homogeneous weight survives the tau scaling unchanged, the
    q-power weight becomes g * tau^(1-q), and the quadratic viscosity
    becomes visc/tau; shifts are v (nodes) or Dv (edges).  The h factor of
    the dissipation integral cancels against the h-pairing except in the
    quartic energy coefficient, which carries it explicitly.
    """
    disp = spec.dissipation
    a, g = disp.coefficients(inp.state_for_psi)
    g_scaled = g * inp.tau ** (1.0 - disp.q)
    if disp.kind == "separable":
        shift = inp.v.values
        w2 = np.zeros_like(a)
    else:
        shift = spec.ops.grad @ inp.v.values
        w2 = np.full_like(a, disp.visc / inp.tau)
    return convex.SitePotential(a, g_scaled, disp.q, w2, shift, k4=k4)


def phi_value(spec: ProblemSpec, inp: StepInput, u: Field) -> float:
    """Evaluate Phi at a candidate u (used for the per-step decrease check)."""
    tau = inp.tau
    t_next = inp.t_prev + tau
    h = spec.grid.h
    inertia = 0.5 / tau**2 * h_norm(u.values - 2 * inp.v.values + inp.w.values, h) ** 2
    vel = (u.values - inp.v.values) / tau
    diss = tau * spec.psi_value(inp.state_for_psi, vel)
    return inertia + diss + energy_total(spec, t_next, u) + h_inner(inp.zeta.values, u.values, h)


def _fy_gap_separable(spec, a, g, v_vel, eta, m_psi, resid_h):
    """Fenchel-Young gap at (V^n, eta^n) via the closed-form conjugate."""
    h = spec.grid.h
    q = spec.dissipation.q
    s = np.abs(v_vel)
    psi_terms = a * s + (g / q) * s**q
    conj_terms = convex.conj_core(a, g, q, eta)
    gap = float(h * np.sum(psi_terms + conj_terms - eta * v_vel))
    if np.isfinite(gap):
        return gap
    if m_psi > 0.0:
        return resid_h**2 / (2.0 * m_psi)
    return abs(float(h * np.sum(eta * v_vel)))


def incremental_minimize(
    spec: ProblemSpec,
    inp: StepInput,
    warm: Optional[Field] = None,
    *,
    inner_tol: float = DEFAULT_INNER_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
):
    """One incremental minimization step: returns (U^n, eta^n, StepReport).

    The stored eta^n is the rearrangement of the discrete inclusion (it
    satisfies the equation identically); the Fenchel-Young gap measures its
    distance from an exact subgradient.  For separable dissipation the gap
    is evaluated in closed form; for the composite kind it is the certified
    bound |eta - eta_hat|_h^2 / (2 m) with m the strong convexity modulus
    of Psi, and eta_hat the projected solver dual (an exact subgradient).
    Raises StepSizeTooLarge beyond tau <= 1/(2 lambda) and InnerSolverFailed
    (carrying the best iterate) if the inner solve stalls.
    """
    u_field, eta_field, report, _ = _minimize_with_dual(
        spec, inp, warm, inner_tol=inner_tol, max_iter=max_iter, dual_warm=None
    )
    return u_field, eta_field, report


def _minimize_with_dual(
    spec: ProblemSpec,
    inp: StepInput,
    warm: Optional[Field],
    *,
    inner_tol: float,
    max_iter: int,
    dual_warm: Optional[np.ndarray],
):
    tau = inp.tau
    lam = spec.energy.lambda_conv
    tmax = tau_max(spec)
    if tau > tmax * (1 + 1e-12):
        raise StepSizeTooLarge(
            f"tau = {tau} exceeds tau_max = 1/(2*lambda) = {tmax}"
        )
    gamma = 1.0 / tau**2 - 2.0 * lam
    if gamma <= 0.0:
        raise StepSizeTooLarge(
            f"strict convexity certificate fails: 1/tau^2 - 2*lambda = {gamma} <= 0"
        )

    grid = spec.grid
    h = grid.h
    t_next = inp.t_prev + tau
    q_mat, b, rho_value, rho_grad, k4 = _phi_smooth_parts(spec, inp)
    disp = spec.dissipation
    a, g = disp.coefficients(inp.state_for_psi)
    pot = _site_potential(spec, inp, k4)
    m_psi = spec.psi_strong_modulus(a, g)
    fy_budget = 5.0 * inner_tol
    resid_target = np.sqrt(2.0 * m_psi * fy_budget) if m_psi > 0.0 else np.inf

    warm_vals = inp.v.values if warm is None else warm.values

    rho_lips = 0.0
    if rho_grad is not None:
        # Seed the backtracking Lipschitz estimate with a deterministic
        # finite-difference probe along an alternating-sign direction.
        direction = np.ones_like(warm_vals)
        direction[1::2] = -1.0
        step_len = 1e-6 * (1.0 + float(np.linalg.norm(warm_vals)))
        probe = direction * (step_len / np.linalg.norm(direction))
        g0 = rho_grad(warm_vals)
        g1 = rho_grad(warm_vals + probe)
        rho_lips = 4.0 * float(np.linalg.norm(g1 - g0)) / step_len + 1.0

    def rearranged_eta(u_vals):
        # eta^n from the rearranged inclusion: minus the smooth gradient of Phi.
        return -(
            (u_vals - 2.0 * inp.v.values + inp.w.values) / tau**2
            + energy_grad(spec, t_next, u_vals)
            + inp.zeta.values
        )

    if disp.kind == "separable":
        prob = convex.ProxGradProblem(
            quad_op=q_mat,
            lin=b,
            nonsmooth=pot,
            h=h,
            strong_convexity=gamma,
            quad_norm=float(np.linalg.norm(q_mat, 2)),
            smooth_value=rho_value,
            smooth_grad=rho_grad,
            smooth_lips=rho_lips,
            tol=inner_tol,
            resid_target=resid_target,
            max_iter=max_iter,
        )
        try:
            u_vals, p_hat, rep = convex.solve_prox_gradient(prob, warm_vals)
        except MaxIterExceeded as exc:
            raise InnerSolverFailed(str(exc), best=exc.best) from exc
        eta_vals = rearranged_eta(u_vals)
        v_vel = (u_vals - inp.v.values) / tau
        eta_hat = p_hat - pot.quartic_grad(u_vals)
        resid_h = h_norm(eta_vals - eta_hat, h)
        if pot.is_zero:
            # Zero dissipation: Psi* is the indicator of {0}; charge the
            # dual infeasibility through the pairing term.
            fy = abs(h_inner(eta_vals, v_vel, h))
        else:
            fy = _fy_gap_separable(spec, a, g, v_vel, eta_vals, m_psi, resid_h)
    else:
        prob = convex.PDProblem(
            quad_op=q_mat,
            lin=b,
            lin_op=spec.ops.grad,
            nonsmooth=pot,
            h=h,
            strong_convexity=gamma,
            op_norm=spec.ops.grad_norm,
            smooth_value=rho_value,
            smooth_grad=rho_grad,
            smooth_lips=rho_lips,
            tol=inner_tol,
            resid_target=resid_target,
            # The Fenchel-Young gap lives at velocity scale (u - v)/tau, so
            # the splitting-feasibility budget must shrink with tau.
            fy_slack=2.5 * inner_tol * min(tau, 1.0),
            max_iter=max_iter,
        )
        fy_cap = 9.0 * inner_tol
        p_hat, sched = (dual_warm if dual_warm is not None else (None, None))
        for attempt in range(3):
            try:
                u_vals, p_hat, rep = convex.solve_pd(prob, warm_vals, p0=p_hat, sched=sched)
            except MaxIterExceeded as exc:
                raise InnerSolverFailed(str(exc), best=exc.best) from exc
            sched = rep.sched
            eta_vals = rearranged_eta(u_vals)
            v_vel = (u_vals - inp.v.values) / tau
            resid_h = rep.resid_h
            if pot.is_zero:
                fy = abs(h_inner(eta_vals, v_vel, h))
                break
            # Exact conjugate through the 1D dual characterization: the
            # Fenchel-Young gap of the stored (V^n, eta^n) pair, honest to
            # the accuracy of a scalar convex minimization.
            psi_v = spec.psi_value(inp.state_for_psi, v_vel)
            conj_v = convex.composite_conjugate(a, disp.visc, g, disp.q, h, eta_vals)
            fy = psi_v + conj_v - h_inner(eta_vals, v_vel, h)
            if fy <= fy_cap or not np.isfinite(fy):
                break
            prob.tol *= 0.1
            prob.resid_target *= 0.2
            prob.fy_slack *= 0.1
            warm_vals = u_vals

    u_field = Field(u_vals, grid)
    report = StepReport(
        fy_gap=fy,
        el_residual=resid_h,
        inner_iters=rep.iterations,
        phi_value=phi_value(spec, inp, u_field),
        energy_after=energy_total(spec, t_next, u_field),
        kinetic_after=0.5 * h_norm(v_vel, h) ** 2,
        solver_gap=rep.gap,
    )
    carry = (p_hat, rep.sched) if disp.kind == "grad_composite" else None
    return u_field, Field(eta_vals, grid), report, carry


def run(
    spec: ProblemSpec,
    tau: float,
    *,
    inner_tol: float = DEFAULT_INNER_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> Trajectory:
    """March the scheme over [0, T] with equidistant steps.

    tau must divide the horizon to within 1e-12 and respect the step
    bound; the first step synthesizes U^{-1} = u0 - tau*v0 so that
    V^0 = v0.  Solver failures propagate with the step index attached.
    """
    big_t = spec.horizon
    n_steps = int(round(big_t / tau))
    if n_steps < 1 or abs(n_steps * tau - big_t) > 1e-12 * max(1.0, big_t):
        raise ConfigError(
            f"tau = {tau} does not divide the horizon T = {big_t} (N = {n_steps})"
        )
    tmax = tau_max(spec)
    if tau > tmax * (1 + 1e-12):
        raise StepSizeTooLarge(f"tau = {tau} exceeds tau_max = {tmax}")

    grid = spec.grid
    u_list = [spec.u0]
    v_list = [spec.v0]
    eta_list = []
    forcing_list = []
    reports = []
    u_prev = spec.u0
    u_prev2 = Field(spec.u0.values - tau * spec.v0.values, grid)
    v_prev = spec.v0
    dual = None
    for n in range(1, n_steps + 1):
        t_prev = (n - 1) * tau
        t_n = n * tau
        f_avg = average_force(spec.force_values, t_prev, t_n) if spec.force else np.zeros(grid.n_interior)
        b_vals = spec.perturbation(t_n, u_prev, v_prev)
        zeta = Field(b_vals - f_avg, grid)
        inp = StepInput(
            tau=tau,
            t_prev=t_prev,
            v=u_prev,
            w=u_prev2,
            zeta=zeta,
            state_for_psi=u_prev,
        )
        try:
            u_n, eta_n, report, dual = _minimize_with_dual(
                spec, inp, u_prev, inner_tol=inner_tol,
                max_iter=max_iter, dual_warm=dual,
            )
        except InnerSolverFailed as exc:
            exc.step_index = n
            raise InnerSolverFailed(
                f"step {n} (t = {t_n:.6g}): {exc}", best=exc.best, step_index=n
            ) from exc
        v_n = Field((u_n.values - u_prev.values) / tau, grid)
        u_list.append(u_n)
        v_list.append(v_n)
        eta_list.append(eta_n)
        forcing_list.append(Field(-zeta.values, grid))
        reports.append(report)
        u_prev2, u_prev, v_prev = u_prev, u_n, v_n

    return Trajectory(
        spec=spec,
        tau=tau,
        times=tau * np.arange(n_steps + 1),
        U=tuple(u_list),
        V=tuple(v_list),
        eta=tuple(eta_list),
        forcing=tuple(forcing_list),
        reports=tuple(reports),
    )


def admissible_tau(spec: ProblemSpec, target: float) -> float:
    """Largest step <= target that divides the horizon exactly."""
    n = max(1, int(np.ceil(spec.horizon / target - 1e-12)))
    return spec.horizon / n


@dataclass(frozen=True)
class InterpolantSet:
    """Right-constant, left-constant, and piecewise-linear reconstructions.

    u_bar(t) is right-constant (value U^n on (t_{n-1}, t_n]), u_under(t)
    left-constant (U^{n-1} on [t_{n-1}, t_n), with u_under(T) = U^N), and
    u_hat(t) the linear interpolant; same for the velocities.  t_bar and
    t_under snap t to the right and left grid nodes, with t_bar(0) = 0 and
    t_under(T) = T.
    """

    traj: Trajectory

    def _check(self, t: float) -> None:
        big_t = self.traj.times[-1]
        if t < -1e-12 or t > big_t + 1e-12:
            raise DomainError(f"t = {t} outside [0, {big_t}]")

    def _right_index(self, t: float) -> int:
        n = int(np.ceil(t / self.traj.tau - 1e-12))
        return min(max(n, 0), self.traj.n_steps)

    def _left_index(self, t: float) -> int:
        if t >= self.traj.times[-1] - 1e-12:
            return self.traj.n_steps
        n = int(np.floor(t / self.traj.tau + 1e-12))
        return min(max(n, 0), self.traj.n_steps)

    def u_bar(self, t: float) -> np.ndarray:
        self._check(t)
        return self.traj.U[self._right_index(t)].values

    def u_under(self, t: float) -> np.ndarray:
        self._check(t)
        return self.traj.U[self._left_index(t)].values

    def u_hat(self, t: float) -> np.ndarray:
        self._check(t)
        k = min(self._left_index(t), self.traj.n_steps - 1)
        tau = self.traj.tau
        t_k = self.traj.times[k]
        th = np.clip((t - t_k) / tau, 0.0, 1.0)
        return (1 - th) * self.traj.U[k].values + th * self.traj.U[k + 1].values

    def v_bar(self, t: float) -> np.ndarray:
        self._check(t)
        return self.traj.V[self._right_index(t)].values

    def v_under(self, t: float) -> np.ndarray:
        self._check(t)
        return self.traj.V[self._left_index(t)].values

    def v_hat(self, t: float) -> np.ndarray:
        self._check(t)
        k = min(self._left_index(t), self.traj.n_steps - 1)
        tau = self.traj.tau
        t_k = self.traj.times[k]
        th = np.clip((t - t_k) / tau, 0.0, 1.0)
        return (1 - th) * self.traj.V[k].values + th * self.traj.V[k + 1].values

    def t_bar(self, t: float) -> float:
        self._check(t)
        return float(self.traj.times[self._right_index(t)])

    def t_under(self, t: float) -> float:
        self._check(t)
        return float(self.traj.times[self._left_index(t)])


def interpolants(traj: Trajectory) -> InterpolantSet:
    """Interpolant evaluators for a completed trajectory."""
    if traj.n_steps < 1:
        raise ConfigError("trajectory is empty")
    return InterpolantSet(traj)
