"""Problem model: energy, dissipation, perturbation, force, and validation.

A ProblemSpec collects the discretized quadruple (E_t, Psi_u, B, f) together
with the grid and initial data.  All abstract spaces collapse onto the
single nodal vector space with h-weighted norms; dual elements are stored
as nodal vectors through the h-pairing (discrete Riesz representation).

Specs are immutable after construction and safe to share across runs; all
operations here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np

from .errors import ConfigError, EvalError
from .grid import (
    Field,
    SpatialGrid,
    first_eigenpair,
    gradient_matrix,
    h_norm,
    operator_norm,
    q_norm,
)


@dataclass(frozen=True)
class EnergySpec:
    """Energy E_t(u) = 0.5 <A u, u>_h + E2_t(u).

    quad_op is the h-representation of the symmetric strongly positive
    operator; lambda_conv is a certified convexity defect: the full energy
    satisfies the interpolation inequality

        E_t(th*u + (1-th)*v) <= th*E_t(u) + (1-th)*E_t(v)
                                + th*(1-th)*lambda_conv*|u-v|_h^2.

    It gates the unique-minimizer step bound tau <= 1/(2*lambda_conv).
    The smooth callables take (t, values) with values over interior nodes;
    time_deriv evaluates d/dt E2_t(u) and c1 is its control constant.
    """

    quad_op: np.ndarray
    lambda_conv: float
    smooth_value: Optional[Callable[[float, np.ndarray], float]] = None
    smooth_grad: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    time_deriv: Optional[Callable[[float, np.ndarray], float]] = None
    c1: float = 0.0
    # Optional solver-facing decomposition of E2 (exact, consistency-tested):
    # E2_t(u) = site_quartic * h * sum_site (M u)_site^4
    #           + 0.5 <quad_shift u, u>_h + <lin_part(t), u>_h + const(t),
    # with M the identity (separable dissipation) or the discrete gradient
    # (composite).  Lets the stepper fold stiff smooth terms into exactly
    # solvable blocks instead of explicit gradient steps.
    smooth_structured: bool = False
    quad_shift: Optional[np.ndarray] = None
    site_quartic: float = 0.0
    lin_part: Optional[Callable[[float], np.ndarray]] = None

    def __post_init__(self):
        a = np.asarray(self.quad_op, dtype=float)
        object.__setattr__(self, "quad_op", a)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigError("quad_op must be a square matrix")
        if self.lambda_conv < 0:
            raise ConfigError("lambda_conv must be nonnegative")
        if (self.smooth_value is None) != (self.smooth_grad is None):
            raise ConfigError("smooth value and gradient must be supplied together")
        if self.smooth_structured and self.smooth_value is None:
            raise ConfigError("structured smooth part still needs value/grad callables")
        if self.quad_shift is not None:
            qs = np.asarray(self.quad_shift, dtype=float)
            object.__setattr__(self, "quad_shift", qs)
            if qs.shape != a.shape:
                raise ConfigError("quad_shift must match quad_op shape")
        if self.site_quartic < 0:
            raise ConfigError("site_quartic must be nonnegative")


DissipationKind = Literal["separable", "grad_composite"]


@dataclass(frozen=True)
class DissipationSpec:
    """State-dependent dissipation potential Psi_u(v).

    separable:       Psi_u(v) = h * sum_i [ a_i |v_i| + (g_i/q) |v_i|^q ]
    grad_composite:  Psi_u(v) = h * sum_e [ a_e |(Dv)_e| + (g_e/q) |(Dv)_e|^q ]
                                + (visc/2) * h * sum_e (Dv)_e^2

    state_dep maps the state field to the per-site coefficient arrays
    (a, g): per interior node for the separable kind, per edge for the
    gradient-composite kind.  growth_c / growth_C certify the sandwich
    growth_c*(||v||^q - 1) <= Psi_u(v) <= growth_C*(||v||^q + 1) in the
    kind's natural norm (plain or gradient q-norm).
    """

    kind: DissipationKind
    state_dep: Callable[[Field], tuple[np.ndarray, np.ndarray]]
    q: float
    visc: float = 0.0
    growth_c: float = 0.0
    growth_C: float = 1.0

    def __post_init__(self):
        if self.kind not in ("separable", "grad_composite"):
            raise ConfigError(f"unknown dissipation kind {self.kind!r}")
        if not self.q > 1.0:
            raise ConfigError("growth exponent q must exceed 1")
        if self.visc < 0.0:
            raise ConfigError("viscosity must be nonnegative")
        if self.visc > 0.0 and self.kind != "grad_composite":
            raise ConfigError("viscosity applies to the gradient-composite kind only")

    def coefficients(self, state: Field) -> tuple[np.ndarray, np.ndarray]:
        a, g = self.state_dep(state)
        a = np.asarray(a, dtype=float)
        g = np.asarray(g, dtype=float)
        n_sites = (
            state.grid.n_interior
            if self.kind == "separable"
            else state.grid.n_interior + 1
        )
        if a.shape != (n_sites,) or g.shape != (n_sites,):
            raise ConfigError(
                f"state_dep must return per-site arrays of length {n_sites}"
            )
        if np.any(a < 0) or np.any(g < 0):
            raise ConfigError("dissipation coefficients must be nonnegative")
        return a, g

    def value(self, state: Field, v: np.ndarray, grad_op: np.ndarray) -> float:
        a, g = self.coefficients(state)
        h = state.grid.h
        if self.kind == "separable":
            z = np.asarray(v, dtype=float)
        else:
            z = grad_op @ np.asarray(v, dtype=float)
        s = np.abs(z)
        total = float(h * np.sum(a * s + (g / self.q) * s**self.q))
        if self.visc > 0.0:
            total += 0.5 * self.visc * h * float(z @ z)
        return total


@dataclass(frozen=True)
class PerturbationSpec:
    """Non-variational perturbation B(t, u, v), stored as a nodal vector.

    eval = None is the zero map.  growth_exponent records the power p of
    the growth control |B| <= C(|u|^(p-1) + 1).
    """

    eval: Optional[Callable[[float, Field, Field], Field]] = None
    growth_exponent: float = 2.0

    def __call__(self, t: float, u: Field, v: Field) -> np.ndarray:
        if self.eval is None:
            return np.zeros_like(u.values)
        out = self.eval(t, u, v)
        vals = np.asarray(getattr(out, "values", out), dtype=float)
        if vals.shape != u.values.shape:
            raise ConfigError("perturbation returned a wrong-sized vector")
        if not np.all(np.isfinite(vals)):
            raise EvalError("perturbation produced non-finite values")
        return vals


@dataclass(frozen=True)
class Operators:
    """Grid operators derived once per problem (immutable cache)."""

    grad: np.ndarray
    grad_norm: float
    lap_min_eig: float


@dataclass(frozen=True)
class ProblemSpec:
    """The full discretized problem (grid, E, Psi, B, f, horizon, data)."""

    grid: SpatialGrid
    energy: EnergySpec
    dissipation: DissipationSpec
    perturbation: PerturbationSpec
    force: Optional[Callable[[float], Field]]
    horizon: float
    u0: Field
    v0: Field
    ops: Operators = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = self.grid.n_interior
        if self.energy.quad_op.shape != (m, m):
            raise ConfigError(
                f"quad_op is {self.energy.quad_op.shape}, expected ({m}, {m})"
            )
        if self.u0.values.shape != (m,) or self.v0.values.shape != (m,):
            raise ConfigError("initial data incompatible with grid interior size")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        d = gradient_matrix(self.grid)
        lap = d.T @ d
        object.__setattr__(
            self,
            "ops",
            Operators(
                grad=d,
                grad_norm=float(np.sqrt(operator_norm(lap))),
                lap_min_eig=first_eigenpair(lap, self.grid.h)[0],
            ),
        )

    def force_values(self, t: float) -> np.ndarray:
        if self.force is None:
            return np.zeros(self.grid.n_interior)
        out = self.force(t)
        vals = np.asarray(getattr(out, "values", out), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise EvalError(f"force produced non-finite values at t={t}")
        return vals

    def psi_value(self, state: Field, v: np.ndarray) -> float:
        return self.dissipation.value(state, v, self.ops.grad)

    def psi_strong_modulus(self, a: np.ndarray, g: np.ndarray) -> float:
        """Certified strong convexity of Psi_state in |.|_h, 0 if none."""
        if self.dissipation.kind == "separable":
            return float(np.min(g)) if self.dissipation.q == 2.0 else 0.0
        site_quad = self.dissipation.visc
        if self.dissipation.q == 2.0:
            site_quad += float(np.min(g))
        return site_quad * self.ops.lap_min_eig


def tau_max(spec: ProblemSpec) -> float:
    """Largest step with a guaranteed unique minimizer, 1/(2*lambda)."""
    lam = spec.energy.lambda_conv
    return float("inf") if lam == 0.0 else 1.0 / (2.0 * lam)


def energy_total(spec: ProblemSpec, t: float, u: Field) -> float:
    """E_t(u) = 0.5 <A u, u>_h + E2_t(u)."""
    vals = u.values
    quad = 0.5 * spec.grid.h * float(vals @ (spec.energy.quad_op @ vals))
    smooth = 0.0
    if spec.energy.smooth_value is not None:
        smooth = float(spec.energy.smooth_value(t, vals))
    out = quad + smooth
    if not np.isfinite(out):
        raise EvalError(f"energy evaluated non-finite at t={t}")
    return out


def energy_grad(spec: ProblemSpec, t: float, values: np.ndarray) -> np.ndarray:
    """h-representation of D E_t(u) = A u + D E2_t(u)."""
    g = spec.energy.quad_op @ values
    if spec.energy.smooth_grad is not None:
        g = g + np.asarray(spec.energy.smooth_grad(t, values), dtype=float)
    if not np.all(np.isfinite(g)):
        raise EvalError(f"energy gradient non-finite at t={t}")
    return g


def energy_time_deriv(spec: ProblemSpec, t: float, values: np.ndarray) -> float:
    if spec.energy.time_deriv is None:
        return 0.0
    out = float(spec.energy.time_deriv(t, values))
    if not np.isfinite(out):
        raise EvalError(f"energy time derivative non-finite at t={t}")
    return out


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]
    tau_max: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]


def validate_assumptions(
    spec: ProblemSpec, samples: int, seed: int = 0
) -> ValidationReport:
    """Sample-check the standing assumptions on a concrete problem.

    Verifies symmetry and strong positivity of the quadratic operator, the
    lambda-convexity interpolation inequality for the total energy, the
    zero-at-rest and growth sandwich of the dissipation, and continuity of
    the perturbation on bounded sets.  Reports the worst violation per
    check plus the admissible step bound tau_max = 1/(2*lambda_conv).
    """
    if samples < 1:
        raise ConfigError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    grid = spec.grid
    m = grid.n_interior
    h = grid.h
    checks = []

    a_mat = spec.energy.quad_op
    asym = 0.5 * float(np.max(np.abs(a_mat - a_mat.T)))
    sym_tol = 1e-12 * (1.0 + float(np.max(np.abs(a_mat))))
    checks.append(
        CheckResult("quad_op_symmetry", asym <= sym_tol, asym, f"tolerance {sym_tol:.3e}")
    )

    mu = float(np.linalg.eigvalsh(0.5 * (a_mat + a_mat.T))[0])
    checks.append(
        CheckResult("quad_op_positivity", mu > 0.0, max(0.0, -mu), f"mu = {mu:.6e}")
    )

    lam = spec.energy.lambda_conv
    worst_conv = 0.0
    for _ in range(samples):
        u = Field(rng.standard_normal(m), grid)
        v = Field(rng.standard_normal(m), grid)
        th = rng.uniform()
        t = rng.uniform(0.0, spec.horizon)
        mid = Field(th * u.values + (1 - th) * v.values, grid)
        lhs = energy_total(spec, t, mid)
        rhs = (
            th * energy_total(spec, t, u)
            + (1 - th) * energy_total(spec, t, v)
            + th * (1 - th) * lam * h_norm(u.values - v.values, h) ** 2
        )
        worst_conv = max(worst_conv, lhs - rhs)
    conv_tol = 1e-10
    checks.append(
        CheckResult("lambda_convexity", worst_conv <= conv_tol, worst_conv, f"lambda = {lam}")
    )

    worst_zero = 0.0
    for _ in range(samples):
        state = Field(rng.standard_normal(m), grid)
        worst_zero = max(worst_zero, abs(spec.psi_value(state, np.zeros(m))))
    checks.append(CheckResult("psi_zero_at_rest", worst_zero == 0.0, worst_zero))

    worst_growth = 0.0
    q = spec.dissipation.q
    for _ in range(samples):
        state = Field(rng.standard_normal(m), grid)
        scale = 10.0 ** rng.uniform(-1, 1)
        v = scale * rng.standard_normal(m)
        psi = spec.psi_value(state, v)
        if spec.dissipation.kind == "separable":
            nrm = q_norm(v, h, q)
        else:
            nrm = q_norm(spec.ops.grad @ v, h, q)
        lower = spec.dissipation.growth_c * (nrm**q - 1.0)
        upper = spec.dissipation.growth_C * (nrm**q + 1.0)
        worst_growth = max(worst_growth, lower - psi, psi - upper)
    growth_tol = 1e-10
    checks.append(
        CheckResult("growth_sandwich", worst_growth <= growth_tol, max(worst_growth, 0.0))
    )

    worst_ratio = 0.0
    pert_ok = True
    if spec.perturbation.eval is not None:
        for _ in range(samples):
            t = rng.uniform(0.0, spec.horizon)
            u = rng.standard_normal(m)
            v = rng.standard_normal(m)
            base = spec.perturbation(t, Field(u, grid), Field(v, grid))
            ratios = []
            for eps in (1e-3, 1e-6):
                du = eps * rng.standard_normal(m)
                dv = eps * rng.standard_normal(m)
                out = spec.perturbation(t, Field(u + du, grid), Field(v + dv, grid))
                denom = h_norm(du, h) + h_norm(dv, h)
                ratios.append(h_norm(out - base, h) / denom)
            if not all(np.isfinite(r) for r in ratios):
                pert_ok = False
                worst_ratio = float("inf")
                break
            # Continuity probe: the local Lipschitz ratio must not blow up
            # as the perturbation scale shrinks.
            growth = ratios[1] / (1.0 + 10.0 * ratios[0])
            worst_ratio = max(worst_ratio, growth)
        pert_ok = pert_ok and worst_ratio <= 1.0
    checks.append(
        CheckResult("perturbation_continuity", pert_ok, worst_ratio if spec.perturbation.eval else 0.0)
    )

    return ValidationReport(checks=tuple(checks), tau_max=tau_max(spec))


def gradient_consistency_error(
    spec: ProblemSpec, samples: int = 5, seed: int = 0, eps: float = 1e-6
) -> float:
    """Max relative error of the supplied D E2_t against central differences."""
    if spec.energy.smooth_value is None:
        return 0.0
    rng = np.random.default_rng(seed)
    m = spec.grid.n_interior
    worst = 0.0
    for _ in range(samples):
        u = rng.standard_normal(m)
        t = rng.uniform(0.0, spec.horizon)
        g = np.asarray(spec.energy.smooth_grad(t, u), dtype=float)
        fd = np.zeros(m)
        for i in range(m):
            up = u.copy()
            dn = u.copy()
            up[i] += eps
            dn[i] -= eps
            fd[i] = (spec.energy.smooth_value(t, up) - spec.energy.smooth_value(t, dn)) / (
                2 * eps * spec.grid.h
            )
        scale = max(1.0, float(np.max(np.abs(g))))
        worst = max(worst, float(np.max(np.abs(g - fd))) / scale)
    return worst
