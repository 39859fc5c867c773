"""Finite-difference solvers for the obstacle problem

    min[ u - h, -du/dt - (1/2) sigma^2 u_xx - b u_x - f(t, x, u, sigma u_x) ] = 0,
    u(T, x) = g(x),

on a truncated space-time grid, plus the diagnostics that tie the PDE back
to the probabilistic solvers: a probe-wise comparison of u(t, x) against the
lattice value started at (t, x), a supersolution witness scan for the
exponential comparison function used in uniqueness arguments, and growth
class checks at large |x|.

Two schemes are provided. The projected scheme solves each implicit step as
a linear complementarity problem with red-black projected SOR (the obstacle
is enforced exactly). The penalized scheme replaces the constraint by the
driver term n * (u - h)^- and never projects. In both, f is coupled through
a lagged outer iteration: y and z = sigma * u_x are taken from the previous
sweep iterate, so each inner solve stays linear (or piecewise linear).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import ForwardModel, TimeGrid, build_lattice
from .problem import ProblemSpec
from .snell import _require_contraction, solve_snell

BOUNDARY_OBSTACLE = "dirichlet-obstacle"
BOUNDARY_EXTRAPOLATION = "dirichlet-terminal-extrapolation"

PSOR_TOL = 1e-12
PSOR_MAX_ITER = 10_000
OUTER_MAX_ITER = 100
EXP_SATURATION = 700.0


class PsorConvergenceError(RuntimeError):
    """Raised when the relaxation sweeps fail to reach tolerance."""


@dataclass(frozen=True)
class PdeGrid:
    """Uniform space-time grid on [x_min, x_max] x [0, horizon].

    ``boundary_mode`` fixes the Dirichlet data, computed by carrying the
    terminal payoff backward at the frozen boundary state through the
    generator-only flow (for a linear discounting generator: the discounted
    payoff). ``dirichlet-obstacle`` additionally reflects that flow at the
    obstacle, so a binding boundary pins the obstacle value;
    ``dirichlet-terminal-extrapolation`` uses the unreflected flow.
    """

    x_min: float
    x_max: float
    m_nodes: int
    time: TimeGrid
    boundary_mode: str = BOUNDARY_OBSTACLE

    def __post_init__(self):
        if self.m_nodes < 3:
            raise ValueError("m_nodes must be >= 3")
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be < x_max")
        if self.boundary_mode not in (BOUNDARY_OBSTACLE, BOUNDARY_EXTRAPOLATION):
            raise ValueError(f"unknown boundary_mode {self.boundary_mode!r}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.m_nodes - 1)

    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.m_nodes)

    def times(self) -> np.ndarray:
        n = self.time.n_steps
        return self.time.horizon * np.arange(n + 1) / n


@dataclass(frozen=True)
class PdeField:
    """Grid values u[k][i] (time-major), with solver metadata.

    For the projected method ``complementarity`` is the worst nodewise
    product residual * (u - h) observed over all time steps and
    ``min_operator_residual`` the most negative operator residual.
    """

    u: np.ndarray
    grid: PdeGrid
    method: str
    penalty_n: float | None = None
    complementarity: float = 0.0
    min_operator_residual: float = 0.0

    def interpolate(self, t: float, x: float) -> float:
        """Bilinear interpolation of u at an interior point (t, x)."""
        times = self.grid.times()
        xs = self.grid.xs()
        if not (times[0] - 1e-12 <= t <= times[-1] + 1e-12):
            raise ValueError(f"probe time {t} outside grid")
        if not (xs[0] - 1e-12 <= x <= xs[-1] + 1e-12):
            raise ValueError(f"probe state {x} outside grid")
        k = min(int(np.searchsorted(times, t, side="right")) - 1, len(times) - 2)
        k = max(k, 0)
        i = min(int(np.searchsorted(xs, x, side="right")) - 1, len(xs) - 2)
        i = max(i, 0)
        wt = (t - times[k]) / (times[k + 1] - times[k])
        wx = (x - xs[i]) / (xs[i + 1] - xs[i])
        u00, u01 = self.u[k, i], self.u[k, i + 1]
        u10, u11 = self.u[k + 1, i], self.u[k + 1, i + 1]
        return float(
            (1 - wt) * ((1 - wx) * u00 + wx * u01) + wt * ((1 - wx) * u10 + wx * u11)
        )


def _psor(lower, diag, upper, rhs, floor, start, omega, tol, max_iter):
    """Projected SOR with red-black ordering on a tridiagonal system.

    Solves the complementarity problem A v >= rhs, v >= floor,
    (A v - rhs) * (v - floor) = 0 (floor=None solves A v = rhs). ``lower``
    and ``upper`` carry zeros in their boundary entries; Dirichlet data must
    already be folded into ``rhs``.
    """
    v = start.copy()
    m = v.shape[0]
    colors = (np.arange(m) % 2 == 0, np.arange(m) % 2 == 1)
    for sweep in range(max_iter):
        delta = 0.0
        for mask in colors:
            left = np.concatenate(([0.0], v[:-1]))
            right = np.concatenate((v[1:], [0.0]))
            gs = (rhs - lower * left - upper * right) / diag
            cand = (1.0 - omega) * v + omega * gs
            if floor is not None:
                cand = np.maximum(cand, floor)
            delta = max(delta, float(np.max(np.abs(cand[mask] - v[mask]))))
            v[mask] = cand[mask]
        if delta <= tol:
            return v, sweep + 1
    left = np.concatenate(([0.0], v[:-1]))
    right = np.concatenate((v[1:], [0.0]))
    resid = lower * left + diag * v + upper * right - rhs
    worst = int(np.argmax(np.abs(resid)))
    raise PsorConvergenceError(
        f"PSOR did not converge within {max_iter} sweeps; "
        f"worst node index {worst}, value {v[worst]:.6g}, residual {resid[worst]:.3e}"
    )


def _penalized_sor(lower, diag, upper, rhs, floor, weight, start, omega, tol, max_iter):
    """Nonlinear red-black SOR for A v = rhs + weight * (floor - v)^+.

    Each nodewise update solves its scalar piecewise-linear equation exactly
    (branch v >= floor vs v < floor) before relaxation; no projection is
    applied, so v may end below the floor by O(1/weight).
    """
    v = start.copy()
    m = v.shape[0]
    colors = (np.arange(m) % 2 == 0, np.arange(m) % 2 == 1)
    for sweep in range(max_iter):
        delta = 0.0
        for mask in colors:
            left = np.concatenate(([0.0], v[:-1]))
            right = np.concatenate((v[1:], [0.0]))
            gathered = rhs - lower * left - upper * right
            cand_free = gathered / diag
            cand_pen = (gathered + weight * floor) / (diag + weight)
            cand = np.where(cand_free >= floor, cand_free, cand_pen)
            cand = (1.0 - omega) * v + omega * cand
            delta = max(delta, float(np.max(np.abs(cand[mask] - v[mask]))))
            v[mask] = cand[mask]
        if delta <= tol:
            return v, sweep + 1
    raise PsorConvergenceError(
        f"penalized SOR did not converge within {max_iter} sweeps"
    )


def _carry_boundary(grid: PdeGrid, spec: ProblemSpec, model: ForwardModel, x_bnd: float):
    """Dirichlet data at a frozen boundary state, one value per time index.

    The state is held at the boundary (the lateral operator is not available
    there), so the value solves the one-point backward equation
    v_k = v_{k+1} + dt * f(t_k, x, v_k, 0). In obstacle mode the step is
    reflected at h(t_k, x): for a deep-in-the-money put boundary this pins
    the obstacle value, at the opposite end it carries the discounted
    terminal payoff, matching the usual truncation policy at both ends.
    """
    times = grid.times()
    n = grid.time.n_steps
    dt = grid.time.dt
    xb = np.array([x_bnd])
    reflect = grid.boundary_mode == BOUNDARY_OBSTACLE
    values = np.empty(n + 1)
    values[n] = float(spec.terminal(xb)[0])
    for k in range(n - 1, -1, -1):
        h_b = float(spec.obstacle(times[k], xb)[0]) if reflect else -math.inf
        v = max(values[k + 1], h_b)
        for _ in range(OUTER_MAX_ITER):
            fval = float(np.asarray(spec.generator(times[k], xb, np.array([v]), np.zeros(1)))[0])
            v_new = max(values[k + 1] + dt * fval, h_b)
            if abs(v_new - v) <= 1e-14 * (1.0 + abs(v_new)):
                v = v_new
                break
            v = v_new
        values[k] = v
    return values


def _boundary_values(grid: PdeGrid, spec: ProblemSpec, model: ForwardModel):
    """Dirichlet data (left[k], right[k]) for every time index."""
    return (
        _carry_boundary(grid, spec, model, grid.x_min),
        _carry_boundary(grid, spec, model, grid.x_max),
    )


def _step_matrix(grid: PdeGrid, model: ForwardModel, t: float):
    """Tridiagonal rows of I - dt*L at the interior nodes (boundary entries zeroed)."""
    xs = grid.xs()
    x_int = xs[1:-1]
    dx = grid.dx
    dt = grid.time.dt
    sig = np.asarray(model.vol(t, x_int), dtype=float)
    drift = np.asarray(model.drift(t, x_int), dtype=float)
    a = 0.5 * sig**2 / dx**2
    c = drift / (2.0 * dx)
    lower = -dt * (a - c)
    diag = 1.0 + 2.0 * dt * a
    upper = -dt * (a + c)
    return lower, diag, upper


def _gradient(full_u: np.ndarray, dx: float) -> np.ndarray:
    """Central x-gradient at the interior nodes of a full space row."""
    return (full_u[2:] - full_u[:-2]) / (2.0 * dx)


def _backward_solve(grid, spec, model, inner_solver, omega, psor_tol, max_sweeps):
    """Shared backward time loop for the projected and penalized schemes."""
    _require_contraction(spec, grid.time.dt)
    xs = grid.xs()
    x_int = xs[1:-1]
    dx = grid.dx
    dt = grid.time.dt
    n = grid.time.n_steps
    times = grid.times()
    left, right = _boundary_values(grid, spec, model)

    u = np.empty((n + 1, grid.m_nodes))
    u[n] = np.asarray(spec.terminal(xs), dtype=float)

    worst_comp = 0.0
    worst_resid = 0.0
    for k in range(n - 1, -1, -1):
        t = times[k]
        h_int = np.asarray(spec.obstacle(t, x_int), dtype=float)
        lower, diag, upper = _step_matrix(grid, model, t)
        bc = np.zeros_like(x_int)
        bc[0] -= lower[0] * left[k]
        bc[-1] -= upper[-1] * right[k]
        lower_in = lower.copy()
        upper_in = upper.copy()
        lower_in[0] = 0.0
        upper_in[-1] = 0.0

        sig_int = np.asarray(model.vol(t, x_int), dtype=float)
        full_prev = u[k + 1].copy()
        full_prev[0], full_prev[-1] = left[k], right[k]
        y_lag = full_prev[1:-1].copy()
        v = y_lag
        for _ in range(OUTER_MAX_ITER):
            z_lag = sig_int * _gradient(full_prev, dx)
            fval = np.asarray(spec.generator(t, x_int, y_lag, z_lag), dtype=float)
            rhs = u[k + 1][1:-1] + dt * fval + bc
            v = inner_solver(
                lower_in, diag, upper_in, rhs, h_int, y_lag, omega, psor_tol, max_sweeps
            )
            if float(np.max(np.abs(v - y_lag))) <= 10.0 * psor_tol:
                break
            y_lag = v
            full_prev[1:-1] = v

        u[k, 1:-1] = v
        u[k, 0] = left[k]
        u[k, -1] = right[k]

        vleft = np.concatenate(([0.0], v[:-1]))
        vright = np.concatenate((v[1:], [0.0]))
        resid = lower_in * vleft + diag * v + upper_in * vright - rhs
        worst_resid = min(worst_resid, float(np.min(resid)))
        worst_comp = max(worst_comp, float(np.max(np.abs(resid * (v - h_int)))))
    return u, worst_comp, worst_resid


def solve_pde_projected(
    grid: PdeGrid,
    spec: ProblemSpec,
    model: ForwardModel,
    omega: float = 1.5,
    psor_tol: float = PSOR_TOL,
    max_sweeps: int = PSOR_MAX_ITER,
) -> PdeField:
    """Implicit scheme with the obstacle enforced by projection (PSOR steps).

    Each backward step solves the linear complementarity problem of the
    discretized operator; generator arguments are lagged. The solution
    dominates the obstacle exactly at every grid point.
    """

    def inner(lower, diag, upper, rhs, floor, start, om, tol, sweeps):
        start_proj = np.maximum(start, floor)
        v, _ = _psor(lower, diag, upper, rhs, floor, start_proj, om, tol, sweeps)
        return v

    u, comp, resid = _backward_solve(grid, spec, model, inner, omega, psor_tol, max_sweeps)
    return PdeField(
        u=u,
        grid=grid,
        method="projected",
        complementarity=comp,
        min_operator_residual=resid,
    )


def solve_pde_penalized(
    grid: PdeGrid,
    spec: ProblemSpec,
    model: ForwardModel,
    n: float,
    omega: float = 1.5,
    psor_tol: float = PSOR_TOL,
    max_sweeps: int = PSOR_MAX_ITER,
) -> PdeField:
    """Unconstrained implicit scheme with penalty driver f + n * (u - h)^-."""
    if n < 0.0:
        raise ValueError("penalty intensity must be >= 0")
    weight = float(n) * grid.time.dt

    def inner(lower, diag, upper, rhs, floor, start, om, tol, sweeps):
        v, _ = _penalized_sor(
            lower, diag, upper, rhs, floor, weight, start, om, tol, sweeps
        )
        return v

    u, _, _ = _backward_solve(grid, spec, model, inner, omega, psor_tol, max_sweeps)
    return PdeField(u=u, grid=grid, method="penalized", penalty_n=float(n))


# ---------------------------------------------------------------------------
# Cross-method probe: PDE value vs lattice value started at (t, x)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeComparison:
    t: float
    x: float
    pde_value: float
    lattice_value: float
    abs_error: float
    rel_error: float


@dataclass(frozen=True)
class FeynmanKacReport:
    probes: tuple
    max_abs_error: float
    max_rel_error: float

    def to_dict(self) -> dict:
        return {
            "probes": [vars(p) for p in self.probes],
            "max_abs_error": self.max_abs_error,
            "max_rel_error": self.max_rel_error,
        }


def feynman_kac_check(
    field: PdeField,
    model: ForwardModel,
    spec: ProblemSpec,
    probe_points,
    lattice_steps: int = 2048,
) -> FeynmanKacReport:
    """Compare u(t, x) against the backward lattice value started at (t, x).

    For each probe a fresh lattice over [t, T] with the probed initial state
    is solved by ``solve_snell``; at t = T the lattice value degenerates to
    the terminal payoff. Probes must lie inside the grid.
    """
    horizon = field.grid.time.horizon
    rows = []
    for t, x in probe_points:
        u_val = field.interpolate(float(t), float(x))
        remaining = horizon - float(t)
        if remaining <= 1e-12:
            y_val = float(np.asarray(spec.terminal(np.array([float(x)])))[0])
        else:
            probe_model = ForwardModel(
                model.kind, float(x), model.drift_coeff, model.vol_coeff, float(t)
            )
            probe_lattice = build_lattice(probe_model, TimeGrid(lattice_steps, remaining))
            y_val = float(solve_snell(probe_lattice, spec).triple.y[0][0])
        abs_err = abs(u_val - y_val)
        rel_err = abs_err / max(abs(y_val), 1e-12)
        rows.append(ProbeComparison(float(t), float(x), u_val, y_val, abs_err, rel_err))
    return FeynmanKacReport(
        probes=tuple(rows),
        max_abs_error=max(r.abs_error for r in rows),
        max_rel_error=max(r.rel_error for r in rows),
    )


# ---------------------------------------------------------------------------
# Exponential comparison function and growth-class diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChiParams:
    """Parameters of chi(t, x) = exp[(time_slope*(T-t) + terminal_weight) * psi(x)]
    with psi(x) = (ln sqrt(x^2 + 1) + 1)^2.

    The associated time window is [window_start, T] with
    window_start = T - terminal_weight / time_slope.
    """

    terminal_weight: float
    time_slope: float
    horizon: float

    def __post_init__(self):
        if self.terminal_weight <= 0.0 or self.time_slope <= 0.0:
            raise ValueError("terminal_weight and time_slope must be > 0")

    @property
    def window_start(self) -> float:
        return self.horizon - self.terminal_weight / self.time_slope


def log_bump(x) -> np.ndarray:
    """psi(x) = (ln sqrt(x^2 + 1) + 1)^2 (>= 1, even, slowly growing)."""
    x = np.asarray(x, dtype=float)
    return (0.5 * np.log1p(x * x) + 1.0) ** 2


@dataclass(frozen=True)
class ChiValue:
    value: float
    saturated: bool


def chi_value(t: float, x: float, params: ChiParams) -> ChiValue:
    """Evaluate the comparison function; exponents beyond ~700 saturate."""
    expo = (params.time_slope * (params.horizon - t) + params.terminal_weight) * float(
        log_bump(x)
    )
    if expo > EXP_SATURATION:
        return ChiValue(math.exp(EXP_SATURATION), True)
    return ChiValue(math.exp(expo), False)


C_SCAN_GRID = tuple(float(2**i) for i in range(11))


@dataclass(frozen=True)
class ChiScanRow:
    time_slope: float
    window_start: float
    n_slices: int
    min_operator: float | None
    evaluable: bool
    reason: str = ""


@dataclass(frozen=True)
class ChiSupersolutionReport:
    rows: tuple
    passed: bool
    witness_time_slope: float | None

    def to_dict(self) -> dict:
        return {
            "rows": [vars(r) for r in self.rows],
            "passed": self.passed,
            "witness_time_slope": self.witness_time_slope,
        }


def chi_supersolution_check(
    params: ChiParams,
    model: ForwardModel,
    kappa: float,
    grid: PdeGrid,
    scan=C_SCAN_GRID,
) -> ChiSupersolutionReport:
    """Scan time slopes for a strict supersolution witness on [window_start, T].

    For each candidate slope the discrete operator
    -d_t chi - (1/2) sigma^2 chi_xx - b chi_x - kappa chi - kappa |sigma chi_x|
    (central differences in t and x) is evaluated at every interior grid node
    whose time lies in the window; the scan passes when some slope yields a
    strictly positive minimum. Slopes whose window contains no interior time
    slice, or whose exponents overflow, are reported as not evaluable.
    """
    xs = grid.xs()
    times = grid.times()
    horizon = grid.time.horizon
    dt = grid.time.dt
    dx = grid.dx
    n = grid.time.n_steps
    psi = log_bump(xs)

    rows = []
    witness = None
    for c in scan:
        window_start = horizon - params.terminal_weight / c
        ks = [k for k in range(1, n) if times[k] >= window_start - 1e-12]
        if not ks:
            rows.append(
                ChiScanRow(c, window_start, 0, None, False, "no interior time slice in window")
            )
            continue
        k_lo = ks[0] - 1
        expo = (c * (horizon - times[k_lo:, None]) + params.terminal_weight) * psi[None, :]
        if float(np.max(expo)) > EXP_SATURATION:
            rows.append(
                ChiScanRow(c, window_start, len(ks), None, False, "exponent overflow")
            )
            continue
        chi = np.exp(expo)  # rows k_lo .. n inclusive

        min_val = math.inf
        for k in ks:
            r = k - k_lo
            dchi_dt = (chi[r + 1] - chi[r - 1]) / (2.0 * dt)
            chi_x = (chi[r, 2:] - chi[r, :-2]) / (2.0 * dx)
            chi_xx = (chi[r, 2:] - 2.0 * chi[r, 1:-1] + chi[r, :-2]) / dx**2
            sig = np.asarray(model.vol(times[k], xs[1:-1]), dtype=float)
            drift = np.asarray(model.drift(times[k], xs[1:-1]), dtype=float)
            op = (
                -dchi_dt[1:-1]
                - 0.5 * sig**2 * chi_xx
                - drift * chi_x
                - kappa * chi[r, 1:-1]
                - kappa * np.abs(sig * chi_x)
            )
            min_val = min(min_val, float(np.min(op)))
        rows.append(ChiScanRow(c, window_start, len(ks), min_val, True))
        if witness is None and min_val > 0.0:
            witness = c
    return ChiSupersolutionReport(tuple(rows), witness is not None, witness)


@dataclass(frozen=True)
class GrowthReport:
    radii: tuple
    factors: tuple
    passed: bool

    def to_dict(self) -> dict:
        return {"radii": list(self.radii), "factors": list(self.factors), "passed": self.passed}


def growth_class_check(values, weight: float, radii) -> GrowthReport:
    """Check |values(x)| * exp(-weight * (ln x)^2) decays along the tail radii.

    ``radii`` must be increasing, all >= 2, with at least three entries; the
    check passes when the damped factors strictly decrease over the last
    three radii.
    """
    rs = [float(r) for r in radii]
    if len(rs) < 3:
        raise ValueError("need at least three radii")
    if any(b <= a for a, b in zip(rs, rs[1:])):
        raise ValueError("radii must be strictly increasing")
    if rs[0] < 2.0:
        raise ValueError("radii must be >= 2")
    factors = [
        abs(float(values(r))) * math.exp(-weight * math.log(r) ** 2) for r in rs
    ]
    tail = factors[-3:]
    passed = tail[0] > tail[1] > tail[2]
    return GrowthReport(tuple(rs), tuple(factors), passed)


def pde_field_to_csv(field: PdeField, spec: ProblemSpec, path, tie_tol: float = 1e-8) -> None:
    """CSV export with header ``t,x,u,u_minus_h,exercised``."""
    xs = field.grid.xs()
    times = field.grid.times()
    with open(path, "w") as fh:
        fh.write("t,x,u,u_minus_h,exercised\n")
        for k, t in enumerate(times):
            h_row = np.asarray(spec.obstacle(t, xs), dtype=float)
            gap = field.u[k] - h_row
            for i, x in enumerate(xs):
                fh.write(
                    f"{float(t)!r},{float(x)!r},{float(field.u[k, i])!r},{float(gap[i])!r},{int(gap[i] <= tie_tol)}\n"
                )
