"""Limit-system solver in two equivalent formulations.

T-frame: the temperature deviation T satisfies a heat equation with a
non-local source Lambda/(rho_bar c_p), Lambda = theta_bar alpha p_theta
d/dt fint(T), and plain Dirichlet walls T = Theta_B.  Theta-frame: the
shifted variable Theta = T - lam fint(T) satisfies the conventional heat
equation but with the non-local wall trace Theta_B - lam/(1-lam) fint(Theta).
Both close the scalar mean implicitly: the implicit diffusion step is affine
in the unknown mean, so two Helmholtz solves plus one scalar equation give
the exact discrete fixed point of the coupling.

Momentum: explicit Adams-Bashforth-2 advection and buoyancy, implicit Euler
diffusion (viscosity mu(theta_bar)), non-incremental Chorin projection.
Scalar advection is in divergence form, so the discrete mean of the
temperature is moved only by diffusion and the non-local term, matching the
integral identity the trace diagnostics monitor.

The lambda_override hook replaces lam everywhere it encodes the non-local
coupling (source, moving trace, frame transforms); 0 gives the classical
Dirichlet limit system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grid as gr
from .errors import (
    ClosureError,
    CompatibilityError,
    DivergenceError,
    DomainError,
    ShapeError,
    StabilityError,
)
from .grid import (
    DirichletZ,
    Grid,
    NeumannZ,
    ScalarField,
    Staggering,
    VectorField,
    advect_velocity,
    center_to_xface,
    center_to_zface,
    div,
    grad,
    helmholtz_solve,
    helmholtz_solve_zface,
    mean,
    poisson_solve,
    xface_to_center,
    zface_to_center,
)
from .thermo import ob_coefficients, transport

T_FRAME = "T"
THETA_FRAME = "Theta"

__all__ = [
    "T_FRAME",
    "THETA_FRAME",
    "ObScenario",
    "ObState",
    "ObTrajectory",
    "LambdaTrace",
    "gravity_potential",
    "build_initial_ob",
    "step_ob_tframe",
    "step_ob_thetaframe",
    "transform_frame",
    "recover_density_deviation",
    "boundary_heat_flux",
    "lambda_diagnostics",
    "run_ob",
]


def gravity_potential(grid, g):
    """G = -g (z - 1/2); mean-free on the strip by midpoint symmetry."""
    return ScalarField.from_function(grid, lambda x, z: -g * (z - 0.5))


@dataclass
class ObScenario:
    grid: Grid
    eos: object
    rho_bar: float = 1.0
    theta_bar: float = 1.0
    G: ScalarField | None = None
    theta_b_bottom: object = 0.0
    theta_b_top: object = 0.0
    dt: float = 1e-3
    t_end: float = 1.0
    T0: ScalarField | None = None
    U0: VectorField | None = None
    lambda_override: float | None = None
    temp_source: object = None

    def __post_init__(self):
        if self.G is None:
            self.G = ScalarField.zeros(self.grid)
        if abs(mean(self.G)) > 1e-12:
            raise DomainError(f"potential G must be mean-free, got mean {mean(self.G):.3e}")
        if self.dt <= 0 or self.t_end <= 0:
            raise DomainError("dt and t_end must be positive")
        if self.lambda_override is not None and not 0.0 <= self.lambda_override < 1.0:
            raise DomainError("lambda_override must lie in [0, 1)")

    def coefficients(self):
        return ob_coefficients(self.rho_bar, self.theta_bar, self.eos)

    def lam_effective(self):
        if self.lambda_override is not None:
            return self.lambda_override
        return self.coefficients().lam

    def wall_values(self, t=0.0):
        """Theta_B at time t as (nx,) arrays; entries may be callables of t."""
        nx = self.grid.nx
        b = self.theta_b_bottom(t) if callable(self.theta_b_bottom) else self.theta_b_bottom
        tp = self.theta_b_top(t) if callable(self.theta_b_top) else self.theta_b_top
        return gr._wall_array(b, nx), gr._wall_array(tp, nx)


@dataclass
class ObState:
    U: VectorField
    temp: ScalarField
    Pi: ScalarField
    t: float
    frame: str = T_FRAME
    rhs_hist: tuple | None = field(default=None, compare=False)

    def copy(self):
        return ObState(self.U.copy(), self.temp.copy(), self.Pi.copy(), self.t, self.frame, None)


@dataclass
class LambdaTrace:
    """Per-step record of the non-local coupling: fint(T), Lambda, the wall
    heat flux, and the residual of the integrated heat balance."""

    t: np.ndarray
    mean_T: np.ndarray
    Lambda: np.ndarray
    flux: np.ndarray
    s24_residual: np.ndarray


@dataclass
class ObTrajectory:
    scenario: ObScenario
    frame: str
    dt: float
    times: list
    states: list
    trace: LambdaTrace


_unit_cache: dict = {}


def _unit_solution(grid, c, kind):
    """Cached Helmholtz responses for the scalar closures.

    kind 'source': (I - c lap) v = 1 with zero walls (T-frame mean response);
    kind 'wall':   (I - c lap) v = 0 with unit walls (Theta-frame response).
    """
    key = (grid.nx, grid.nz, grid.Lx, float(c), kind)
    got = _unit_cache.get(key)
    if got is not None:
        return got
    if kind == "source":
        f = ScalarField(grid, np.ones((grid.nx, grid.nz)))
        sol = helmholtz_solve(f, c, DirichletZ(0.0, 0.0))
    else:
        sol = helmholtz_solve(ScalarField.zeros(grid), c, DirichletZ(1.0, 1.0))
    _unit_cache[key] = sol
    return sol


def _project(U, dt, grid):
    """Chorin projection: remove the discrete-gradient part of U."""
    rhs = div(U)
    rhs.values /= dt
    phi, _ = poisson_solve(rhs)
    gphi = grad(phi, NeumannZ())
    u = U.u - dt * gphi.u
    w = U.w - dt * gphi.w
    w[:, 0] = 0.0
    w[:, -1] = 0.0
    return VectorField(grid, u, w), phi


def _advect_scalar(grid, U, vals):
    """-div(U s) at centers; wall fluxes vanish because w = 0 there."""
    fx = U.u * center_to_xface(vals)
    fz = np.zeros_like(U.w)
    fz[:, 1:-1] = U.w[:, 1:-1] * 0.5 * (vals[:, 1:] + vals[:, :-1])
    dfx = (np.roll(fx, -1, axis=0) - fx) / grid.dx
    dfz = (fz[:, 1:] - fz[:, :-1]) / grid.dz
    return -(dfx + dfz)


def _grad_dot_faces(grid, U, gG):
    """grad G . U averaged from face products back to centers."""
    return xface_to_center(U.u * gG.u) + zface_to_center(U.w * gG.w)


def _buoyancy_faces(coef_center, gG):
    """Face force coef * grad G from a center coefficient field."""
    fx = center_to_xface(coef_center) * gG.u
    fz = np.zeros_like(gG.w)
    fz[:, 1:-1] = 0.5 * (coef_center[:, 1:] + coef_center[:, :-1]) * gG.w[:, 1:-1]
    return fx, fz


def recover_density_deviation(temp_field, scenario):
    """Density deviation from the Boussinesq relation,
    r = (rho_bar G + p_theta fint(T) - p_theta T) / p_rho; mean-free.

    temp_field must hold the T-frame deviation.
    """
    c = scenario.coefficients()
    m = mean(temp_field)
    vals = (scenario.rho_bar * scenario.G.values + c.p_theta * m - c.p_theta * temp_field.values) / c.p_rho
    return ScalarField(scenario.grid, vals, Staggering.CENTER)


def transform_frame(state, scenario):
    """Map between frames: Theta = T - lam fint(T); T = Theta + lam/(1-lam) fint(Theta)."""
    lam = scenario.lam_effective()
    if state.frame == T_FRAME:
        vals = state.temp.values - lam * mean(state.temp)
        frame = THETA_FRAME
    elif state.frame == THETA_FRAME:
        vals = state.temp.values + lam / (1.0 - lam) * mean(state.temp)
        frame = T_FRAME
    else:
        raise ShapeError(f"unknown frame {state.frame!r}")
    return ObState(state.U.copy(), ScalarField(scenario.grid, vals), state.Pi.copy(), state.t, frame, None)


def build_initial_ob(scenario, frame=T_FRAME):
    """Project U0 to the discrete divergence-free space and check that the
    initial temperature trace matches Theta_B (to discretization order)."""
    g = scenario.grid
    T0 = scenario.T0 if scenario.T0 is not None else ScalarField.zeros(g)
    U0 = scenario.U0 if scenario.U0 is not None else VectorField.zeros(g)
    wb, wt = scenario.wall_values(0.0)
    vals = T0.values
    trace_b = 1.5 * vals[:, 0] - 0.5 * vals[:, 1]
    trace_t = 1.5 * vals[:, -1] - 0.5 * vals[:, -2]
    scale = max(1.0, float(np.max(np.abs(vals))))
    tol = max(1e-8, 4.0 * g.dz ** 2 * scale)
    mismatch = max(np.max(np.abs(trace_b - wb)), np.max(np.abs(trace_t - wt)))
    if mismatch > tol:
        raise CompatibilityError(
            f"initial temperature trace deviates from Theta_B by {mismatch:.3e} (tol {tol:.3e})"
        )
    w = U0.w.copy()
    w[:, 0] = 0.0
    w[:, -1] = 0.0
    U, _ = _project(VectorField(g, U0.u.copy(), w), 1.0, g)
    state = ObState(U, T0.copy(), ScalarField.zeros(g), 0.0, T_FRAME, None)
    if frame == THETA_FRAME:
        state = transform_frame(state, scenario)
    return state


def _momentum_step(state, scenario, dt, buoy_center):
    """Shared AB2 advection + buoyancy, implicit diffusion, projection."""
    g = scenario.grid
    coeffs = scenario.coefficients()
    mu_bar, _, _ = transport(scenario.theta_bar, scenario.eos)
    nu = float(mu_bar) / scenario.rho_bar
    gG = grad(scenario.G, NeumannZ())

    adv_u, adv_w = advect_velocity(g, state.U.u, state.U.w)
    bx, bz = _buoyancy_faces(buoy_center, gG)
    F_u = adv_u + bx
    F_w = adv_w + bz
    F_w[:, 0] = 0.0
    F_w[:, -1] = 0.0
    if state.rhs_hist is not None:
        Fu_prev, Fw_prev = state.rhs_hist[0], state.rhs_hist[1]
        Fu_eff = 1.5 * F_u - 0.5 * Fu_prev
        Fw_eff = 1.5 * F_w - 0.5 * Fw_prev
    else:
        Fu_eff, Fw_eff = F_u, F_w

    ustar = helmholtz_solve(
        ScalarField(g, state.U.u + dt * Fu_eff, Staggering.XFACE), dt * nu, DirichletZ(0.0, 0.0)
    ).values
    wstar = helmholtz_solve_zface(
        ScalarField(g, state.U.w + dt * Fw_eff, Staggering.ZFACE), dt * nu
    ).values
    U_new, phi = _project(VectorField(g, ustar, wstar), dt, g)
    Pi = ScalarField(g, scenario.rho_bar * phi.values)
    return U_new, Pi, (F_u, F_w), coeffs


def _scalar_rhs(state, scenario, U_new, coeffs):
    g = scenario.grid
    gG = grad(scenario.G, NeumannZ())
    A = _advect_scalar(g, U_new, state.temp.values)
    A += (scenario.theta_bar * coeffs.alpha / coeffs.c_p) * _grad_dot_faces(g, U_new, gG)
    if scenario.temp_source is not None:
        X, Z = g.cell_mesh()
        A += scenario.temp_source(state.t, X, Z)
    return A


def step_ob_tframe(state, scenario, dt):
    """One step of the T-frame formulation (Dirichlet walls, non-local source)."""
    if state.frame != T_FRAME:
        raise ShapeError("step_ob_tframe expects a T-frame state")
    g = scenario.grid
    coeffs = scenario.coefficients()
    lam = scenario.lam_effective()
    buoy = -coeffs.alpha * state.temp.values
    U_new, Pi, (F_u, F_w), coeffs = _momentum_step(state, scenario, dt, buoy)

    A = _scalar_rhs(state, scenario, U_new, coeffs)
    if state.rhs_hist is not None:
        A_eff = 1.5 * A - 0.5 * state.rhs_hist[2]
    else:
        A_eff = A
    c = dt * coeffs.kappa_bar / (scenario.rho_bar * coeffs.c_p)
    wb, wt = scenario.wall_values(state.t + dt)
    T_data = helmholtz_solve(
        ScalarField(g, state.temp.values + dt * A_eff), c, DirichletZ(wb, wt)
    )
    m_prev = mean(state.temp)
    if lam == 0.0:
        T_new = T_data
    else:
        T_unit = _unit_solution(g, c, "source")
        mu_unit = mean(T_unit)
        denom = 1.0 - lam * mu_unit
        if abs(denom) < 1e-12:
            raise ClosureError(f"degenerate scalar closure, denominator {denom:.3e}")
        m_new = (mean(T_data) - lam * mu_unit * m_prev) / denom
        T_new = ScalarField(g, T_data.values + lam * (m_new - m_prev) * T_unit.values)
    return ObState(U_new, T_new, Pi, state.t + dt, T_FRAME, (F_u, F_w, A))


def step_ob_thetaframe(state, scenario, dt):
    """One step of the Theta-frame formulation (non-local wall trace)."""
    if state.frame != THETA_FRAME:
        raise ShapeError("step_ob_thetaframe expects a Theta-frame state")
    g = scenario.grid
    lam = scenario.lam_effective()
    temp_equiv = ScalarField(g, state.temp.values + lam / (1.0 - lam) * mean(state.temp))
    r = recover_density_deviation(temp_equiv, scenario)
    buoy = r.values / scenario.rho_bar
    U_new, Pi, (F_u, F_w), coeffs = _momentum_step(state, scenario, dt, buoy)

    A = _scalar_rhs(state, scenario, U_new, coeffs)
    if state.rhs_hist is not None:
        A_eff = 1.5 * A - 0.5 * state.rhs_hist[2]
    else:
        A_eff = A
    c = dt * coeffs.kappa_bar / (scenario.rho_bar * coeffs.c_p)
    wb, wt = scenario.wall_values(state.t + dt)
    Th_data = helmholtz_solve(
        ScalarField(g, state.temp.values + dt * A_eff), c, DirichletZ(wb, wt)
    )
    if lam == 0.0:
        Th_new = Th_data
    else:
        Th_bc = _unit_solution(g, c, "wall")
        mb = mean(Th_bc)
        denom = 1.0 + lam / (1.0 - lam) * mb
        if abs(denom) < 1e-12:
            raise ClosureError(f"degenerate scalar closure, denominator {denom:.3e}")
        M_new = mean(Th_data) / denom
        q = -lam / (1.0 - lam) * M_new
        Th_new = ScalarField(g, Th_data.values + q * Th_bc.values)
    return ObState(U_new, Th_new, Pi, state.t + dt, THETA_FRAME, (F_u, F_w, A))


def boundary_heat_flux(vals, grid, wall_bottom, wall_top, kappa_bar):
    """Outward integral of kappa_bar grad(T) . n over both walls, with the
    one-sided quadratic stencil through the wall value and two cell centers.

    This stencil is exactly the conservative wall flux of the implicit
    diffusion step, so the reported flux is the one the scheme moves.
    """
    dz = grid.dz
    dn_bottom = (-8.0 * wall_bottom / 3.0 + 3.0 * vals[:, 0] - vals[:, 1] / 3.0) / dz
    dn_top = (8.0 * wall_top / 3.0 - 3.0 * vals[:, -1] + vals[:, -2] / 3.0) / dz
    return kappa_bar * grid.dx * float(np.sum(dn_top - dn_bottom))


_CUBIC_WALL = (-46.0 / 15.0, 15.0 / 4.0, -5.0 / 6.0, 3.0 / 20.0)


def _flux_cubic(vals, grid, wall_bottom, wall_top):
    """Outward flux integral with the one-sided cubic stencil (wall value and
    three cell centers).  Independent of the scheme's own flux, so the
    balance residual keeps an honest discretization error signal."""
    c0, c1, c2, c3 = _CUBIC_WALL
    dz = grid.dz
    dn_bottom = (c0 * wall_bottom + c1 * vals[:, 0] + c2 * vals[:, 1] + c3 * vals[:, 2]) / dz
    dn_top = -(c0 * wall_top + c1 * vals[:, -1] + c2 * vals[:, -2] + c3 * vals[:, -3]) / dz
    return grid.dx * float(np.sum(dn_top - dn_bottom))


def _frame_trace_data(state, scenario, lam):
    """(T-frame mean, field values, wall values) seen by the trace diagnostics."""
    wb, wt = scenario.wall_values(state.t)
    if state.frame == T_FRAME:
        return mean(state.temp), state.temp.values, wb, wt
    # Theta differs from T by the constant lam/(1-lam) fint(Theta), so adding
    # the shift to field and walls recovers the T-frame pair exactly.
    M = mean(state.temp)
    shift = lam / (1.0 - lam) * M
    return M / (1.0 - lam), state.temp.values + shift, wb, wt


def _source_mean(state, scenario):
    if scenario.temp_source is None:
        return 0.0
    X, Z = scenario.grid.cell_mesh()
    return float(np.mean(scenario.temp_source(state.t, X, Z)))


@dataclass
class _TraceCursor:
    """Rolling quantities the per-step balance needs from the previous state."""

    m: float
    flux_cubic: float
    source_mean: float

    @classmethod
    def start(cls, state, scenario, lam):
        m, vals, wb, wt = _frame_trace_data(state, scenario, lam)
        return cls(m, _flux_cubic(vals, scenario.grid, wb, wt), _source_mean(state, scenario))


def _trace_row(cur, state, scenario, dt, lam, coeffs):
    """Advance the cursor by one state; returns the cursor and the CSV row.

    Lambda is the pinned backward difference.  The balance residual integrates
    the mean-temperature identity over the step: backward-difference mean
    change against the trapezoidal average of the cubic-stencil wall flux
    (plus the source mean when a source hook is active).  The flux column
    itself reports the scheme's conservative (quadratic-stencil) flux.
    """
    m_now, vals, wb, wt = _frame_trace_data(state, scenario, lam)
    g = scenario.grid
    dm_dt = (m_now - cur.m) / dt
    Lambda = lam * scenario.rho_bar * coeffs.c_p * dm_dt
    flux = boundary_heat_flux(vals, g, wb, wt, coeffs.kappa_bar)
    fc_now = _flux_cubic(vals, g, wb, wt)
    sm_now = _source_mean(state, scenario)
    nu_T = coeffs.kappa_bar / (scenario.rho_bar * coeffs.c_p)
    resid = (
        (1.0 - lam) * g.volume * dm_dt
        - nu_T * 0.5 * (fc_now + cur.flux_cubic)
        - g.volume * 0.5 * (sm_now + cur.source_mean)
    )
    return _TraceCursor(m_now, fc_now, sm_now), (state.t, m_now, Lambda, flux, resid)


def lambda_diagnostics(states, scenario, dt):
    """Recompute the LambdaTrace from consecutive states spaced by dt."""
    if len(states) < 2:
        raise DomainError("lambda_diagnostics needs at least two consecutive states")
    coeffs = scenario.coefficients()
    lam = scenario.lam_effective()
    cur = _TraceCursor.start(states[0], scenario, lam)
    rows = []
    for s in states[1:]:
        cur, row = _trace_row(cur, s, scenario, dt, lam, coeffs)
        rows.append(row)
    arr = np.array(rows)
    return LambdaTrace(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4])


def _check_cfl(state, scenario, dt):
    g = scenario.grid
    vmax = max(float(np.max(np.abs(state.U.u))), float(np.max(np.abs(state.U.w))))
    if vmax == 0.0:
        return
    bound = 0.5 * min(g.dx, g.dz) / vmax
    if dt > bound:
        raise StabilityError(
            f"advective CFL violated at t={state.t:.4g}: dt={dt:.3e} exceeds {bound:.3e}"
        )


def run_ob(scenario, frame=T_FRAME, snapshot_dt=None, initial=None):
    """Integrate to t_end; returns the trajectory with snapshots and trace.

    Snapshots are stored at multiples of snapshot_dt (which must be a
    multiple of dt) plus the initial and final states.
    """
    dt = scenario.dt
    n_steps = int(round(scenario.t_end / dt))
    if abs(n_steps * dt - scenario.t_end) > 1e-9 * max(1.0, scenario.t_end):
        raise DomainError("t_end must be an integer multiple of dt")
    every = None
    if snapshot_dt is not None:
        every = int(round(snapshot_dt / dt))
        if every < 1 or abs(every * dt - snapshot_dt) > 1e-9 * snapshot_dt:
            raise DomainError("snapshot_dt must be a positive multiple of dt")

    state = initial.copy() if initial is not None else build_initial_ob(scenario, frame)
    if state.frame != frame:
        raise ShapeError(f"initial state frame {state.frame!r} does not match {frame!r}")
    step = step_ob_tframe if frame == T_FRAME else step_ob_thetaframe
    coeffs = scenario.coefficients()
    lam = scenario.lam_effective()

    times = [state.t]
    states = [state.copy()]
    rows = []
    cur = _TraceCursor.start(state, scenario, lam)
    for n in range(1, n_steps + 1):
        _check_cfl(state, scenario, dt)
        state = step(state, scenario, dt)
        if not (np.all(np.isfinite(state.temp.values)) and np.all(np.isfinite(state.U.u))):
            raise DivergenceError("non-finite fields", step=n, time=state.t)
        cur, row = _trace_row(cur, state, scenario, dt, lam, coeffs)
        rows.append(row)
        if (every is not None and n % every == 0) or n == n_steps:
            times.append(state.t)
            states.append(state.copy())
    arr = np.array(rows)
    trace = LambdaTrace(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4])
    return ObTrajectory(scenario, frame, dt, times, states, trace)
