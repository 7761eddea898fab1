"""Viscous reference solver in vorticity-streamfunction form (d=1).

Each implicit stage solves, per tangential mode, the diffusion problem for
the vorticity together with the streamfunction problem, and an influence
function fixes the wall vorticity so that ``dy Psi(0) = 0``.  The velocity
``u = -dy Psi``, ``v = dx Psi`` is then discretely divergence-free and
satisfies the no-slip condition exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .elliptic import biot_savart, modal_solver, pressure_from_acceleration
from .errors import CFLViolation, ConfigError, ResolutionError
from .euler import InitialDataSpec, _phys_velocity, advect, cfl_number, make_initial_data
from .fields import (
    SpectralField,
    VectorField,
    dx_coeffs,
    dy_coeffs,
    l2_norm,
    l2_norm_physical,
    to_coeffs,
    to_physical,
)
from .grid import Grid
from .timestepping import Trajectory, ars443_step

LAYER_POINTS = 12
LAYER_WIDTH = 3.0


def check_resolution(grid: Grid, eps: float, required=LAYER_POINTS):
    """Refuse grids with fewer than ``required`` nodes in ``0 < y <= 3 eps``."""
    count = grid.layer_count(LAYER_WIDTH * eps)
    if count >= required:
        return count
    ny = grid.ny
    while ny < 100000:
        ny = int(ny * 1.25) + 1
        trial = Grid(grid.d, grid.nx, grid.box, ny, grid.Ly, grid.stretching, grid.beta, grid.stencil)
        if trial.layer_count(LAYER_WIDTH * eps) >= required:
            break
    raise ResolutionError(eps, count, required, ny)


@dataclass
class NSState:
    """Viscous flow at one time.

    Attributes
    ----------
    t : float
    w : ndarray
        Vorticity coefficients ``dy u - dx v``, shape ``grid.coeff_shape``.
    grid : Grid
    eps : float
        Square root of the viscosity.
    """

    t: float
    w: np.ndarray
    grid: Grid
    eps: float
    _vel: VectorField | None = field(default=None, repr=False)

    @property
    def velocity(self) -> VectorField:
        if self._vel is None:
            self._vel = biot_savart(SpectralField(self.grid, self.w), check=False)
        return self._vel

    @classmethod
    def from_initial(cls, spec: InitialDataSpec, grid: Grid, eps: float):
        st = make_initial_data(spec, grid)
        if grid.d != 1:
            raise ConfigError("the viscous solver supports d=1")
        return cls(0.0, st.w[0], grid, eps)

    @classmethod
    def zeros(cls, grid, eps):
        return cls(0.0, np.zeros(grid.coeff_shape, dtype=complex), grid, eps)

    def wall_defect(self):
        vel = self.velocity
        return float(max(np.abs(c.coeffs[..., 0]).max() for c in vel.components))

    def divergence(self):
        vel = self.velocity
        div = dx_coeffs(self.grid, vel.horizontal[0].coeffs) + dy_coeffs(self.grid, vel.vertical.coeffs, 1)
        return float(np.abs(div).max())


class InfluenceSolver:
    """Implicit viscous stage ``Y - h eps^2 Lap Y = rhs`` with no-slip.

    The homogeneous response ``(w_h, Psi_h)`` to unit wall vorticity is
    precomputed per mode.
    """

    def __init__(self, grid: Grid, nu: float, h: float):
        self.grid = grid
        self.heat = modal_solver(grid, "dirichlet", "dirichlet", 1.0, h * nu)
        self.poisson = modal_solver(grid, "dirichlet", "robin")
        ones = np.ones(grid.mode_shape)
        self.w_h = self.heat.solve(np.zeros(grid.coeff_shape), ones, None)
        self.psi_h = self.poisson.solve(self.w_h)
        self.d1_row = grid.D1[0].toarray().ravel()
        self.s_h = self.psi_h @ self.d1_row

    def solve(self, rhs, top=None):
        w_p = self.heat.solve(rhs, None, top)
        psi_p = self.poisson.solve(w_p)
        c = -(psi_p @ self.d1_row) / self.s_h
        return w_p + c[..., None] * self.w_h


@lru_cache(maxsize=16)
def _influence(grid: Grid, nu: float, h: float):
    return InfluenceSolver(grid, nu, h)


def ns_tendency(grid, w, forcing=None, t=0.0):
    """Explicit transport ``-u.grad w`` (dealiased) plus optional forcing."""
    vel = biot_savart(SpectralField(grid, w), check=False)
    vp = _phys_velocity(vel)
    out = -to_coeffs(grid, advect(grid, vp, w)) * grid.dealias_mask[..., None]
    if forcing is not None:
        out = out + forcing(t)
    return out


def full_tendency(state: NSState, forcing=None):
    """``dt w`` including viscosity, evaluated on the state itself."""
    grid = state.grid
    lap = dy_coeffs(grid, state.w, 2) - grid.kabs[..., None] ** 2 * state.w
    return ns_tendency(grid, state.w, forcing, state.t) + state.eps**2 * lap


def step_ns(state: NSState, dt: float, forcing=None, cfl_max=0.5, check=True) -> NSState:
    """One IMEX ARS(4,4,3) step (viscosity implicit, transport explicit).

    Parameters
    ----------
    forcing : callable, optional
        ``forcing(t)`` returns vorticity-forcing coefficients (curl of a body force).
    """
    grid, eps = state.grid, state.eps
    if check:
        check_resolution(grid, eps)
        cfl = cfl_number(grid, _phys_velocity(state.velocity), dt)
        if cfl > cfl_max:
            raise CFLViolation(f"CFL number {cfl:.3f} exceeds {cfl_max}")
    nu = eps**2

    def explicit(t, w):
        return ns_tendency(grid, w, forcing, t)

    def solve(t, rhs, h):
        return _influence(grid, nu, float(h)).solve(rhs)

    w1 = ars443_step(state.t, state.w, dt, explicit, solve)
    return NSState(state.t + dt, w1, grid, eps)


def ns_pressure(state: NSState, forcing_velocity=None):
    """Pressure with ``grad p = -(dt U + U.grad U - eps^2 Lap U)``."""
    grid = state.grid
    vel = state.velocity
    wt = full_tendency(state)
    vel_t = biot_savart(SpectralField(grid, wt), check=False)
    up = _phys_velocity(vel)
    acc = []
    for c, ct in zip(vel.components, vel_t.components):
        lap = dy_coeffs(grid, c.coeffs, 2) - grid.kabs[..., None] ** 2 * c.coeffs
        acc.append(ct.coeffs + to_coeffs(grid, advect(grid, up, c.coeffs)) - state.eps**2 * lap)
    return pressure_from_acceleration(grid, acc)


def energy_audit(state: NSState):
    """Instantaneous kinetic-energy budget.

    Returns
    -------
    dict
        ``dEdt`` from the tendency, ``dissipation`` ``eps^2 ||grad U||^2``,
        ``top_flux`` (outflow of ``(p + |U|^2/2) v - eps^2 U.dy U`` at
        ``Ly``) and ``imbalance = dEdt + dissipation + top_flux``.
    """
    grid = state.grid
    vel = state.velocity
    wt = full_tendency(state)
    vel_t = biot_savart(SpectralField(grid, wt), check=False)
    comps = [c.coeffs for c in vel.components]
    phys = [to_physical(grid, c) for c in comps]
    dEdt = 0.0
    diss = 0.0
    for c, ct, u in zip(comps, [c.coeffs for c in vel_t.components], phys):
        dEdt += float(np.mean(u * to_physical(grid, ct), axis=0) @ grid.quad_weights) * grid.box
        gx = to_physical(grid, dx_coeffs(grid, c))
        gy = to_physical(grid, dy_coeffs(grid, c, 1))
        diss += float(np.mean(gx**2 + gy**2, axis=0) @ grid.quad_weights) * grid.box
    diss *= state.eps**2
    p = to_physical(grid, ns_pressure(state).coeffs)
    u, v = phys
    ke = 0.5 * (u**2 + v**2)
    visc = sum(to_physical(grid, dy_coeffs(grid, c, 1))[:, -1] * q[:, -1] for c, q in zip(comps, phys))
    flux = float(np.mean((p[:, -1] + ke[:, -1]) * v[:, -1] - state.eps**2 * visc)) * grid.box
    scale = max(abs(dEdt), diss, abs(flux), 1e-300)
    return {
        "dEdt": dEdt,
        "dissipation": diss,
        "top_flux": flux,
        "imbalance": dEdt + diss + flux,
        "relative": abs(dEdt + diss + flux) / scale,
    }


def kinetic_energy(state: NSState):
    return 0.5 * sum(l2_norm(c) ** 2 for c in state.velocity.components)


def run_ns(state: NSState, T: float, dt: float, forcing=None, callback=None, stride=None):
    """Integrate to ``state.t + T``; returns the final state and a trajectory.

    The trajectory stores ``w`` and ``w_t`` every ``stride`` steps (default:
    only the endpoints).
    """
    n = int(round(T / dt))
    if n < 1 or not np.isclose(n * dt, T, rtol=1e-10, atol=1e-14):
        raise ValueError("T must be a positive integer multiple of dt")
    check_resolution(state.grid, state.eps)
    stride = n if stride is None else stride
    times, ws, wts = [], [], []
    t0 = state.t

    def record(st):
        times.append(st.t)
        ws.append(st.w)
        wts.append(full_tendency(st, forcing))

    record(state)
    if callback is not None:
        callback(state)
    for i in range(n):
        state = step_ns(state, dt, forcing, check=False)
        state.t = t0 + (i + 1) * dt
        if (i + 1) % stride == 0 or i + 1 == n:
            record(state)
        if callback is not None:
            callback(state)
    traj = Trajectory(np.array(times), {"w": np.stack(ws), "w_t": np.stack(wts)}, {"grid": state.grid.to_dict()})
    return state, traj


# ----------------------------------------------------------------------
# error experiment


@dataclass
class ErrorTrajectory:
    """Per-time errors of the viscous flow against outer flow plus layer."""

    eps: float
    t: np.ndarray
    errL2_u: np.ndarray
    errL2_v: np.ndarray
    errLinf_u: np.ndarray
    errLinf_v: np.ndarray
    errL2_v_unweighted: np.ndarray

    def sup(self):
        return {
            "errL2_u": float(self.errL2_u.max()),
            "errL2_v": float(self.errL2_v.max()),
            "errLinf_u": float(self.errLinf_u.max()),
            "errLinf_v": float(self.errLinf_v.max()),
            "errL2_v_unweighted": float(self.errL2_v_unweighted.max()),
        }

    def rows(self):
        return [
            (float(t), self.eps, float(a), float(b), float(c), float(d))
            for t, a, b, c, d in zip(self.t, self.errL2_u, self.errL2_v, self.errLinf_u, self.errLinf_v)
        ]


def leading_order_fields(exp, eps, t):
    """Physical ``(u_e + u_p(y/eps), v_e, v_p1(y/eps))`` on the outer grid."""
    from .assembly import layer_interp
    from .fields import apply_columns

    grid, lg = exp.outer_grid, exp.layer_grid
    st = exp.euler0.state(t, with_pressure=False)
    M = layer_interp(grid, lg, eps)
    ue = to_physical(grid, st.velocity.horizontal[0].coeffs)
    ve = to_physical(grid, st.velocity.vertical.coeffs)
    up = to_physical(grid, apply_columns(M, exp.prandtl0.at("u", t)[0]))
    vp = to_physical(grid, apply_columns(M, exp.prandtl0.at("v", t)))
    return ue + up, ve, vp


def run_error_experiment(exp, eps: float, dt: float, T=None, sample_every=1, callback=None):
    """Viscous run from the outer initial data with errors against the expansion.

    Returns an :class:`ErrorTrajectory` with ``||u - u_e - u_p(y/eps)||`` and
    ``||v - v_e - eps v_p(y/eps)||`` in L2 and Linf at every sampled step,
    plus the v error with the layer weight set to one (negative control).
    """
    grid = exp.outer_grid
    check_resolution(grid, eps)
    t0 = exp.window[0]
    T = exp.window[1] - t0 if T is None else T
    w0 = exp.euler0.at("w", t0)[0]
    state = NSState(t0, w0, grid, eps)
    rows = []

    def measure(st):
        k = int(round((st.t - t0) / dt))
        if k % sample_every:
            return
        U, V, Vp = leading_order_fields(exp, eps, st.t)
        vel = st.velocity
        u = to_physical(grid, vel.horizontal[0].coeffs)
        v = to_physical(grid, vel.vertical.coeffs)
        eu, ev, ev1 = u - U, v - V - eps * Vp, v - V - Vp
        rows.append(
            (
                st.t,
                l2_norm_physical(eu, grid),
                l2_norm_physical(ev, grid),
                float(np.abs(eu).max()),
                float(np.abs(ev).max()),
                l2_norm_physical(ev1, grid),
            )
        )
        if callback is not None:
            callback(st)

    run_ns(state, T, dt, callback=measure)
    arr = np.array(rows)
    return ErrorTrajectory(eps, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], arr[:, 5])


__all__ = [
    "NSState",
    "ErrorTrajectory",
    "check_resolution",
    "step_ns",
    "run_ns",
    "ns_pressure",
    "energy_audit",
    "kinetic_energy",
    "run_error_experiment",
    "leading_order_fields",
]
