"""Outer Euler flow and its first-order correction in vorticity form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elliptic import biot_savart, pressure_from_acceleration
from .errors import CFLViolation, CompatibilityError, SupportErosion, WindowError
from .fields import SpectralField, Trace, VectorField, dx_coeffs, dy_coeffs, to_coeffs, to_physical
from .grid import Grid
from .timestepping import Trajectory, ssprk3_step

Y_GUARD = 1.0
SUPPORT_TOL = 1e-10
CFL_MAX = 0.5


@dataclass(frozen=True)
class InitialDataSpec:
    """Stream-function initial data ``psi = A sin(k0 x) chi(y)``.

    ``chi`` is the polynomial bump ``(q(y))^power`` on ``(a, b)`` with
    ``q = (y - a)(b - y) / ((b - a)/2)^2``, so it vanishes to order ``power``
    at both ends and has unit maximum.
    """

    A: float = 1.0
    k0: int = 1
    a: float = 2.0
    b: float = 4.0
    power: int = 8

    def __post_init__(self):
        if self.a < 2.0:
            raise ValueError("vorticity support must start at y >= 2 (unit wall distance)")
        if not self.b > self.a:
            raise ValueError("support interval must have b > a")


def bump(y, a, b, p, deriv=0):
    """Bump ``q^p`` and its first two derivatives (``deriv`` in 0..2)."""
    y = np.asarray(y, dtype=float)
    c = (0.5 * (b - a)) ** 2
    inside = (y > a) & (y < b)
    q = np.where(inside, (y - a) * (b - y) / c, 0.0)
    q1 = (a + b - 2 * y) / c
    q2 = -2.0 / c
    if deriv == 0:
        out = q**p
    elif deriv == 1:
        out = p * q ** (p - 1) * q1
    elif deriv == 2:
        out = p * (p - 1) * q ** (p - 2) * q1**2 + p * q ** (p - 1) * q2
    else:
        raise ValueError("deriv must be 0, 1 or 2")
    return np.where(inside, out, 0.0)


@dataclass
class EulerState:
    """Outer flow at one time: vorticity components, velocity, optional pressure."""

    t: float
    vorticity: list
    velocity: VectorField
    pressure: SpectralField | None = None

    @property
    def grid(self) -> Grid:
        return self.velocity.grid

    @property
    def w(self):
        """Stacked vorticity coefficients, shape ``(ncomp,) + coeff_shape``."""
        return np.stack([c.coeffs for c in self.vorticity])

    @classmethod
    def from_vorticity(cls, grid, w, t=0.0, wall_velocity=None):
        w = np.asarray(w)
        if w.ndim == len(grid.coeff_shape):
            w = w[None]
        comps = [SpectralField(grid, c, f"w{i}") for i, c in enumerate(w)]
        vel = biot_savart(comps[0] if grid.d == 1 else comps, wall_velocity, check=False)
        return cls(t, comps, vel)


def make_initial_data(spec: InitialDataSpec, grid: Grid) -> EulerState:
    """Initial Euler state from the stream-function construction.

    d=1: ``u = dy psi``, ``v = -dx psi`` and vorticity ``dy u - dx v = Delta psi``.
    d=2: ``psi = A sin(k0 x1) cos(k0 x2) chi(y)`` with ``u = (dy psi, 0)``,
    ``v = -dx1 psi``.
    """
    k0 = spec.k0 * 2 * np.pi / grid.box
    if grid.d == 1:
        X, Y = np.meshgrid(grid.x, grid.y, indexing="ij")
        ch = bump(Y, spec.a, spec.b, spec.power)
        ch2 = bump(Y, spec.a, spec.b, spec.power, 2)
        w = spec.A * np.sin(k0 * X) * (ch2 - k0**2 * ch)
        wc = to_coeffs(grid, w)[None]
    else:
        X1, X2, Y = np.meshgrid(grid.x, grid.x, grid.y, indexing="ij")
        s1, c1 = np.sin(k0 * X1), np.cos(k0 * X1)
        s2, c2 = np.sin(k0 * X2), np.cos(k0 * X2)
        ch = bump(Y, spec.a, spec.b, spec.power)
        ch1 = bump(Y, spec.a, spec.b, spec.power, 1)
        ch2 = bump(Y, spec.a, spec.b, spec.power, 2)
        # u = (psi_y, 0, -psi_x1): w = (dx2 v - dy u2, dy u1 - dx1 v, dx1 u2 - dx2 u1)
        w1 = spec.A * k0**2 * c1 * s2 * ch
        w2 = spec.A * s1 * c2 * (ch2 - k0**2 * ch)
        w3 = spec.A * k0 * s1 * s2 * ch1
        wc = np.stack([to_coeffs(grid, w1), to_coeffs(grid, w2), to_coeffs(grid, w3)])
    return EulerState.from_vorticity(grid, wc)


# ----------------------------------------------------------------------
# tendencies


def _phys_velocity(vel: VectorField):
    return [to_physical(vel.grid, c.coeffs) for c in vel.components]


def _grad_phys(grid, coeffs):
    """Physical tangential and wall-normal derivatives of one coefficient array."""
    out = [to_physical(grid, dx_coeffs(grid, coeffs, ax + 1)) for ax in range(grid.d)]
    out.append(to_physical(grid, dy_coeffs(grid, coeffs, 1)))
    return out


def advect(grid, vel_phys, coeffs):
    """Physical ``U . grad f`` for velocity samples and coefficient array ``f``."""
    grads = _grad_phys(grid, coeffs)
    return sum(a * g for a, g in zip(vel_phys, grads))


def _to_masked(grid, phys):
    return to_coeffs(grid, phys) * grid.dealias_mask[..., None]


def vorticity_tendency(grid, w, vel_phys, w_bg=None, vel_bg_phys=None):
    """Transport (and stretching for d=2) tendency, dealiased.

    Nonlinear: ``-U.grad w + w.grad U``.  With background fields given the
    linearization ``-(U0.grad w + U.grad w0) + w0.grad U + w.grad U0`` is
    returned instead.
    """
    if w_bg is None:
        terms = [-advect(grid, vel_phys, wi) for wi in w]
        if grid.d == 2:
            terms = _add_stretching(grid, terms, w, vel_phys)
        return np.stack([_to_masked(grid, t) for t in terms])
    terms = [-(advect(grid, vel_bg_phys, wi) + advect(grid, vel_phys, w0)) for wi, w0 in zip(w, w_bg)]
    if grid.d == 2:
        terms = _add_stretching(grid, terms, w_bg, vel_phys)
        terms = _add_stretching(grid, terms, w, vel_bg_phys)
    return np.stack([_to_masked(grid, t) for t in terms])


def _add_stretching(grid, terms, w, vel_phys):
    wp = [to_physical(grid, wi) for wi in w]
    vel_c = [to_coeffs(grid, v) for v in vel_phys]
    out = list(terms)
    for i in range(3):
        grads = _grad_phys(grid, vel_c[i])
        out[i] = out[i] + sum(wj * gj for wj, gj in zip(wp, grads))
    return out


def cfl_number(grid, vel_phys, dt):
    """``dt * max(|u|/dx + |v|/dy_local)`` over the grid."""
    dx = grid.box / grid.nx
    dy = np.gradient(grid.y)
    rate = sum(np.abs(u) for u in vel_phys[:-1]) / dx + np.abs(vel_phys[-1]) / dy
    return float(dt * rate.max())


def check_support(grid, w, y_guard=Y_GUARD, tol=SUPPORT_TOL, t=None):
    """Raise :class:`SupportErosion` if vorticity is present below ``y_guard``."""
    phys = np.abs(np.stack([to_physical(grid, wi) for wi in w]))
    scale = phys.max()
    if scale == 0:
        return 0.0
    low = phys[..., grid.y < y_guard].max() / scale
    if low > tol:
        raise SupportErosion(f"vorticity reached y < {y_guard} (relative level {low:.2e}) at t={t}")
    return low


def step_euler(state: EulerState, dt: float, y_guard=Y_GUARD, cfl_max=CFL_MAX) -> EulerState:
    """Advance the outer Euler flow by one SSP-RK3 step."""
    grid = state.grid
    vel_phys = _phys_velocity(state.velocity)
    cfl = cfl_number(grid, vel_phys, dt)
    if cfl > cfl_max:
        raise CFLViolation(f"CFL number {cfl:.3f} exceeds {cfl_max}")

    def rhs(t, w):
        vel = EulerState.from_vorticity(grid, w).velocity
        return vorticity_tendency(grid, w, _phys_velocity(vel))

    w_new = ssprk3_step(rhs, state.t, state.w, dt)
    if y_guard is not None:
        check_support(grid, w_new, y_guard, t=state.t + dt)
    return EulerState.from_vorticity(grid, w_new, state.t + dt)


def acceleration(grid, vel: VectorField, vel_t: VectorField, bg: VectorField | None = None):
    """Coefficients of ``dt U + U.grad U`` (or its linearization about ``bg``)."""
    comps = [c.coeffs for c in vel.components]
    comps_t = [c.coeffs for c in vel_t.components]
    up = _phys_velocity(vel)
    out = []
    if bg is None:
        for c, ct in zip(comps, comps_t):
            out.append(ct + _to_masked(grid, advect(grid, up, c)))
    else:
        bp = _phys_velocity(bg)
        bcomps = [c.coeffs for c in bg.components]
        for c, ct, b in zip(comps, comps_t, bcomps):
            out.append(ct + _to_masked(grid, advect(grid, bp, c) + advect(grid, up, b)))
    return out


def recover_pressure(state: EulerState, tendency=None, wall_velocity_t=None, background=None) -> SpectralField:
    """Pressure from the momentum equation with wall/top Neumann data.

    ``grad p = -(dt U + U.grad U)``, solved in Poisson form.  The time
    derivative of the velocity is taken from the vorticity tendency through
    the Biot-Savart law; it is computed here when not supplied.
    """
    grid = state.grid
    if tendency is None:
        tendency = vorticity_tendency(grid, state.w, _phys_velocity(state.velocity))
    comps = [SpectralField(grid, c) for c in tendency]
    vel_t = biot_savart(comps[0] if grid.d == 1 else comps, wall_velocity_t, check=False)
    acc = acceleration(grid, state.velocity, vel_t, background)
    return pressure_from_acceleration(grid, acc, "p")


# ----------------------------------------------------------------------
# trajectories


def _velocity_traces(vel: VectorField):
    """Wall values of u, dy u and v, shape (d,) + mode_shape etc."""
    grid = vel.grid
    hor = np.stack([c.coeffs for c in vel.horizontal])
    dyh = dy_coeffs(grid, hor, 1)
    return hor[..., 0], dyh[..., 0], vel.vertical.coeffs[..., 0]


class EulerTrajectory(Trajectory):
    """Outer-flow trajectory storing vorticity, tendency and wall traces.

    Stored keys: ``w``, ``w_t``, ``U`` (wall tangential velocity), ``U_t``,
    ``dyU`` (wall value of ``dy u``), ``V`` (wall normal velocity), ``V_t``
    and ``P`` (wall pressure).
    """

    def grid(self) -> Grid:
        return Grid.from_dict(self.meta["grid"])

    def wall_velocity(self, t, deriv=0):
        if "V" not in self.data:
            return None
        return self.at("V", t, deriv)

    def state(self, t, with_pressure=True) -> EulerState:
        grid = self.grid()
        w = self.at("w", t)
        st = EulerState.from_vorticity(grid, w, t, self.wall_velocity(t))
        if with_pressure:
            st.pressure = self.pressure(t, st)
        return st

    def velocity_t(self, t) -> VectorField:
        grid = self.grid()
        wt = self.at("w", t, 1)
        comps = [SpectralField(grid, c) for c in wt]
        return biot_savart(comps[0] if grid.d == 1 else comps, self.wall_velocity(t, 1), check=False)

    def pressure(self, t, state=None) -> SpectralField:
        state = state or self.state(t, with_pressure=False)
        return recover_pressure(state, self.at("w", t, 1))


def _derived(grid, w, wt, g=None, gt=None, bg_vel=None):
    vel = biot_savart(_split(grid, w), g, check=False)
    vel_t = biot_savart(_split(grid, wt), gt, check=False)
    acc = acceleration(grid, vel, vel_t, bg_vel)
    p = pressure_from_acceleration(grid, acc)
    U, dyU, V = _velocity_traces(vel)
    Ut, _, Vt = _velocity_traces(vel_t)
    return vel, {"U": U, "U_t": Ut, "dyU": dyU, "V": V, "V_t": Vt, "P": p.coeffs[..., 0]}


def _split(grid, w):
    comps = [SpectralField(grid, c) for c in w]
    return comps[0] if grid.d == 1 else comps


def run_euler(state0: EulerState, T: float, dt: float, y_guard=Y_GUARD, cfl_max=CFL_MAX, callback=None):
    """Integrate the outer flow on ``[t0, t0 + T]`` with fixed step ``dt``.

    Returns an :class:`EulerTrajectory` with one sample per step.
    """
    grid = state0.grid
    nsteps = int(round(T / dt))
    if not np.isclose(nsteps * dt, T, rtol=1e-10, atol=1e-14):
        raise ValueError("T must be an integer multiple of dt")
    times = state0.t + dt * np.arange(nsteps + 1)
    keys = ("w", "w_t", "U", "U_t", "dyU", "V", "V_t", "P")
    store = {k: [] for k in keys}
    state = state0

    def record(st):
        vel_phys = _phys_velocity(st.velocity)
        wt = vorticity_tendency(grid, st.w, vel_phys)
        _, traces = _derived(grid, st.w, wt)
        store["w"].append(st.w)
        store["w_t"].append(wt)
        for k, v in traces.items():
            store[k].append(v)

    record(state)
    for n in range(nsteps):
        state = step_euler(state, dt, y_guard, cfl_max)
        state.t = times[n + 1]
        record(state)
        if callback is not None:
            callback(state)
    data = {k: np.stack(v) for k, v in store.items()}
    return EulerTrajectory(times, data, {"grid": grid.to_dict(), "kind": "euler0"})


class LinearEulerTrajectory(EulerTrajectory):
    """First-order outer corrector; pressure needs the background flow."""

    background: EulerTrajectory | None = None

    def pressure(self, t, state=None) -> SpectralField:
        state = state or self.state(t, with_pressure=False)
        bg = self.background.state(t, with_pressure=False).velocity
        return recover_pressure(state, self.at("w", t, 1), self.wall_velocity(t, 1), background=bg)


def solve_linearized_euler(background: EulerTrajectory, boundary_v, T=None, dt=None):
    """First-order outer corrector with prescribed wall-normal velocity.

    Parameters
    ----------
    background : EulerTrajectory
        Leading-order outer flow.
    boundary_v : callable
        ``boundary_v(t) -> (g, g_t)`` mode arrays of the wall data
        ``v_e1(t, x, 0)`` and its time derivative.
    T, dt : float, optional
        Window length and step; default to the background sampling.

    Returns
    -------
    LinearEulerTrajectory
        Samples at the background times of ``w``, ``w_t`` and wall traces.
    """
    grid = background.grid()
    times = background.times
    if dt is None:
        dt = float(times[1] - times[0])
    if T is None:
        T = float(times[-1] - times[0])
    nsteps = int(round(T / dt))
    t0 = background.t0
    if not background.covers(t0, t0 + T):
        raise WindowError("background trajectory does not cover the requested window")
    out_times = t0 + dt * np.arange(nsteps + 1)
    ncomp = 1 if grid.d == 1 else 3

    bg_cache = {}

    def bg_at(t):
        key = round(t, 14)
        if key not in bg_cache:
            w0 = background.at("w", t)
            vel0 = biot_savart(_split(grid, w0), None, check=False)
            bg_cache.clear()
            bg_cache[key] = (w0, vel0, _phys_velocity(vel0))
        return bg_cache[key]

    def rhs(t, w1):
        w0, _, vel0_phys = bg_at(t)
        g, _ = boundary_v(t)
        vel1 = biot_savart(_split(grid, w1), g, check=False)
        return vorticity_tendency(grid, w1, _phys_velocity(vel1), w0, vel0_phys)

    keys = ("w", "w_t", "U", "U_t", "dyU", "V", "V_t", "P")
    store = {k: [] for k in keys}

    def record(t, w1):
        w0, vel0, vel0_phys = bg_at(t)
        g, gt = boundary_v(t)
        vel1 = biot_savart(_split(grid, w1), g, check=False)
        wt = vorticity_tendency(grid, w1, _phys_velocity(vel1), w0, vel0_phys)
        _, traces = _derived(grid, w1, wt, g, gt, vel0)
        store["w"].append(w1)
        store["w_t"].append(wt)
        for k, v in traces.items():
            store[k].append(v)

    w1 = np.zeros((ncomp,) + grid.coeff_shape, dtype=complex)
    record(out_times[0], w1)
    for n in range(nsteps):
        w1 = ssprk3_step(rhs, out_times[n], w1, dt)
        record(out_times[n + 1], w1)
    data = {k: np.stack(v) for k, v in store.items()}
    traj = LinearEulerTrajectory(out_times, data, {"grid": grid.to_dict(), "kind": "euler1"})
    traj.background = background
    return traj


def kinetic_energy(vel: VectorField):
    """``(1/2) ||U||^2`` over the box and column."""
    from .fields import l2_norm

    return 0.5 * sum(l2_norm(c) ** 2 for c in vel.components)


def trace_of(grid, arr) -> Trace:
    return Trace(grid, arr)


__all__ = [
    "InitialDataSpec",
    "EulerState",
    "EulerTrajectory",
    "LinearEulerTrajectory",
    "make_initial_data",
    "step_euler",
    "recover_pressure",
    "run_euler",
    "solve_linearized_euler",
    "kinetic_energy",
    "CompatibilityError",
]
