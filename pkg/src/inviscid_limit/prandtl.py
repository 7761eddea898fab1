"""Boundary-layer equations in the fast variable ``z = y / eps``.

Layer fields live on their own :class:`~inviscid_limit.grid.Grid` whose
column is ``[0, Lz]``.  Tangential velocities are stacked as arrays of shape
``(d,) + grid.coeff_shape``.  Wall traces of the outer flow are supplied by
a callable ``traces(t) -> dict`` with the keys used by
:class:`~inviscid_limit.euler.EulerTrajectory` (``U``, ``U_t``, ``dyU``,
``P``, ``V``, ``V_t``).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as la

from .errors import BlowUpDetected, WindowError
from .fields import apply_columns, check_decay, dx_coeffs, dy_coeffs, tail_coeffs, to_coeffs, to_physical
from .grid import Grid
from .timestepping import Trajectory, ars443_step

BLOWUP_FACTOR = 1e3


def lift_profile(z):
    """Wall lift ``l(z) = exp(-z^2)`` with ``l(0) = 1``."""
    return np.exp(-np.asarray(z) ** 2)


@dataclass(frozen=True)
class GaussianWeight:
    """Layer weight ``rho_p(t) z^2`` with ``rho_p(t) = 1 - lambda_p t``."""

    lambda_p: float = 1.0

    def rho(self, t):
        return 1.0 - self.lambda_p * np.asarray(t, dtype=float)

    def window(self):
        """Largest ``t`` with ``rho_p(t) >= 1/2``."""
        return 0.5 / self.lambda_p if self.lambda_p > 0 else np.inf

    def check(self, t):
        if np.any(self.rho(t) < 0.5 - 1e-14):
            raise WindowError(f"Gaussian weight rho_p fell below 1/2 at t={t}")

    def __call__(self, t, z):
        return self.rho(t) * np.asarray(z) ** 2


class WallTraces:
    """Outer-flow wall traces as a function of time.

    Parameters
    ----------
    func : callable
        ``func(t) -> dict`` of mode arrays.
    """

    KEYS = ("U", "U_t", "dyU", "P", "V", "V_t")

    def __init__(self, func, window=(-np.inf, np.inf)):
        self.func = func
        self.window = window

    @classmethod
    def from_trajectory(cls, traj: Trajectory):
        keys = [k for k in cls.KEYS if k in traj.data]

        def func(t):
            out = {k: traj.at(k, t) for k in keys}
            if "U" in out and "U_t" not in traj.data:
                out["U_t"] = traj.at("U", t, 1)
            return out

        return cls(func, (traj.t0, traj.t1))

    @classmethod
    def zeros(cls, grid: Grid):
        def func(t):
            z = np.zeros(grid.mode_shape, dtype=complex)
            vec = np.zeros((grid.d,) + grid.mode_shape, dtype=complex)
            return {"U": vec, "U_t": vec, "dyU": vec, "P": z, "V": z, "V_t": z}

        return cls(func)

    def __call__(self, t):
        lo, hi = self.window
        span = max(hi - lo, 1.0) if np.isfinite(hi - lo) else 1.0
        if t < lo - 1e-12 * span or t > hi + 1e-12 * span:
            raise WindowError(f"traces requested at t={t} outside [{lo}, {hi}]")
        return self.func(t)

    def covers(self, t0, t1):
        lo, hi = self.window
        return lo <= t0 + 1e-12 and hi >= t1 - 1e-12


# ----------------------------------------------------------------------
# column helpers


@lru_cache(maxsize=8)
def _head_matrix(grid: Grid):
    """Matrix ``H`` with ``(H f)_i = int_0^{z_i} f``."""
    cells = grid.interval_weights
    head = np.zeros((grid.ny, grid.ny))
    head[1:] = np.cumsum(cells, axis=0)
    return head


def head_integral(grid: Grid, coeffs):
    """``int_0^z`` along the last axis."""
    return apply_columns(_head_matrix(grid), coeffs)


@lru_cache(maxsize=16)
def _heat_factor(grid: Grid, h: float):
    D2 = grid.D2.toarray()
    A = np.eye(grid.ny) - h * D2
    A[0] = 0.0
    A[0, 0] = 1.0
    A[-1] = 0.0
    A[-1, -1] = 1.0
    return la.lu_factor(A)


def heat_solve(grid: Grid, rhs, h, bottom=0.0, top=0.0):
    """Solve ``Y - h D2 Y = rhs`` per column with Dirichlet rows at both ends."""
    b = np.array(rhs, dtype=complex, copy=True)
    shape = b.shape
    flat = b.reshape(-1, grid.ny)
    flat[:, 0] = np.broadcast_to(bottom, shape[:-1]).ravel()
    flat[:, -1] = np.broadcast_to(top, shape[:-1]).ravel()
    out = la.lu_solve(_heat_factor(grid, float(h)), flat.T).T
    return out.reshape(shape)


@lru_cache(maxsize=8)
def _lift(grid: Grid):
    ell = lift_profile(grid.y)
    return ell, grid.D2 @ ell


def _phys(grid, c):
    return to_physical(grid, c)


def _mask(grid, phys):
    return to_coeffs(grid, phys) * grid.dealias_mask[..., None]


def _trace_phys(grid, tr):
    """Mode array (or stack) of traces to physical samples broadcast along z."""
    axes = tuple(range(tr.ndim - grid.d, tr.ndim))
    vals = np.fft.irfftn(tr, s=(grid.nx,) * grid.d, axes=axes, norm="forward")
    return vals[..., None]


def _grad_trace(grid, tr):
    """Tangential gradient of a scalar trace, shape ``(d,) + mode_shape``."""
    return np.stack([1j * grid.derivative_wavenumbers[a] * tr for a in range(grid.d)])


def _div_trace(grid, vec):
    return sum(1j * grid.derivative_wavenumbers[a] * vec[a] for a in range(grid.d))


def _div(grid, u):
    return sum(dx_coeffs(grid, u[a], a + 1) for a in range(grid.d))


def _dot_grad(grid, a_phys, f):
    """Physical ``(a . grad_x) f`` for coefficient array ``f``."""
    return sum(a_phys[i] * _phys(grid, dx_coeffs(grid, f, i + 1)) for i in range(grid.d))


def recover_vp1(grid: Grid, u, check=True):
    """Vertical corrector ``v(z) = int_z^Lz div_x u``.

    Normalized by decay at the top of the column, so ``dz v = -div_x u``.
    """
    u = np.asarray(u)
    if u.ndim == len(grid.coeff_shape):
        u = u[None]
    return tail_coeffs(grid, _div(grid, u), "div_x u", check=check)


# ----------------------------------------------------------------------
# leading-order layer


@dataclass
class PrandtlState:
    """Layer state at one time.

    Attributes
    ----------
    t : float
    u : ndarray
        Tangential layer velocity, shape ``(d,) + grid.coeff_shape``.
    v_next : ndarray
        Vertical corrector recovered from the divergence relation.
    grid : Grid
    euler_traces : dict
        Outer traces at time ``t``.
    """

    t: float
    u: np.ndarray
    v_next: np.ndarray
    grid: Grid
    euler_traces: dict

    @classmethod
    def initial(cls, grid: Grid, traces, t0=0.0):
        """Zero layer up to the lift of the discrete wall trace ``U(t0)``.

        ``U(t0)`` vanishes for the initial data, so this is zero up to the
        outer discretization error and keeps ``u = -U`` exact at ``t0``.
        """
        tr = traces(t0)
        ell, _ = _lift(grid)
        u = -ell * np.asarray(tr["U"], dtype=complex)[..., None]
        return cls(t0, u, recover_vp1(grid, u), grid, tr)


def transport_coefficient(grid, u, U):
    """``W = -int_0^z div_x u - z div_x U`` (coefficient of ``dz u``)."""
    return -head_integral(grid, _div(grid, u)) - grid.y * _div_trace(grid, U)[..., None]


def prandtl_nonlinear(grid, u, tr):
    """Coefficients of ``(u.grad)U + ((U+u).grad)u + W dz u`` (dealiased)."""
    U = tr["U"]
    Up = _trace_phys(grid, U)
    up = np.stack([_phys(grid, c) for c in u])
    gradU = [_trace_phys(grid, _grad_trace(grid, U[i])) for i in range(grid.d)]
    Wp = _phys(grid, transport_coefficient(grid, u, U))
    out = []
    for i in range(grid.d):
        term = sum(up[j] * gradU[i][j] for j in range(grid.d))
        term = term + _dot_grad(grid, Up + up, u[i])
        term = term + Wp * _phys(grid, dy_coeffs(grid, u[i], 1))
        out.append(_mask(grid, term))
    return np.stack(out)


def prandtl_tendency(grid, u, tr):
    """``dt u = dzz u - N(u)`` for the wall-data-consistent state ``u``."""
    return dy_coeffs(grid, u, 2) - prandtl_nonlinear(grid, u, tr)


def _blowup_scale(grid, u):
    return float(np.abs(_phys(grid, dy_coeffs(grid, u, 1))).max()) if u.size else 0.0


def step_prandtl(state: PrandtlState, dt: float, traces, cap=None) -> PrandtlState:
    """One ARS(4,4,3) step of the leading-order layer.

    The wall condition ``u = -U`` is carried by the lift ``u = ubar - l U``
    with ``ubar(0) = ubar(Lz) = 0``; diffusion is implicit.
    """
    grid = state.grid
    ell, d2ell = _lift(grid)

    def to_bar(t, u, tr):
        return u + ell * tr["U"][..., None]

    def from_bar(ub, tr):
        return ub - ell * tr["U"][..., None]

    def explicit(t, ub):
        tr = traces(t)
        u = from_bar(ub, tr)
        return -d2ell * tr["U"][..., None] + ell * tr["U_t"][..., None] - prandtl_nonlinear(grid, u, tr)

    def solve(t, rhs, h):
        return heat_solve(grid, rhs, h)

    ub0 = to_bar(state.t, state.u, state.euler_traces)
    ub1 = ars443_step(state.t, ub0, dt, explicit, solve)
    t1 = state.t + dt
    tr1 = traces(t1)
    u1 = from_bar(ub1, tr1)
    check_decay(u1, "u_p")
    if cap is not None:
        peak = _blowup_scale(grid, u1)
        if peak > cap or not np.isfinite(peak):
            raise BlowUpDetected(t1, peak, cap)
    return PrandtlState(t1, u1, recover_vp1(grid, u1), grid, tr1)


def tilde_nonlinear(grid, ut, tr):
    """``(ut.grad)ut + vt dz ut + grad P`` with ``vt = -int_0^z div ut``."""
    up = np.stack([_phys(grid, c) for c in ut])
    vt = _phys(grid, -head_integral(grid, _div(grid, ut)))
    gradP = _trace_phys(grid, _grad_trace(grid, tr["P"]))
    out = []
    for i in range(grid.d):
        term = _dot_grad(grid, up, ut[i]) + vt * _phys(grid, dy_coeffs(grid, ut[i], 1)) + gradP[i]
        out.append(_mask(grid, term))
    return np.stack(out)


def step_prandtl_tilde(t, ut, dt, grid, traces):
    """One step of the tilde formulation ``ut = u_p + U(t, x, 0)``.

    Lift ``ut = ubreve + (1 - l) U`` so that ``ubreve`` vanishes at both
    ends of the column.
    """
    ell, d2ell = _lift(grid)

    def explicit(s, ub):
        tr = traces(s)
        U = tr["U"][..., None]
        full = ub + (1.0 - ell) * U
        return -(1.0 - ell) * tr["U_t"][..., None] - d2ell * U - tilde_nonlinear(grid, full, tr)

    def solve(s, rhs, h):
        return heat_solve(grid, rhs, h)

    ub0 = ut - (1.0 - ell) * traces(t)["U"][..., None]
    ub1 = ars443_step(t, ub0, dt, explicit, solve)
    return ub1 + (1.0 - ell) * traces(t + dt)["U"][..., None]


def _times(t0, T, dt):
    n = int(round(T / dt))
    if n < 1 or not np.isclose(n * dt, T, rtol=1e-10, atol=1e-14):
        raise ValueError("T must be a positive integer multiple of dt")
    return t0 + dt * np.arange(n + 1)


def run_prandtl(grid: Grid, traces, T, dt, t0=0.0, weight: GaussianWeight | None = None, tilde=False):
    """Leading-order layer trajectory on ``[t0, t0 + T]``.

    Stores ``u`` (tangential), ``u_t`` (its tendency), ``v`` (``v_p^(1)``)
    and ``v_t``.  With ``tilde=True`` the tilde formulation is integrated
    independently and stored as ``ut``.
    """
    if hasattr(traces, "covers") and not traces.covers(t0, t0 + T):
        raise WindowError("outer traces do not cover the requested window")
    times = _times(t0, T, dt)
    if weight is not None:
        weight.check(times[-1])
    state = PrandtlState.initial(grid, traces, t0)
    ut = state.u + traces(t0)["U"][..., None] if tilde else None
    store = {k: [] for k in ("u", "u_t", "v", "v_t")}
    if tilde:
        store["ut"] = []
    cap = None

    def record(st, ut_val):
        tend = prandtl_tendency(grid, st.u, st.euler_traces)
        store["u"].append(st.u)
        store["u_t"].append(tend)
        store["v"].append(st.v_next)
        store["v_t"].append(recover_vp1(grid, tend, check=False))
        if tilde:
            store["ut"].append(ut_val)

    record(state, ut)
    for n in range(times.size - 1):
        new = step_prandtl(state, dt, traces, cap)
        if tilde:
            ut = step_prandtl_tilde(state.t, ut, dt, grid, traces)
        state = new
        state.t = times[n + 1]
        if cap is None:
            cap = BLOWUP_FACTOR * max(_blowup_scale(grid, state.u), 1e-300)
        record(state, ut)
    data = {k: np.stack(v) for k, v in store.items()}
    return Trajectory(times, data, {"grid": grid.to_dict(), "kind": "prandtl0"})


# ----------------------------------------------------------------------
# first-order layer


def linearized_forcing_groups(grid, u1, u0, v1, tr0, tr1):
    """The eight forcing groups of the first-order layer equation.

    Parameters
    ----------
    u1, u0 : ndarray
        First- and leading-order tangential layer velocities ``(d,) + coeff``.
    v1 : ndarray
        ``v_p^(1)`` of the leading-order layer.
    tr0, tr1 : dict
        Leading- and first-order outer traces (``U``, ``dyU``).

    Returns
    -------
    list of ndarray
        ``G1..G8`` in physical space, each of shape ``(d,) + phys_shape``:
        ``((u0+U).grad)u1``, ``W dz u1``, ``(u1.grad)(u0+U)``,
        ``((U1 + z dyU).grad)u0``, ``(v2-v2(0)+z dy v_e1(0)+z^2/2 dyy v_e0(0)) dz u0``,
        ``z (u0.grad) dyU``, ``(u0.grad)U1``, ``v1 dyU``.
    """
    d = grid.d
    z = grid.y
    U, dyU, U1 = tr0["U"], tr0["dyU"], tr1["U"]
    Up, dyUp, U1p = _trace_phys(grid, U), _trace_phys(grid, dyU), _trace_phys(grid, U1)
    u0p = np.stack([_phys(grid, c) for c in u0])
    u1p = np.stack([_phys(grid, c) for c in u1])
    v1p = _phys(grid, v1)
    W = _phys(grid, transport_coefficient(grid, u0, U))
    coef5 = _phys(
        grid,
        -head_integral(grid, _div(grid, u1))
        - z * _div_trace(grid, U1)[..., None]
        - 0.5 * z**2 * _div_trace(grid, dyU)[..., None],
    )
    gU = [_trace_phys(grid, _grad_trace(grid, U[i])) for i in range(d)]
    gU1 = [_trace_phys(grid, _grad_trace(grid, U1[i])) for i in range(d)]
    gdyU = [_trace_phys(grid, _grad_trace(grid, dyU[i])) for i in range(d)]
    G = [[] for _ in range(8)]
    for i in range(d):
        G[0].append(_dot_grad(grid, u0p + Up, u1[i]))
        G[1].append(W * _phys(grid, dy_coeffs(grid, u1[i], 1)))
        g3 = _dot_grad(grid, u1p, u0[i]) + sum(u1p[j] * gU[i][j] for j in range(d))
        G[2].append(g3)
        G[3].append(_dot_grad(grid, U1p + z * dyUp, u0[i]))
        G[4].append(coef5 * _phys(grid, dy_coeffs(grid, u0[i], 1)))
        G[5].append(z * sum(u0p[j] * gdyU[i][j] for j in range(d)))
        G[6].append(sum(u0p[j] * gU1[i][j] for j in range(d)))
        G[7].append(v1p * dyUp[i])
    return [np.stack(g) for g in G]


def linearized_tendency(grid, u1, u0, v1, tr0, tr1):
    groups = linearized_forcing_groups(grid, u1, u0, v1, tr0, tr1)
    forcing = sum(groups)
    return dy_coeffs(grid, u1, 2) - np.stack([_mask(grid, f) for f in forcing])


def solve_linearized_prandtl(background: Trajectory, traces0, traces1, T=None, dt=None):
    """First-order layer ``u_p^(1)`` with wall data ``-u_e^(1)(t, x, 0)``.

    Parameters
    ----------
    background : Trajectory
        Leading-order layer from :func:`run_prandtl`.
    traces0, traces1 : callable
        Leading- and first-order outer wall traces.
    T, dt : float, optional
        Window and step; default to the background sampling.

    Returns
    -------
    Trajectory
        Keys ``u``, ``u_t``, ``v`` (``v_p^(2)``) and ``v_t``.
    """
    grid = Grid.from_dict(background.meta["grid"])
    if dt is None:
        dt = float(background.times[1] - background.times[0])
    if T is None:
        T = background.t1 - background.t0
    t0 = background.t0
    if not background.covers(t0, t0 + T):
        raise WindowError("background layer does not cover the requested window")
    for tr in (traces0, traces1):
        if hasattr(tr, "covers") and not tr.covers(t0, t0 + T):
            raise WindowError("outer traces do not cover the requested window")
    times = _times(t0, T, dt)
    ell, d2ell = _lift(grid)

    def bg(t):
        return background.at("u", t), background.at("v", t)

    def explicit(t, ub):
        tr0, tr1 = traces0(t), traces1(t)
        u0, v1 = bg(t)
        u1 = ub - ell * tr1["U"][..., None]
        forcing = sum(linearized_forcing_groups(grid, u1, u0, v1, tr0, tr1))
        masked = np.stack([_mask(grid, f) for f in forcing])
        return -d2ell * tr1["U"][..., None] + ell * tr1["U_t"][..., None] - masked

    def solve(t, rhs, h):
        return heat_solve(grid, rhs, h)

    store = {k: [] for k in ("u", "u_t", "v", "v_t")}

    def record(t, u1):
        u0, v1 = bg(t)
        tend = linearized_tendency(grid, u1, u0, v1, traces0(t), traces1(t))
        store["u"].append(u1)
        store["u_t"].append(tend)
        store["v"].append(recover_vp1(grid, u1))
        store["v_t"].append(recover_vp1(grid, tend, check=False))

    # lift of the discrete wall data, zero up to outer discretization error
    u1 = -ell * np.asarray(traces1(t0)["U"], dtype=complex)[..., None]
    record(times[0], u1)
    for n in range(times.size - 1):
        t = times[n]
        ub = u1 + ell * traces1(t)["U"][..., None]
        ub = ars443_step(t, ub, dt, explicit, solve)
        u1 = ub - ell * traces1(times[n + 1])["U"][..., None]
        check_decay(u1, "u_p1")
        record(times[n + 1], u1)
    data = {k: np.stack(v) for k, v in store.items()}
    return Trajectory(times, data, {"grid": grid.to_dict(), "kind": "prandtl1"})


def compute_vp2(grid: Grid, u1):
    """``v_p^(2)(z) = int_z^Lz div_x u_p^(1)``."""
    return recover_vp1(grid, u1)


def compute_f(grid: Grid, u1):
    """Displacement functional ``f = v_p^(2)(x, 0)`` as a mode array."""
    return compute_vp2(grid, u1)[..., 0]


PP2_TERMS = (
    "dzz v1",
    "-dt v1",
    "-U.grad v1",
    "-u0.(grad V1 + grad v1)",
    "-v1 dy v_e0(0)",
    "-(V1 + v1) dz v1",
    "-z u0.grad dy v_e0(0)",
    "-z dy v_e0(0) dz v1",
)


def pp2_terms(grid, u0, v1, v1_t, tr0, tr1):
    """The eight terms of the layer pressure integrand, physical space.

    ``dy v_e0(0) = -div_x U`` is used for the outer normal derivative.
    """
    z = grid.y
    U, V1 = tr0["U"], tr1["V"]
    Up = _trace_phys(grid, U)
    u0p = np.stack([_phys(grid, c) for c in u0])
    v1p = _phys(grid, v1)
    dzv1 = _phys(grid, dy_coeffs(grid, v1, 1))
    dyv0 = -_div_trace(grid, U)
    dyv0p = _trace_phys(grid, dyv0)
    gV1 = _trace_phys(grid, _grad_trace(grid, V1))
    gdyv0 = _trace_phys(grid, _grad_trace(grid, dyv0))
    gv1 = np.stack([_phys(grid, dx_coeffs(grid, v1, a + 1)) for a in range(grid.d)])
    V1p = _trace_phys(grid, V1)
    return [
        _phys(grid, dy_coeffs(grid, v1, 2)),
        -_phys(grid, v1_t),
        -sum(Up[a] * gv1[a] for a in range(grid.d)),
        -sum(u0p[a] * (gV1[a] + gv1[a]) for a in range(grid.d)),
        -v1p * dyv0p,
        -(V1p + v1p) * dzv1,
        -z * sum(u0p[a] * gdyv0[a] for a in range(grid.d)),
        -z * dyv0p * dzv1,
    ]


def compute_pp2(grid, u0, v1, v1_t, tr0, tr1, disable=()):
    """``p_p^(2)(z) = -int_z^Lz P2`` with optional terms switched off by index."""
    terms = pp2_terms(grid, u0, v1, v1_t, tr0, tr1)
    P2 = sum(t for i, t in enumerate(terms) if i not in set(disable))
    coeffs = to_coeffs(grid, P2)
    return -tail_coeffs(grid, coeffs, "P2"), coeffs


__all__ = [
    "GaussianWeight",
    "PrandtlState",
    "WallTraces",
    "lift_profile",
    "recover_vp1",
    "step_prandtl",
    "step_prandtl_tilde",
    "run_prandtl",
    "solve_linearized_prandtl",
    "linearized_forcing_groups",
    "compute_vp2",
    "compute_pp2",
    "compute_f",
    "pp2_terms",
]
