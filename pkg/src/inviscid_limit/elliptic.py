"""Half-space potential theory on the truncated column.

Every solve is a direct per-mode two-point boundary-value problem.  The
column is closed at ``Ly`` by the transparent condition
``u' + |k| u = 0``, which is exact for modal harmonic functions.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.linalg as la
from scipy.linalg import lapack

from .errors import CompatibilityError, DivergenceError, ShapeMismatch
from .fields import (
    SpectralField,
    Trace,
    VectorField,
    apply_columns,
    check_decay,
    dx_coeffs,
    dy_coeffs,
)
from .grid import GAUSS_POINTS, Grid, fornberg_weights

COMPAT_TOL = 1e-8
DIV_TOL = 1e-8


class ModalSolver:
    """LU-factored family of banded operators ``alpha - beta (D2 - k^2)``.

    Row 0 and row ``ny-1`` are replaced by boundary rows.

    Parameters
    ----------
    grid : Grid
    bottom : {"dirichlet", "neumann", "robin"}
        ``u(0)``, ``-u'(0)`` or ``-nu (u'(0) + |k| u(0))``.
    top : {"robin", "dirichlet", "neumann"}
        ``u'(L) + |k| u(L)``, ``u(L)`` or ``u'(L)``.
    alpha, beta : float
        Operator coefficients.
    nu : float
        Scale of the bottom Robin row.
    """

    def __init__(self, grid: Grid, bottom="dirichlet", top="robin", alpha=0.0, beta=1.0, nu=1.0):
        self.grid = grid
        self.bottom = bottom
        self.top = top
        kabs = grid.kabs.ravel()
        self.unique, self.inverse = np.unique(np.round(kabs, 12), return_inverse=True)
        n = grid.ny
        D1 = grid.D1.toarray()
        D2 = grid.D2.toarray()
        eye = np.eye(n)
        self.pinned = np.zeros(self.unique.size, dtype=bool)
        self.factors = []
        for idx, k in enumerate(self.unique):
            A = alpha * eye - beta * (D2 - k**2 * eye)
            if bottom == "dirichlet":
                A[0] = eye[0]
            elif bottom == "neumann":
                A[0] = -D1[0]
            elif bottom == "robin":
                A[0] = -nu * (D1[0] + k * eye[0])
            else:
                raise ValueError(f"unknown bottom condition {bottom}")
            if top == "robin":
                A[-1] = D1[-1] + k * eye[-1]
            elif top == "dirichlet":
                A[-1] = eye[-1]
            elif top == "neumann":
                A[-1] = D1[-1]
            else:
                raise ValueError(f"unknown top condition {top}")
            singular = k == 0 and alpha == 0 and bottom == "neumann" and top in ("robin", "neumann")
            if singular:
                A[-1] = eye[-1]
                self.pinned[idx] = True
            self.factors.append(_band_factor(A))

    def solve(self, rhs, bottom_data=None, top_data=None):
        """Solve for all modes; arrays have shape ``mode_shape (+ (ny,))``."""
        grid = self.grid
        b = np.array(rhs, dtype=complex, copy=True).reshape(-1, grid.ny)
        b[:, 0] = 0.0 if bottom_data is None else np.asarray(bottom_data).ravel()
        b[:, -1] = 0.0 if top_data is None else np.asarray(top_data).ravel()
        out = np.empty_like(b)
        for idx, lu in enumerate(self.factors):
            sel = self.inverse == idx
            if self.pinned[idx]:
                b[sel, -1] = 0.0
            out[sel] = _band_solve(lu, b[sel].T).T
        return out.reshape(grid.coeff_shape)


def _band_factor(A):
    """LAPACK band LU of a dense matrix whose nonzeros form a narrow band."""
    rows, cols = np.nonzero(A)
    kl = int(max(0, (rows - cols).max()))
    ku = int(max(0, (cols - rows).max()))
    n = A.shape[0]
    if kl + ku + 1 > n // 3:
        return ("dense", la.lu_factor(A))
    ab = np.zeros((2 * kl + ku + 1, n))
    for d in range(-kl, ku + 1):
        diag = np.diagonal(A, d)
        if d >= 0:
            ab[kl + ku - d, d:] = diag
        else:
            ab[kl + ku - d, : n + d] = diag
    lu, piv, info = lapack.dgbtrf(ab, kl, ku)
    if info != 0:
        raise np.linalg.LinAlgError(f"singular banded system (info={info})")
    return ("band", (lu, piv, kl, ku))


def _band_solve(factor, b):
    kind, data = factor
    b = np.asarray(b)
    m = b.shape[1]
    rhs = np.concatenate([b.real, b.imag], axis=1)
    if kind == "dense":
        x = la.lu_solve(data, rhs, check_finite=False)
    else:
        lu, piv, kl, ku = data
        x, info = lapack.dgbtrs(lu, kl, ku, rhs, piv)
        if info != 0:
            raise np.linalg.LinAlgError(f"banded solve failed (info={info})")
    return x[:, :m] + 1j * x[:, m:]


@lru_cache(maxsize=64)
def modal_solver(grid: Grid, bottom="dirichlet", top="robin", alpha=0.0, beta=1.0, nu=1.0):
    """Cached :class:`ModalSolver`."""
    return ModalSolver(grid, bottom, top, alpha, beta, nu)


def laplacian_coeffs(grid: Grid, coeffs):
    """``(D2 - |k|^2) u`` on coefficient arrays."""
    return dy_coeffs(grid, coeffs, 2) - grid.kabs[..., None] ** 2 * coeffs


def _trace_array(grid, trace):
    if trace is None:
        return np.zeros(grid.mode_shape, dtype=complex)
    if isinstance(trace, Trace):
        if trace.grid != grid:
            raise ShapeMismatch("trace and field grids differ")
        return trace.coeffs
    arr = np.asarray(trace, dtype=complex)
    if arr.shape != grid.mode_shape:
        raise ShapeMismatch("trace shape does not match grid modes")
    return arr


def solve_dirichlet(rhs: SpectralField, trace=None, top="robin", top_value=None, name="") -> SpectralField:
    """Solve ``-Delta u = rhs`` with ``u(x, 0) = trace``.

    Parameters
    ----------
    rhs : SpectralField
    trace : Trace or array, optional
        Wall values (default zero).
    top : {"robin", "dirichlet"}
        Transparent decay condition (default) or prescribed top values.
    top_value : array, optional
        Top data when ``top="dirichlet"``.
    """
    grid = rhs.grid
    solver = modal_solver(grid, "dirichlet", top)
    top_data = None if top_value is None else _trace_array(grid, top_value)
    u = solver.solve(rhs.coeffs, _trace_array(grid, trace), top_data)
    return SpectralField(grid, u, name or rhs.name)


def solve_neumann(
    rhs: SpectralField, flux=None, top="robin", top_flux=None, compat_tol=COMPAT_TOL, name=""
) -> SpectralField:
    """Solve ``-Delta u = rhs`` with ``-u_y(x, 0) = flux``.

    The mean mode is pinned to zero at the top node.  With the default
    decaying top condition the mean mode must satisfy
    ``flux_0 + int rhs_0 dy = 0``; ``top="neumann"`` prescribes ``u_y(Ly)``
    instead and the balance then includes ``top_flux``.
    """
    grid = rhs.grid
    flux_arr = _trace_array(grid, flux)
    top_arr = None if top_flux is None else _trace_array(grid, top_flux)
    if compat_tol is not None:
        zero = (0,) * grid.d
        mean_rhs = rhs.coeffs[zero] @ grid.quad_weights
        balance = flux_arr[zero] + mean_rhs
        if top == "neumann" and top_arr is not None:
            balance += top_arr[zero]
        scale = max(abs(flux_arr[zero]), np.abs(rhs.coeffs[zero]) @ grid.quad_weights, 1.0)
        if abs(balance) > compat_tol * scale:
            raise CompatibilityError(
                f"mean-mode Neumann data incompatible: imbalance {abs(balance):.3e}"
            )
    solver = modal_solver(grid, "neumann", top)
    u = solver.solve(rhs.coeffs, flux_arr, top_arr)
    return SpectralField(grid, u, name or rhs.name)


def harmonic_extension(trace: Trace) -> SpectralField:
    """Bounded harmonic function with the given wall values."""
    return solve_dirichlet(SpectralField.zeros(trace.grid), trace, name="harmonic")


def dn_map(trace: Trace) -> Trace:
    """Dirichlet-to-Neumann map: multiply mode k by ``|k|``."""
    return Trace(trace.grid, trace.grid.kabs * trace.coeffs)


def nd_map(trace: Trace, tol=1e-12) -> Trace:
    """Neumann-to-Dirichlet map on mean-zero traces: multiply by ``1/|k|``."""
    grid = trace.grid
    mean = trace.coeffs[(0,) * grid.d]
    scale = max(np.abs(trace.coeffs).max(), 1e-300)
    if abs(mean) > tol * scale and abs(mean) > 1e-300:
        raise CompatibilityError("nd_map requires a mean-zero trace")
    out = np.zeros_like(trace.coeffs)
    nz = grid.kabs > 0
    out[nz] = trace.coeffs[nz] / grid.kabs[nz]
    return Trace(grid, out)


def _divergence_coeffs(grid, comps):
    div = dy_coeffs(grid, comps[-1], 1)
    for ax in range(grid.d):
        div = div + dx_coeffs(grid, comps[ax], ax + 1)
    return div


def streamfunction_trace(grid: Grid, g):
    """Wall value of the d=1 streamfunction giving ``v(x, 0) = g``."""
    g = _trace_array(grid, g)
    k = grid.derivative_wavenumbers[0]
    out = np.zeros_like(g)
    nz = k != 0
    out[nz] = g[nz] / (1j * k[nz])
    return out


def biot_savart(w, wall_velocity=None, check=True) -> VectorField:
    """Half-space Biot-Savart law ``u = curl Psi``.

    Parameters
    ----------
    w : SpectralField or sequence of SpectralField
        d=1: the single vorticity component ``w = dy u - dx v``.
        d=2: ``(w1, w2, w3)`` in the ordering ``(x1, x2, y)``.
    wall_velocity : Trace, optional
        Prescribed wall-normal velocity ``v(x, 0)``; must be mean-zero.
    check : bool
        d=2 only: verify the vorticity is discretely divergence-free.

    Returns
    -------
    VectorField
        Divergence-free velocity with ``v(x, 0) = wall_velocity``.
    """
    comps = [w] if isinstance(w, SpectralField) else list(w)
    grid = comps[0].grid
    g = _trace_array(grid, wall_velocity)
    zero = (0,) * grid.d
    if abs(g[zero]) > 1e-12 * max(np.abs(g).max(), 1.0):
        raise CompatibilityError("wall-normal velocity must have zero mean")
    if grid.d == 1:
        if len(comps) != 1:
            raise ShapeMismatch("d=1 vorticity has one component")
        psi = modal_solver(grid, "dirichlet", "robin").solve(comps[0].coeffs, streamfunction_trace(grid, g))
        u = -dy_coeffs(grid, psi, 1)
        v = dx_coeffs(grid, psi, 1)
        return VectorField((SpectralField(grid, u, "u"),), SpectralField(grid, v, "v"))
    if len(comps) != 3:
        raise ShapeMismatch("d=2 vorticity has three components")
    arrs = [c.coeffs for c in comps]
    if check:
        div = _divergence_coeffs(grid, arrs)
        scale = max(max(np.abs(a).max() for a in arrs), 1e-300)
        if np.abs(div[..., :-1]).max() > DIV_TOL * scale * max(1.0, grid.nx):
            raise DivergenceError("vorticity is not divergence-free")
    dsolve = modal_solver(grid, "dirichlet", "robin")
    nsolve = modal_solver(grid, "neumann", "robin")
    p1 = dsolve.solve(arrs[0])
    p2 = dsolve.solve(arrs[1])
    p3 = nsolve.solve(arrs[2])
    u1 = dx_coeffs(grid, p3, 2) - dy_coeffs(grid, p2, 1)
    u2 = dy_coeffs(grid, p1, 1) - dx_coeffs(grid, p3, 1)
    v = dx_coeffs(grid, p2, 1) - dx_coeffs(grid, p1, 2)
    if np.any(g):
        phi = nsolve.solve(np.zeros(grid.coeff_shape), -g)
        u1 = u1 + dx_coeffs(grid, phi, 1)
        u2 = u2 + dx_coeffs(grid, phi, 2)
        v = v + dy_coeffs(grid, phi, 1)
    return VectorField(
        (SpectralField(grid, u1, "u1"), SpectralField(grid, u2, "u2")), SpectralField(grid, v, "v")
    )


def curl(vel: VectorField):
    """Vorticity of a velocity field, matching :func:`biot_savart` ordering."""
    grid = vel.grid
    if grid.d == 1:
        u, v = vel.horizontal[0].coeffs, vel.vertical.coeffs
        return SpectralField(grid, dy_coeffs(grid, u, 1) - dx_coeffs(grid, v, 1), "w")
    u1, u2 = (c.coeffs for c in vel.horizontal)
    v = vel.vertical.coeffs
    w1 = dx_coeffs(grid, v, 2) - dy_coeffs(grid, u2, 1)
    w2 = dy_coeffs(grid, u1, 1) - dx_coeffs(grid, v, 1)
    w3 = dx_coeffs(grid, u2, 1) - dx_coeffs(grid, u1, 2)
    return [SpectralField(grid, a, n) for a, n in ((w1, "w1"), (w2, "w2"), (w3, "w3"))]


def divergence(vel: VectorField) -> SpectralField:
    grid = vel.grid
    return SpectralField(grid, _divergence_coeffs(grid, [c.coeffs for c in vel.components]), "div")


def pressure_from_acceleration(grid: Grid, accel, name="p") -> SpectralField:
    """Pressure with ``grad p = -a`` in the Poisson sense.

    Solves ``-Delta p = div a`` with Neumann data ``dy p = -a_v`` at both
    ends of the column; the mean mode is pinned to zero at the top.

    Parameters
    ----------
    grid : Grid
    accel : sequence of coefficient arrays
        ``(a_1, ..., a_d, a_v)``.
    """
    comps = [np.asarray(a) for a in accel]
    rhs = _divergence_coeffs(grid, comps)
    solver = modal_solver(grid, "neumann", "neumann")
    p = solver.solve(rhs, comps[-1][..., 0], -comps[-1][..., -1])
    return SpectralField(grid, p, name)


# ----------------------------------------------------------------------
# first-order wall-normal ODE


@lru_cache(maxsize=8)
def _cell_rules(grid: Grid):
    y = grid.y
    n = y.size
    m = grid.stencil - 1
    g, gw = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    starts = np.empty(n - 1, dtype=int)
    pts = np.empty((n - 1, GAUSS_POINTS))
    wts = np.empty((n - 1, GAUSS_POINTS))
    basis = np.empty((n - 1, GAUSS_POINTS, m))
    for j in range(n - 1):
        a, b = y[j], y[j + 1]
        s0 = int(np.clip(j - m // 2 + 1, 0, n - m))
        starts[j] = s0
        pts[j] = 0.5 * (b - a) * g + 0.5 * (a + b)
        wts[j] = 0.5 * (b - a) * gw
        basis[j] = [fornberg_weights(p, y[s0 : s0 + m], 0)[0] for p in pts[j]]
    return starts, pts, wts, basis


def solve_decay_ode(f: SpectralField, check=True) -> SpectralField:
    """Decaying solution of ``dy w + |D_x| w = f`` selected by ``w(x, 0) = 0``.

    Per mode, ``w(k, y) = int_0^y exp(-|k| (y - s)) f(k, s) ds``.  The kernel
    ``|k| exp(-|k| y)`` has unit L1 mass, which gives
    ``|| |D_x| w || <= || f ||`` and ``|| dy w || <= 2 || f ||``.
    """
    grid = f.grid
    if check:
        check_decay(f.coeffs, f.name or "f")
    starts, pts, wts, basis = _cell_rules(grid)
    y = grid.y
    m = basis.shape[-1]
    k = grid.kabs.reshape(-1)
    fc = f.coeffs.reshape(-1, grid.ny)
    w = np.zeros_like(fc)
    for j in range(grid.ny - 1):
        s0 = starts[j]
        vals = fc[:, s0 : s0 + m] @ basis[j].T
        kern = np.exp(-k[:, None] * (y[j + 1] - pts[j][None, :])) * wts[j][None, :]
        w[:, j + 1] = np.exp(-k * (y[j + 1] - y[j])) * w[:, j] + (kern * vals).sum(axis=1)
    return SpectralField(grid, w.reshape(grid.coeff_shape), "w")
