"""Computational grid: periodic tangential box times a mapped wall-normal column.

The wall-normal direction uses collocation on a (possibly stretched) grid.
Derivatives are banded finite-difference stencils built from Fornberg
weights on the physical nodes, so the same code serves the outer column
``[0, Ly]`` and the stretched boundary-layer column ``[0, Lz]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import GridError

GAUSS_POINTS = 12


def fornberg_weights(x0, x, m):
    """Finite-difference weights at ``x0`` on nodes ``x`` for derivatives 0..m.

    Parameters
    ----------
    x0 : float
        Evaluation point.
    x : array_like
        Stencil nodes (distinct).
    m : int
        Highest derivative order.

    Returns
    -------
    ndarray, shape (m + 1, len(x))
        Row ``k`` holds the weights of the k-th derivative.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    c = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def _stencil_start(center, width, n):
    return int(np.clip(center - width // 2, 0, n - width))


def map_nodes(n, length, stretching="tanh", beta=2.0):
    """Wall-normal nodes on ``[0, length]``, clustered at 0 for ``tanh``."""
    s = np.linspace(0.0, 1.0, n)
    if stretching == "uniform":
        y = length * s
    elif stretching == "tanh":
        y = length * (1.0 - np.tanh(beta * (1.0 - s)) / np.tanh(beta))
    else:
        raise GridError(f"unknown stretching '{stretching}'")
    y[0] = 0.0
    y[-1] = length
    return y


@dataclass(frozen=True)
class Grid:
    """Tensor grid ``T^d x [0, Ly]``.

    Parameters
    ----------
    d : int
        Number of tangential directions (1 or 2).
    nx : int
        Points (and modes) per tangential direction; even, at least 4.
    box : float
        Tangential period.
    ny : int
        Wall-normal collocation points.
    Ly : float
        Wall-normal extent.
    stretching : str
        ``"uniform"`` or ``"tanh"``.
    beta : float
        Clustering strength of the tanh map.
    stencil : int
        Width of the wall-normal finite-difference stencils (odd).
    """

    d: int = 1
    nx: int = 64
    box: float = 2 * np.pi
    ny: int = 384
    Ly: float = 8.0
    stretching: str = "tanh"
    beta: float = 2.0
    stencil: int = 9

    def __post_init__(self):
        if self.d not in (1, 2):
            raise GridError("d must be 1 or 2")
        if self.nx < 4 or self.nx % 2:
            raise GridError("nx must be even and >= 4")
        if self.ny < 8:
            raise GridError("ny must be >= 8")
        if not self.Ly > 0 or not self.box > 0:
            raise GridError("Ly and box must be positive")
        if self.stencil % 2 == 0 or self.stencil < 5:
            raise GridError("stencil width must be odd and >= 5")
        if self.ny < self.stencil:
            raise GridError("ny must be at least the stencil width")
        y = self.y
        if not np.all(np.diff(y) > 0):
            raise GridError("coordinate map is not strictly increasing")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    # ------------------------------------------------------------------
    # geometry
    @cached_property
    def y(self):
        return map_nodes(self.ny, self.Ly, self.stretching, self.beta)

    @cached_property
    def x(self):
        return np.arange(self.nx) * (self.box / self.nx)

    @property
    def nk(self):
        return self.nx // 2 + 1

    @property
    def mode_shape(self):
        return (self.nk,) if self.d == 1 else (self.nx, self.nk)

    @property
    def coeff_shape(self):
        return self.mode_shape + (self.ny,)

    @property
    def phys_shape(self):
        return (self.nx,) * self.d + (self.ny,)

    @property
    def tangential_axes(self):
        return tuple(range(self.d))

    @cached_property
    def _index(self):
        """Integer mode indices per tangential axis, broadcast to mode_shape."""
        if self.d == 1:
            return (np.arange(self.nk),)
        i1 = np.fft.fftfreq(self.nx, 1.0 / self.nx).astype(int)
        i2 = np.arange(self.nk)
        a, b = np.meshgrid(i1, i2, indexing="ij")
        return (a, b)

    @cached_property
    def wavenumbers(self):
        """Wavenumber arrays (one per axis), shape ``mode_shape``."""
        scale = 2 * np.pi / self.box
        return tuple(scale * idx for idx in self._index)

    @cached_property
    def derivative_wavenumbers(self):
        """Wavenumbers with the Nyquist entry zeroed (odd-derivative safe)."""
        out = []
        for idx, k in zip(self._index, self.wavenumbers):
            kk = k.copy()
            kk[np.abs(idx) == self.nx // 2] = 0.0
            out.append(kk)
        return tuple(out)

    @cached_property
    def kabs(self):
        return np.sqrt(sum(k**2 for k in self.wavenumbers))

    @cached_property
    def dealias_mask(self):
        cut = self.nx // 3
        mask = np.ones(self.mode_shape, dtype=bool)
        for idx in self._index:
            mask &= np.abs(idx) <= cut
        return mask

    @cached_property
    def mode_weights(self):
        """Multiplicity of each stored rfft mode in Parseval sums."""
        w = np.full(self.mode_shape, 2.0)
        last = self._index[-1]
        w[(last == 0) | (last == self.nx // 2)] = 1.0
        return w

    @property
    def box_measure(self):
        return self.box**self.d

    # ------------------------------------------------------------------
    # wall-normal operators
    def dmat(self, order):
        """Sparse wall-normal derivative matrix of the given order (1..4)."""
        return _grid_dmat(self, order)

    @cached_property
    def D1(self):
        return self.dmat(1)

    @cached_property
    def D2(self):
        return self.dmat(2)

    @cached_property
    def interval_weights(self):
        """Quadrature weights of each cell ``[y_j, y_{j+1}]``, shape (ny-1, ny)."""
        return _grid_cells(self)

    @cached_property
    def quad_weights(self):
        return self.interval_weights.sum(axis=0)

    @cached_property
    def tail_matrix(self):
        """Matrix ``T`` with ``(T f)_i = int_{y_i}^{Ly} f``."""
        cells = self.interval_weights
        tail = np.zeros((self.ny, self.ny))
        tail[:-1] = np.cumsum(cells[::-1], axis=0)[::-1]
        return tail

    def partial_weights(self, upper):
        """Quadrature weights for ``int_0^upper`` (upper clipped to [0, Ly])."""
        return cell_weights(self.y, self.stencil - 1, upper=upper).sum(axis=0)

    def interp_matrix(self, targets):
        """Sparse local-Lagrange interpolation matrix from nodes to ``targets``."""
        return _interp_matrix(self.y, np.asarray(targets, dtype=float), self.stencil - 1)

    def gauss_nodes(self, upper):
        """Composite Gauss-Legendre nodes and positive weights on ``(0, upper)``."""
        g, gw = np.polynomial.legendre.leggauss(GAUSS_POINTS)
        upper = min(float(upper), self.Ly)
        pts, wts = [], []
        for a, b in zip(self.y[:-1], self.y[1:]):
            if upper <= a:
                break
            b = min(b, upper)
            pts.append(0.5 * (b - a) * g + 0.5 * (a + b))
            wts.append(0.5 * (b - a) * gw)
        if not pts:
            return np.zeros(0), np.zeros(0)
        return np.concatenate(pts), np.concatenate(wts)

    def layer_count(self, height):
        """Number of nodes with ``0 < y <= height``."""
        return int(np.count_nonzero((self.y > 0) & (self.y <= height)))


# operators are shared by equal grids, which trajectories rebuild often
@lru_cache(maxsize=32)
def _grid_dmat(grid, order):
    return _dmat(grid.y, order, grid.stencil + (2 if order > 2 else 0))


@lru_cache(maxsize=16)
def _grid_cells(grid):
    out = cell_weights(grid.y, grid.stencil - 1)
    out.flags.writeable = False
    return out


def _dmat(y, order, width):
    n = y.size
    width = min(width, n)
    rows, cols, vals = [], [], []
    for i in range(n):
        s = _stencil_start(i, width, n)
        w = fornberg_weights(y[i], y[s : s + width], order)[order]
        rows.extend([i] * width)
        cols.extend(range(s, s + width))
        vals.extend(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def cell_weights(y, m, upper=None, kernel=None):
    """Per-cell quadrature weights from local degree ``m-1`` interpolation.

    Parameters
    ----------
    y : ndarray
        Nodes.
    m : int
        Points in each local interpolation stencil.
    upper : float, optional
        Truncate the integration at this coordinate.
    kernel : callable, optional
        ``kernel(j, s)`` multiplies the integrand at points ``s`` of cell ``j``.
    """
    n = y.size
    m = min(m, n)
    g, gw = np.polynomial.legendre.leggauss(GAUSS_POINTS)
    out = np.zeros((n - 1, n))
    for j in range(n - 1):
        a, b = y[j], y[j + 1]
        if upper is not None:
            if upper <= a:
                break
            b = min(b, upper)
        s0 = int(np.clip(j - m // 2 + 1, 0, n - m))
        nodes = y[s0 : s0 + m]
        pts = 0.5 * (b - a) * g + 0.5 * (a + b)
        wts = 0.5 * (b - a) * gw
        if kernel is not None:
            wts = wts * kernel(j, pts)
        basis = np.array([fornberg_weights(p, nodes, 0)[0] for p in pts])
        out[j, s0 : s0 + m] = wts @ basis
    return out


def _interp_matrix(y, targets, m):
    n = y.size
    m = min(m, n)
    rows, cols, vals = [], [], []
    for r, t in enumerate(targets):
        j = int(np.clip(np.searchsorted(y, t) - 1, 0, n - 2))
        s0 = int(np.clip(j - m // 2 + 1, 0, n - m))
        w = fornberg_weights(t, y[s0 : s0 + m], 0)[0]
        rows.extend([r] * m)
        cols.extend(range(s0, s0 + m))
        vals.extend(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(targets.size, n))
