"""Field carriers and the tangential/wall-normal calculus on them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import AxisError, DecayViolation, GridError, ShapeMismatch
from .grid import Grid

TAIL_TOL = 1e-8
SNAPSHOT_FORMAT = "inviscid-limit-field"
SNAPSHOT_VERSION = 1


def to_coeffs(grid: Grid, values):
    """Physical samples ``(nx,)*d + (ny,)`` to rfft coefficients (forward-normalized)."""
    values = np.asarray(values, dtype=float)
    axes = grid.tangential_axes
    return np.fft.rfftn(values, axes=axes, norm="forward")


def to_physical(grid: Grid, coeffs):
    axes = grid.tangential_axes
    return np.fft.irfftn(coeffs, s=(grid.nx,) * grid.d, axes=axes, norm="forward")


def _bcast(grid, arr):
    """Reshape a mode-shaped array so it broadcasts against coefficients."""
    return arr[..., None]


@dataclass
class SpectralField:
    """Real scalar field stored as tangential rfft coefficients per wall-normal node."""

    grid: Grid
    coeffs: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != self.grid.coeff_shape:
            raise ShapeMismatch(
                f"coefficient shape {self.coeffs.shape} != grid shape {self.grid.coeff_shape}"
            )

    @classmethod
    def zeros(cls, grid, name=""):
        return cls(grid, np.zeros(grid.coeff_shape, dtype=complex), name)

    @classmethod
    def from_physical(cls, grid, values, name=""):
        return cls(grid, to_coeffs(grid, values), name)

    @classmethod
    def from_function(cls, grid, func, name=""):
        """Sample ``func(x, y)`` (d=1) or ``func(x1, x2, y)`` (d=2)."""
        mesh = np.meshgrid(*([grid.x] * grid.d), grid.y, indexing="ij")
        return cls.from_physical(grid, func(*mesh), name)

    def physical(self):
        return to_physical(self.grid, self.coeffs)

    def copy(self, name=None):
        return SpectralField(self.grid, self.coeffs.copy(), self.name if name is None else name)

    def renamed(self, name):
        return SpectralField(self.grid, self.coeffs, name)

    def _check(self, other):
        if other.grid != self.grid:
            raise ShapeMismatch("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.grid, self.coeffs + other.coeffs, self.name)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.grid, self.coeffs - other.coeffs, self.name)
        return NotImplemented

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs, self.name)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return SpectralField(self.grid, self.coeffs * scalar, self.name)
        return NotImplemented

    __rmul__ = __mul__

    def top_trace(self):
        return self.coeffs[..., -1]

    def wall_trace(self):
        return Trace(self.grid, self.coeffs[..., 0].copy())


@dataclass
class Trace:
    """Tangential function on the wall, stored as rfft coefficients."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != self.grid.mode_shape:
            raise ShapeMismatch("trace shape does not match grid modes")

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.mode_shape, dtype=complex))

    @classmethod
    def from_physical(cls, grid, values):
        return cls(grid, np.fft.rfftn(np.asarray(values, float), axes=grid.tangential_axes, norm="forward"))

    def physical(self):
        return np.fft.irfftn(
            self.coeffs, s=(self.grid.nx,) * self.grid.d, axes=self.grid.tangential_axes, norm="forward"
        )

    def mean(self):
        return self.coeffs[(0,) * self.grid.d].real


@dataclass
class VectorField:
    """Velocity-like field: ``d`` horizontal components plus the wall-normal one."""

    horizontal: tuple
    vertical: SpectralField
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.horizontal = tuple(self.horizontal)
        grid = self.vertical.grid
        if len(self.horizontal) != grid.d:
            raise ShapeMismatch("number of horizontal components must equal d")
        for comp in self.horizontal:
            if comp.grid != grid:
                raise ShapeMismatch("vector components on different grids")

    @property
    def grid(self):
        return self.vertical.grid

    @property
    def components(self):
        return self.horizontal + (self.vertical,)

    @classmethod
    def zeros(cls, grid):
        return cls(tuple(SpectralField.zeros(grid) for _ in range(grid.d)), SpectralField.zeros(grid))

    def __add__(self, other):
        return VectorField(
            tuple(a + b for a, b in zip(self.horizontal, other.horizontal)), self.vertical + other.vertical
        )

    def __sub__(self, other):
        return VectorField(
            tuple(a - b for a, b in zip(self.horizontal, other.horizontal)), self.vertical - other.vertical
        )

    def __mul__(self, scalar):
        return VectorField(tuple(a * scalar for a in self.horizontal), self.vertical * scalar)

    __rmul__ = __mul__


# ----------------------------------------------------------------------
# coefficient-level kernels (arrays of shape grid.coeff_shape)


def dx_coeffs(grid: Grid, coeffs, axis=1):
    """``d/dx_axis`` on coefficient arrays; axis counts from 1."""
    if not 1 <= axis <= grid.d:
        raise AxisError(f"axis {axis} outside 1..{grid.d}")
    k = grid.derivative_wavenumbers[axis - 1]
    return 1j * _bcast(grid, k) * coeffs


def dy_coeffs(grid: Grid, coeffs, order=1):
    """Wall-normal derivative along the last axis of any array."""
    if order == 0:
        return coeffs
    mat = grid.D1 if order == 1 else grid.D2 if order == 2 else grid.dmat(order)
    return apply_columns(mat, coeffs)


def apply_columns(mat, arr):
    """Apply ``mat`` (ny x ny, sparse or dense) along the last axis of ``arr``."""
    shape = arr.shape
    flat = arr.reshape(-1, shape[-1])
    out = mat @ flat.T
    return np.asarray(out).T.reshape(shape[:-1] + (mat.shape[0],))


def check_decay(values, name, tol=TAIL_TOL):
    """Raise :class:`DecayViolation` if the top row is not small."""
    mag = np.abs(values)
    scale = mag.max() if mag.size else 0.0
    if scale == 0.0:
        return
    ratio = mag[..., -1].max() / scale
    if ratio > tol:
        raise DecayViolation(name or "unnamed", ratio, tol)


def tail_coeffs(grid: Grid, coeffs, name="", check=True):
    """``int_{y}^{Ly}`` of coefficient columns."""
    if check:
        check_decay(coeffs, name)
    return apply_columns(grid.tail_matrix, coeffs)


# ----------------------------------------------------------------------
# public field operations


def tangential_derivative(f: SpectralField, axis: int = 1) -> SpectralField:
    """Spectral derivative along tangential ``axis`` (1-based)."""
    return SpectralField(f.grid, dx_coeffs(f.grid, f.coeffs, axis), f.name)


def normal_derivative(f: SpectralField, order: int = 1) -> SpectralField:
    """High-order finite-difference wall-normal derivative (order 1..4)."""
    if order not in (1, 2, 3, 4):
        raise GridError("supported wall-normal derivative orders are 1..4")
    if f.grid.ny < 2 * order + 1:
        raise GridError("grid too small for this derivative order")
    return SpectralField(f.grid, dy_coeffs(f.grid, f.coeffs, order), f.name)


def bracket_multiplier(grid: Grid, power):
    """``<k>^power`` with ``<k> = (1 + |k|^2)^{1/2}``."""
    return (1.0 + grid.kabs**2) ** (0.5 * power)


def tangential_halfderivative(f: SpectralField, power: float = 0.5) -> SpectralField:
    """Multiply mode k by ``(1 + |k|^2)^{power/2}``; default is ``<D_x>^{1/2}``."""
    mult = bracket_multiplier(f.grid, power)
    return SpectralField(f.grid, f.coeffs * _bcast(f.grid, mult), f.name)


def vertical_tail_integral(f: SpectralField, z0=None) -> SpectralField:
    """``g(x, z0) = int_{z0}^{Lz} f(x, s) ds`` for every node ``z0``.

    If a scalar ``z0`` is given, the returned field is still the full tail
    column; use :func:`tail_at` to evaluate at an off-grid height.
    """
    return SpectralField(f.grid, tail_coeffs(f.grid, f.coeffs, f.name), f.name)


def tail_at(f: SpectralField, z0: float) -> Trace:
    """Tangential trace of ``int_{z0}^{Lz} f``."""
    check_decay(f.coeffs, f.name)
    grid = f.grid
    total = apply_columns(grid.quad_weights[None, :], f.coeffs)[..., 0]
    lower = apply_columns(grid.partial_weights(z0)[None, :], f.coeffs)[..., 0]
    return Trace(grid, total - lower)


def l2_norm(f, grid: Grid | None = None, weights=None):
    """L2 norm over the box and column from coefficients (Parseval)."""
    if isinstance(f, SpectralField):
        grid, coeffs = f.grid, f.coeffs
    else:
        coeffs = f
    w = grid.quad_weights if weights is None else weights
    power = np.abs(coeffs) ** 2 * grid.mode_weights[..., None]
    per_y = power.reshape(-1, grid.ny).sum(axis=0) * grid.box_measure
    return float(np.sqrt(max(per_y @ w, 0.0)))


def l2_norm_physical(values, grid: Grid, weights=None):
    w = grid.quad_weights if weights is None else weights
    mean_sq = (np.asarray(values) ** 2).reshape(-1, grid.ny).mean(axis=0) * grid.box_measure
    return float(np.sqrt(max(mean_sq @ w, 0.0)))


def linf_norm(f: SpectralField):
    return float(np.abs(f.physical()).max())


# ----------------------------------------------------------------------
# snapshot files


def save_field(path, f: SpectralField, t: float | None = None, layer: bool = False):
    """Write a versioned ``.npz`` snapshot with a JSON header."""
    header = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "name": f.name,
        "grid": f.grid.to_dict(),
        "t": t,
        "coordinate": "z" if layer else "y",
    }
    np.savez(path, header=np.array(json.dumps(header, sort_keys=True)), coeffs=f.coeffs)


def load_field(path):
    """Read a snapshot written by :func:`save_field`; returns ``(field, header)``."""
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != SNAPSHOT_FORMAT:
            raise ValueError("not a field snapshot")
        if header.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {header.get('version')}")
        grid = Grid.from_dict(header["grid"])
        return SpectralField(grid, data["coeffs"], header["name"]), header
