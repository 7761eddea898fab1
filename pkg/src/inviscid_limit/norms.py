"""Conormal and weighted norms, the analytic lift and the energy functionals.

All weights depend on ``y`` only, so every norm is a Parseval sum over modes
and wall-normal quadrature nodes.  Exponential weights are handled as
logarithms and combined with ``log |f|`` before a single ``logsumexp``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .errors import MissingSplit, OverflowGuard
from .fields import SpectralField, VectorField, apply_columns, bracket_multiplier
from .grid import Grid

LIFT_GUARD = 1e12
# entries below the field's relative machine precision carry no information;
# exponentially growing weights would otherwise amplify their residue
NOISE_FLOOR = 4.0 * np.finfo(float).eps
KINDS = ("tan", "co", "e", "p")
MAX_ORDER = 4


def _smoothstep(s, deriv=0):
    s = np.clip(s, 0.0, 1.0)
    if deriv == 0:
        return s * s * (3.0 - 2.0 * s)
    if deriv == 1:
        return 6.0 * s * (1.0 - s)
    return 6.0 - 12.0 * s


def _smootherstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 + s * (6.0 * s - 15.0))


@dataclass(frozen=True)
class WeightConfig:
    """Parameters of the weights ``theta``, ``phi`` and the analytic radius.

    Parameters
    ----------
    delta : float
        Small weight parameter.
    lam : float
        Analytic decay rate.

    Notes
    -----
    ``theta(y) = delta * S(2y)`` with the cubic smoothstep ``S``, so
    ``theta(0) = theta'(0) = 0``, ``theta(1/2) = delta`` and ``theta' = 0`` for
    ``y >= 1/2``; ``|theta'| + |theta''| <= 27 delta``.  The conormal weight is
    ``delta y`` on ``[0, 1]``, ``delta y / (1 + y)`` on ``[2, inf)`` and a
    quintic blend of the two in between.
    """

    delta: float = 0.1
    lam: float = 1.0

    def __post_init__(self):
        if self.delta < 0 or self.lam <= 0:
            raise ValueError("need delta >= 0 and lam > 0")

    @classmethod
    def from_velocity_scale(cls, scale: float, delta: float = 0.1):
        """``lam = 4 * scale`` (the observed advection scale)."""
        return cls(delta=delta, lam=4.0 * max(float(scale), 1e-12))

    @property
    def T0(self):
        """Guaranteed window ``delta / (2 lam)``."""
        return self.delta / (2.0 * self.lam)

    @property
    def c0(self):
        """Lower bound of the critical height on ``[0, T0]``."""
        return 0.25

    def theta(self, y, deriv=0):
        return self.delta * 2.0**deriv * _smoothstep(2.0 * np.asarray(y, float), deriv)

    def phi(self, y):
        y = np.asarray(y, float)
        b = _smootherstep(y - 1.0)
        return self.delta * y * ((1.0 - b) + b / (1.0 + y))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class AnalyticRadius:
    """``rho(t, y) = delta - theta(y) - lam t`` and its zero ``y(t)``."""

    config: WeightConfig

    def __call__(self, t, y):
        c = self.config
        return c.delta - c.theta(y) - c.lam * t

    def critical_height(self, t):
        """``y(t)`` with ``rho(t, y(t)) = 0``; zero once ``lam t >= delta``."""
        c = self.config
        level = c.delta - c.lam * t
        if level <= 0.0:
            return 0.0
        if t <= 0.0:
            return 0.5
        return float(brentq(lambda y: self(t, y), 0.0, 0.5, xtol=1e-14))


# ----------------------------------------------------------------------
# building blocks


def _coeffs(f):
    if isinstance(f, SpectralField):
        return f.grid, f.coeffs
    raise TypeError("expected a SpectralField")


def conormal_Z(f: SpectralField, j: int, config: WeightConfig | None = None) -> SpectralField:
    """``Z^j f = phi(y)^j d_y^j f``.

    Raises
    ------
    ValueError
        For ``j`` outside ``0..4``.
    """
    if not 0 <= j <= MAX_ORDER:
        raise ValueError(f"conormal order {j} unsupported (0..{MAX_ORDER})")
    config = config or WeightConfig()
    grid, c = _coeffs(f)
    if j == 0:
        return SpectralField(grid, c.copy(), f.name)
    dj = apply_columns(grid.dmat(j), c)
    return SpectralField(grid, config.phi(grid.y) ** j * dj, f.name)


def _lift_exponent(grid: Grid, config: WeightConfig, t):
    rho = AnalyticRadius(config)(t, grid.y)
    return bracket_multiplier(grid, 1.0)[..., None] * rho


def analytic_lift(f: SpectralField, t: float, config: WeightConfig | None = None) -> SpectralField:
    """``f_Phi``: multiply mode ``k`` by ``exp(rho(t, y) <k>)``.

    Raises
    ------
    OverflowGuard
        If the largest factor exceeds ``1e12``.
    """
    config = config or WeightConfig()
    grid, c = _coeffs(f)
    expo = _lift_exponent(grid, config, t)
    if expo.max() > np.log(LIFT_GUARD):
        raise OverflowGuard(
            f"analytic weight e^{expo.max():.1f} exceeds {LIFT_GUARD:.0e}; use a smaller delta or a larger lam"
        )
    return SpectralField(grid, c * np.exp(expo), f.name)


@lru_cache(maxsize=64)
def _gauss_rule(grid, upper):
    ys, qw = grid.gauss_nodes(upper)
    return ys, qw, grid.interp_matrix(ys)


def _multi_indices(d, m):
    return [i for i in product(range(m + 1), repeat=d) if sum(i) <= m]


def _log_weight(kind, y, config, t, eps):
    if kind in ("tan", "co"):
        return None
    if eps is None:
        raise ValueError(f"kind '{kind}' needs eps")
    if kind == "e":
        # single exponential; see the ledger entry on the weight notation
        return AnalyticRadius(config)(t, y) / eps**2
    return y**2 / eps**2 * (config.delta - config.lam * t)


def _parse_kind(kind):
    k = str(kind)
    half = k.endswith("_half")
    if half:
        k = k[: -len("_half")]
    if k.startswith("Hm_"):
        k = k[3:]
    if k not in KINDS:
        raise ValueError(f"unsupported norm kind '{kind}'")
    return k, half


def log_norm_sq(
    f: SpectralField,
    kind="tan",
    m=0,
    config: WeightConfig | None = None,
    t=0.0,
    eps=None,
    upper=None,
    half=False,
):
    """``log`` of the squared norm; ``-inf`` for the zero field.

    Parameters
    ----------
    f : SpectralField
    kind : {"tan", "co", "e", "p"}
        Tangential, conormal, or conormal with the outer (``e``) or layer
        (``p``) exponential weight.  A ``_half`` suffix (or ``half=True``)
        inserts ``<D_x>^{1/2}``.
    m : int
        Order, ``0..4``.
    upper : float, optional
        Integrate over ``(0, upper)`` instead of the whole column.
    """
    kind, h = _parse_kind(kind)
    half = half or h
    if not 0 <= m <= MAX_ORDER:
        raise ValueError(f"order {m} unsupported (0..{MAX_ORDER})")
    config = config or WeightConfig()
    grid, c = _coeffs(f)
    if upper is not None and upper <= 0.0:
        return -np.inf
    if upper is None:
        ys, qw, interp = grid.y, grid.quad_weights, None
    else:
        # positive Gauss weights keep the truncated form a seminorm
        ys, qw, interp = _gauss_rule(grid, float(upper))
    base = grid.mode_weights[..., None] * grid.box_measure * qw
    if half:
        base = base * bracket_multiplier(grid, 1.0)[..., None]
    logw = _log_weight(kind, ys, config, t, eps)
    ks = [np.broadcast_to(k, grid.mode_shape) for k in grid.derivative_wavenumbers]
    js = [0] if kind == "tan" else range(m + 1)
    terms = []
    zj = {j: conormal_Z(f, j, config).coeffs for j in js}
    for i in _multi_indices(grid.d, m):
        for j in js:
            if sum(i) + j > m:
                continue
            mult = np.ones(grid.mode_shape, dtype=complex)
            for k, p in zip(ks, i):
                mult = mult * (1j * k) ** p
            g = zj[j] * mult[..., None]
            if interp is not None:
                g = apply_columns(interp, g)
            mag = np.abs(g)
            top = mag.max()
            if top == 0.0:
                continue
            if logw is not None:
                mag = np.where(mag > NOISE_FLOOR * top, mag, 0.0)
            with np.errstate(divide="ignore"):
                a = 2.0 * np.log(mag)
            if logw is not None:
                a = a + 2.0 * logw
            terms.append(logsumexp(a, b=base))
    if not terms:
        return -np.inf
    return float(logsumexp(terms))


def norm_suite(f: SpectralField, kind="tan", m=0, config=None, t=0.0, eps=None, range="full", half=False):
    """One of the conormal, tangential or weighted norms.

    Parameters
    ----------
    range : {"full", "up_to_critical"} or float
        Whole column, ``(0, y(t))``, or ``(0, range)``.

    Returns
    -------
    float
        Nonnegative norm.

    Raises
    ------
    OverflowGuard
        If the norm is not representable.
    """
    config = config or WeightConfig()
    upper = _upper(range, config, t)
    val = log_norm_sq(f, kind, m, config, t, eps, upper, half)
    return _exp_half(val)


def _upper(range, config, t):
    if range == "full":
        return None
    if range == "up_to_critical":
        return AnalyticRadius(config).critical_height(t)
    return float(range)


def _exp_half(logsq):
    """``exp(logsq / 2)`` with an explicit overflow error."""
    if logsq == -np.inf:
        return 0.0
    if logsq > 2 * 700:
        raise OverflowGuard(f"value e^{logsq / 2:.1f} not representable")
    return float(np.exp(0.5 * logsq))


# ----------------------------------------------------------------------
# energies

SURROGATE_ORDERS = (2, 3, 4)


@dataclass
class EnergyReport:
    """Energy functionals at one time with their constituents.

    ``order`` is the surrogate of the middle order; the lower and upper
    orders are ``order - 1`` and ``order + 1``.
    """

    t: float
    eps: float
    order: int
    E_v: float
    K_v: float
    E_w: float
    K_w: float
    parts: dict = field(default_factory=dict)

    @property
    def E(self):
        return self.E_v + self.E_w

    @property
    def K(self):
        return self.K_v + self.K_w

    def row(self):
        """``(t, eps, E_v, K_v, E_w, K_w, E, K, tag)``."""
        return (self.t, self.eps, self.E_v, self.K_v, self.E_w, self.K_w, self.E, self.K, f"m{self.order}")


def _as_components(grid, U):
    if isinstance(U, VectorField):
        return [c.coeffs for c in U.components]
    return [np.asarray(c) for c in U]


def energy_report(
    U,
    t: float,
    eps: float,
    grid: Grid | None = None,
    split=None,
    config: WeightConfig | None = None,
    order: int = 3,
    include_w: bool = True,
) -> EnergyReport:
    """Velocity and vorticity energies of an error field.

    Parameters
    ----------
    U : VectorField or sequence of coefficient arrays
        Error velocity ``(u, v)``.
    t, eps : float
    grid : Grid, optional
        Required when ``U`` is given as arrays.
    split : tuple, optional
        ``(w_e, w_p)`` coefficient arrays; in d=2 each holds three components
        and the third enters as ``w_{., 3}``.
    config : WeightConfig
    order : {2, 3, 4}
        Surrogate of the middle order.
    include_w : bool
        Compute ``E_w`` and ``K_w`` (requires ``split``).

    Returns
    -------
    EnergyReport

    Raises
    ------
    MissingSplit
        If vorticity energies are requested without the split.
    """
    if order not in SURROGATE_ORDERS:
        raise ValueError(f"surrogate order must be one of {SURROGATE_ORDERS}")
    if isinstance(U, VectorField):
        grid = U.grid
    if grid is None:
        raise ValueError("grid is required for array input")
    config = config or WeightConfig()
    lo, mid, hi = order - 1, order, order + 1
    yt = AnalyticRadius(config).critical_height(t)
    logs = {}

    def add(name, logval):
        logs[name] = logval

    def field_of(c):
        return SpectralField(grid, c)

    def lifted(c):
        return analytic_lift(field_of(c), t, config)

    comps = _as_components(grid, U)
    vel_E, vel_K = [], []
    for n, c in enumerate(comps):
        vel_E.append(log_norm_sq(lifted(c), "tan", mid, config))
        vel_E.append(log_norm_sq(field_of(c), "tan", hi, config))
        vel_K.append(log_norm_sq(lifted(c), "tan", mid, config, upper=yt, half=True) if yt > 0 else -np.inf)
    inv = -2.0 * np.log(eps)
    add("U_tan", logsumexp(vel_E) + inv)
    add("U_half", logsumexp(vel_K) + inv)

    E_w_terms, K_w_terms = [], []
    if include_w:
        if split is None:
            raise MissingSplit("E_w requested without the vorticity split (w_e, w_p)")
        w_e, w_p = (np.asarray(a) for a in split)
        if grid.d == 2:
            (we_h, we3), (wp_h, wp3) = (w_e[:2], w_e[2]), (w_p[:2], w_p[2])
        else:
            we_h, wp_h, we3, wp3 = [w_e.reshape(grid.coeff_shape)], [w_p.reshape(grid.coeff_shape)], None, None
        phi = config.phi(grid.y)

        def group(ws, kind, mid_kind):
            """Lifted and plain norms of one family; returns (E, K) log lists."""
            e, k = [], []
            for c in ws:
                e.append(log_norm_sq(lifted(c), kind, lo, config, t, eps))
                e.append(log_norm_sq(field_of(c), mid_kind, mid, config, t, eps))
                k.append(log_norm_sq(lifted(c), kind, lo, config, t, eps, upper=yt, half=True) if yt > 0 else -np.inf)
            return e, k

        scaled = [
            group([phi * c for c in we_h], "e", "co"),
            group([phi * c for c in wp_h], "p", "p"),
        ]
        if we3 is not None:
            scaled += [group([we3], "e", "co"), group([wp3], "p", "p")]
        plain = [group(we_h, "e", "co"), group(wp_h, "p", "p")]
        for e, k in scaled:
            E_w_terms += [v + inv for v in e]
            K_w_terms += [v + inv for v in k]
        for e, k in plain:
            E_w_terms += e
            K_w_terms += k
        add("w_energy", logsumexp(E_w_terms))
        add("w_dissipation", logsumexp(K_w_terms))

    parts = {name: _exp_half(2.0 * val) for name, val in logs.items()}
    return EnergyReport(
        float(t),
        float(eps),
        order,
        parts.get("U_tan", 0.0),
        parts.get("U_half", 0.0),
        parts.get("w_energy", 0.0),
        parts.get("w_dissipation", 0.0),
        parts,
    )


__all__ = [
    "AnalyticRadius",
    "EnergyReport",
    "WeightConfig",
    "analytic_lift",
    "conormal_Z",
    "energy_report",
    "log_norm_sq",
    "norm_suite",
]
