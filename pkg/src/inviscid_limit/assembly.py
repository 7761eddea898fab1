"""Composite approximation and its residual in the viscous momentum equations.

Layer fields are differentiated on their own ``z`` column and then
resampled to ``z = y / eps`` on the outer column with a local Lagrange
matrix, so every wall-normal derivative of a layer term carries its exact
``eps`` scaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DecayViolation, WindowError
from .euler import EulerTrajectory, LinearEulerTrajectory
from .fields import (
    SpectralField,
    TAIL_TOL,
    Trace,
    VectorField,
    apply_columns,
    dx_coeffs,
    dy_coeffs,
    l2_norm_physical,
    to_physical,
)
from .grid import Grid
from .prandtl import compute_pp2
from .timestepping import Trajectory


@dataclass
class Expansion:
    """The four trajectories of the two-term expansion on a common window."""

    euler0: EulerTrajectory
    euler1: EulerTrajectory
    prandtl0: Trajectory
    prandtl1: Trajectory

    def __post_init__(self):
        if not isinstance(self.euler1, LinearEulerTrajectory):
            e1 = self.euler1
            self.euler1 = LinearEulerTrajectory(e1.times, e1.data, e1.meta, e1.order)
        self.euler1.background = self.euler0
        t0 = max(tr.t0 for tr in self.parts)
        t1 = min(tr.t1 for tr in self.parts)
        if t1 < t0 or any(abs(tr.t0 - self.euler0.t0) > 1e-12 for tr in self.parts):
            raise WindowError("expansion trajectories do not share a time window")
        self.window = (t0, t1)

    @property
    def parts(self):
        return (self.euler0, self.euler1, self.prandtl0, self.prandtl1)

    @property
    def outer_grid(self) -> Grid:
        return Grid.from_dict(self.euler0.meta["grid"])

    @property
    def layer_grid(self) -> Grid:
        return Grid.from_dict(self.prandtl0.meta["grid"])

    @property
    def times(self):
        return self.euler0.times

    def check_time(self, t):
        lo, hi = self.window
        if t < lo - 1e-12 or t > hi + 1e-12:
            raise WindowError(f"t={t} outside expansion window [{lo}, {hi}]")

    def traces(self, t):
        keys = ("U", "U_t", "dyU", "P", "V", "V_t")
        tr0 = {k: self.euler0.at(k, t) for k in keys}
        tr1 = {k: self.euler1.at(k, t) for k in keys}
        return tr0, tr1


def layer_interp(outer: Grid, layer: Grid, eps: float):
    """Sparse matrix mapping layer columns to ``z = y / eps`` on the outer column.

    Rows with ``z > Lz`` are zero (the layer fields have decayed there).
    """
    z = outer.y / eps
    inside = z <= layer.Ly * (1 + 1e-14)
    M = sp.lil_matrix((outer.ny, layer.ny))
    if inside.any():
        sub = layer.interp_matrix(np.minimum(z[inside], layer.Ly))
        M[np.flatnonzero(inside)] = sub
    return M.tocsr()


def _check_layer_tail(coeffs, name):
    mag = np.abs(coeffs)
    scale = mag.max() if mag.size else 0.0
    if scale and mag[..., -1].max() > TAIL_TOL * scale:
        raise DecayViolation(name, float(mag[..., -1].max() / scale), TAIL_TOL)


@dataclass
class _Part:
    """Coefficient arrays of a summand and its derivatives on the outer grid."""

    val: np.ndarray
    t: np.ndarray
    y: np.ndarray
    yy: np.ndarray


def _outer_part(grid, c, ct, w=1.0):
    return _Part(w * c, w * ct, w * dy_coeffs(grid, c, 1), w * dy_coeffs(grid, c, 2))


def _layer_part(layer, M, c, ct, eps, w=1.0, dz=None):
    _check_layer_tail(c, "layer field")
    d1 = dy_coeffs(layer, c, 1) if dz is None else dz
    d2 = dy_coeffs(layer, c, 2)
    return _Part(
        w * apply_columns(M, c),
        w * apply_columns(M, ct),
        (w / eps) * apply_columns(M, d1),
        (w / eps**2) * apply_columns(M, d2),
    )


def _sum_parts(parts):
    return _Part(*(sum(getattr(p, k) for p in parts) for k in ("val", "t", "y", "yy")))


@dataclass
class ApproximateSolution:
    """Assembled two-term approximation at one time.

    Attributes
    ----------
    eps : float
        Square root of the viscosity.
    t : float
    u_a : VectorField
        ``(u_a, v_a)`` on the outer grid.
    p_a : SpectralField
    f : Trace
        Displacement functional; ``v_a(x, 0) = eps^2 f``.
    parts : dict
        Coefficient arrays of values and derivatives used by the residual.
    provenance : Expansion or None
    """

    eps: float
    t: float
    u_a: VectorField
    p_a: SpectralField
    f: Trace
    parts: dict = field(repr=False, default_factory=dict)
    provenance: Expansion | None = field(repr=False, default=None)

    @property
    def grid(self) -> Grid:
        return self.u_a.grid

    def wall_defect(self):
        """Max deviation from ``(u_a, v_a)(x, 0) = (0, eps^2 f)``."""
        hor = max(np.abs(c.coeffs[..., 0]).max() for c in self.u_a.horizontal)
        ver = np.abs(self.u_a.vertical.coeffs[..., 0] - self.eps**2 * self.f.coeffs).max()
        return float(max(hor, ver))

    def divergence(self):
        grid = self.grid
        comps = self.parts
        div = comps["v"].y.copy()
        for a in range(grid.d):
            div = div + dx_coeffs(grid, comps[f"u{a}"].val, a + 1)
        return div


def _euler_fields(traj: EulerTrajectory, t):
    """Velocity, velocity tendency and pressure coefficients of an outer trajectory."""
    st = traj.state(t, with_pressure=True)
    vel_t = traj.velocity_t(t)
    comps = [c.coeffs for c in st.velocity.components]
    comps_t = [c.coeffs for c in vel_t.components]
    return comps, comps_t, st.pressure.coeffs


def layer_fields(exp: Expansion, t):
    """Layer arrays at time ``t`` keyed by name (coefficients on the layer grid)."""
    lg = exp.layer_grid
    p0, p1 = exp.prandtl0, exp.prandtl1
    tr0, tr1 = exp.traces(t)
    u0, u0t = p0.at("u", t), p0.at("u", t, 1)
    v1, v1t = p0.at("v", t), p0.at("v", t, 1)
    u1, u1t = p1.at("u", t), p1.at("u", t, 1)
    v2, v2t = p1.at("v", t), p1.at("v", t, 1)
    pp2, P2 = compute_pp2(lg, u0, v1, v1t, tr0, tr1)
    return {
        "u0": u0, "u0_t": u0t, "v1": v1, "v1_t": v1t, "u1": u1, "u1_t": u1t,
        "v2": v2, "v2_t": v2t, "p2": pp2, "p2_z": P2,
    }


def assemble(
    exp: Expansion, eps: float, t: float, include_layer=True, order=1, include_outer=True
) -> ApproximateSolution:
    """Assemble the composite approximation at time ``t``.

    Parameters
    ----------
    exp : Expansion
    eps : float
        In ``(0, 1/2]``.
    t : float
    include_layer : bool
        ``False`` gives the outer-only assembly (used to isolate the outer
        residual).
    order : {0, 1}
        ``0`` keeps only the leading outer flow and leading layer.
    include_outer : bool
        ``False`` gives the layer-only assembly, exactly zero above the layer.
    """
    if not 0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 1/2]")
    if not (include_layer or include_outer):
        raise ValueError("nothing to assemble")
    exp.check_time(t)
    grid, lg = exp.outer_grid, exp.layer_grid
    d = grid.d
    M = layer_interp(grid, lg, eps)
    e0, e0t, pe0 = _euler_fields(exp.euler0, t)
    if order >= 1:
        e1, e1t, pe1 = _euler_fields(exp.euler1, t)
    L = layer_fields(exp, t)
    f = L["v2"][..., 0]

    w_out = 1.0 if include_outer else 0.0
    parts = {}
    for a in range(d):
        pieces = [_outer_part(grid, e0[a], e0t[a], w_out)]
        if order >= 1:
            pieces.append(_outer_part(grid, e1[a], e1t[a], eps * w_out))
        if include_layer:
            pieces.append(_layer_part(lg, M, L["u0"][a], L["u0_t"][a], eps))
            if order >= 1:
                pieces.append(_layer_part(lg, M, L["u1"][a], L["u1_t"][a], eps, eps))
        parts[f"u{a}"] = _sum_parts(pieces)
    pieces = [_outer_part(grid, e0[d], e0t[d], w_out)]
    if order >= 1:
        pieces.append(_outer_part(grid, e1[d], e1t[d], eps * w_out))
    if include_layer:
        pieces.append(_layer_part(lg, M, L["v1"], L["v1_t"], eps, eps))
        if order >= 1:
            pieces.append(_layer_part(lg, M, L["v2"], L["v2_t"], eps, eps**2))
    parts["v"] = _sum_parts(pieces)
    zero = np.zeros_like(pe0)
    pieces = [_outer_part(grid, pe0, zero, w_out)]
    if order >= 1:
        pieces.append(_outer_part(grid, pe1, zero, eps * w_out))
        if include_layer:
            # dz p_p2 is the integrand itself, not a differentiated quadrature
            pieces.append(_layer_part(lg, M, L["p2"], np.zeros_like(L["p2"]), eps, eps**2, L["p2_z"]))
    parts["p"] = _sum_parts(pieces)

    hor = tuple(SpectralField(grid, parts[f"u{a}"].val, f"u{a}") for a in range(d))
    vel = VectorField(hor, SpectralField(grid, parts["v"].val, "v"))
    return ApproximateSolution(
        eps, t, vel, SpectralField(grid, parts["p"].val, "p"), Trace(grid, f), parts, exp
    )


@dataclass
class ResidualSet:
    """Residuals ``R_h`` (tangential components) and ``R_v`` in physical space."""

    grid: Grid
    R_h: list
    R_v: np.ndarray
    t: float = 0.0
    eps: float = 0.0

    @property
    def l2_h(self):
        return float(np.sqrt(sum(l2_norm_physical(r, self.grid) ** 2 for r in self.R_h)))

    @property
    def l2_v(self):
        return l2_norm_physical(self.R_v, self.grid)

    @property
    def l2(self):
        return float(np.hypot(self.l2_h, self.l2_v))

    @property
    def linf(self):
        return float(max(max(np.abs(r).max() for r in self.R_h), np.abs(self.R_v).max()))

    def norms(self):
        return {"L2_h": self.l2_h, "L2_v": self.l2_v, "L2": self.l2, "Linf": self.linf}


def residual_from_parts(grid: Grid, parts: dict, eps: float, f) -> tuple[list, np.ndarray]:
    """Apply the viscous momentum operator with the ``-eps^2 f e^{-y}`` correction.

    Returns ``R = -LHS`` for the tangential components and the normal one.
    """
    d = grid.d
    P = {k: to_physical(grid, p.val) for k, p in ((k, parts[k]) for k in parts)}
    drift = P["v"] - eps**2 * np.fft.irfftn(
        f, s=(grid.nx,) * d, axes=grid.tangential_axes, norm="forward"
    )[..., None] * np.exp(-grid.y)
    vel = [P[f"u{a}"] for a in range(d)]

    def lhs(name, pressure_grad):
        part = parts[name]
        out = to_physical(grid, part.t)
        out = out + drift * to_physical(grid, part.y)
        lap = part.yy.copy()
        for a in range(d):
            dxc = dx_coeffs(grid, part.val, a + 1)
            out = out + vel[a] * to_physical(grid, dxc)
            lap = lap + dx_coeffs(grid, dxc, a + 1)
        return out + pressure_grad - eps**2 * to_physical(grid, lap)

    R_h = [-lhs(f"u{a}", to_physical(grid, dx_coeffs(grid, parts["p"].val, a + 1))) for a in range(d)]
    R_v = -lhs("v", to_physical(grid, parts["p"].y))
    return R_h, R_v


def residual_by_substitution(a: ApproximateSolution) -> ResidualSet:
    """``R = -(dt u_a + u_a.grad u_a + (v_a - eps^2 f e^{-y}) dy u_a + grad p_a - eps^2 Lap u_a)``.

    Time derivatives are the stored solver tendencies (exact at samples).
    """
    R_h, R_v = residual_from_parts(a.grid, a.parts, a.eps, a.f.coeffs)
    return ResidualSet(a.grid, R_h, R_v, a.t, a.eps)


# ----------------------------------------------------------------------
# closed forms


def _phys(grid, c):
    return to_physical(grid, c)


def euler_residual_closed_form(exp: Expansion, eps: float, t: float):
    """Outer residual from its closed form.

    ``-R_e = eps^2 (u1.grad u1 + v1 dy u1 - f e^{-y} dy(u0 + eps u1)) - eps^2 Lap(u0 + eps u1)``
    componentwise.  Returns ``(R_h list, R_v)`` in physical space.
    """
    grid = exp.outer_grid
    d = grid.d
    e0, _, _ = _euler_fields(exp.euler0, t)
    e1, _, _ = _euler_fields(exp.euler1, t)
    f = exp.prandtl1.at("v", t)[..., 0]
    fp = np.fft.irfftn(f, s=(grid.nx,) * d, axes=grid.tangential_axes, norm="forward")[..., None]
    decay = fp * np.exp(-grid.y)
    u1p = [_phys(grid, c) for c in e1]
    out = []
    for i in range(d + 1):
        adv = u1p[d] * _phys(grid, dy_coeffs(grid, e1[i], 1))
        for a in range(d):
            adv = adv + u1p[a] * _phys(grid, dx_coeffs(grid, e1[i], a + 1))
        dy_sum = dy_coeffs(grid, e0[i] + eps * e1[i], 1)
        both = e0[i] + eps * e1[i]
        lap = dy_coeffs(grid, both, 2) - grid.kabs[..., None] ** 2 * both
        minus_R = eps**2 * (adv - decay * _phys(grid, dy_sum)) - eps**2 * _phys(grid, lap)
        out.append(-minus_R)
    return out[:d], out[d]


def _trace_phys(grid, tr):
    axes = tuple(range(tr.ndim - grid.d, tr.ndim))
    return np.fft.irfftn(tr, s=(grid.nx,) * grid.d, axes=axes, norm="forward")[..., None]


def prandtl_residual_groups(exp: Expansion, eps: float, t: float):
    """Closed-form layer residual evaluated group by group (tangential and normal).

    Groups: ``eps2`` (quadratic corrector products), ``eps1`` (first-order
    outer/trace differences), ``taylor`` (the ``1/eps`` Taylor remainder
    ``(v_e0 - y dy v_e0(0) - y^2/2 dyy v_e0(0)) dz u_p0 / eps``),
    ``taylor0`` (order-one Taylor remainders), ``tangential`` (tangential
    Laplacian and layer pressure gradient) and ``eps3`` (normal component).
    Every entry is ``-R`` restricted to that group.

    Returns
    -------
    dict
        ``{"h": {group: list of d arrays}, "v": {group: array}}``
    """
    grid, lg = exp.outer_grid, exp.layer_grid
    d = grid.d
    y = grid.y
    M = layer_interp(grid, lg, eps)
    L = layer_fields(exp, t)
    tr0, tr1 = exp.traces(t)
    e0, _, _ = _euler_fields(exp.euler0, t)
    e1, _, _ = _euler_fields(exp.euler1, t)
    ph = lambda c: _phys(grid, c)  # noqa: E731
    lay = lambda c: ph(apply_columns(M, c))  # noqa: E731
    dz = lambda c: ph(apply_columns(M, dy_coeffs(lg, c, 1)))  # noqa: E731
    dzz = lambda c: ph(apply_columns(M, dy_coeffs(lg, c, 2)))  # noqa: E731
    dxl = lambda c, a: ph(apply_columns(M, dx_coeffs(lg, c, a + 1)))  # noqa: E731
    dxo = lambda c, a: ph(dx_coeffs(grid, c, a + 1))  # noqa: E731
    dyo = lambda c, n=1: ph(dy_coeffs(grid, c, n))  # noqa: E731

    up0 = [lay(c) for c in L["u0"]]
    up1 = [lay(c) for c in L["u1"]]
    vp1, vp2 = lay(L["v1"]), lay(L["v2"])
    f = L["v2"][..., 0]
    fp = _trace_phys(grid, f)
    ey = np.exp(-y)
    ue0 = [ph(c) for c in e0[:d]]
    ue1 = [ph(c) for c in e1[:d]]
    ve0, ve1 = ph(e0[d]), ph(e1[d])
    # wall traces as functions of x only
    w_ue0 = [ph(c)[..., :1] for c in e0[:d]]
    w_ue1 = [ph(c)[..., :1] for c in e1[:d]]
    w_ve1 = ph(e1[d])[..., :1]
    w_dy_ue0 = [dyo(c)[..., :1] for c in e0[:d]]
    w_dy_ve0 = dyo(e0[d])[..., :1]
    w_dyy_ve0 = dyo(e0[d], 2)[..., :1]
    w_dy_ve1 = dyo(e1[d])[..., :1]
    grad_w = lambda c, a: dxo(c, a)[..., :1]  # noqa: E731

    h = {g: [] for g in ("eps2", "eps1", "taylor", "taylor0", "tangential")}
    for i in range(d):
        dzu0, dzu1 = dz(L["u0"][i]), dz(L["u1"][i])
        g2 = sum(ue1[a] * dxl(L["u1"][i], a) + up1[a] * dxo(e1[i], a) + up1[a] * dxl(L["u1"][i], a) for a in range(d))
        g2 = g2 + vp1 * dyo(e1[i]) + vp2 * (dyo(e0[i]) + eps * dyo(e1[i])) - fp * ey * dzu1 + vp2 * dzu1
        h["eps2"].append(eps**2 * g2)
        g1 = sum((ue0[a] - w_ue0[a]) * dxl(L["u1"][i], a) for a in range(d))
        g1 = g1 + sum((dxo(e1[i], a) - grad_w(e1[i], a)) * up0[a] for a in range(d))
        g1 = g1 + sum((ue1[a] - w_ue1[a]) * dxl(L["u0"][i], a) for a in range(d))
        g1 = g1 + sum((dxo(e0[i], a) - grad_w(e0[i], a)) * up1[a] for a in range(d))
        g1 = g1 + (ve1 - w_ve1) * dzu1 + (dyo(e0[i]) - w_dy_ue0[i]) * vp1 + fp * (1 - ey) * dzu0
        h["eps1"].append(eps * g1)
        h["taylor"].append((ve0 - y * w_dy_ve0 - 0.5 * y**2 * w_dyy_ve0) * dzu0 / eps)
        g0 = (ve0 - y * w_dy_ve0) * dzu1 + (ve1 - w_ve1 - y * w_dy_ve1) * dzu0
        g0 = g0 + sum((ue0[a] - w_ue0[a] - y * w_dy_ue0[a]) * dxl(L["u0"][i], a) for a in range(d))
        g0 = g0 + sum(
            (dxo(e0[i], a) - grad_w(e0[i], a) - y * grad_w(dy_coeffs(grid, e0[i], 1), a)) * up0[a]
            for a in range(d)
        )
        h["taylor0"].append(g0)
        uap = L["u0"][i] + eps * L["u1"][i]
        lap_x = -ph(apply_columns(M, lg.kabs[..., None] ** 2 * uap))
        h["tangential"].append(-eps**2 * lap_x + eps**2 * dxl(L["p2"], i))

    v = {}
    dzv1, dzv2 = dz(L["v1"]), dz(L["v2"])
    vae_y = dyo(e0[d]) + eps * dyo(e1[d])
    dz_vap = dzv1 + eps * dzv2
    g2 = lay(L["v2_t"]) + sum((ue0[a] + up0[a]) * dxl(L["v2"], a) for a in range(d))
    g2 = g2 + (ve1 + vp1) * dzv2 + sum((ue1[a] + up1[a]) * dxl(L["v1"], a) for a in range(d))
    g2 = g2 + vp2 * vae_y + (vp2 - fp * ey) * dz_vap
    g2 = g2 + sum(up1[a] * dxo(e1[d], a) for a in range(d)) + vp1 * dyo(e1[d]) - dzz(L["v2"])
    v["eps2"] = eps**2 * g2
    g1 = sum((ue0[a] - w_ue0[a]) * dxl(L["v1"], a) for a in range(d))
    g1 = g1 + sum((dxo(e1[d], a) - grad_w(e1[d], a)) * up0[a] for a in range(d))
    g1 = g1 + (ve1 - w_ve1) * dzv1 + (dyo(e0[d]) - w_dy_ve0) * vp1
    g1 = g1 + sum(up1[a] * dxo(e0[d], a) for a in range(d)) + ve0 * dzv2
    v["eps1"] = eps * g1
    g0 = (ve0 - y * w_dy_ve0) * dzv1
    g0 = g0 + sum((dxo(e0[d], a) - y * grad_w(dy_coeffs(grid, e0[d], 1), a)) * up0[a] for a in range(d))
    v["taylor0"] = g0
    vap = L["v1"] + eps * L["v2"]
    g3 = sum((ue1[a] + up1[a]) * dxl(L["v2"], a) for a in range(d))
    v["eps3"] = eps**3 * g3 + eps**3 * ph(apply_columns(M, lg.kabs[..., None] ** 2 * vap))
    return {"h": h, "v": v}


def residual_split_report(exp: Expansion, eps: float, t: float):
    """Substitution residual with closed-form attribution.

    Returns
    -------
    dict
        ``total`` (norms of the substitution residual), ``euler_gap`` (relative
        L2 gap between the closed-form outer residual and the substitution
        residual of the outer-only assembly), ``euler_norm``, ``groups``
        (L2 norm of each closed-form layer group) and ``layer_gap`` (relative
        L2 gap between the summed layer groups and ``R - R_e``).
    """
    grid = exp.outer_grid
    full = residual_by_substitution(assemble(exp, eps, t))
    outer = residual_by_substitution(assemble(exp, eps, t, include_layer=False))
    Rh_c, Rv_c = euler_residual_closed_form(exp, eps, t)
    closed = ResidualSet(grid, Rh_c, Rv_c, t, eps)
    diff = ResidualSet(grid, [a - b for a, b in zip(outer.R_h, Rh_c)], outer.R_v - Rv_c, t, eps)
    euler_norm = closed.l2
    groups = prandtl_residual_groups(exp, eps, t)
    norms = {}
    sum_h = [np.zeros(grid.phys_shape) for _ in range(grid.d)]
    sum_v = np.zeros(grid.phys_shape)
    for name, comps in groups["h"].items():
        norms[f"h_{name}"] = float(np.sqrt(sum(l2_norm_physical(c, grid) ** 2 for c in comps)))
        sum_h = [s + c for s, c in zip(sum_h, comps)]
    for name, comp in groups["v"].items():
        norms[f"v_{name}"] = l2_norm_physical(comp, grid)
        sum_v = sum_v + comp
    layer = ResidualSet(grid, [a - b for a, b in zip(full.R_h, outer.R_h)], full.R_v - outer.R_v, t, eps)
    # groups hold -R_p; the substitution layer part is R - R_e
    gap = ResidualSet(grid, [a + b for a, b in zip(layer.R_h, sum_h)], layer.R_v + sum_v, t, eps)
    return {
        "t": t,
        "eps": eps,
        "total": full.norms(),
        "euler_norm": euler_norm,
        "euler_gap": diff.l2 / max(euler_norm, 1e-300),
        "groups": norms,
        "layer_norm": layer.l2,
        "layer_gap_h": gap.l2_h / max(layer.l2_h, 1e-300),
        "layer_gap_v": gap.l2_v / max(layer.l2_v, 1e-300),
    }


__all__ = [
    "Expansion",
    "ApproximateSolution",
    "ResidualSet",
    "assemble",
    "layer_interp",
    "residual_by_substitution",
    "euler_residual_closed_form",
    "prandtl_residual_groups",
    "residual_split_report",
]
