"""Error-vorticity split into an outer part ``w_e`` and a layer part ``w_p`` (d=1).

The error ``U = (u, v) = u_NS - u_a`` has vorticity ``w = dy u - dx v``.  Both
parts are transported by the viscous velocity (``Ut_a + Ut`` with
``Ut_a = (u_a, v_a - eps^2 f e^{-y})`` and ``Ut = (u, v + eps^2 f e^{-y})``)
and forced by the outer and layer halves of the approximation:

``dt w_x - eps^2 Lap w_x + u_NS.grad w_x + Ut.grad w_{a,x} = curl R_x - M_x``.

Wall conditions: ``-eps^2 (dy + |D_x|) w_e = 0`` and
``-eps^2 (dy + |D_x|) w_p = -dy (-Lap_D)^{-1} J + eps^2 dx Lambda_ND dt f``,
the last term being the potential-flow part of the error velocity, whose
wall-normal value is ``-eps^2 f``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import Expansion, _euler_fields, assemble, residual_by_substitution
from .elliptic import biot_savart, modal_solver
from .errors import SplitDefect
from .fields import SpectralField, dx_coeffs, dy_coeffs, l2_norm, to_coeffs, to_physical
from .ns import _influence, check_resolution
from .timestepping import Trajectory, ars443_step

DEFECT_FACTOR = 10.0


def _phys(grid, c):
    return to_physical(grid, c)


def split_sources(exp: Expansion, eps: float, times):
    """Approximation-side data of the split at the given sample times.

    The outer source uses the closed form
    ``curl R_e - M_e = -eps^2 u1.grad w1 + eps^2 f e^{-y} dy W + eps^2 Lap W``
    with ``W = w0 + eps w1``, which lives where the outer vorticities live.
    Layer quantities come from the layer-only assembly and vanish exactly
    above the layer.

    Returns a :class:`Trajectory` with physical arrays ``ua, va, ua_x, ua_y,
    va_x, va_y, Se, Sp, wae_x, wae_y, wap_x, wap_y, Rh, Rv``, mode arrays
    ``f, f_t`` and the coefficient array ``wa`` (curl of the approximation).
    """
    grid = exp.outer_grid
    if grid.d != 1:
        raise NotImplementedError("the vorticity split is implemented for d=1")
    decay = np.exp(-grid.y)
    dx = lambda c: dx_coeffs(grid, c)  # noqa: E731
    store = {}
    for t in times:
        full = assemble(exp, eps, t)
        layer = assemble(exp, eps, t, include_outer=False)
        R = residual_by_substitution(full)
        Re = residual_by_substitution(assemble(exp, eps, t, include_layer=False))
        pf, pl = full.parts, layer.parts
        f = full.f.coeffs
        f_t = exp.prandtl1.at("v", t, 1)[..., 0]
        G = _phys(grid, f[..., None]) * decay
        Gx = _phys(grid, dx_coeffs(grid, f[..., None])) * decay

        w0 = exp.euler0.at("w", t)[0]
        w1 = exp.euler1.at("w", t)[0]
        e1, _, _ = _euler_fields(exp.euler1, t)
        wae = w0 + eps * w1
        wae_y = dy_coeffs(grid, wae, 1)
        lap = dy_coeffs(grid, wae, 2) - grid.kabs[..., None] ** 2 * wae
        adv1 = _phys(grid, e1[0]) * _phys(grid, dx(w1)) + _phys(grid, e1[1]) * _phys(grid, dy_coeffs(grid, w1, 1))
        Se = eps**2 * (-adv1 + G * _phys(grid, wae_y) + _phys(grid, lap))

        wap = pl["u0"].y - dx(pl["v"].val)
        wap_y = pl["u0"].yy - dx(pl["v"].y)
        ch = to_coeffs(grid, R.R_h[0] - Re.R_h[0])
        cv = to_coeffs(grid, R.R_v - Re.R_v)
        curl_Rp = _phys(grid, dy_coeffs(grid, ch, 1) - dx(cv))
        Mp = -(eps**2) * (Gx * _phys(grid, pl["v"].y) + G * _phys(grid, pl["u0"].y))
        sample = {
            "ua": _phys(grid, pf["u0"].val),
            "va": _phys(grid, pf["v"].val),
            "ua_x": _phys(grid, dx(pf["u0"].val)),
            "ua_y": _phys(grid, pf["u0"].y),
            "va_x": _phys(grid, dx(pf["v"].val)),
            "va_y": _phys(grid, pf["v"].y),
            "Se": Se,
            "Sp": curl_Rp - Mp,
            "wae_x": _phys(grid, dx(wae)),
            "wae_y": _phys(grid, wae_y),
            "wap_x": _phys(grid, dx(wap)),
            "wap_y": _phys(grid, wap_y),
            "Rh": R.R_h[0],
            "Rv": R.R_v,
            "f": f,
            "f_t": f_t,
            "wa": wae + wap,
        }
        for k, v in sample.items():
            store.setdefault(k, []).append(v)
    return Trajectory(np.asarray(times, float), {k: np.stack(v) for k, v in store.items()}, {"grid": grid.to_dict()})


@dataclass
class VorticitySplit:
    """Split trajectory with its consistency audit."""

    eps: float
    t: np.ndarray
    w_e: np.ndarray
    w_p: np.ndarray
    w: np.ndarray
    U: np.ndarray
    defect: np.ndarray
    scale: np.ndarray
    wall_e: np.ndarray
    wall_p: np.ndarray
    audit_from: float = 0.0

    @property
    def audited(self):
        """Mask of the samples inside the audit window."""
        return self.t >= self.audit_from - 1e-12

    @property
    def relative_defect(self):
        """``max_t ||w_e + w_p - w|| / max_t ||w||`` over the audit window."""
        sel = self.audited
        return float(self.defect[sel].max() / max(self.scale[sel].max(), 1e-300))

    def third_component_wall_trace(self):
        """Wall trace of the wall-normal vorticity component; absent in d=1."""
        return 0.0


def evolve_vorticity_split(
    exp: Expansion, eps: float, T: float, dt=None, audit_from=None, tol=1e-4, raise_on_defect=False
):
    """Integrate the viscous flow together with ``(w_e, w_p)``.

    Parameters
    ----------
    exp : Expansion
        Source of the approximation.
    eps : float
    T : float
        Window length from the start of the expansion window.
    dt : float, optional
        Step; defaults to the expansion sampling so that every step lands on
        a stored sample.
    audit_from : float, optional
        Start of the audit window (default: the start of the run).  The
        impulsive start creates a Stokes layer of width ``eps sqrt(t)`` that no
        fixed grid resolves for small ``t``; auditing after it has spread over
        several cells still carries every earlier defect forward.
    tol : float
        Split-solver tolerance; a relative defect above ``10 * tol`` raises
        :class:`SplitDefect` when ``raise_on_defect`` is set.

    Returns
    -------
    VorticitySplit
    """
    grid = exp.outer_grid
    check_resolution(grid, eps)
    t0 = exp.window[0]
    if dt is None:
        dt = float(exp.times[1] - exp.times[0])
    n = int(round(T / dt))
    if n < 1 or not np.isclose(n * dt, T, rtol=1e-10, atol=1e-14):
        raise ValueError("T must be a positive integer multiple of dt")
    times = t0 + dt * np.arange(n + 1)
    # samples cover the stage times with room for the Lagrange stencil
    last = min(exp.window[1], times[-1] + 3 * dt)
    sample_times = exp.times[(exp.times >= t0 - 1e-12) & (exp.times <= last + 1e-12)]
    src = split_sources(exp, eps, sample_times)
    nu = eps**2
    k = grid.derivative_wavenumbers[0]
    kabs = grid.kabs
    nd = np.zeros_like(kabs)
    nd[kabs > 0] = 1.0 / kabs[kabs > 0]
    decay = np.exp(-grid.y)
    laplace = modal_solver(grid, "dirichlet", "robin")

    def velocity(w):
        vel = biot_savart(SpectralField(grid, w), check=False)
        return [c.coeffs for c in vel.components]

    def error_fields(t, w):
        """Viscous velocity, error velocity and its gradient (physical)."""
        uc, vc = velocity(w)
        u, v = _phys(grid, uc), _phys(grid, vc)
        s = {key: src.at(key, t) for key in ("ua", "va", "ua_x", "ua_y", "va_x", "va_y")}
        U = (u - s["ua"], v - s["va"])
        grads = (
            _phys(grid, dx_coeffs(grid, uc)) - s["ua_x"],
            _phys(grid, dy_coeffs(grid, uc, 1)) - s["ua_y"],
            _phys(grid, dx_coeffs(grid, vc)) - s["va_x"],
            _phys(grid, dy_coeffs(grid, vc, 1)) - s["va_y"],
        )
        return (u, v), U, grads, s

    def explicit(t, Y):
        w, we, wp = Y
        (u, v), U, _, s = error_fields(t, w)
        f = _phys(grid, src.at("f", t)[..., None])
        Ut = (U[0], U[1] + eps**2 * f * decay)
        out = np.empty_like(Y)
        mask = grid.dealias_mask[..., None]

        def transport(c):
            return u * _phys(grid, dx_coeffs(grid, c)) + v * _phys(grid, dy_coeffs(grid, c, 1))

        out[0] = -to_coeffs(grid, transport(w)) * mask
        for idx, (c, tag, S) in enumerate(((we, "wae", "Se"), (wp, "wap", "Sp")), start=1):
            src_term = Ut[0] * src.at(tag + "_x", t) + Ut[1] * src.at(tag + "_y", t)
            out[idx] = to_coeffs(grid, -transport(c) - src_term + src.at(S, t)) * mask
        return out

    def wall_data(t, w):
        """``-dy (-Lap_D)^{-1} J (0) + eps^2 dx Lambda_ND dt f``."""
        _, U, g, s = error_fields(t, w)
        f = _phys(grid, src.at("f", t)[..., None])
        G = eps**2 * f * decay
        Uta = (s["ua"], s["va"] - G)
        Ut = (U[0], U[1] + G)
        au = (s["ua_x"], s["ua_y"])
        av = (s["va_x"], s["va_y"])
        gu, gv = (g[0], g[1]), (g[2], g[3])
        F1 = -(Uta[0] * gu[0] + Uta[1] * gu[1]) - (Ut[0] * au[0] + Ut[1] * au[1])
        F1 = F1 - (Ut[0] * gu[0] + Ut[1] * gu[1]) + src.at("Rh", t)
        F2 = -(Uta[0] * gv[0] + Uta[1] * gv[1]) - (Ut[0] * av[0] + Ut[1] * av[1])
        F2 = F2 - (Ut[0] * gv[0] + Ut[1] * gv[1]) + src.at("Rv", t)
        J = dy_coeffs(grid, to_coeffs(grid, F1), 1) - dx_coeffs(grid, to_coeffs(grid, F2))
        phi = laplace.solve(J)
        data = -(grid.D1[0] @ phi.T).ravel()
        return data + nu * 1j * k * nd * src.at("f_t", t)

    def solve(t, rhs, h):
        out = np.empty_like(rhs)
        out[0] = _influence(grid, nu, float(h)).solve(rhs[0])
        robin = modal_solver(grid, "robin", "dirichlet", 1.0, h * nu, nu)
        out[1] = robin.solve(rhs[1], None, None)
        out[2] = robin.solve(rhs[2], wall_data(t, out[0]), None)
        return out

    Y = np.zeros((3,) + grid.coeff_shape, dtype=complex)
    Y[0] = exp.euler0.at("w", t0)[0]
    rec = {key: [] for key in ("we", "wp", "w", "U", "defect", "scale", "wall_e", "wall_p")}

    def record(t, Y):
        w_err = Y[0] - src.at("wa", t)
        _, U, _, _ = error_fields(t, Y[0])
        rec["U"].append(np.stack([to_coeffs(grid, c) for c in U]))
        rec["we"].append(Y[1])
        rec["wp"].append(Y[2])
        rec["w"].append(w_err)
        rec["defect"].append(l2_norm(Y[1] + Y[2] - w_err, grid))
        rec["scale"].append(l2_norm(w_err, grid))
        rec["wall_e"].append(float(np.abs(Y[1][..., 0]).max()))
        rec["wall_p"].append(float(np.abs(Y[2][..., 0]).max()))

    record(times[0], Y)
    for i in range(n):
        Y = ars443_step(times[i], Y, dt, explicit, solve)
        record(times[i + 1], Y)
    out = VorticitySplit(
        eps,
        times,
        np.stack(rec["we"]),
        np.stack(rec["wp"]),
        np.stack(rec["w"]),
        np.stack(rec["U"]),
        np.array(rec["defect"]),
        np.array(rec["scale"]),
        np.array(rec["wall_e"]),
        np.array(rec["wall_p"]),
        times[0] if audit_from is None else float(audit_from),
    )
    if raise_on_defect and out.relative_defect > DEFECT_FACTOR * tol:
        raise SplitDefect(f"split defect {out.relative_defect:.2e} exceeds {DEFECT_FACTOR}x tolerance {tol:.1e}")
    return out


__all__ = ["VorticitySplit", "evolve_vorticity_split", "split_sources"]
