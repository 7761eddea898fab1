import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inviscid_limit.errors import MissingSplit, OverflowGuard
from inviscid_limit.fields import SpectralField, bracket_multiplier, l2_norm
from inviscid_limit.grid import Grid
from inviscid_limit.norms import (
    AnalyticRadius,
    WeightConfig,
    analytic_lift,
    conormal_Z,
    energy_report,
    norm_suite,
)

CFG = WeightConfig(delta=0.1, lam=1.0)
KIND_ARGS = [("tan", {}), ("co", {}), ("e", {"eps": 0.5}), ("p", {"eps": 0.5}), ("co_half", {})]


@pytest.fixture(scope="module")
def ngrid():
    return Grid(d=1, nx=16, box=2 * np.pi, ny=256, Ly=8.0, stretching="tanh", beta=1.5)


def _rel(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


def _random_field(grid, rng):
    X, Y = np.meshgrid(grid.x, grid.y, indexing="ij")
    vals = sum(
        rng.normal() * np.cos(k * X + rng.normal()) * np.exp(-rng.uniform(1, 3) * (Y - rng.uniform(0, 2)) ** 2)
        for k in range(5)
    )
    return SpectralField.from_physical(grid, vals)


# ----------------------------------------------------------------------
# weights


def test_theta_conditions():
    y = np.linspace(0, 3, 3001)
    assert CFG.theta(0.0) == 0.0 and CFG.theta(0.0, 1) == 0.0
    assert CFG.theta(0.5) == pytest.approx(CFG.delta, abs=1e-15)
    assert np.all(CFG.theta(y[y >= 0.5], 1) == 0.0)
    assert np.all(np.diff(CFG.theta(y)) >= 0)
    assert np.max(np.abs(CFG.theta(y, 1)) + np.abs(CFG.theta(y, 2))) <= 27 * CFG.delta


def test_phi_profile():
    y = np.linspace(0, 1, 101)
    assert np.allclose(CFG.phi(y), CFG.delta * y, atol=1e-15)
    y = np.linspace(2, 8, 101)
    assert np.allclose(CFG.phi(y), CFG.delta * y / (1 + y), atol=1e-15)


@pytest.mark.xfail(strict=True, reason="delta y/(1+y) at y=2 lies below delta y at y=1, so no monotone bridge exists")
def test_phi_increasing_on_bridge():
    y = np.linspace(0, 2, 2001)
    assert np.all(np.diff(CFG.phi(y)) > 0)


def test_window_and_critical_height():
    assert CFG.T0 == pytest.approx(0.05)
    rad = AnalyticRadius(CFG)
    assert rad.critical_height(0.0) == 0.5
    for t in np.linspace(0, CFG.T0, 11):
        yt = rad.critical_height(t)
        assert yt >= CFG.c0
        assert abs(rad(t, yt)) < 1e-12 or yt == 0.5
    assert rad.critical_height(CFG.delta / CFG.lam) == 0.0


def test_weight_config_rejects_bad_values():
    with pytest.raises(ValueError):
        WeightConfig(delta=-1.0)
    with pytest.raises(ValueError):
        WeightConfig(lam=0.0)
    assert WeightConfig.from_velocity_scale(2.0).lam == 8.0


def test_exponential_weight_decreases_in_y(ngrid):
    # a bump at larger height carries a smaller outer weight
    low = SpectralField.from_function(ngrid, lambda x, y: np.cos(x) * np.exp(-40 * (y - 0.1) ** 2))
    high = SpectralField.from_function(ngrid, lambda x, y: np.cos(x) * np.exp(-40 * (y - 0.6) ** 2))
    ratio_low = norm_suite(low, "e", 0, CFG, eps=0.2) / norm_suite(low, "tan")
    ratio_high = norm_suite(high, "e", 0, CFG, eps=0.2) / norm_suite(high, "tan")
    assert ratio_high < ratio_low


# ----------------------------------------------------------------------
# conormal derivatives


def test_conormal_of_constant(ngrid):
    f = SpectralField.from_function(ngrid, lambda x, y: 1.0 + 0 * x)
    for j in range(1, 5):
        assert np.abs(conormal_Z(f, j, CFG).coeffs).max() < 1e-9


def test_conormal_of_linear_profile(ngrid):
    f = SpectralField.from_function(ngrid, lambda x, y: y + 0 * x)
    z = conormal_Z(f, 1, CFG).physical()
    sel = ngrid.y <= 1.0
    assert np.allclose(z[:, sel], CFG.delta * ngrid.y[sel], atol=1e-10)


def test_conormal_of_exponential(ngrid):
    f = SpectralField.from_function(ngrid, lambda x, y: np.exp(-y) + 0 * x)
    phi = CFG.phi(ngrid.y)
    for j in range(5):
        ex = (-phi) ** j * np.exp(-ngrid.y)
        assert _rel(conormal_Z(f, j, CFG).physical()[0], ex) < 1e-6


def test_conormal_order_rejected(ngrid):
    with pytest.raises(ValueError):
        conormal_Z(SpectralField.zeros(ngrid), 5)


# ----------------------------------------------------------------------
# analytic lift


def test_lift_single_mode_at_wall(ngrid):
    k = 3
    f = SpectralField.from_function(ngrid, lambda x, y: np.cos(k * x) + 0 * y)
    g = analytic_lift(f, 0.0, CFG)
    factor = g.coeffs[k, 0] / f.coeffs[k, 0]
    assert factor.real == pytest.approx(np.exp(CFG.delta * np.sqrt(1 + k**2)), rel=1e-14)


def test_lift_is_contraction_late_and_high(ngrid, rng):
    f = _random_field(ngrid, rng)
    g = analytic_lift(f, CFG.delta / CFG.lam, CFG)
    sel = ngrid.y >= 0.5
    assert np.all(np.abs(g.coeffs[:, sel]) <= np.abs(f.coeffs[:, sel]))


def test_lift_weight_below_one_above_critical_height(ngrid):
    f = SpectralField.from_function(ngrid, lambda x, y: np.cos(2 * x) + 0 * y)
    t = 0.02
    yt = AnalyticRadius(CFG).critical_height(t)
    g = analytic_lift(f, t, CFG)
    sel = ngrid.y >= yt
    assert np.all(np.abs(g.coeffs[2, sel]) <= np.abs(f.coeffs[2, sel]) * (1 + 1e-15))


def test_lift_identity_for_zero_delta(ngrid, rng):
    f = _random_field(ngrid, rng)
    g = analytic_lift(f, 0.0, WeightConfig(delta=0.0))
    assert np.array_equal(g.coeffs, f.coeffs)


def test_lift_overflow_guard(ngrid):
    f = SpectralField.from_function(ngrid, lambda x, y: np.cos(x) + 0 * y)
    with pytest.raises(OverflowGuard):
        analytic_lift(f, 0.0, WeightConfig(delta=5.0))


def test_lift_norm_parseval(ngrid, rng):
    f = _random_field(ngrid, rng)
    g = analytic_lift(f, 0.01, CFG)
    mult = np.exp((CFG.delta - CFG.theta(ngrid.y) - CFG.lam * 0.01)[None, :] * bracket_multiplier(ngrid, 1.0)[:, None])
    direct = np.sqrt(
        ngrid.box * np.sum(ngrid.mode_weights[:, None] * np.abs(f.coeffs * mult) ** 2 * ngrid.quad_weights[None, :])
    )
    assert norm_suite(g, "tan") == pytest.approx(direct, rel=1e-10)


# ----------------------------------------------------------------------
# norm suite


@pytest.mark.parametrize("kind,kw", KIND_ARGS)
def test_zero_field_norms(ngrid, kind, kw):
    assert norm_suite(SpectralField.zeros(ngrid), kind, 2, CFG, **kw) == 0.0


def test_tan_order_zero_is_l2(ngrid, rng):
    f = _random_field(ngrid, rng)
    assert norm_suite(f, "tan", 0) == pytest.approx(l2_norm(f), rel=1e-12)


def test_conormal_h1_of_linear_profile(ngrid):
    # on (0, 1): ||y||^2 + ||delta y||^2 over a 2 pi box
    f = SpectralField.from_function(ngrid, lambda x, y: y + 0 * x)
    ex = np.sqrt(2 * np.pi / 3 * (1 + CFG.delta**2))
    assert norm_suite(f, "co", 1, CFG, range=1.0) == pytest.approx(ex, rel=1e-6)


def test_up_to_critical_range(ngrid, rng):
    f = _random_field(ngrid, rng)
    part = norm_suite(f, "co", 2, CFG, t=0.02, range="up_to_critical")
    assert 0 < part <= norm_suite(f, "co", 2, CFG)


def test_unsupported_kind(ngrid):
    with pytest.raises(ValueError):
        norm_suite(SpectralField.zeros(ngrid), "sobolev")
    with pytest.raises(ValueError):
        norm_suite(SpectralField.zeros(ngrid), "e", 0)
    with pytest.raises(ValueError):
        norm_suite(SpectralField.zeros(ngrid), "co", 5)


@pytest.mark.parametrize("kind,kw", KIND_ARGS)
def test_monotone_in_order(ngrid, rng, kind, kw):
    f = _random_field(ngrid, rng)
    vals = [norm_suite(f, kind, m, CFG, **kw) for m in range(5)]
    assert all(a <= b * (1 + 1e-12) for a, b in zip(vals, vals[1:]))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-4, 4).filter(lambda a: abs(a) > 1e-3), st.sampled_from(KIND_ARGS))
def test_norm_axioms(seed, alpha, kind_kw):
    kind, kw = kind_kw
    g = Grid(d=1, nx=16, box=2 * np.pi, ny=96, Ly=8.0, stretching="tanh", beta=1.5)
    rng = np.random.default_rng(seed)
    f, h = _random_field(g, rng), _random_field(g, rng)
    nf = norm_suite(f, kind, 2, CFG, **kw)
    nh = norm_suite(h, kind, 2, CFG, **kw)
    scaled = norm_suite(SpectralField(g, alpha * f.coeffs), kind, 2, CFG, **kw)
    assert scaled == pytest.approx(abs(alpha) * nf, rel=1e-10)
    assert norm_suite(SpectralField(g, f.coeffs + h.coeffs), kind, 2, CFG, **kw) <= (nf + nh) * (1 + 1e-10)


# ----------------------------------------------------------------------
# energies


def test_energy_of_zero_error(ngrid):
    z = np.zeros(ngrid.coeff_shape, dtype=complex)
    rep = energy_report([z, z], 0.01, 0.1, grid=ngrid, split=(z, z), config=CFG)
    assert rep.E == 0.0 and rep.K == 0.0
    assert all(v == 0.0 for v in rep.parts.values())


def test_energy_is_quadratic(ngrid, rng):
    U = [_random_field(ngrid, rng).coeffs for _ in range(2)]
    split = (_random_field(ngrid, rng).coeffs, _random_field(ngrid, rng).coeffs)
    one = energy_report(U, 0.01, 0.2, grid=ngrid, split=split, config=CFG)
    two = energy_report([2 * u for u in U], 0.01, 0.2, grid=ngrid, split=tuple(2 * s for s in split), config=CFG)
    for key, val in one.parts.items():
        assert two.parts[key] == pytest.approx(4 * val, rel=1e-10)
    assert two.E == pytest.approx(4 * one.E, rel=1e-10)


def test_energy_needs_split(ngrid):
    z = np.zeros(ngrid.coeff_shape, dtype=complex)
    with pytest.raises(MissingSplit):
        energy_report([z, z], 0.0, 0.1, grid=ngrid)
    rep = energy_report([z, z], 0.0, 0.1, grid=ngrid, include_w=False)
    assert rep.E_w == 0.0


def test_energy_bad_order(ngrid):
    z = np.zeros(ngrid.coeff_shape, dtype=complex)
    with pytest.raises(ValueError):
        energy_report([z, z], 0.0, 0.1, grid=ngrid, order=8, include_w=False)
