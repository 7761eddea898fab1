import numpy as np
import pytest
import sympy as sp

from inviscid_limit.errors import CFLViolation, ResolutionError
from inviscid_limit.euler import InitialDataSpec
from inviscid_limit.fields import to_coeffs, to_physical
from inviscid_limit.grid import Grid
from inviscid_limit.ns import (
    NSState,
    check_resolution,
    energy_audit,
    kinetic_energy,
    run_error_experiment,
    run_ns,
    step_ns,
)

SWEEP = (0.1, 0.05, 0.025)


@pytest.fixture(scope="module")
def mgrid():
    return Grid(d=1, nx=16, box=2 * np.pi, ny=192, Ly=6.0, stretching="tanh", beta=1.5)


def _manufactured():
    x, y, t, e = sp.symbols("x y t e", real=True)
    # psi(0) = dy psi(0) = 0, so the flow is no-slip
    psi = (1 + t) * sp.sin(x) * y**2 * sp.exp(-(y**2))
    u, v = -sp.diff(psi, y), sp.diff(psi, x)
    w = sp.diff(u, y) - sp.diff(v, x)
    lap = sp.diff(w, x, 2) + sp.diff(w, y, 2)
    F = sp.diff(w, t) + u * sp.diff(w, x) + v * sp.diff(w, y) - e**2 * lap
    return sp.lambdify((x, y, t), w, "numpy"), sp.lambdify((x, y, t, e), F, "numpy")


def test_zero_data_stays_zero(mgrid):
    st, traj = run_ns(NSState.zeros(mgrid, 0.3), 0.05, 0.01)
    assert np.abs(st.w).max() == 0
    assert np.abs(traj.data["w"]).max() == 0


def test_manufactured_solution(mgrid):
    fw, fF = _manufactured()
    X, Y = np.meshgrid(mgrid.x, mgrid.y, indexing="ij")
    eps = 0.3
    st = NSState(0.0, to_coeffs(mgrid, fw(X, Y, 0.0)), mgrid, eps)
    st, _ = run_ns(st, 0.2, 0.005, forcing=lambda s: to_coeffs(mgrid, fF(X, Y, s, eps)))
    ex = fw(X, Y, st.t)
    assert np.abs(to_physical(mgrid, st.w) - ex).max() / np.abs(ex).max() <= 1e-4
    assert st.wall_defect() <= 1e-10


@pytest.fixture(scope="module")
def viscous_run():
    g = Grid(d=1, nx=32, box=2 * np.pi, ny=256, Ly=8.0, stretching="tanh", beta=2.0)
    st = NSState.from_initial(InitialDataSpec(A=2.0, a=2.0, b=5.0), g, 0.1)
    energies = []
    st, _ = run_ns(st, 0.05, 0.005, callback=lambda s: energies.append(kinetic_energy(s)))
    return st, np.array(energies)


def test_no_slip_and_divergence(viscous_run):
    st, _ = viscous_run
    scale = max(np.abs(c.coeffs).max() for c in st.velocity.components)
    assert st.wall_defect() <= 1e-10 * scale
    assert st.divergence() <= 1e-8 * scale * st.grid.nx


def test_energy_decays_without_forcing(viscous_run):
    _, energies = viscous_run
    assert np.all(np.diff(energies) <= 0)


def test_energy_budget_balances(viscous_run):
    st, _ = viscous_run
    audit = energy_audit(st)
    assert audit["dissipation"] > 0
    assert audit["relative"] <= 1e-6


def test_resolution_refusal():
    g = Grid(d=1, nx=16, box=2 * np.pi, ny=64, Ly=8.0, stretching="tanh", beta=1.0)
    with pytest.raises(ResolutionError):
        check_resolution(g, 0.01)
    with pytest.raises(ResolutionError):
        step_ns(NSState.zeros(g, 0.01), 0.01)


def test_cfl_refusal(mgrid):
    X, Y = np.meshgrid(mgrid.x, mgrid.y, indexing="ij")
    w = 500 * np.sin(X) * np.exp(-((Y - 2) ** 2))
    with pytest.raises(CFLViolation):
        step_ns(NSState(0.0, to_coeffs(mgrid, w), mgrid, 0.3), 0.1)


@pytest.fixture(scope="module")
def errors(small_exp):
    return {eps: run_error_experiment(small_exp, eps, 0.005).sup() for eps in SWEEP}


def test_error_experiment_is_finite_and_shrinks(errors):
    for eps in SWEEP:
        assert all(np.isfinite(v) and v > 0 for v in errors[eps].values())
    for key in ("errL2_u", "errL2_v", "errLinf_u", "errLinf_v"):
        vals = [errors[eps][key] for eps in SWEEP]
        assert vals[0] > vals[1] > vals[2]


def test_unweighted_layer_velocity_is_worse(errors):
    # the layer v enters with weight eps; weight one must fit worse as eps shrinks
    ratio = [errors[eps]["errL2_v_unweighted"] / errors[eps]["errL2_v"] for eps in SWEEP]
    assert all(r >= 1 for r in ratio)
    assert ratio[0] < ratio[1] < ratio[2]
