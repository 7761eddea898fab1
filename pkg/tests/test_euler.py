import numpy as np
import pytest

from inviscid_limit.elliptic import biot_savart, curl, divergence
from inviscid_limit.errors import CFLViolation, SupportErosion, WindowError
from inviscid_limit.euler import (
    EulerState,
    InitialDataSpec,
    acceleration,
    bump,
    kinetic_energy,
    make_initial_data,
    recover_pressure,
    run_euler,
    solve_linearized_euler,
    step_euler,
    vorticity_tendency,
)
from inviscid_limit.fields import SpectralField, dx_coeffs, dy_coeffs, to_physical
from inviscid_limit.grid import Grid


@pytest.fixture(scope="module")
def egrid():
    return Grid(d=1, nx=32, box=2 * np.pi, ny=160, Ly=8.0, stretching="tanh", beta=1.5)


@pytest.fixture(scope="module")
def fine():
    return Grid(d=1, nx=32, box=2 * np.pi, ny=384, Ly=8.0, stretching="tanh", beta=1.0)


@pytest.fixture(scope="module")
def spec():
    return InitialDataSpec(A=1.0, k0=1, a=2.0, b=4.0, power=8)


@pytest.fixture(scope="module")
def short_run(egrid, spec):
    return run_euler(make_initial_data(spec, egrid), 0.1, 0.01)


def _phys(vel):
    return [c.physical() for c in vel.components]


def test_zero_amplitude_gives_zero_state(egrid):
    st = make_initial_data(InitialDataSpec(A=0.0), egrid)
    assert all(np.abs(c.coeffs).max() == 0 for c in st.velocity.components)
    st1 = step_euler(st, 0.01)
    assert np.abs(st1.w).max() == 0


def test_initial_data_construction(fine, spec):
    st = make_initial_data(spec, fine)
    div = divergence(st.velocity).coeffs
    assert np.abs(div).max() <= 1e-12
    w = st.vorticity[0].physical()
    assert np.abs(w[:, fine.y < 2.0]).max() == 0.0
    assert np.abs(st.velocity.horizontal[0].coeffs[:, 0]).max() < 1e-8
    assert np.abs(st.velocity.vertical.coeffs[:, 0]).max() < 1e-12


def test_initial_curl_matches_stream_function(fine, spec):
    st = make_initial_data(spec, fine)
    X, Y = np.meshgrid(fine.x, fine.y, indexing="ij")
    lap_psi = np.sin(X) * (bump(Y, 2, 4, 8, 2) - bump(Y, 2, 4, 8))
    w = curl(st.velocity).physical()
    assert np.abs(w - lap_psi).max() / np.abs(lap_psi).max() < 1e-6
    u_ex = np.sin(X) * bump(Y, 2, 4, 8, 1)
    assert np.abs(st.velocity.horizontal[0].physical() - u_ex).max() / np.abs(u_ex).max() < 1e-6


def test_support_starts_two_units_from_wall():
    with pytest.raises(ValueError):
        InitialDataSpec(a=1.0)


def test_energy_conservation(spec):
    g = Grid(d=1, nx=32, box=2 * np.pi, ny=256, Ly=8.0, stretching="tanh", beta=1.0)
    st = make_initial_data(spec, g)
    e0 = kinetic_energy(st.velocity)
    for _ in range(100):
        st = step_euler(st, 0.005)
    assert abs(kinetic_energy(st.velocity) - e0) / e0 < 1e-6


def test_vorticity_extrema_transported(short_run, egrid):
    w0 = to_physical(egrid, short_run.data["w"][0][0])
    w1 = to_physical(egrid, short_run.data["w"][-1][0])
    assert abs(w1.max() - w0.max()) / w0.max() < 1e-4
    assert abs(w1.min() - w0.min()) / abs(w0.min()) < 1e-4


def test_time_order(spec):
    g = Grid(d=1, nx=16, box=2 * np.pi, ny=96, Ly=8.0, stretching="tanh", beta=1.5)
    st0 = make_initial_data(spec, g)
    finals = []
    for n in (10, 20, 40):
        st = st0
        for _ in range(n):
            st = step_euler(st, 0.2 / n)
        finals.append(st.w)
    # successive differences shrink by 2^p
    e1 = np.abs(finals[0] - finals[1]).max()
    e2 = np.abs(finals[1] - finals[2]).max()
    assert np.log2(e1 / e2) >= 2.8


def test_cfl_violation(egrid, spec):
    with pytest.raises(CFLViolation):
        step_euler(make_initial_data(InitialDataSpec(A=50.0), egrid), 1.0)


def test_support_erosion(egrid):
    X, Y = np.meshgrid(egrid.x, egrid.y, indexing="ij")
    w = np.sin(X) * np.exp(-20 * (Y - 0.5) ** 2)
    st = EulerState.from_vorticity(egrid, SpectralField.from_physical(egrid, w).coeffs)
    with pytest.raises(SupportErosion):
        step_euler(st, 0.001)


def test_pressure_of_zero_velocity(egrid):
    st = make_initial_data(InitialDataSpec(A=0.0), egrid)
    assert np.abs(recover_pressure(st).coeffs).max() == 0


def test_pressure_of_steady_shear(egrid):
    w = np.zeros(egrid.phys_shape) + (bump(egrid.y, 2, 4, 8, 1))[None, :]
    st = EulerState.from_vorticity(egrid, SpectralField.from_physical(egrid, w).coeffs)
    p = recover_pressure(st).physical()
    assert np.abs(p).max() < 1e-10


def test_momentum_residual_after_pressure(fine, spec):
    egrid = fine
    st = make_initial_data(spec, egrid)
    wt = vorticity_tendency(egrid, st.w, _phys(st.velocity))
    vel_t = biot_savart(SpectralField(egrid, wt[0]), check=False)
    p = recover_pressure(st, wt)
    acc = acceleration(egrid, st.velocity, vel_t)
    res_u = acc[0] + dx_coeffs(egrid, p.coeffs)
    res_v = acc[1] + dy_coeffs(egrid, p.coeffs)
    div = dx_coeffs(egrid, res_u) + dy_coeffs(egrid, res_v)
    scale = max(np.abs(a).max() for a in acc)
    assert np.abs(div[:, 5:-5]).max() <= 1e-6 * scale


def test_trajectory_support_and_divergence(short_run, egrid):
    for n in range(short_run.times.size):
        w = to_physical(egrid, short_run.data["w"][n][0])
        assert np.abs(w[:, egrid.y < 1.0]).max() <= 1e-10 * np.abs(w).max()
    st = short_run.state(short_run.times[-1], with_pressure=False)
    scale = max(np.abs(c.coeffs).max() for c in st.velocity.components)
    assert np.abs(divergence(st.velocity).coeffs).max() <= 1e-8 * scale * egrid.nx


def _zero_bc(grid):
    z = np.zeros(grid.mode_shape, dtype=complex)
    return lambda t: (z, z)


def test_linearized_zero_background_and_data(egrid):
    bg = run_euler(make_initial_data(InitialDataSpec(A=0.0), egrid), 0.02, 0.01)
    out = solve_linearized_euler(bg, _zero_bc(egrid))
    assert np.abs(out.data["w"]).max() == 0


def test_linearized_zero_data_nonzero_background(short_run, egrid):
    out = solve_linearized_euler(short_run, _zero_bc(egrid))
    assert np.abs(out.data["w"]).max() == 0


def test_linearized_wall_trace(short_run, egrid):
    base = np.zeros(egrid.mode_shape, dtype=complex)
    base[2] = 0.5j

    def bc(t):
        return base * t, base

    out = solve_linearized_euler(short_run, bc)
    for n, t in enumerate(out.times):
        assert np.abs(out.data["V"][n] - base * t).max() <= 1e-6 * max(abs(t), 1e-300) + 1e-14
    assert np.abs(out.data["w"][-1]).max() > 0


def test_linearized_window_mismatch(short_run, egrid):
    with pytest.raises(WindowError):
        solve_linearized_euler(short_run, _zero_bc(egrid), T=0.5, dt=0.01)
