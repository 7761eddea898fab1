import numpy as np
import pytest

from conftest import small_config
from inviscid_limit.errors import ResolutionError, SplitDefect
from inviscid_limit.split import evolve_vorticity_split
from inviscid_limit.study import build_expansion


@pytest.fixture(scope="module")
def split_run(small_exp):
    return evolve_vorticity_split(small_exp, 0.1, 0.05, 0.005, audit_from=0.03)


def test_zero_error_gives_zero_split():
    exp = build_expansion(small_config(initial={"A": 0.0, "k0": 1, "a": 2.0, "b": 7.5, "power": 8}))
    out = evolve_vorticity_split(exp, 0.1, 0.02, 0.005)
    assert np.abs(out.w_e).max() == 0 and np.abs(out.w_p).max() == 0
    assert out.relative_defect == 0.0


def test_split_reconstructs_error_vorticity(split_run):
    # the desk grid meets 1e-4 (acceptance suite); this coarse grid is held to 1e-3
    assert split_run.relative_defect <= 1e-3
    assert split_run.scale[-1] > 0


def test_split_defect_settles_after_start(split_run):
    sel = split_run.audited
    assert split_run.defect[sel].max() < split_run.defect[~sel][1:].max()


def test_third_component_wall_trace(split_run):
    assert abs(split_run.third_component_wall_trace()) <= 1e-7


def test_split_defect_report(small_exp):
    with pytest.raises(SplitDefect):
        evolve_vorticity_split(small_exp, 0.1, 0.01, 0.005, tol=1e-12, raise_on_defect=True)


def test_split_requires_resolution(small_exp):
    with pytest.raises(ResolutionError):
        evolve_vorticity_split(small_exp, 0.001, 0.01, 0.005)


def test_split_rejects_partial_steps(small_exp):
    with pytest.raises(ValueError):
        evolve_vorticity_split(small_exp, 0.1, 0.0123, 0.005)
