import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import small_config
from inviscid_limit.cli import EXIT_ACCEPT, EXIT_CONFIG, EXIT_OK, main
from inviscid_limit.errors import ConfigError
from inviscid_limit.study import (
    GridConfig,
    StudyConfig,
    StudyReport,
    _sha256,
    emit_plots,
    fit_rate,
    run_study,
    with_output,
)

CSVS = ("errors.csv", "error_sup.csv", "residuals.csv", "energies.csv", "split.csv", "invariants.csv", "rates.csv")


@pytest.fixture(scope="module")
def study_cfg():
    return small_config(T=0.1, split=True)


@pytest.fixture(scope="module")
def study_runs(study_cfg, tmp_path_factory):
    first = run_study(with_output(study_cfg, tmp_path_factory.mktemp("first")))
    second = run_study(with_output(study_cfg, tmp_path_factory.mktemp("second")))
    return first, second


# ----------------------------------------------------------------------
# config


@pytest.mark.parametrize(
    "overrides",
    [
        dict(eps=[]),
        dict(eps=[0.05, 0.1]),
        dict(eps=[0.1, 0.1, 0.05]),
        dict(eps=[0.8]),
        dict(T=0.0123),
        dict(layer=GridConfig(nx=16, ny=128, L=12.0, beta=1.5, box=8 * np.pi)),
        dict(initial={"A": 1.0, "a": 0.5}),
        dict(split=True, T=0.05),
    ],
)
def test_config_errors(overrides):
    with pytest.raises(ConfigError):
        small_config(**overrides).validate()


def test_config_roundtrip_and_digest(tmp_path):
    cfg = small_config()
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = StudyConfig.from_file(path)
    assert back.digest() == cfg.digest()
    assert with_output(cfg, "elsewhere").digest() == cfg.digest()
    with pytest.raises(ConfigError):
        StudyConfig.from_dict({"bogus": 1})


def test_default_config_is_valid():
    cfg = StudyConfig().validate()
    assert cfg.eps == [0.1, 0.05, 0.025] and cfg.T == 0.25


# ----------------------------------------------------------------------
# rate fits


def test_fit_rate_exact_powers():
    eps = [0.1, 0.05, 0.025, 0.0125]
    assert abs(fit_rate([(e, e) for e in eps]).slope - 1.0) <= 1e-12
    assert abs(fit_rate([(e, 3 * e**2) for e in eps]).slope - 2.0) <= 1e-12
    assert fit_rate([(e, e**2) for e in eps]).residual <= 1e-12


def test_fit_rate_noisy():
    rng = np.random.default_rng(7)
    eps = np.geomspace(0.1, 0.0125, 4)
    for _ in range(50):
        fit = fit_rate([(e, e**2 * (1 + 0.01 * rng.normal())) for e in eps])
        assert 1.9 <= fit.slope <= 2.1
        assert fit.residual > 0


def test_fit_rate_errors():
    with pytest.raises(ValueError):
        fit_rate([(0.1, 1.0), (0.05, 0.5)])
    with pytest.raises(ValueError):
        fit_rate([(0.1, 1.0), (0.05, 0.0), (0.025, 0.1)])


# ----------------------------------------------------------------------
# plots


def test_emit_plots_empty_bundle(tmp_path):
    path = emit_plots(StudyReport(small_config()), tmp_path)
    text = path.read_text()
    compile(text, str(path), "exec")
    assert "savefig" not in text


def test_emit_plots_one_sweep(study_runs):
    first, _ = study_runs
    text = first.files["plots.py"].read_text()
    compile(text, "plots.py", "exec")
    assert text.count("errors_vs_eps.png") == 1
    assert text.count("energy_vs_t.png") == 1


def test_emit_plots_identical_on_rerun(study_runs):
    first, second = study_runs
    assert first.files["plots.py"].read_bytes() == second.files["plots.py"].read_bytes()


# ----------------------------------------------------------------------
# pipeline


def test_study_produces_reports(study_runs, study_cfg):
    first, _ = study_runs
    for name in CSVS:
        assert first.files[name].exists()
    assert {r.name for r in first.rates} >= {"errL2_u", "errLinf_u", "residual_L2"}
    assert set(first.errors) == set(study_cfg.eps)
    assert all(v <= tol for v, tol in first.invariants.values())


def test_study_determinism(study_runs):
    first, second = study_runs
    for name in CSVS:
        assert first.files[name].read_bytes() == second.files[name].read_bytes(), name


def test_manifest_complete(study_runs):
    first, _ = study_runs
    out = first.files["manifest.json"].parent
    manifest = json.loads(first.files["manifest.json"].read_text())
    listed = {e["path"]: e["sha256"] for e in manifest["files"]}
    produced = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"}
    assert set(listed) == produced
    for rel, digest in listed.items():
        assert _sha256(out / rel) == digest
    assert manifest["digest"] == first.config.digest()


# ----------------------------------------------------------------------
# command line


def test_cli_config_error(capsys):
    assert main(["study", "--eps", "0.05", "0.1"]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_cli_missing_config_file(tmp_path):
    assert main(["study", "--config", str(tmp_path / "none.json")]) == EXIT_CONFIG


def test_cli_rates(study_runs, capsys):
    first, _ = study_runs
    out = first.files["error_sup.csv"].parent
    assert main(["rates", str(out), "--json"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    fits = json.loads(lines[-1])
    assert fits["errL2_u"]["slope"] == pytest.approx(first.rate("errL2_u").slope, rel=1e-9)


def test_cli_rates_missing_directory(tmp_path):
    assert main(["rates", str(tmp_path)]) == EXIT_CONFIG


def test_cli_energies_need_split():
    assert main(["energies", "--no-split"]) == EXIT_CONFIG


def test_cli_residuals_exit_codes(tmp_path, capsys):
    cfg = small_config(eps=[0.1, 0.05, 0.025], output=str(tmp_path / "out"))
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert main(["residuals", "--config", str(path)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "residual_rate" in text and "invariants" in text
    # the coarse grid misses the 1e-6 closed-form gap at the smallest eps
    assert main(["residuals", "--config", str(path), "--check"]) == EXIT_ACCEPT


def test_cli_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "inviscid_limit.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("study", "residuals", "energies", "rates"):
        assert sub in res.stdout
