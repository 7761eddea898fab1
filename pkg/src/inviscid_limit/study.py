"""End-to-end studies: expansion build, viscous sweep, residuals, energies, rates.

Every stage is deterministic.  Expansion trajectories are cached under
``<output>/cache/<digest>``, keyed by the parameters that determine them,
so an epsilon sweep or a rerun reuses one build.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .assembly import Expansion, assemble, residual_split_report
from .errors import ConfigError, InviscidLimitError, StageRefusal
from .euler import EulerTrajectory, InitialDataSpec, make_initial_data, run_euler, solve_linearized_euler
from .grid import Grid
from .norms import WeightConfig, energy_report
from .ns import run_error_experiment
from .prandtl import WallTraces, recover_vp1, run_prandtl, solve_linearized_prandtl
from .split import evolve_vorticity_split
from .timestepping import Trajectory

log = logging.getLogger(__name__)

FLOAT_FMT = "{:.10e}"
SPLIT_WINDOW = 0.1


@dataclass(frozen=True)
class GridConfig:
    """Grid parameters (see :class:`Grid`)."""

    nx: int = 64
    ny: int = 384
    L: float = 8.0
    box: float = 8 * np.pi
    stretching: str = "tanh"
    beta: float = 2.0

    def build(self, d=1) -> Grid:
        return Grid(d=d, nx=self.nx, ny=self.ny, Ly=self.L, box=self.box, stretching=self.stretching, beta=self.beta)


def _default_layer():
    return GridConfig(ny=192, L=12.0, beta=1.5)


def _default_initial():
    return {"A": 4.0, "k0": 1, "a": 2.0, "b": 7.5, "power": 8}


@dataclass
class StudyConfig:
    """Study parameters.

    Attributes
    ----------
    grid, layer : GridConfig
        Outer and layer columns.
    initial : dict
        :class:`InitialDataSpec` fields.
    eps : list of float
        Distinct, descending, in ``(0, 1/2]``.
    T, dt : float
        Horizon and step; ``T`` must be a multiple of ``dt``.
    output : str
        Output directory.
    split : bool
        Run the vorticity split (needed for the vorticity energies).
    closed_form_check : bool
        Attribute residuals to their closed forms.
    residual_stride, energy_stride : int
        Sample every n-th step for residuals and energies.
    delta : float
        Weight parameter; ``lam`` is four times the initial advection scale.
    order : int
        Surrogate energy order.
    seed : int
        Seed for randomized checks.
    """

    grid: GridConfig = field(default_factory=GridConfig)
    layer: GridConfig = field(default_factory=_default_layer)
    initial: dict = field(default_factory=_default_initial)
    eps: list = field(default_factory=lambda: [0.1, 0.05, 0.025])
    T: float = 0.25
    dt: float = 0.0025
    output: str = "study_out"
    split: bool = True
    closed_form_check: bool = True
    residual_stride: int = 10
    energy_stride: int = 5
    delta: float = 0.1
    order: int = 3
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = GridConfig(**self.grid)
        if isinstance(self.layer, dict):
            self.layer = GridConfig(**self.layer)
        self.eps = [float(e) for e in self.eps]
        self.initial = dict(self.initial)

    def validate(self):
        """Raise :class:`ConfigError` for inconsistent parameters."""
        if not self.eps:
            raise ConfigError("the eps list is empty")
        if any(not 0 < e <= 0.5 for e in self.eps):
            raise ConfigError("eps values must lie in (0, 1/2]")
        if len(set(self.eps)) != len(self.eps) or self.eps != sorted(self.eps, reverse=True):
            raise ConfigError("eps values must be distinct and descending")
        if self.T <= 0 or self.dt <= 0:
            raise ConfigError("T and dt must be positive")
        n = round(self.T / self.dt)
        if not np.isclose(n * self.dt, self.T, rtol=1e-10):
            raise ConfigError("T must be a multiple of dt")
        if self.residual_stride < 1 or self.energy_stride < 1:
            raise ConfigError("strides must be positive")
        if self.layer.nx != self.grid.nx or not np.isclose(self.layer.box, self.grid.box):
            raise ConfigError("the layer grid must share nx and box with the outer grid")
        if self.split and self.T < SPLIT_WINDOW - 1e-12:
            raise ConfigError(f"the split audit needs T >= {SPLIT_WINDOW}")
        try:
            InitialDataSpec(**self.initial)
            self.grid.build()
            self.layer.build()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path):
        """Load a JSON config file."""
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def expansion_digest(self):
        """Digest of the parameters that determine the expansion."""
        keys = {k: self.to_dict()[k] for k in ("grid", "layer", "initial", "T", "dt")}
        return _digest(keys)

    def digest(self):
        data = self.to_dict()
        data.pop("output")
        return _digest(data)


def _digest(obj):
    text = json.dumps(obj, sort_keys=True, default=float)
    return hashlib.sha256(text.encode()).hexdigest()


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ----------------------------------------------------------------------
# rate fits


@dataclass
class RateFit:
    """Least-squares slope of ``log value`` against ``log eps``."""

    name: str
    pairs: list
    slope: float
    residual: float

    def row(self):
        return (self.name, self.slope, self.residual, len(self.pairs))


def fit_rate(pairs, name="rate") -> RateFit:
    """Fit ``value ~ C eps^slope``.

    Parameters
    ----------
    pairs : sequence of (eps, value)
        At least three pairs with positive entries.

    Returns
    -------
    RateFit
        ``residual`` is the root-mean-square deviation in log space.
    """
    pairs = [(float(e), float(v)) for e, v in pairs]
    if len(pairs) < 3:
        raise ValueError("a rate fit needs at least 3 points")
    arr = np.array(pairs)
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ValueError("rate fits need positive finite values")
    x, y = np.log(arr[:, 0]), np.log(arr[:, 1])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return RateFit(name, pairs, float(coef[0]), float(np.sqrt(np.mean(res**2))))


# ----------------------------------------------------------------------
# pipeline


def _stage(name, hint=""):
    """Decorator turning failures into :class:`StageRefusal`."""

    def wrap(fn):
        def run(*args, **kwargs):
            log.info("stage %s", name)
            try:
                return fn(*args, **kwargs)
            except StageRefusal:
                raise
            except (InviscidLimitError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
                raise StageRefusal(name, exc, hint) from exc

        return run

    return wrap


@_stage("euler", "shrink the support or raise ny")
def _build_euler(cfg: StudyConfig, grid):
    st = make_initial_data(InitialDataSpec(**cfg.initial), grid)
    return run_euler(st, cfg.T, cfg.dt)


@_stage("prandtl", "shorten T or refine the layer grid")
def _build_prandtl(cfg, layer, e0):
    return run_prandtl(layer, WallTraces.from_trajectory(e0), cfg.T, cfg.dt, tilde=True)


@_stage("linear-euler", "reduce dt")
def _build_linear_euler(e0, p0):
    def boundary(t):
        return -p0.at("v", t)[..., 0], -p0.at("v_t", t)[..., 0]

    return solve_linearized_euler(e0, boundary)


@_stage("linear-prandtl", "refine the layer grid")
def _build_linear_prandtl(e0, p0, e1):
    return solve_linearized_prandtl(p0, WallTraces.from_trajectory(e0), WallTraces.from_trajectory(e1))


def build_expansion(cfg: StudyConfig, cache_root=None) -> Expansion:
    """Build (or load from the cache) the four expansion trajectories."""
    cfg.validate()
    cache = None
    if cache_root is not None:
        cache = Path(cache_root) / cfg.expansion_digest()[:16]
        names = [cache / f"{n}.npz" for n in ("e0", "p0", "e1", "p1")]
        if all(p.exists() for p in names):
            log.info("expansion cache hit %s", cache)
            return Expansion(
                EulerTrajectory.load_npz(names[0]),
                EulerTrajectory.load_npz(names[2]),
                Trajectory.load_npz(names[1]),
                Trajectory.load_npz(names[3]),
            )
    grid, layer = cfg.grid.build(), cfg.layer.build()
    e0 = _build_euler(cfg, grid)
    p0 = _build_prandtl(cfg, layer, e0)
    e1 = _build_linear_euler(e0, p0)
    p1 = _build_linear_prandtl(e0, p0, e1)
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        for name, traj in zip(("e0", "p0", "e1", "p1"), (e0, p0, e1, p1)):
            traj.save_npz(cache / f"{name}.npz")
    return Expansion(e0, e1, p0, p1)


@_stage("invariants")
def structural_invariants(exp: Expansion, eps_list, times):
    """Maxima of the structural defects over the given times.

    Returns
    -------
    dict
        ``name -> (value, tolerance)``.
    """
    e0, e1, p0, p1 = exp.euler0, exp.euler1, exp.prandtl0, exp.prandtl1
    lg = exp.layer_grid
    div = wall = 0.0
    for eps in eps_list:
        for t in times:
            a = assemble(exp, eps, t)
            div = max(div, float(np.abs(a.divergence()).max()))
            wall = max(wall, a.wall_defect())
    compat0 = float(np.abs(p0.data["u"][..., 0] + e0.data["U"]).max())
    compat1 = float(np.abs(p1.data["u"][..., 0] + e1.data["U"]).max())
    rec = 0.0
    for traj in (p0, p1):
        for n in range(traj.times.size):
            v = recover_vp1(lg, traj.data["u"][n], check=False)
            rec = max(rec, float(np.abs(v - traj.data["v"][n]).max()))
    dual = float(np.abs(p0.data["ut"] - (p0.data["u"] + e0.data["U"][..., None])).max())
    return {
        "divergence": (div, 1e-7),
        "wall_identity": (wall, 1e-7),
        "wall_compatibility_0": (compat0, 1e-8),
        "wall_compatibility_1": (compat1, 1e-8),
        "vp_recovery": (rec, 1e-12),
        "dual_formulation": (dual, 1e-6),
    }


@_stage("ns", "raise ny or drop the smallest eps")
def _errors(exp, eps, dt):
    return run_error_experiment(exp, eps, dt)


@_stage("residuals")
def _residuals(exp, eps, times, closed_form):
    rows = []
    for t in times:
        if closed_form:
            rep = residual_split_report(exp, eps, t)
            tot = rep["total"]
            extra = (rep["euler_gap"], rep["layer_gap_h"], rep["layer_gap_v"])
        else:
            from .assembly import residual_by_substitution

            tot = residual_by_substitution(assemble(exp, eps, t)).norms()
            extra = (np.nan, np.nan, np.nan)
        rows.append((float(t), eps, tot["L2_h"], tot["L2_v"], tot["L2"], tot["Linf"]) + tuple(extra))
    return rows


@_stage("split", "shorten the window or refine the grid")
def _split(exp, eps, T, audit_from):
    return evolve_vorticity_split(exp, eps, T, audit_from=audit_from)


@_stage("energies")
def _energies(split, grid, wcfg, order, stride):
    reports = []
    for n in range(0, split.t.size, stride):
        reports.append(
            energy_report(split.U[n], split.t[n], split.eps, grid, (split.w_e[n], split.w_p[n]), wcfg, order)
        )
    return reports


@dataclass
class StudyReport:
    """Everything a study produced."""

    config: StudyConfig
    errors: dict = field(default_factory=dict)
    residuals: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    splits: dict = field(default_factory=dict)
    invariants: dict = field(default_factory=dict)
    rates: list = field(default_factory=list)
    files: dict = field(default_factory=dict)

    def rate(self, name):
        for r in self.rates:
            if r.name == name:
                return r
        raise KeyError(name)

    def energy_bounds(self):
        """``sup_t E(t) / eps^2`` per eps."""
        out = {}
        for r in self.energies:
            out[r.eps] = max(out.get(r.eps, 0.0), r.E / r.eps**2)
        return out

    def energy_ratio(self):
        """Bound at the smallest eps over the bound at the largest."""
        b = self.energy_bounds()
        if len(b) < 2:
            return float("nan")
        keys = sorted(b, reverse=True)
        return b[keys[-1]] / b[keys[0]]


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FMT.format(float(v))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_reports(report: StudyReport, out: Path):
    """Write all CSVs and return their paths."""
    out.mkdir(parents=True, exist_ok=True)
    files = {}

    def emit(name, header, rows):
        p = out / name
        _write_csv(p, header, rows)
        files[name] = p

    err_rows = []
    sup_rows = []
    for eps in report.config.eps:
        if eps not in report.errors:
            continue
        e = report.errors[eps]
        for i in range(e.t.size):
            err_rows.append(
                (e.t[i], eps, e.errL2_u[i], e.errL2_v[i], e.errLinf_u[i], e.errLinf_v[i], e.errL2_v_unweighted[i])
            )
        s = e.sup()
        sup_rows.append((eps,) + tuple(s[k] for k in sorted(s)))
    emit("errors.csv", ["t", "eps", "L2_u", "L2_v", "Linf_u", "Linf_v", "L2_v_unweighted"], err_rows)
    keys = sorted(["errL2_u", "errL2_v", "errLinf_u", "errLinf_v", "errL2_v_unweighted"])
    emit("error_sup.csv", ["eps"] + keys, sup_rows)
    emit(
        "residuals.csv",
        ["t", "eps", "L2_h", "L2_v", "L2", "Linf", "euler_gap", "layer_gap_h", "layer_gap_v"],
        report.residuals,
    )
    emit("energies.csv", ["t", "eps", "E_v", "K_v", "E_w", "K_w", "E", "K", "order"], [r.row() for r in report.energies])
    split_rows = []
    for eps, s in sorted(report.splits.items(), reverse=True):
        for i in range(s.t.size):
            split_rows.append((eps, s.t[i], s.defect[i], s.scale[i], s.wall_e[i], s.wall_p[i], bool(s.audited[i])))
    emit("split.csv", ["eps", "t", "defect", "scale", "wall_e", "wall_p", "audited"], split_rows)
    emit(
        "invariants.csv",
        ["name", "value", "tolerance", "pass"],
        [(k, v, tol, v <= tol) for k, (v, tol) in sorted(report.invariants.items())],
    )
    emit("rates.csv", ["quantity", "slope", "fit_residual", "points"], [r.row() for r in report.rates])
    return files


def write_manifest(report: StudyReport, out: Path):
    """List every produced file with its SHA-256 digest."""
    entries = []
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            entries.append({"path": p.relative_to(out).as_posix(), "sha256": _sha256(p), "bytes": p.stat().st_size})
    manifest = {"config": report.config.to_dict(), "digest": report.config.digest(), "files": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")
    return path


def emit_plots(report: StudyReport, out: Path):
    """Write standalone plotting scripts next to the CSVs.

    The scripts read the CSVs and need matplotlib only when executed.
    """
    out.mkdir(parents=True, exist_ok=True)
    lines = ["import csv", "", "import matplotlib.pyplot as plt", "", ""]
    lines += [
        "def read(name):",
        "    with open(name) as fh:",
        "        return list(csv.DictReader(fh))",
        "",
        "",
    ]
    figures = []
    if report.errors:
        figures.append(
            [
                "rows = read('error_sup.csv')",
                "eps = [float(r['eps']) for r in rows]",
                "fig, ax = plt.subplots()",
                "for key in ('errL2_u', 'errLinf_u', 'errL2_v'):",
                "    ax.loglog(eps, [float(r[key]) for r in rows], 'o-', label=key)",
                "ax.set_xlabel('eps')",
                "ax.legend()",
                "fig.savefig('errors_vs_eps.png', dpi=150)",
            ]
        )
    if report.energies:
        figures.append(
            [
                "rows = read('energies.csv')",
                "fig, ax = plt.subplots()",
                "for e in sorted({r['eps'] for r in rows}, key=float, reverse=True):",
                "    sel = [r for r in rows if r['eps'] == e]",
                "    ax.semilogy([float(r['t']) for r in sel], [float(r['E']) / float(e) ** 2 for r in sel], label=e)",
                "ax.set_xlabel('t')",
                "ax.set_ylabel('E / eps^2')",
                "ax.legend()",
                "fig.savefig('energy_vs_t.png', dpi=150)",
            ]
        )
    for fig in figures:
        lines += fig + [""]
    path = out / "plots.py"
    path.write_text("\n".join(lines).rstrip() + "\n")
    return path


def run_study(config: StudyConfig, write=True) -> StudyReport:
    """Run the full pipeline.

    Raises
    ------
    ConfigError
        For an invalid configuration.
    StageRefusal
        When a stage fails; names the stage and a remedy.
    """
    cfg = config.validate()
    out = Path(cfg.output)
    exp = build_expansion(cfg, out / "cache" if write else None)
    report = StudyReport(cfg)
    grid = exp.outer_grid
    times = exp.times
    res_times = times[:: cfg.residual_stride]
    report.invariants = structural_invariants(exp, cfg.eps, res_times)
    u0 = exp.euler0.state(times[0], with_pressure=False).velocity
    scale = max(float(np.abs(c.physical()).max()) for c in u0.components)
    wcfg = WeightConfig.from_velocity_scale(scale, cfg.delta)
    for eps in cfg.eps:
        log.info("eps=%g", eps)
        report.errors[eps] = _errors(exp, eps, cfg.dt)
        report.residuals += _residuals(exp, eps, res_times, cfg.closed_form_check)
        if cfg.split:
            audit = times[0] + cfg.T - SPLIT_WINDOW
            s = _split(exp, eps, cfg.T, audit)
            report.splits[eps] = s
            report.energies += _energies(s, grid, wcfg, cfg.order, cfg.energy_stride)
    if len(cfg.eps) >= 3:
        sups = {eps: e.sup() for eps, e in report.errors.items()}
        for key in ("errL2_u", "errLinf_u", "errL2_v", "errLinf_v", "errL2_v_unweighted"):
            report.rates.append(fit_rate([(e, s[key]) for e, s in sups.items()], key))
        res = {}
        for row in report.residuals:
            res[row[1]] = max(res.get(row[1], 0.0), row[4])
        report.rates.append(fit_rate(sorted(res.items()), "residual_L2"))
    if write:
        report.files = write_reports(report, out)
        report.files["plots.py"] = emit_plots(report, out)
        report.files["manifest.json"] = write_manifest(report, out)
    return report


@dataclass
class Check:
    """Outcome of one report-level acceptance check."""

    name: str
    passed: bool
    detail: str


def acceptance_checks(report: StudyReport):
    """Report-level checks: rates, residual gaps, invariants, split, energies."""
    out = []
    if report.rates:
        l2, linf = report.rate("errL2_u"), report.rate("errLinf_u")
        out.append(
            Check(
                "error_rate",
                0.7 <= l2.slope <= 1.3 and 0.6 <= linf.slope <= 1.4,
                f"L2 slope {l2.slope:.3f} in [0.7, 1.3], Linf slope {linf.slope:.3f} in [0.6, 1.4]",
            )
        )
        r = report.rate("residual_L2")
        gap = max((row[6] for row in report.residuals if np.isfinite(row[6])), default=np.nan)
        out.append(
            Check(
                "residual_rate",
                1.6 <= r.slope <= 2.4 and gap <= 1e-6,
                f"slope {r.slope:.3f} in [1.6, 2.4], outer closed-form gap {gap:.2e} <= 1e-6",
            )
        )
    if report.invariants:
        bad = [k for k, (v, tol) in report.invariants.items() if not v <= tol]
        out.append(Check("invariants", not bad, "all within tolerance" if not bad else f"failed: {bad}"))
    if report.splits:
        eps = max(report.splits)
        s = report.splits[eps]
        out.append(
            Check(
                "vorticity_split",
                s.relative_defect <= 1e-4 and s.third_component_wall_trace() <= 1e-7,
                f"eps={eps}: relative defect {s.relative_defect:.2e} <= 1e-4",
            )
        )
    if report.energies:
        ratio = report.energy_ratio()
        out.append(Check("energy_trend", ratio <= 10, f"sup E/eps^2 ratio across sweep {ratio:.3f} <= 10"))
    return out


def with_output(config: StudyConfig, output) -> StudyConfig:
    """Copy of ``config`` writing to ``output``."""
    return replace(config, output=str(output))


__all__ = [
    "GridConfig",
    "RateFit",
    "StudyConfig",
    "StudyReport",
    "acceptance_checks",
    "build_expansion",
    "emit_plots",
    "fit_rate",
    "run_study",
    "structural_invariants",
    "with_output",
    "write_manifest",
    "write_reports",
]
