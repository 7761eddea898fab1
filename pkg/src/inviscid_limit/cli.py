"""Command-line interface: ``inviscid-limit {study,residuals,energies,rates}``.

Exit codes: 0 success, 2 configuration error, 3 stage refusal, 4 failed
acceptance check.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, StageRefusal
from .study import StudyConfig, acceptance_checks, fit_rate, run_study

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_ACCEPT = 0, 2, 3, 4


def _config(args) -> StudyConfig:
    cfg = StudyConfig.from_file(args.config) if args.config else StudyConfig()
    updates = {}
    for name in ("T", "dt", "output", "delta", "order", "seed", "residual_stride", "energy_stride"):
        val = getattr(args, name, None)
        if val is not None:
            updates[name] = val
    if args.eps:
        updates["eps"] = list(args.eps)
    if args.no_split:
        updates["split"] = False
    if args.no_closed_form:
        updates["closed_form_check"] = False
    grid = {k: getattr(args, k) for k in ("nx", "ny") if getattr(args, k, None) is not None}
    if getattr(args, "Ly", None) is not None:
        grid["L"] = args.Ly
    if grid:
        updates["grid"] = replace(cfg.grid, **grid)
    return replace(cfg, **updates).validate()


def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--eps", type=float, nargs="+", help="descending eps values")
    p.add_argument("--T", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--output")
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--Ly", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--order", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--residual-stride", dest="residual_stride", type=int)
    p.add_argument("--energy-stride", dest="energy_stride", type=int)
    p.add_argument("--no-split", action="store_true", help="skip the vorticity split and energies")
    p.add_argument("--no-closed-form", action="store_true", help="skip the closed-form residual check")


def _print_checks(checks):
    ok = True
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
        ok &= c.passed
    return ok


def cmd_study(args):
    report = run_study(_config(args))
    for r in report.rates:
        print(f"rate {r.name}: {r.slope:.4f} (fit residual {r.residual:.2e})")
    ok = _print_checks(acceptance_checks(report))
    return EXIT_OK if ok or not args.check else EXIT_ACCEPT


def cmd_residuals(args):
    cfg = replace(_config(args), split=False)
    report = run_study(cfg)
    ok = _print_checks([c for c in acceptance_checks(report) if c.name in ("residual_rate", "invariants")])
    return EXIT_OK if ok or not args.check else EXIT_ACCEPT


def cmd_energies(args):
    cfg = _config(args)
    if not cfg.split:
        raise ConfigError("energies need the vorticity split")
    report = run_study(cfg)
    for eps, b in sorted(report.energy_bounds().items(), reverse=True):
        print(f"eps={eps:g}: sup E/eps^2 = {b:.4e}")
    ok = _print_checks([c for c in acceptance_checks(report) if c.name in ("energy_trend", "vorticity_split")])
    return EXIT_OK if ok or not args.check else EXIT_ACCEPT


def cmd_rates(args):
    path = Path(args.directory) / "error_sup.csv"
    try:
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path} holds no rows")
    out = {}
    for key in [k for k in rows[0] if k != "eps"]:
        fit = fit_rate([(float(r["eps"]), float(r[key])) for r in rows], key)
        out[key] = {"slope": fit.slope, "fit_residual": fit.residual}
        print(f"{key}: slope {fit.slope:.4f} (fit residual {fit.residual:.2e})")
    if args.json:
        print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="inviscid-limit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (
        ("study", cmd_study, "full pipeline with error, residual and energy reports"),
        ("residuals", cmd_residuals, "residual rates and structural invariants only"),
        ("energies", cmd_energies, "vorticity split and energy monitoring"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        p.add_argument("--check", action="store_true", help="exit 4 if a check fails")
        p.set_defaults(func=fn)
    p = sub.add_parser("rates", help="fit rates from an existing study directory")
    p.add_argument("directory")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_rates)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageRefusal as exc:
        print(f"stage refusal: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
