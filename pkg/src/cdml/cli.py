"""Command-line front end: ``cdml estimate | simulate | diagnose``.

Exit codes: 0 success, 2 input or configuration error, 3 numerical failure
(message carries the pipeline stage), 4 internal invariant breach.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .config import RunConfig, SimulateConfig, format_validation_error, load_toml
from .core import dataset_from_columns, read_csv_columns
from .errors import CdmlError, InvalidArgumentError, InvariantError, StageError
from .io import write_curve_csv, write_report, write_rows_csv

__all__ = ["main", "run_estimate", "run_simulate", "run_diagnose", "EXIT_OK", "EXIT_INPUT", "EXIT_NUMERIC", "EXIT_INVARIANT"]

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_INVARIANT = 4

ALL_CHECKS = ("equivalence", "orthogonality", "rates", "coverage")


# ------------------------------------------------------------ loading


def _validate(model, raw, source):
    try:
        return model.model_validate(raw)
    except ValidationError as exc:
        raise InvalidArgumentError(f"{source}: {format_validation_error(exc)}") from None


def load_run_config(path) -> RunConfig:
    return _validate(RunConfig, load_toml(path), path)


def load_dataset(cfg: RunConfig, base: Path):
    data_path = Path(cfg.data.path)
    if not data_path.is_absolute():
        data_path = base / data_path
    cols = read_csv_columns(data_path)
    d = cfg.data
    return dataset_from_columns(cols, d.y, d.d, d.z, d.v, d.v_transform, aux=cfg.functional.aux_columns())


def _check_curve(report):
    curve = report.curve
    S = report.outcomes.s_hat
    if not np.all(np.isfinite(S)):
        raise InvariantError("debiased outcomes contain non-finite values")
    if len(curve) != curve.grid.shape[0]:
        raise InvariantError("curve length differs from the grid")
    ok = curve.valid
    if not np.all(np.isfinite(curve.theta_hat[ok])) or not np.all(np.isfinite(curve.se[ok])):
        raise InvariantError("unflagged grid points carry non-finite estimates")
    if np.any(np.isfinite(curve.theta_hat[~ok])):
        raise InvariantError("flagged grid points carry finite estimates")


# ------------------------------------------------------------ commands


def run_estimate(config_path, output=None, seed=None, out=None) -> dict:
    out = out or sys.stdout
    from .engine import estimate_theta

    cfg = load_run_config(config_path)
    data = load_dataset(cfg, Path(config_path).resolve().parent)
    m = cfg.functional.build(data.z_names)
    est = cfg.estimate_config()
    report = estimate_theta(data, m, est, seed)
    _check_curve(report)
    outdir = Path(output or cfg.output)
    payload = report.to_dict()
    payload["data"] = {"path": cfg.data.path, "columns": cfg.data.model_dump()}
    write_curve_csv(outdir / "curve.csv", report.curve)
    write_report(outdir / "report.json", payload)
    c = report.curve
    print(f"cdml {__version__} estimate: n = {data.n}, functional = {m.kind}, folds = {est.crossfit.folds}", file=out)
    print(f"bandwidth h = {report.bandwidth.h:.6g} ({report.bandwidth.source}), kernel = {c.kernel}", file=out)
    print(f"{'v':>12} {'theta_hat':>12} {'se':>10} {'ess':>8}  flag", file=out)
    for j in range(len(c)):
        v = ",".join(f"{g:.4g}" for g in c.grid[j])
        print(f"{v:>12} {c.theta_hat[j]:12.6g} {c.se[j]:10.4g} {c.ess[j]:8.1f}  {c.flags[j]}", file=out)
    print(f"wrote {outdir / 'curve.csv'} and {outdir / 'report.json'}", file=out)
    return payload


def _sim_settings(cfg: SimulateConfig, spec):
    from .sim.checks import SimSettings, default_settings

    base = default_settings(spec)
    return SimSettings(cfg.learner or base.learner, cfg.riesz or base.riesz, cfg.llr, cfg.crossfit.folds)


def _pop_per_rep(check, report, rows):
    """Move per-replication arrays out of the report into long-format CSV rows."""
    if check in ("equivalence", "rates"):
        for row in report["rows"]:
            if check == "equivalence":
                per = row.pop("per_rep")
            else:
                per = {"gamma_rmse": row.pop("per_rep_gamma_rmse"), "alpha_rmse": row.pop("per_rep_alpha_rmse")}
            for name, vals in per.items():
                rows.extend((check, row["n"], k, name, v) for k, v in enumerate(vals))
    elif check == "coverage":
        for arm in ("debiased", "plugin"):
            if arm in report:
                per = report[arm].pop("per_rep")
                for name, vals in per.items():
                    rows.extend((check, report["n"], k, f"{arm}_{name}", v) for k, v in enumerate(vals))


def run_simulate(cfg: SimulateConfig, out=None) -> dict:
    out = out or sys.stdout
    from .sim import checks as ck
    from .sim.dgp import dgp_by_name

    spec = dgp_by_name(cfg.dgp, cfg.sigma)
    settings = _sim_settings(cfg, spec)
    th = cfg.thresholds
    wanted = ALL_CHECKS if "all" in cfg.check else tuple(c for c in ALL_CHECKS if c in cfg.check)
    threads = cfg.threads
    reports, rows = {}, []
    for check in wanted:
        if check == "equivalence":
            rep = ck.check_equivalence(
                spec, cfg.n_list, cfg.reps, settings, cfg.seed, cfg.bandwidth_constant, th.equivalence_final_ratio,
                threads=threads,
            )
        elif check == "orthogonality":
            rep = ck.check_orthogonality(
                spec, cfg.n, cfg.eps_list, cfg.reps, cfg.seed, slope_target=th.slope_target, slope_tol=th.slope_tol,
                se_multiple=th.se_multiple, threads=threads,
            )
        elif check == "rates":
            rep = ck.check_rates(
                spec, cfg.n_list, cfg.reps, settings, cfg.seed, cfg.bandwidth_constant,
                gamma_slope_threshold=th.gamma_rate_slope, threads=threads,
            )
        else:
            rep = ck.check_coverage(
                spec, cfg.n, cfg.reps, settings, cfg.seed, h=cfg.llr.h, compare_plugin=cfg.compare_plugin,
                low=th.coverage_low, high=th.coverage_high, threads=threads,
            )
        _pop_per_rep(check, rep, rows)
        reports[check] = rep
        print(f"{check}: {'PASS' if rep['passed'] else 'FAIL'}  {_headline(check, rep)}", file=out)
    outdir = Path(cfg.output)
    payload = {"version": __version__, "config": cfg.model_dump(mode="json", by_alias=True), "checks": reports}
    write_report(outdir / "report.json", payload)
    write_rows_csv(outdir / "reps.csv", ["check", "n", "rep", "quantity", "value"], rows)
    print(f"wrote {outdir / 'report.json'} and {outdir / 'reps.csv'}", file=out)
    return payload


def _headline(check, rep) -> str:
    if check == "equivalence":
        return "ratios " + ", ".join(f"n={r['n']}: {r['ratio']:.4g}" for r in rep["rows"])
    if check == "orthogonality":
        return f"joint slope {rep['joint_slope']:.4g} (target {rep['slope_target']} +/- {rep['slope_tol']})"
    if check == "rates":
        return f"gamma slope {rep['gamma_slope']:.4g}, alpha slope {rep['alpha_slope']:.4g}, violations {rep['any_violation']}"
    extra = ""
    if "plugin" in rep:
        extra = f", plug-in coverage {rep['plugin']['coverage']:.4g}"
    return f"coverage {rep['debiased']['coverage']:.4g} in [{rep['band'][0]}, {rep['band'][1]}]{extra}"


def run_diagnose(config_path, output=None, reps=20, seed=None, out=None) -> dict:
    out = out or sys.stdout
    from .diagnose import HEURISTIC_NOTE, diagnose

    cfg = load_run_config(config_path)
    data = load_dataset(cfg, Path(config_path).resolve().parent)
    m = cfg.functional.build(data.z_names)
    est = cfg.estimate_config()
    opts = dict(cfg.diagnose or {})
    unknown = set(opts) - {"reps", "eps_list", "fractions", "bins"}
    if unknown:
        raise InvalidArgumentError(f"diagnose: unknown keys {sorted(unknown)}")
    rep = diagnose(
        data,
        m,
        est,
        reps=int(opts.get("reps", reps)),
        eps_list=tuple(opts.get("eps_list", (0.4, 0.2, 0.1, 0.05))),
        fractions=tuple(opts.get("fractions", (0.125, 0.25, 0.5))),
        n_bins=int(opts.get("bins", 10)),
        seed=est.seed if seed is None else seed,
    )
    outdir = Path(output or cfg.output)
    write_report(outdir / "diagnose.json", rep)
    print(HEURISTIC_NOTE, file=out)
    orth = rep["orthogonality"]
    if "joint_slope" in orth:
        print(f"orthogonality (heuristic): joint slope {orth['joint_slope']:.4g}", file=out)
    rates = rep["rates"]
    print(f"rates (heuristic): gamma slope {rates['gamma_slope']:.4g}, alpha slope {rates['alpha_slope']:.4g}", file=out)
    print(f"wrote {outdir / 'diagnose.json'}", file=out)
    return rep


# ------------------------------------------------------------ argument parsing


def _int_list(text):
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdml", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cdml {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="estimate theta(v) on a CSV dataset")
    e.add_argument("config", help="TOML run configuration")
    e.add_argument("--output", help="output directory (overrides the config)")
    e.add_argument("--seed", type=int, help="seed (overrides the config)")
    e.add_argument("--threads", type=int, help="accepted for interface symmetry; estimation is sequential")

    s = sub.add_parser("simulate", help="run Monte Carlo checks on a shipped design")
    s.add_argument("--config", help="TOML simulation configuration")
    s.add_argument("--dgp", choices=["a", "b", "c", "hd", "cate_binary", "cate_continuous", "quantile_ls", "high_dim"])
    s.add_argument("--check", action="append", choices=list(ALL_CHECKS) + ["all"])
    s.add_argument("--n-list", type=_int_list)
    s.add_argument("--n", type=int, help="sample size for orthogonality and coverage")
    s.add_argument("--reps", type=int)
    s.add_argument("--eps-list", type=_float_list)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, help="worker processes (default: available cores)")
    s.add_argument("--output")
    s.add_argument("--compare-plugin", action="store_true", default=None)

    d = sub.add_parser("diagnose", help="heuristic rate/orthogonality diagnostics on a CSV dataset")
    d.add_argument("config", help="TOML run configuration")
    d.add_argument("--output")
    d.add_argument("--reps", type=int, default=20)
    d.add_argument("--seed", type=int)
    return p


def _simulate_config(args) -> SimulateConfig:
    raw = load_toml(args.config) if args.config else {}
    raw.pop("command", None)
    overrides = {
        "dgp": args.dgp,
        "check": args.check,
        "n_list": args.n_list,
        "n": args.n,
        "reps": args.reps,
        "eps_list": args.eps_list,
        "seed": args.seed,
        "threads": args.threads,
        "output": args.output,
        "compare_plugin": args.compare_plugin,
    }
    raw.update({k: v for k, v in overrides.items() if v is not None})
    raw.setdefault("threads", os.cpu_count() or 1)
    return _validate(SimulateConfig, raw, args.config or "command line")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    try:
        if args.command == "estimate":
            if args.threads is not None and args.threads < 1:
                raise InvalidArgumentError("--threads must be >= 1")
            run_estimate(args.config, args.output, args.seed)
        elif args.command == "simulate":
            run_simulate(_simulate_config(args))
        else:
            if args.reps < 1:
                raise InvalidArgumentError("--reps must be >= 1")
            run_diagnose(args.config, args.output, args.reps, args.seed)
    except InvariantError as exc:
        print(f"cdml: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InvalidArgumentError, OSError) as exc:
        print(f"cdml: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        print(f"cdml: numerical failure in stage {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CdmlError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"cdml: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
