"""Command-line front end: ``sparseproj {fit,debias,additive,simulate,diagnose}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .additive import AdditiveFit, expand_additive_design, recover_components
from .debias import DebiasError, theta_identity_report
from .design import DesignError, build_grouped_design, gram, irrepresentability_statistic, \
    restricted_eigenvalue, standardize
from .pipeline import FitConfig, FitResult, StageError, fit
from .posterior import PosteriorError
from .simulation import (METHOD_LABELS, AdditiveScenario, LinearScenario, ReplicateError, StudyConfig,
                         run_replicated)

log = logging.getLogger("sparseproj")

EXIT_CODES = {
    "usage": 2, "input": 3, "standardize": 4, "posterior": 5, "sample": 6, "tune": 7,
    "project": 8, "debias": 9, "intervals": 10, "simulate": 11, "output": 12,
}

FIT_FLAGS = ("penalty", "lam", "tau", "a_n", "sigma", "draws", "seed", "folds", "jobs", "alpha")


class UsageError(Exception):
    pass


def _configure_logging():
    level = os.environ.get("SPARSEPROJ_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _lambda_arg(s: str):
    if s == "cv":
        return s
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'cv' or a positive number, got {s!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("lambda must be positive")
    return v


def _sigma_arg(s: str):
    if s == "auto":
        return s
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a number, got {s!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("sigma must be positive")
    return v


def _common(p: argparse.ArgumentParser, data: bool = True):
    if data:
        p.add_argument("--x", help="design (or raw covariate) CSV")
        p.add_argument("--y", help="response CSV, one column")
    p.add_argument("--seed", type=int, help="master seed (required)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config", help="run config JSON, or a previous report to rerun")


def _fit_flags(p: argparse.ArgumentParser, penalty: bool = True):
    if penalty:
        p.add_argument("--penalty", choices=["gl", "gscad", "agl"], default="gl")
    p.add_argument("--lambda", dest="lam", type=_lambda_arg, default="cv")
    p.add_argument("--tau", type=float, default=3.7)
    p.add_argument("--an", dest="a_n", type=float, default=None, help="prior precision scale (default 1/n)")
    p.add_argument("--sigma", type=_sigma_arg, default="auto")
    p.add_argument("--draws", type=int, default=200)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--lenient", action="store_true",
                   help="keep going when some draws do not converge (exit code stays nonzero)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparseproj", description="Sparse projection-posterior regression.")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    p = sub.add_parser("fit", help="projection-posterior fit")
    _common(p)
    p.add_argument("--groups", help="group spec JSON")
    _fit_flags(p)
    p.add_argument("--debias", action="store_true", help="add debiased credible intervals (gl only)")
    p = sub.add_parser("debias", help="group LASSO projection with debiased intervals")
    _common(p)
    p.add_argument("--groups", help="group spec JSON")
    _fit_flags(p, penalty=False)
    p.add_argument("--nodewise-lambda", dest="nodewise_lambda", type=_lambda_arg, default="cv")
    p = sub.add_parser("additive", help="sparse additive model via B-spline groups")
    _common(p)
    _fit_flags(p)
    p.add_argument("--basis", dest="B_n", type=int, default=8, help="basis functions per variable")
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--grid-points", dest="n_grid", type=int, default=50)
    p = sub.add_parser("simulate", help="replicated simulation study")
    _common(p, data=False)
    p.add_argument("--study", help="study config JSON")
    p.add_argument("--scenario", choices=["linear", "additive"], default="linear")
    p.add_argument("--K", type=int, default=50)
    p.add_argument("--n", type=int, nargs="+", default=[100])
    p.add_argument("--s0", type=int, default=None)
    p.add_argument("--sigma", type=_sigma_arg, default=None,
                   help="noise level used by the fits (default: estimated)")
    p.add_argument("--noise", type=float, default=1.0, help="true noise level of the scenario")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--methods", default="gl", help="comma list from gl,gscad,agl,debiased")
    p.add_argument("--draws", type=int, default=200)
    p = sub.add_parser("diagnose", help="design assumption statistics")
    _common(p)
    p.add_argument("--groups", help="group spec JSON")
    p.add_argument("--active", help="comma list of 1-based active groups for restricted statistics")
    p.add_argument("--an", dest="a_n", type=float, default=None)
    return ap


def _require(args, *names):
    for nm in names:
        if getattr(args, nm, None) is None:
            raise UsageError(f"missing required flag --{nm.replace('_', '-')}")


def _check_path(path, flag):
    p = Path(path).expanduser()
    if not p.is_file():
        raise UsageError(f"--{flag}: file not found: {path}")
    return str(p.resolve())


def run_config_from_args(args) -> dict:
    """Validated run config; the report echoes it so a rerun can start from the report."""
    if args.config:
        cfg = io.read_json(args.config)
        cfg = cfg.get("config", cfg)
        if cfg.get("subcommand") != args.subcommand:
            raise UsageError(f"--config is for '{cfg.get('subcommand')}', not '{args.subcommand}'")
        _require_cfg(cfg)
        return cfg
    _require(args, "seed")
    sc = args.subcommand
    cfg: dict = {"subcommand": sc, "seed": args.seed, "jobs": args.jobs}
    if sc in ("fit", "debias", "additive", "diagnose"):
        _require(args, "x")
        cfg["x"] = _check_path(args.x, "x")
    if sc in ("fit", "debias", "diagnose"):
        _require(args, "groups")
        cfg["groups"] = _check_path(args.groups, "groups")
    if sc in ("fit", "debias", "additive"):
        _require(args, "y")
        cfg["y"] = _check_path(args.y, "y")
        f = {k: getattr(args, k) for k in FIT_FLAGS if hasattr(args, k)}
        f["penalty"] = getattr(args, "penalty", "gl")
        f["strict"] = not args.lenient
        if sc == "debias":
            f["debias"] = True
            f["nodewise_lambda"] = args.nodewise_lambda
        elif sc == "fit":
            f["debias"] = args.debias
        try:
            cfg["fit"] = FitConfig(**f).to_dict()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if sc == "additive":
        if args.B_n < args.degree + 1:
            raise UsageError(f"--basis {args.B_n} is below degree + 1 = {args.degree + 1}")
        cfg.update(B_n=args.B_n, degree=args.degree, n_grid=args.n_grid)
    if sc == "diagnose":
        cfg["active"] = _parse_active(args.active)
        cfg["a_n"] = args.a_n
    if sc == "simulate":
        cfg["study"] = _study_from_args(args).to_dict()
    return cfg


def _require_cfg(cfg):
    if "seed" not in cfg:
        raise UsageError("config lacks the mandatory seed")


def _parse_active(s):
    if s is None:
        return None
    try:
        act = [int(t) for t in s.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--active: expected comma-separated integers, got {s!r}") from None
    if not act or min(act) < 1:
        raise UsageError("--active: group indices are 1-based")
    return act


def _study_from_args(args) -> StudyConfig:
    if args.study:
        d = io.read_json(args.study)
        d = d.get("config", {}).get("study", d) if "config" in d else d
        d["master_seed"] = args.seed
        if args.jobs:
            d["jobs"] = args.jobs
        try:
            return StudyConfig.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"--study: {exc}") from None
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    try:
        if args.scenario == "linear":
            s0 = 10 if args.s0 is None else args.s0
            scen = [LinearScenario(K=args.K, n=n, s0=s0, sigma=args.noise) for n in args.n]
        else:
            s0 = 5 if args.s0 is None else args.s0
            scen = [AdditiveScenario(K=args.K, n=n, s0=s0, sigma=args.noise) for n in args.n]
        return StudyConfig(scen, methods=methods, replicates=args.replicates, master_seed=args.seed,
                           draws=args.draws, sigma="auto" if args.sigma is None else args.sigma,
                           jobs=args.jobs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _out_dir(out) -> Path:
    out = Path(out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_xy(cfg, need_groups=True):
    try:
        X, names = io.read_matrix_csv(cfg["x"])
        y = io.read_vector_csv(cfg["y"]) if "y" in cfg else None
        groups = io.read_groups_json(cfg["groups"]) if need_groups else None
    except io.InputError as exc:
        raise StageError("input", str(exc)) from None
    if y is not None and y.shape[0] != X.shape[0]:
        raise StageError("input", f"--y has {y.shape[0]} rows but --x has {X.shape[0]}")
    return X, y, groups, names


def _fit_report(cfg: dict, res: FitResult, extra: dict | None = None) -> dict:
    g = res.design.groups
    est = res.original_scale(res.point_estimate)
    rep = {
        "config": cfg,
        "software_version": io.software_version(),
        "lambda": res.lam,
        "sigma": res.posterior.sigma,
        "sigma_source": res.sigma_source,
        "a_n": res.posterior.a_n,
        "ridge_df": res.posterior.df,
        "selected_groups": [g.names[k] for k in res.selected],
        "selected_indices": [k + 1 for k in res.selected],
        "selection_frequencies": {g.names[k]: float(res.selection_frequencies[k]) for k in range(g.K)},
        "point_estimate": est,
        "convergence": res.ensemble.convergence_stats(),
        "timings": res.timings,
    }
    table = res.interval_table()
    if table is not None:
        rep["intervals"] = {"level": res.band.level, "lower": table[:, 0], "median": table[:, 1],
                            "upper": table[:, 2]}
    if res.theta is not None:
        rep["theta_identity"] = theta_identity_report(res.theta, res.design)
        rep["theta_max_condition"] = float(np.max(res.theta.condition_numbers))
    if extra:
        rep.update(extra)
    return rep


def _write_estimates(out: Path, res: FitResult, seed: int, chash: str, col_names=None):
    g = res.design.groups
    owner = g.column_groups()
    est = res.original_scale(res.point_estimate)
    table = res.interval_table()
    rows = []
    for j in range(res.design.p):
        name = col_names[j] if col_names else f"x{j + 1}"
        row = [j + 1, name, g.names[owner[j]], est[j]]
        row += list(table[j]) if table is not None else [float("nan")] * 3
        rows.append(row)
    io.write_csv(out / "estimates.csv", ["column", "name", "group", "estimate", "lower", "median", "upper"],
                 rows, seed, chash)
    io.write_csv(out / "selection.csv", ["group", "name", "frequency", "selected"],
                 [[k + 1, g.names[k], res.selection_frequencies[k], int(k in res.selected)] for k in range(g.K)],
                 seed, chash)


def cmd_fit(cfg: dict, out=None) -> int:
    X, y, groups, names = _load_xy(cfg)
    try:
        design = build_grouped_design(X, groups)
    except DesignError as exc:
        raise StageError("input", str(exc)) from None
    fcfg = FitConfig(**cfg["fit"])
    res = fit(design, y, config=fcfg)
    chash = io.config_hash(cfg)
    out = _out_dir(out)
    rep = _fit_report(cfg, res)
    io.write_json(out / "report.json", rep, cfg["seed"], chash)
    _write_estimates(out, res, cfg["seed"], chash, names)
    print(f"selected groups: {', '.join(rep['selected_groups']) or '(none)'}; lambda = {res.lam:.6g}")
    return _convergence_exit(res)


def _convergence_exit(res: FitResult) -> int:
    if res.ensemble.failures:
        log.error("%d draw(s) did not converge", len(res.ensemble.failures))
        return EXIT_CODES["project"]
    return 0


def cmd_additive(cfg: dict, out=None) -> int:
    X_raw, y, _, _ = _load_xy(cfg, need_groups=False)
    try:
        design, spec = expand_additive_design(X_raw, cfg["B_n"], cfg["degree"])
    except DesignError as exc:
        raise StageError("input", str(exc)) from None
    log.info("expanded design: %d x %d (%d variables x %d basis functions)",
             design.n, design.p, spec.K, spec.B_n)
    res = fit(design, y, config=FitConfig(**cfg["fit"]))
    afit = AdditiveFit(res.design, spec, X_raw, res.ensemble.beta_star)
    rec = recover_components(afit, n_grid=cfg["n_grid"], alpha=res.config.alpha)
    chash = io.config_hash(cfg)
    out = _out_dir(out)
    rep = _fit_report(cfg, res, {"expanded_shape": [design.n, design.p], "B_n": spec.B_n,
                                 "degree": spec.degree})
    rep.pop("point_estimate")
    rep["basis_coefficients"] = res.point_estimate
    io.write_json(out / "report.json", rep, cfg["seed"], chash)
    rows = []
    for k in range(spec.K):
        for i, x in enumerate(rec.grid[k]):
            rows.append([k + 1, i + 1, x, rec.lower[k, i], rec.median[k, i], rec.upper[k, i]])
    io.write_csv(out / "component_bands.csv", ["variable", "grid_point", "x", "lower", "median", "upper"],
                 rows, cfg["seed"], chash)
    print(f"expanded design {design.n} x {design.p}; selected components: "
          f"{', '.join(rep['selected_groups']) or '(none)'}")
    return _convergence_exit(res)


def cmd_simulate(cfg: dict, out=None) -> int:
    study = StudyConfig.from_dict(cfg["study"])
    try:
        result = run_replicated(study)
    except ReplicateError as exc:
        raise StageError("simulate", str(exc)) from None
    chash = io.config_hash(cfg)
    seed = cfg["seed"]
    out = _out_dir(out)
    io.write_csv(out / "metrics.csv", ["scenario", "method", "replicate", "metric", "value"],
                 [[r["scenario"], r["method"], r["replicate"], r["metric"], r["value"]] for r in result.records],
                 seed, chash)
    io.write_json(out / "aggregate.json", {"config": cfg, "aggregate": result.aggregate}, seed, chash)
    scen = {s.name: s for s in study.scenarios}
    for metric in ("mse", "f1"):
        rows = [[r["scenario"], scen[r["scenario"]].n, scen[r["scenario"]].K, METHOD_LABELS[r["method"]],
                 r["replicate"], r["value"]] for r in result.records if r["metric"] == metric]
        io.write_csv(out / f"figure_{metric}.csv", ["scenario", "n", "K", "method", "replicate", "value"],
                     rows, seed, chash)
    cov_rows = []
    for s, by_m in result.aggregate.items():
        for m, a in by_m.items():
            if "signal_coverage" in a:
                cov_rows.append([s, METHOD_LABELS[m]] + [a[k][stat] for k in
                                ("signal_coverage", "noise_coverage", "signal_length", "noise_length")
                                for stat in ("mean", "se")])
    io.write_csv(out / "coverage.csv",
                 ["scenario", "method", "signal_coverage", "signal_coverage_se", "noise_coverage",
                  "noise_coverage_se", "signal_length", "signal_length_se", "noise_length", "noise_length_se"],
                 cov_rows, seed, chash)
    for s, by_m in result.aggregate.items():
        for m, a in by_m.items():
            print(f"{s} {METHOD_LABELS[m]}: F1 {a['f1']['mean']:.3f} ({a['f1']['se']:.3f}), "
                  f"MSE {a['mse']['mean']:.4g} ({a['mse']['se']:.2g})")
    return 0


def cmd_diagnose(cfg: dict, out=None) -> int:
    X, _, groups, _ = _load_xy({k: v for k, v in cfg.items() if k != "y"})
    try:
        design = standardize(build_grouped_design(X, groups))
    except DesignError as exc:
        raise StageError("input", str(exc)) from None
    ev = np.linalg.eigvalsh(gram(design))
    a_n = 1.0 / design.n if cfg.get("a_n") is None else cfg["a_n"]
    d2 = np.linalg.svd(design.X, compute_uv=False) ** 2
    rep = {
        "config": cfg, "software_version": io.software_version(),
        "n": design.n, "p": design.p, "K": design.K, "group_sizes": design.groups.sizes,
        "gram_eigen_min": float(ev[0]), "gram_eigen_max": float(ev[-1]),
        "gram_rank": int(np.sum(ev > 1e-10 * ev[-1])),
        "ridge_df": float(np.sum(d2 / (d2 + a_n))),
        "group_min_eigen": [restricted_eigenvalue(design, [k]) for k in range(design.K)],
    }
    act = cfg.get("active")
    if act:
        if max(act) > design.K:
            raise StageError("input", f"--active refers to group {max(act)} but there are {design.K}")
        S = [k - 1 for k in act]
        rep["restricted_eigenvalue"] = restricted_eigenvalue(design, S)
        try:
            rep["irrepresentability"] = irrepresentability_statistic(design, S)
        except DesignError as exc:
            rep["irrepresentability"] = None
            rep["irrepresentability_note"] = str(exc)
    out = _out_dir(out)
    io.write_json(out / "diagnostics.json", rep, cfg["seed"], io.config_hash(cfg))
    print(f"n={design.n} p={design.p} K={design.K}; Gram eigenvalues [{ev[0]:.3g}, {ev[-1]:.3g}]")
    return 0


COMMANDS = {"fit": cmd_fit, "debias": cmd_fit, "additive": cmd_additive, "simulate": cmd_simulate,
            "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = run_config_from_args(args)
    except (UsageError, io.InputError) as exc:
        print(f"sparseproj {args.subcommand}: error: {exc}", file=sys.stderr)
        return EXIT_CODES["usage"]
    try:
        return COMMANDS[cfg["subcommand"]](cfg, args.out)
    except StageError as exc:
        print(f"sparseproj {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.stage, 1)
    except (DebiasError, PosteriorError) as exc:
        print(f"sparseproj {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_CODES["debias" if isinstance(exc, DebiasError) else "posterior"]
    except OSError as exc:
        print(f"sparseproj {args.subcommand}: cannot write output: {exc}", file=sys.stderr)
        return EXIT_CODES["output"]


if __name__ == "__main__":
    sys.exit(main())
