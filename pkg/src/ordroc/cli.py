"""Command-line surface: fit, roc, auc, test, pairwise, power, simulate.

Exit codes: 0 on success, 1 for statistical failures (non-convergence,
singular covariance), 2 for input errors.  Flags override config-file
values; ``power`` and ``simulate`` take their many knobs from a JSON or
TOML config file.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .data import CovariateProfile, CsvSchema, DesignSpec, load_csv
from .errors import DataError, StatisticalError
from .homogeneity import (
    pairwise,
    roc_curve_test,
    test_statistic,
    lambda_vector,
    test_report_to_dict,
    write_pairwise_csv,
)
from .power import PowerSpec, TrueDesign, min_sample_size
from .probit import fit, load_model, model_to_dict, save_model
from .roc import (
    auc_summary,
    auc_summary_to_dict,
    default_fpr_grid,
    roc_summary,
    write_roc_csv,
)
from .simulate import (
    SimSetting,
    consistency_experiment,
    coverage_experiment,
    group_offsets,
    power_validation,
    type1_experiment,
    write_experiment_outputs,
)

_EXIT_OK = 0
_EXIT_STATISTICAL = 1
_EXIT_INPUT = 2


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {path}")
    text = p.read_bytes()
    if p.suffix.lower() == ".toml":
        import tomllib

        return tomllib.loads(text.decode("utf-8"))
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def _parse_covariates(arg: str | None) -> tuple[float, ...]:
    if not arg:
        return ()
    try:
        return tuple(float(v) for v in arg.split(","))
    except ValueError:
        raise DataError(f"invalid covariate values: {arg!r}") from None


def _profiles_for_model(model, values_arg: str | None):
    spec = model.spec
    values = _parse_covariates(values_arg)
    if not values and spec.covariate_names:
        raise DataError(
            "the model has continuous covariates; pass --covariates "
            "(comma-separated values, one per covariate)"
        )
    if len(values) != len(spec.covariate_names):
        raise DataError(
            f"expected {len(spec.covariate_names)} covariate value(s), got {len(values)}"
        )
    return spec.profiles_at(values)


def _cmd_fit(args) -> int:
    remap = None
    if args.remap:
        try:
            lo, hi = args.remap.split(":")
            remap = (int(lo), int(hi))
        except ValueError:
            raise DataError(f"--remap expects LO:HI, got {args.remap!r}") from None
    schema = CsvSchema(
        score=args.score,
        status=args.status,
        group=args.group,
        covariates=tuple(args.covariate or ()),
        group_levels=tuple(args.groups_order.split(",")) if args.groups_order else None,
        n_levels=args.levels,
        score_remap=remap,
    )
    table = load_csv(args.infile, schema)
    spec = DesignSpec.for_table(table, args.reference)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = fit(table, spec)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    payload = model_to_dict(model)
    payload["covariate_means"] = (
        table.covariates.mean(axis=0).tolist() if table.n_covariates else []
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
    print(f"wrote {args.out} ({len(payload['parameters']['names'])} parameters, "
          f"loglik {model.loglik:.4f}, converged={model.converged})")
    if not model.converged and not args.allow_nonconverged:
        print("error: fit did not converge (use --allow-nonconverged to keep it)",
              file=sys.stderr)
        return _EXIT_STATISTICAL
    return _EXIT_OK


def _default_profile_values(payload: dict, model, values_arg: str | None):
    if values_arg:
        return values_arg
    means = payload.get("covariate_means") or []
    if model.spec.covariate_names and len(means) == len(model.spec.covariate_names):
        return ",".join(str(v) for v in means)
    return values_arg


def _load_model_payload(path: str):
    p = Path(path)
    if not p.exists():
        raise DataError(f"model file not found: {path}")
    payload = json.loads(p.read_text())
    return payload, load_model(path)


def _cmd_roc(args) -> int:
    payload, model = _load_model_payload(args.model)
    values = _default_profile_values(payload, model, args.covariates)
    profiles = _profiles_for_model(model, values)
    prof = next(p for p in profiles if p.group == (args.group or profiles[0].group))
    grid = default_fpr_grid(args.grid_size)
    summary = roc_summary(model, prof, grid=grid, level=args.level)
    write_roc_csv(summary, args.out)
    print(f"wrote {args.out} ({grid.size} grid points, level {args.level})")
    return _EXIT_OK


def _cmd_auc(args) -> int:
    payload, model = _load_model_payload(args.model)
    values = _default_profile_values(payload, model, args.covariates)
    profiles = _profiles_for_model(model, values)
    prof = next(p for p in profiles if p.group == (args.group or profiles[0].group))
    summary = auc_summary(model, prof, level=args.level)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(auc_summary_to_dict(summary), fh, indent=2)
    print(f"wrote {args.out} (auc {summary.auc:.4f} "
          f"[{summary.ci_lower:.4f}, {summary.ci_upper:.4f}])")
    return _EXIT_OK


def _cmd_test(args) -> int:
    payload, model = _load_model_payload(args.model)
    values = _default_profile_values(payload, model, args.covariates)
    profiles = _profiles_for_model(model, values)
    if args.mode == "curve":
        report = roc_curve_test(model, profiles,
                                grid=default_fpr_grid(args.grid_size),
                                alpha=args.alpha)
        if args.curve_csv:
            rows = np.column_stack([
                report.grid, report.statistic,
                np.full_like(report.grid, report.critical_value),
                np.asarray(report.reject, dtype=float),
            ])
            np.savetxt(args.curve_csv, rows, delimiter=",",
                       header="t,psi,critical,reject", comments="", fmt="%.10g")
        regions = ", ".join(f"[{lo:.4f}, {hi:.4f}]" for lo, hi in report.rejection_regions)
        print(f"curve test: df={report.df}, critical={report.critical_value:.4f}, "
              f"rejection regions: {regions or 'none'}")
    else:
        metric = "auc" if args.mode == "auc" else "roc"
        t = args.t if metric == "roc" else None
        if metric == "roc" and t is None:
            raise DataError("--mode roc requires --t")
        lam, f = lambda_vector(model, profiles, metric=metric, t=t)
        report = test_statistic(lam, f, model.vcov, alpha=args.alpha,
                                metric=metric, t=t)
        print(f"{metric} test: psi={report.statistic:.4f}, df={report.df}, "
              f"critical={report.critical_value:.4f}, p={report.p_value:.4g}, "
              f"reject={report.reject}")
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(test_report_to_dict(report), fh, indent=2)
    print(f"wrote {args.out}")
    return _EXIT_OK


def _cmd_pairwise(args) -> int:
    payload, model = _load_model_payload(args.model)
    values = _default_profile_values(payload, model, args.covariates)
    profiles = _profiles_for_model(model, values)
    metric = "auc" if args.mode == "auc" else "roc"
    t = args.t if metric == "roc" else None
    if metric == "roc" and t is None:
        raise DataError("--mode roc requires --t")
    report = pairwise(model, profiles, metric=metric, t=t,
                      level=args.level, bonferroni=args.bonferroni)
    write_pairwise_csv(report, args.out)
    print(f"wrote {args.out} ({len(report.pairs)} pairs)")
    return _EXIT_OK


def _truth_from_row(cfg: dict, row: dict) -> tuple[str, TrueDesign]:
    groups = int(row.get("groups", cfg.get("groups", 0)) or 0)
    ratio = row.get("ratio")
    base_j = int(row.get("raters", cfg.get("raters", 10)))
    if ratio:
        parts = [int(v) for v in str(ratio).split(":")]
        counts = tuple(v * base_j for v in parts)
        groups = groups or len(parts)
        if len(parts) != groups:
            raise DataError(f"ratio {ratio!r} does not match {groups} groups")
        label = str(ratio)
    else:
        if groups < 2:
            raise DataError("each power row needs 'groups' or 'ratio'")
        counts = (base_j,) * groups
        label = str(groups)
    setting = int(row.get("setting", cfg.get("setting", 4)))
    truth = TrueDesign(
        psi=float(cfg.get("psi", 0.5)),
        phi=float(cfg.get("phi", 1.5)),
        a=group_offsets(setting, groups),
        x1=float(cfg.get("x1", 0.5)),
        n_levels=int(cfg.get("levels", 7)),
        rater_counts=counts,
        k0_fraction=float(cfg.get("k0_fraction", 0.5)),
        tau_sim=tuple(cfg["tau_sim"]) if cfg.get("tau_sim") else None,
    )
    return label, truth


def _cmd_power(args) -> int:
    if not args.config:
        raise DataError("power requires --config (JSON or TOML)")
    cfg = _load_config(args.config)
    alpha = float(args.alpha if args.alpha is not None else cfg.get("alpha", 0.05))
    beta = float(cfg.get("beta", 0.2))
    fprs = [float(t) for t in cfg.get("fprs", (0.3, 0.5, 0.7))]
    rows = cfg.get("rows")
    if not rows:
        raise DataError("power config needs a nonempty 'rows' list")
    out_path = Path(args.out or "min_sample_sizes.csv")
    header = ["row"] + [f"t{i + 1}={t}" for i, t in enumerate(fprs)] + ["AUC"]
    lines = [",".join(header)]
    for row in rows:
        label, truth = _truth_from_row(cfg, row)
        cells = [label]
        for t in fprs:
            res = min_sample_size(PowerSpec(alpha=alpha, beta=beta, truth=truth,
                                            metric="roc", t=t))
            cells.append(str(res.k_min))
        res = min_sample_size(PowerSpec(alpha=alpha, beta=beta, truth=truth,
                                        metric="auc"))
        cells.append(str(res.k_min))
        lines.append(",".join(cells))
        print(f"row {label}: " + ", ".join(lines[-1].split(",")[1:]))
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out_path}")
    return _EXIT_OK


def _cmd_simulate(args) -> int:
    if not args.config:
        raise DataError("simulate requires --config (JSON or TOML)")
    cfg = _load_config(args.config)
    seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
    setting = SimSetting(
        setting=int(cfg.get("setting", 1)),
        n_groups=int(cfg.get("groups", 5)),
        items_per_rater=int(cfg.get("k", 100)),
        raters_per_group=cfg.get("raters", 10),
        n_levels=int(cfg.get("levels", 7)),
        psi=float(cfg.get("psi", 0.5)),
        phi=float(cfg.get("phi", 1.5)),
        x1=float(cfg.get("x1", 0.5)),
        k0_fraction=float(cfg.get("k0_fraction", 0.5)),
        tau_sim=tuple(cfg["tau_sim"]) if cfg.get("tau_sim") else None,
        seed=seed,
    )
    experiment = cfg.get("experiment", "type1")
    n_reps = int(cfg.get("replications", 1000))
    n_jobs = args.threads or int(cfg.get("threads", 1))
    alpha = float(args.alpha if args.alpha is not None else cfg.get("alpha", 0.05))
    t = float(cfg.get("t", 0.3))
    if experiment == "consistency":
        result = consistency_experiment(setting, tuple(cfg.get("k_grid", (5, 10, 20, 50))),
                                        n_reps=n_reps, n_jobs=n_jobs)
    elif experiment == "coverage":
        result = coverage_experiment(setting, tuple(cfg.get("k_grid", (25, 50, 100, 200))),
                                     t=t, level=float(cfg.get("level", 0.95)),
                                     n_reps=n_reps, n_jobs=n_jobs)
    elif experiment == "type1":
        result = type1_experiment(setting, tuple(cfg.get("g_list", (3, 5, 7))),
                                  t=t, alpha=alpha, n_reps=n_reps, n_jobs=n_jobs)
    elif experiment == "power":
        result = power_validation(setting, t=t, alpha=alpha,
                                  beta=float(cfg.get("beta", 0.2)),
                                  k_override=cfg.get("k_override"),
                                  n_reps=n_reps, n_jobs=n_jobs)
    else:
        raise DataError(f"unknown experiment {experiment!r}")
    out_dir = args.out_dir or "."
    write_experiment_outputs(result, out_dir)
    print(f"{experiment}: {json.dumps(result.summary, default=float)}")
    print(f"wrote outputs under {out_dir}")
    return _EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ordroc",
        description="Covariate-adjusted ROC homogeneity testing from ordinal scores",
    )
    parser.add_argument("--config", help="JSON/TOML config file (power, simulate)")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--alpha", type=float, default=None, help="significance level")
    parser.add_argument("--out-dir", default=None, help="output directory (simulate)")
    parser.add_argument("--threads", type=int, default=None,
                        help="parallel workers for simulation replications")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the ordinal probit model from a CSV")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--score", required=True, help="score column name")
    p.add_argument("--status", required=True, help="binary status column name")
    p.add_argument("--group", required=True, help="group column name")
    p.add_argument("--covariate", action="append", help="continuous covariate column")
    p.add_argument("--levels", type=int, default=None, help="ordinal scale size L")
    p.add_argument("--groups-order", default=None,
                   help="comma-separated declared group order")
    p.add_argument("--remap", default=None,
                   help="source score range LO:HI remapped onto 1..L")
    p.add_argument("--reference", default=None, help="reference group label")
    p.add_argument("--out", required=True, help="output model JSON")
    p.add_argument("--allow-nonconverged", action="store_true")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("roc", help="ROC curve with confidence band")
    p.add_argument("--model", required=True)
    p.add_argument("--group", default=None, help="group label (default: first)")
    p.add_argument("--covariates", default=None,
                   help="comma-separated covariate values (default: training means)")
    p.add_argument("--grid-size", type=int, default=512)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=_cmd_roc)

    p = sub.add_parser("auc", help="AUC with confidence interval")
    p.add_argument("--model", required=True)
    p.add_argument("--group", default=None)
    p.add_argument("--covariates", default=None)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", required=True, help="output JSON")
    p.set_defaults(func=_cmd_auc)

    p = sub.add_parser("test", help="homogeneity test across groups")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("auc", "roc", "curve"), default="auc")
    p.add_argument("--t", type=float, default=None, help="FPR for --mode roc")
    p.add_argument("--covariates", default=None)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--grid-size", type=int, default=512)
    p.add_argument("--curve-csv", default=None, help="per-FPR CSV for --mode curve")
    p.add_argument("--out", required=True, help="output report JSON")
    p.set_defaults(func=_cmd_test)

    p = sub.add_parser("pairwise", help="post hoc pairwise comparisons")
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=("auc", "roc"), default="auc")
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--covariates", default=None)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--bonferroni", action="store_true")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=_cmd_pairwise)

    p = sub.add_parser("power", help="minimum-sample-size tables")
    p.add_argument("--out", default=None, help="output CSV path")
    p.set_defaults(func=_cmd_power)

    p = sub.add_parser("simulate", help="Monte-Carlo validation experiments")
    p.set_defaults(func=_cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INPUT
    except StatisticalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_STATISTICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
