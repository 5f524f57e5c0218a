"""Chi-square homogeneity testing of group accuracies and post hoc pairs.

Group accuracies (ROC at a fixed FPR, or AUC) are stacked into a vector
Lambda, contrasted against the reference group with K = (I, -1), and the
statistic

    Psi = Lambda_C' [K F vcov F' K']^{-1} Lambda_C

is referred to a chi-square distribution with G - 1 degrees of freedom;
F stacks the per-group delta-method Jacobians.  Pairwise comparisons
share the machinery: the variance of a difference comes from the
difference of the two Jacobian rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, norm

from .data import CovariateProfile
from .errors import DataError, SingularMatrixError
from .probit import FittedModel
from .roc import auc_at, auc_jacobian, default_fpr_grid, roc_at, roc_jacobian

__all__ = [
    "TestReport",
    "PairwiseReport",
    "contrast_matrix",
    "lambda_vector",
    "homogeneity_test",
    "test_statistic",
    "roc_curve_test",
    "pairwise",
    "test_report_to_dict",
    "write_pairwise_csv",
]

_MAX_CONDITION = 1e12


def contrast_matrix(n_groups: int) -> np.ndarray:
    """(G-1, G) contrast K = (I_{G-1}, -1): each group minus the last."""
    if n_groups < 2:
        raise DataError("contrasts need at least two groups")
    k = np.zeros((n_groups - 1, n_groups))
    k[:, :-1] = np.eye(n_groups - 1)
    k[:, -1] = -1.0
    return k


def _group_profiles(model: FittedModel, profiles) -> list[np.ndarray]:
    """Validate one profile per declared group with shared covariates."""
    spec = model.spec
    if spec is None:
        raise DataError("the fitted model carries no design spec")
    profiles = list(profiles)
    if len(profiles) != spec.n_groups:
        raise DataError(f"expected {spec.n_groups} profiles, got {len(profiles)}")
    shared = None
    for prof, level in zip(profiles, spec.group_levels):
        if not isinstance(prof, CovariateProfile):
            raise DataError("profiles must be CovariateProfile instances")
        if prof.group != level:
            raise DataError(
                f"profiles must follow the declared group order; expected "
                f"{level!r}, got {prof.group!r}"
            )
        if shared is None:
            shared = prof.covariates
        elif prof.covariates != shared:
            raise DataError("group profiles must share the continuous covariates")
    return [spec.encode_profile(prof) for prof in profiles]


def lambda_vector(model: FittedModel, profiles, metric: str = "auc", t: float | None = None):
    """Stacked per-group accuracy estimates and their Jacobian rows.

    Returns (lam, f) with lam of length G and f of shape (G, dim).
    ``metric`` is "auc" or "roc"; the latter requires the FPR ``t``.
    """
    xs = _group_profiles(model, profiles)
    params = model.params
    if metric == "auc":
        lam = np.array([auc_at(params, x) for x in xs])
        f = np.vstack([auc_jacobian(params, x) for x in xs])
    elif metric == "roc":
        if t is None:
            raise DataError("metric 'roc' requires the FPR value t")
        lam = np.array([roc_at(params, x, t) for x in xs])
        f = np.vstack([roc_jacobian(params, x, t) for x in xs])
    else:
        raise DataError(f"unknown metric {metric!r}; use 'auc' or 'roc'")
    return lam, f


@dataclass(frozen=True)
class TestReport:
    """Homogeneity test outcome for one metric.

    ``statistic``/``p_value``/``reject`` are scalars for AUC and
    ROC-at-t tests and arrays over ``grid`` for the curve test, in which
    case ``rejection_regions`` lists the maximal FPR intervals where the
    statistic exceeds the critical value (boundaries refined to 1e-4).
    """

    metric: str
    statistic: float | np.ndarray
    df: int
    p_value: float | np.ndarray
    critical_value: float
    alpha: float
    lam: np.ndarray
    lambda_c: np.ndarray
    var_lambda_c: np.ndarray
    reject: bool | np.ndarray
    t: float | None = None
    grid: np.ndarray | None = None
    rejection_regions: tuple[tuple[float, float], ...] | None = None


def _quadratic_form(lambda_c: np.ndarray, var_c: np.ndarray) -> float:
    cond = float(np.linalg.cond(var_c))
    if not np.isfinite(cond) or cond > _MAX_CONDITION:
        raise SingularMatrixError(
            f"Var(Lambda_C) is singular (condition number {cond:.3e}); "
            "coinciding group profiles are the usual cause",
            condition_number=cond,
        )
    return float(lambda_c @ np.linalg.solve(var_c, lambda_c))


def homogeneity_test(
    lam: np.ndarray,
    f: np.ndarray,
    vcov: np.ndarray,
    alpha: float = 0.05,
    contrast: np.ndarray | None = None,
    metric: str = "auc",
    t: float | None = None,
) -> TestReport:
    """Chi-square homogeneity statistic from stacked estimates and Jacobians."""
    if not 0.0 < alpha < 1.0:
        raise DataError("alpha must be in (0, 1)")
    lam = np.asarray(lam, dtype=float)
    n_groups = lam.shape[0]
    k = contrast_matrix(n_groups) if contrast is None else np.asarray(contrast, dtype=float)
    lambda_c = k @ lam
    kf = k @ f
    var_c = kf @ vcov @ kf.T
    psi = _quadratic_form(lambda_c, var_c)
    df = k.shape[0]
    critical = float(chi2.ppf(1.0 - alpha, df))
    return TestReport(
        metric=metric,
        statistic=psi,
        df=df,
        p_value=float(chi2.sf(psi, df)),
        critical_value=critical,
        alpha=alpha,
        lam=lam,
        lambda_c=lambda_c,
        var_lambda_c=var_c,
        reject=bool(psi > critical),
        t=t,
    )


# name used by callers that mirror the published operation signature
test_statistic = homogeneity_test


def roc_curve_test(
    model: FittedModel,
    profiles,
    grid: np.ndarray | None = None,
    alpha: float = 0.05,
    boundary_tol: float = 1e-4,
) -> TestReport:
    """Homogeneity test applied at every FPR of the grid.

    Boundaries of the rejection regions are located by bisection between
    adjacent grid points whenever the decision flips inside the grid.
    """
    grid = default_fpr_grid() if grid is None else np.asarray(grid, dtype=float)
    xs = _group_profiles(model, profiles)
    params, vcov = model.params, model.vcov
    n_groups = len(xs)
    k = contrast_matrix(n_groups)
    df = n_groups - 1
    critical = float(chi2.ppf(1.0 - alpha, df))

    def psi_at(t: float) -> tuple[float, np.ndarray, np.ndarray]:
        lam = np.array([roc_at(params, x, t) for x in xs])
        f = np.vstack([roc_jacobian(params, x, t) for x in xs])
        lambda_c = k @ lam
        var_c = (k @ f) @ vcov @ (k @ f).T
        return _quadratic_form(lambda_c, var_c), lam, var_c

    n = grid.size
    psi = np.empty(n)
    lam_all = np.empty((n, n_groups))
    var_all = np.empty((n, df, df))
    for i, t in enumerate(grid):
        psi[i], lam_all[i], var_all[i] = psi_at(float(t))
    reject = psi > critical

    regions: list[tuple[float, float]] = []
    i = 0
    while i < n:
        if not reject[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and reject[j + 1]:
            j += 1
        lo = grid[i] if i == 0 else _crossing(
            psi_at, grid[i - 1], grid[i], critical, boundary_tol
        )
        hi = grid[j] if j == n - 1 else _crossing(
            psi_at, grid[j], grid[j + 1], critical, boundary_tol
        )
        regions.append((float(lo), float(hi)))
        i = j + 1

    return TestReport(
        metric="roc-curve",
        statistic=psi,
        df=df,
        p_value=chi2.sf(psi, df),
        critical_value=critical,
        alpha=alpha,
        lam=lam_all,
        lambda_c=(k @ lam_all.T).T,
        var_lambda_c=var_all,
        reject=reject,
        grid=grid,
        rejection_regions=tuple(regions),
    )


def _crossing(psi_at, t_lo: float, t_hi: float, critical: float, tol: float) -> float:
    """Bisect for the t where Psi crosses the critical value."""
    f_lo = psi_at(float(t_lo))[0] - critical
    f_hi = psi_at(float(t_hi))[0] - critical
    if f_lo == 0.0:
        return float(t_lo)
    if f_hi == 0.0:
        return float(t_hi)
    if f_lo * f_hi > 0:  # no sign change (grid-resolution artifact)
        return float(t_lo if abs(f_lo) < abs(f_hi) else t_hi)
    lo, hi = float(t_lo), float(t_hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = psi_at(mid)[0] - critical
        if f_mid == 0.0:
            return mid
        if f_lo * f_mid < 0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class PairwiseReport:
    """All G(G-1)/2 post hoc differences, labelled first-minus-second."""

    metric: str
    pairs: tuple[tuple[str, str], ...]
    delta: np.ndarray
    variance: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    significant: np.ndarray
    level: float
    bonferroni: bool
    t: float | None = None
    grid: np.ndarray | None = None


def pairwise(
    model: FittedModel,
    profiles,
    metric: str = "auc",
    t: float | None = None,
    grid: np.ndarray | None = None,
    level: float = 0.95,
    bonferroni: bool = False,
) -> PairwiseReport:
    """Pairwise accuracy differences with Wald intervals.

    ``metric`` is "auc", "roc" (needs t), or "roc-curve" (difference
    curves over the grid).  Intervals are unadjusted unless
    ``bonferroni`` divides the error rate by the number of pairs.
    """
    if not 0.0 < level < 1.0:
        raise DataError("confidence level must be in (0, 1)")
    xs = _group_profiles(model, profiles)
    labels = model.spec.group_levels
    params, vcov = model.params, model.vcov
    n_groups = len(xs)
    pair_idx = [(i, j) for i in range(n_groups) for j in range(i + 1, n_groups)]
    n_pairs = len(pair_idx)
    eff_level = 1.0 - (1.0 - level) / n_pairs if bonferroni else level
    z = norm.ppf(0.5 * (1.0 + eff_level))

    if metric == "auc":
        lam = np.array([auc_at(params, x) for x in xs])
        f = np.vstack([auc_jacobian(params, x) for x in xs])
    elif metric == "roc":
        if t is None:
            raise DataError("metric 'roc' requires the FPR value t")
        lam = np.array([roc_at(params, x, t) for x in xs])
        f = np.vstack([roc_jacobian(params, x, t) for x in xs])
    elif metric == "roc-curve":
        grid = default_fpr_grid() if grid is None else np.asarray(grid, dtype=float)
        lam = np.vstack([roc_at(params, x, grid) for x in xs])          # (G, n)
        f = np.stack([roc_jacobian(params, x, grid) for x in xs])       # (G, n, dim)
    else:
        raise DataError(f"unknown metric {metric!r}")

    if metric == "roc-curve":
        delta = np.empty((n_pairs, grid.size))
        variance = np.empty_like(delta)
        for row, (i, j) in enumerate(pair_idx):
            delta[row] = lam[i] - lam[j]
            dj = f[i] - f[j]
            variance[row] = np.maximum(np.einsum("nd,de,ne->n", dj, vcov, dj), 0.0)
    else:
        delta = np.array([lam[i] - lam[j] for i, j in pair_idx])
        variance = np.array([
            max(float((f[i] - f[j]) @ vcov @ (f[i] - f[j])), 0.0)
            for i, j in pair_idx
        ])
    half = z * np.sqrt(variance)
    lower, upper = delta - half, delta + half
    return PairwiseReport(
        metric=metric,
        pairs=tuple((labels[i], labels[j]) for i, j in pair_idx),
        delta=delta,
        variance=variance,
        ci_lower=lower,
        ci_upper=upper,
        significant=(lower > 0.0) | (upper < 0.0),
        level=level,
        bonferroni=bonferroni,
        t=t,
        grid=grid if metric == "roc-curve" else None,
    )


def test_report_to_dict(report: TestReport) -> dict:
    """JSON-ready payload covering both scalar and curve modes."""
    scalar = np.isscalar(report.statistic) or np.asarray(report.statistic).ndim == 0
    payload = {
        "metric": report.metric,
        "df": report.df,
        "alpha": report.alpha,
        "critical_value": report.critical_value,
        "statistic": float(report.statistic) if scalar else np.asarray(report.statistic).tolist(),
        "p_value": float(report.p_value) if scalar else np.asarray(report.p_value).tolist(),
        "reject": bool(report.reject) if scalar else np.asarray(report.reject).tolist(),
        "lambda": np.asarray(report.lam).tolist(),
        "lambda_c": np.asarray(report.lambda_c).tolist(),
        "var_lambda_c": np.asarray(report.var_lambda_c).tolist(),
        "t": report.t,
    }
    if report.grid is not None:
        payload["grid"] = np.asarray(report.grid).tolist()
    if report.rejection_regions is not None:
        payload["rejection_regions"] = [list(r) for r in report.rejection_regions]
    return payload


def write_test_report_json(report: TestReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(test_report_to_dict(report), fh, indent=2)


def write_pairwise_csv(report: PairwiseReport, path) -> None:
    """Columns (pair, delta, var, lower, upper, significant); scalar metrics only."""
    if report.metric == "roc-curve":
        raise DataError("curve-mode pairwise output is written per grid point")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("pair,delta,var,lower,upper,significant\n")
        for row, (a, b) in enumerate(report.pairs):
            fh.write(
                f"{a}__{b},{report.delta[row]:.10g},{report.variance[row]:.10g},"
                f"{report.ci_lower[row]:.10g},{report.ci_upper[row]:.10g},"
                f"{int(report.significant[row])}\n"
            )
