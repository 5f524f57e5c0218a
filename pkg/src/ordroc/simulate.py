"""Monte-Carlo data generator and validation experiments.

Data follow the latent location-scale model: each rater in group g
scores K items, a fraction ``k0_fraction`` of them with D = 0; the item
covariate x1 is drawn uniformly per observation and the latent score

    T | (x1, D=0) ~ N(1 + x1, 1)
    T | (x1, D=1) ~ N(1 + 2*x1 + psi + a_g, phi)

is cut into L ordinal categories.  Four canonical offset patterns cover
the null (all groups equal) and three shapes of the alternative.  The
experiments reproduce the standard operating-characteristic checks:
estimator consistency, confidence-interval coverage, Type I error of
the homogeneity test, and empirical power at the computed minimum
sample size.

Replication r of an experiment stream s draws from an independent
generator keyed by (seed, s, r), so results are bitwise reproducible
and independent of worker scheduling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from joblib import Parallel, delayed

from .data import DesignSpec, ObservationTable
from .errors import DataError
from .homogeneity import lambda_vector, test_statistic
from .power import PowerSpec, TrueDesign, min_sample_size, sim_design_spec, true_gamma
from .probit import FitOptions, fit
from .roc import auc_at, auc_jacobian, roc_at, roc_jacobian

__all__ = [
    "SimSetting",
    "ExperimentResult",
    "group_offsets",
    "generate",
    "consistency_experiment",
    "coverage_experiment",
    "type1_experiment",
    "power_validation",
    "write_experiment_outputs",
]


def group_offsets(setting: int, n_groups: int) -> tuple[float, ...]:
    """Group accuracy offsets a_g for the four canonical settings."""
    if setting == 1:
        a = [0.0] * n_groups
    elif setting == 2:
        a = [0.0] * (n_groups - 1) + [0.5]
    elif setting == 3:
        if n_groups < 3:
            raise DataError("setting 3 needs at least three groups")
        a = [0.0] * (n_groups - 2) + [0.5, 0.5]
    elif setting == 4:
        a = [0.2 * g for g in range(n_groups)]
    else:
        raise DataError(f"unknown setting {setting}; use 1..4")
    return tuple(a)


@dataclass(frozen=True)
class SimSetting:
    """One simulation configuration (dimensions, truth, seed)."""

    setting: int
    n_groups: int
    items_per_rater: int
    raters_per_group: int | tuple[int, ...] = 10
    n_levels: int = 7
    psi: float = 0.5
    phi: float = 1.5
    x1: float = 0.5
    k0_fraction: float = 0.5
    tau_sim: tuple[float, ...] | None = None
    seed: int = 0

    def offsets(self) -> tuple[float, ...]:
        return group_offsets(self.setting, self.n_groups)

    def rater_counts(self) -> tuple[int, ...]:
        j = self.raters_per_group
        if isinstance(j, (int, np.integer)):
            return (int(j),) * self.n_groups
        counts = tuple(int(v) for v in j)
        if len(counts) != self.n_groups:
            raise DataError("raters_per_group needs one entry per group")
        return counts

    def to_true_design(self) -> TrueDesign:
        return TrueDesign(
            psi=self.psi,
            phi=self.phi,
            a=self.offsets(),
            x1=self.x1,
            n_levels=self.n_levels,
            rater_counts=self.rater_counts(),
            k0_fraction=self.k0_fraction,
            tau_sim=self.tau_sim,
        )

    def design_spec(self) -> DesignSpec:
        return sim_design_spec(self.n_groups)


def _rng_for(seed: int, stream: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(stream, rep))
    )


def generate(setting: SimSetting, rep: int = 0, stream: int = 0) -> ObservationTable:
    """Draw one dataset; deterministic given (seed, stream, rep)."""
    design = setting.to_true_design()
    tau = design.thresholds()
    k = setting.items_per_rater
    k0 = int(round(k * setting.k0_fraction))
    raters = setting.rater_counts()
    levels = [f"g{i}" for i in range(1, setting.n_groups + 1)]

    per_rater_d = np.concatenate([np.zeros(k0), np.ones(k - k0)])
    d = np.concatenate([np.tile(per_rater_d, j) for j in raters]).astype(int)
    group_lab = np.concatenate([
        np.repeat(levels[g], raters[g] * k) for g in range(setting.n_groups)
    ])
    offsets = np.concatenate([
        np.repeat(design.a[g], raters[g] * k) for g in range(setting.n_groups)
    ])
    n = d.shape[0]

    rng = _rng_for(setting.seed, stream, rep)
    x1 = rng.uniform(size=n)
    z = rng.standard_normal(n)
    mean = np.where(d == 1, 1.0 + 2.0 * x1 + setting.psi + offsets, 1.0 + x1)
    sd = np.where(d == 1, np.sqrt(setting.phi), 1.0)
    latent = mean + sd * z
    scores = np.searchsorted(tau, latent) + 1

    return ObservationTable.create(
        scores,
        d,
        group_lab,
        x1[:, None],
        n_levels=setting.n_levels,
        group_levels=levels,
        covariate_names=("x1",),
    )


@dataclass(frozen=True)
class ExperimentResult:
    """Per-replication draws plus aggregated operating characteristics."""

    name: str
    n_reps: int
    per_rep: dict
    summary: dict
    config: dict


def _mc_se(frac: float, n: int) -> float:
    return float(np.sqrt(frac * (1.0 - frac) / n))


def _run_reps(worker, n_reps: int, n_jobs: int) -> list:
    if n_jobs == 1:
        return [worker(r) for r in range(n_reps)]
    return Parallel(n_jobs=n_jobs)(delayed(worker)(r) for r in range(n_reps))


def _fit_quiet(table, spec):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fit(table, spec, FitOptions())


def consistency_experiment(
    setting: SimSetting,
    k_grid=(5, 10, 20, 50),
    n_reps: int = 500,
    n_jobs: int = 1,
) -> ExperimentResult:
    """Mean estimated AUC at the evaluation covariate, per sample size."""
    spec = setting.design_spec()
    truth = setting.to_true_design()
    true_auc = float(
        auc_at(
            true_gamma(truth, spec),
            spec.encode_profile(spec.profiles_at([setting.x1])[0]),
        )
    )
    profile_x = spec.encode_profile(spec.profiles_at([setting.x1])[0])

    per_rep: dict = {}
    summary: dict = {"true_auc": true_auc, "k_grid": list(k_grid)}
    for stream, k in enumerate(k_grid):
        sub = replace(setting, items_per_rater=int(k))

        def worker(rep: int, _sub=sub, _stream=stream):
            table = generate(_sub, rep, stream=_stream)
            model = _fit_quiet(table, spec)
            return auc_at(model.params, profile_x)

        aucs = np.asarray(_run_reps(worker, n_reps, n_jobs))
        per_rep[f"auc_k{k}"] = aucs
        mean = float(aucs.mean())
        summary[f"k{k}"] = {
            "mean_auc": mean,
            "mc_se": float(aucs.std(ddof=1) / np.sqrt(n_reps)),
            "bias": mean - true_auc,
            "relative_bias": (mean - true_auc) / true_auc,
        }
    return ExperimentResult(
        name="consistency",
        n_reps=n_reps,
        per_rep=per_rep,
        summary=summary,
        config={"setting": setting.setting, "n_groups": setting.n_groups,
                "k_grid": list(k_grid), "seed": setting.seed},
    )


def coverage_experiment(
    setting: SimSetting,
    k_grid=(25, 50, 100, 200, 400),
    t: float = 0.3,
    level: float = 0.95,
    n_reps: int = 1000,
    n_jobs: int = 1,
) -> ExperimentResult:
    """Coverage of the (level) interval for dROC_12(t) and dAUC_12.

    The difference is group 2 minus group 1; under the null-style
    setting 1 its true value is zero, so coverage is the fraction of
    intervals containing 0.
    """
    from scipy.stats import norm

    spec = setting.design_spec()
    profiles = spec.profiles_at([setting.x1])
    x1_vec = spec.encode_profile(profiles[0])
    x2_vec = spec.encode_profile(profiles[1])
    truth = setting.to_true_design()
    gamma0 = true_gamma(truth, spec)
    true_droc = float(roc_at(gamma0, x2_vec, t) - roc_at(gamma0, x1_vec, t))
    true_dauc = float(auc_at(gamma0, x2_vec) - auc_at(gamma0, x1_vec))
    z = norm.ppf(0.5 * (1.0 + level))

    per_rep: dict = {}
    summary: dict = {"t": t, "level": level, "k_grid": list(k_grid),
                     "true_droc": true_droc, "true_dauc": true_dauc}
    for stream, k in enumerate(k_grid):
        sub = replace(setting, items_per_rater=int(k))

        def worker(rep: int, _sub=sub, _stream=stream):
            table = generate(_sub, rep, stream=_stream)
            model = _fit_quiet(table, spec)
            params, vcov = model.params, model.vcov
            droc = roc_at(params, x2_vec, t) - roc_at(params, x1_vec, t)
            jroc = roc_jacobian(params, x2_vec, t) - roc_jacobian(params, x1_vec, t)
            droc_sd = np.sqrt(max(jroc @ vcov @ jroc, 0.0))
            dauc = auc_at(params, x2_vec) - auc_at(params, x1_vec)
            jauc = auc_jacobian(params, x2_vec) - auc_jacobian(params, x1_vec)
            dauc_sd = np.sqrt(max(jauc @ vcov @ jauc, 0.0))
            return (
                abs(droc - true_droc) <= z * droc_sd,
                abs(dauc - true_dauc) <= z * dauc_sd,
            )

        hits = np.asarray(_run_reps(worker, n_reps, n_jobs), dtype=float)
        per_rep[f"cover_droc_k{k}"] = hits[:, 0]
        per_rep[f"cover_dauc_k{k}"] = hits[:, 1]
        roc_cov = float(hits[:, 0].mean())
        auc_cov = float(hits[:, 1].mean())
        summary[f"k{k}"] = {
            "coverage_droc": roc_cov,
            "coverage_droc_se": _mc_se(roc_cov, n_reps),
            "coverage_dauc": auc_cov,
            "coverage_dauc_se": _mc_se(auc_cov, n_reps),
        }
    return ExperimentResult(
        name="coverage",
        n_reps=n_reps,
        per_rep=per_rep,
        summary=summary,
        config={"setting": setting.setting, "n_groups": setting.n_groups,
                "k_grid": list(k_grid), "t": t, "level": level,
                "seed": setting.seed},
    )


def type1_experiment(
    setting: SimSetting,
    g_list=(3, 5, 7),
    t: float = 0.3,
    alpha: float = 0.05,
    n_reps: int = 2000,
    n_jobs: int = 1,
) -> ExperimentResult:
    """Rejection rate of the homogeneity test under identical groups."""
    if setting.setting != 1:
        raise DataError("the Type-I-error experiment requires setting 1")
    per_rep: dict = {}
    summary: dict = {"alpha": alpha, "t": t, "g_list": list(g_list)}
    for stream, g in enumerate(g_list):
        sub = replace(setting, n_groups=int(g))
        spec = sub.design_spec()
        profiles = spec.profiles_at([setting.x1])

        def worker(rep: int, _sub=sub, _spec=spec, _profiles=profiles, _stream=stream):
            table = generate(_sub, rep, stream=_stream)
            model = _fit_quiet(table, _spec)
            lam_r, f_r = lambda_vector(model, _profiles, metric="roc", t=t)
            roc_report = test_statistic(lam_r, f_r, model.vcov, alpha=alpha,
                                        metric="roc", t=t)
            lam_a, f_a = lambda_vector(model, _profiles, metric="auc")
            auc_report = test_statistic(lam_a, f_a, model.vcov, alpha=alpha,
                                        metric="auc")
            return (roc_report.statistic, roc_report.reject,
                    auc_report.statistic, auc_report.reject)

        rows = np.asarray(_run_reps(worker, n_reps, n_jobs), dtype=float)
        per_rep[f"psi_roc_g{g}"] = rows[:, 0]
        per_rep[f"reject_roc_g{g}"] = rows[:, 1]
        per_rep[f"psi_auc_g{g}"] = rows[:, 2]
        per_rep[f"reject_auc_g{g}"] = rows[:, 3]
        roc_rate = float(rows[:, 1].mean())
        auc_rate = float(rows[:, 3].mean())
        summary[f"g{g}"] = {
            "rejection_roc": roc_rate,
            "rejection_roc_se": _mc_se(roc_rate, n_reps),
            "rejection_auc": auc_rate,
            "rejection_auc_se": _mc_se(auc_rate, n_reps),
        }
    return ExperimentResult(
        name="type1",
        n_reps=n_reps,
        per_rep=per_rep,
        summary=summary,
        config={"setting": setting.setting, "g_list": list(g_list),
                "k": setting.items_per_rater, "t": t, "alpha": alpha,
                "seed": setting.seed},
    )


def power_validation(
    setting: SimSetting,
    t: float = 0.3,
    alpha: float = 0.05,
    beta: float = 0.2,
    k_override: int | None = None,
    n_reps: int = 1000,
    n_jobs: int = 1,
) -> ExperimentResult:
    """Empirical power of the test at the computed minimum sample size.

    Raises for setting 1, where Lambda_C = 0 under the truth and no
    finite sample size exists.
    """
    truth = setting.to_true_design()
    power_spec = PowerSpec(alpha=alpha, beta=beta, truth=truth, metric="roc", t=t)
    size = min_sample_size(power_spec)
    k = int(k_override) if k_override is not None else size.k_min
    sub = replace(setting, items_per_rater=k)
    spec = sub.design_spec()
    profiles = spec.profiles_at([setting.x1])

    def worker(rep: int):
        table = generate(sub, rep, stream=0)
        model = _fit_quiet(table, spec)
        lam, f = lambda_vector(model, profiles, metric="roc", t=t)
        report = test_statistic(lam, f, model.vcov, alpha=alpha, metric="roc", t=t)
        return report.statistic, report.reject

    rows = np.asarray(_run_reps(worker, n_reps, n_jobs), dtype=float)
    rate = float(rows[:, 1].mean())
    return ExperimentResult(
        name="power_validation",
        n_reps=n_reps,
        per_rep={"psi": rows[:, 0], "reject": rows[:, 1]},
        summary={
            "k_used": k,
            "k_min": size.k_min,
            "eta_target": size.eta_target,
            "target_power": 1.0 - beta,
            "empirical_power": rate,
            "empirical_power_se": _mc_se(rate, n_reps),
        },
        config={"setting": setting.setting, "n_groups": setting.n_groups,
                "t": t, "alpha": alpha, "beta": beta, "seed": setting.seed},
    )


def write_experiment_outputs(result: ExperimentResult, out_dir, prefix: str | None = None) -> None:
    """Tidy CSV of per-replication draws plus a summary JSON."""
    import os

    prefix = prefix or result.name
    os.makedirs(out_dir, exist_ok=True)
    keys = sorted(result.per_rep)
    if keys:
        cols = [np.asarray(result.per_rep[k], dtype=float) for k in keys]
        mat = np.column_stack([np.arange(len(cols[0]))] + cols)
        np.savetxt(
            os.path.join(out_dir, f"{prefix}_replications.csv"),
            mat,
            delimiter=",",
            header="rep," + ",".join(keys),
            comments="",
            fmt="%.10g",
        )
    with open(os.path.join(out_dir, f"{prefix}_summary.json"), "w", encoding="utf-8") as fh:
        json.dump({"name": result.name, "n_reps": result.n_reps,
                   "summary": result.summary, "config": result.config}, fh, indent=2)
