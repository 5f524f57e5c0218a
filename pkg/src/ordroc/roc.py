"""Covariate-specific ROC curves and AUCs with delta-method uncertainty.

For a covariate vector x the fitted latent populations are normal with

    mu1 = alpha0 + (alpha1 + alpha2).x     sigma1 = exp(beta0 + (beta1 + beta2).x)
    mu0 = alpha1.x                         sigma0 = exp(beta1.x)

giving the closed forms

    ROC(t) = Phi( (alpha0 + alpha2.x) / sigma1 + Phi^{-1}(t) * sigma0 / sigma1 )
    AUC    = Phi( (alpha0 + alpha2.x) / sqrt(sigma1^2 + sigma0^2) ).

Note the two ROC denominators intentionally differ: the intercept term
is scaled by sigma1 = exp(beta0 + beta1.x + beta2.x) while the quantile
term is scaled by sigma1/sigma0 = exp(beta0 + beta2.x).  Neither tau nor
alpha1 enters, so their Jacobian entries are exactly zero.  Pointwise
variances are J vcov J' and bands are Wald on the probability scale,
truncated to [0, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import norm

from .data import CovariateProfile, DesignSpec
from .errors import DataError, SingularMatrixError
from .probit import FittedModel, ModelParams

__all__ = [
    "BinormalParams",
    "RocSummary",
    "AucSummary",
    "default_fpr_grid",
    "binormal_from",
    "roc_at",
    "auc_at",
    "roc_jacobian",
    "auc_jacobian",
    "roc_summary",
    "auc_summary",
    "write_roc_csv",
    "auc_summary_to_dict",
]


@dataclass(frozen=True)
class BinormalParams:
    """Latent normal moments of the two status populations at a fixed x."""

    mu0: float
    mu1: float
    sigma0: float
    sigma1: float

    def __post_init__(self):
        if self.sigma0 <= 0 or self.sigma1 <= 0:
            raise DataError("latent standard deviations must be positive")


@dataclass(frozen=True)
class RocSummary:
    profile: CovariateProfile | None
    grid: np.ndarray
    roc: np.ndarray
    jacobian: np.ndarray
    variance: np.ndarray
    band_lower: np.ndarray
    band_upper: np.ndarray
    level: float
    truncated: bool


@dataclass(frozen=True)
class AucSummary:
    profile: CovariateProfile | None
    auc: float
    jacobian: np.ndarray
    variance: float
    ci_lower: float
    ci_upper: float
    level: float
    truncated: bool


def default_fpr_grid(n: int = 512) -> np.ndarray:
    """n equally spaced FPR values on (0, 1), endpoints at 1/(2n) and 1 - 1/(2n)."""
    return np.linspace(1.0 / (2 * n), 1.0 - 1.0 / (2 * n), n)


def _profile_vector(x, spec: DesignSpec | None) -> tuple[np.ndarray, CovariateProfile | None]:
    if isinstance(x, CovariateProfile):
        if spec is None:
            raise DataError("a CovariateProfile needs a design spec to be encoded")
        return spec.encode_profile(x), x
    return np.asarray(x, dtype=float), None


def _check_x(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (params.p,):
        raise DataError(f"profile vector has length {x.size}, expected {params.p}")
    return x


def binormal_from(params: ModelParams, x) -> BinormalParams:
    """Latent means and standard deviations at covariate vector x."""
    x = _check_x(params, x)
    mu0 = float(params.alpha1 @ x)
    mu1 = float(params.alpha0 + (params.alpha1 + params.alpha2) @ x)
    sigma0 = float(np.exp(params.beta1 @ x))
    sigma1 = float(np.exp(params.beta0 + (params.beta1 + params.beta2) @ x))
    return BinormalParams(mu0=mu0, mu1=mu1, sigma0=sigma0, sigma1=sigma1)


def _roc_pieces(params: ModelParams, x: np.ndarray):
    u = float(params.alpha0 + params.alpha2 @ x)
    log_s1 = float(params.beta0 + (params.beta1 + params.beta2) @ x)
    log_s10 = float(params.beta0 + params.beta2 @ x)  # log(sigma1 / sigma0)
    return u, np.exp(log_s1), np.exp(log_s10)


def roc_at(params: ModelParams, x, t):
    """TPR at FPR t in (0, 1); t may be a scalar or an array."""
    x = _check_x(params, x)
    t_arr = np.asarray(t, dtype=float)
    if np.any((t_arr <= 0.0) | (t_arr >= 1.0)):
        raise DataError("FPR values must lie strictly inside (0, 1)")
    u, s1, s10 = _roc_pieces(params, x)
    z = u / s1 + ndtri(t_arr) / s10
    out = ndtr(z)
    return float(out) if np.isscalar(t) or t_arr.ndim == 0 else out


def auc_at(params: ModelParams, x) -> float:
    """Closed-form area under the covariate-specific ROC curve."""
    x = _check_x(params, x)
    b = binormal_from(params, x)
    u = b.mu1 - b.mu0
    return float(ndtr(u / np.hypot(b.sigma1, b.sigma0)))


def roc_jacobian(params: ModelParams, x, t) -> np.ndarray:
    """Gradient of roc_at with respect to the full parameter vector.

    Returns (dim,) for scalar t, else (len(t), dim).  tau and alpha1
    entries are identically zero.
    """
    x = _check_x(params, x)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any((t_arr <= 0.0) | (t_arr >= 1.0)):
        raise DataError("FPR values must lie strictly inside (0, 1)")
    u, s1, s10 = _roc_pieces(params, x)
    q = ndtri(t_arr)
    z = u / s1 + q / s10
    dens = norm.pdf(z)
    p = params.p
    jac = np.zeros((t_arr.size, params.dim))
    jac[:, 0] = dens / s1                                   # alpha0
    jac[:, p + 1:2 * p + 1] = np.outer(dens / s1, x)        # alpha2
    jac[:, 2 * p + 1] = -dens * z                           # beta0
    jac[:, 2 * p + 2:3 * p + 2] = np.outer(-dens * u / s1, x)   # beta1
    jac[:, 3 * p + 2:4 * p + 2] = np.outer(-dens * z, x)        # beta2
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return jac[0]
    return jac


def auc_jacobian(params: ModelParams, x) -> np.ndarray:
    """Gradient of auc_at with respect to the full parameter vector."""
    x = _check_x(params, x)
    b = binormal_from(params, x)
    u = b.mu1 - b.mu0
    v = b.sigma1 ** 2 + b.sigma0 ** 2
    w = u / np.sqrt(v)
    dens = norm.pdf(w)
    p = params.p
    jac = np.zeros(params.dim)
    jac[0] = dens / np.sqrt(v)                              # alpha0
    jac[p + 1:2 * p + 1] = dens / np.sqrt(v) * x            # alpha2
    jac[2 * p + 1] = -dens * w * b.sigma1 ** 2 / v          # beta0
    jac[2 * p + 2:3 * p + 2] = -dens * w * x                # beta1
    jac[3 * p + 2:4 * p + 2] = -dens * w * b.sigma1 ** 2 / v * x  # beta2
    return jac


def _check_vcov(vcov: np.ndarray) -> None:
    w = np.linalg.eigvalsh(0.5 * (vcov + vcov.T))
    scale = float(np.max(np.abs(w))) if w.size else 0.0
    if w.size and w.min() < -1e-8 * scale:
        raise SingularMatrixError(
            "parameter covariance is not positive semidefinite "
            f"(min eigenvalue {w.min():.3e})"
        )


def roc_summary(
    model: FittedModel,
    profile,
    grid: np.ndarray | None = None,
    level: float = 0.95,
) -> RocSummary:
    """Pointwise ROC estimate, delta-method variance and Wald band."""
    if not 0.0 < level < 1.0:
        raise DataError("confidence level must be in (0, 1)")
    x, prof = _profile_vector(profile, model.spec)
    grid = default_fpr_grid() if grid is None else np.asarray(grid, dtype=float)
    _check_vcov(model.vcov)
    curve = roc_at(model.params, x, grid)
    jac = roc_jacobian(model.params, x, grid)
    variance = np.maximum(np.einsum("ij,jk,ik->i", jac, model.vcov, jac), 0.0)
    half = norm.ppf(0.5 * (1.0 + level)) * np.sqrt(variance)
    lower_raw, upper_raw = curve - half, curve + half
    truncated = bool(np.any(lower_raw < 0.0) or np.any(upper_raw > 1.0))
    return RocSummary(
        profile=prof,
        grid=grid,
        roc=np.asarray(curve),
        jacobian=jac,
        variance=variance,
        band_lower=np.clip(lower_raw, 0.0, 1.0),
        band_upper=np.clip(upper_raw, 0.0, 1.0),
        level=level,
        truncated=truncated,
    )


def auc_summary(model: FittedModel, profile, level: float = 0.95) -> AucSummary:
    """AUC estimate with delta-method variance and a truncated Wald interval."""
    if not 0.0 < level < 1.0:
        raise DataError("confidence level must be in (0, 1)")
    x, prof = _profile_vector(profile, model.spec)
    _check_vcov(model.vcov)
    estimate = auc_at(model.params, x)
    jac = auc_jacobian(model.params, x)
    variance = float(max(jac @ model.vcov @ jac, 0.0))
    half = norm.ppf(0.5 * (1.0 + level)) * np.sqrt(variance)
    lower_raw, upper_raw = estimate - half, estimate + half
    return AucSummary(
        profile=prof,
        auc=estimate,
        jacobian=jac,
        variance=variance,
        ci_lower=float(max(lower_raw, 0.0)),
        ci_upper=float(min(upper_raw, 1.0)),
        level=level,
        truncated=bool(lower_raw < 0.0 or upper_raw > 1.0),
    )


def write_roc_csv(summary: RocSummary, path) -> None:
    """Columns (t, roc, var, lower, upper), one row per grid point."""
    rows = np.column_stack([
        summary.grid, summary.roc, summary.variance,
        summary.band_lower, summary.band_upper,
    ])
    header = "t,roc,var,lower,upper"
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.10g")


def auc_summary_to_dict(summary: AucSummary) -> dict:
    prof = summary.profile
    return {
        "auc": summary.auc,
        "var": summary.variance,
        "ci_lower": summary.ci_lower,
        "ci_upper": summary.ci_upper,
        "level": summary.level,
        "truncated": summary.truncated,
        "profile": None if prof is None else {
            "group": prof.group,
            "covariates": list(prof.covariates),
        },
    }


def write_auc_json(summary: AucSummary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(auc_summary_to_dict(summary), fh, indent=2)
