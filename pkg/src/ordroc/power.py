"""Power and minimum-sample-size analysis for the homogeneity test.

Under the alternative the test statistic follows a noncentral
chi-square with G - 1 degrees of freedom; given (alpha, beta) the
required noncentrality eta is solved from

    1 - beta = P( chi2_{G-1}(eta) > chi2_{G-1, alpha} )

and the smallest per-rater item count K satisfying

    eta <= Lambda_C' [K F Sigma(K) F' K']^{-1} Lambda_C

is found by scanning K, where Sigma(K) is the inverse of the analytic
expected information of the whole design at the true parameters (group
cells weighted by rater counts and the D split, the uniform covariate
integrated by Gauss-Legendre quadrature).  The expected information is
exactly linear in K, which the scan exploits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, ndtr
from scipy.stats import chi2

from .data import CovariateProfile, Design, DesignSpec
from .errors import DataError, SingularMatrixError, StatisticalError
from .probit import ModelParams, per_observation_loglik, per_observation_scores
from .roc import auc_at, auc_jacobian, roc_at, roc_jacobian
from .homogeneity import contrast_matrix

__all__ = [
    "TrueDesign",
    "PowerSpec",
    "SampleSizeResult",
    "noncentral_chisq_cdf",
    "solve_eta",
    "sim_design_spec",
    "true_gamma",
    "default_sim_thresholds",
    "expected_information",
    "min_sample_size",
]

_POISSON_TAIL = 1e-12
_GL_NODES = 32


@dataclass(frozen=True)
class TrueDesign:
    """True data-generating configuration of the latent simulation model.

    Latent scores are N(1 + x1, 1) for D = 0 and
    N(1 + 2*x1 + psi + a_g, phi) for D = 1 in group g, with x1 uniform
    on [0, 1]; scores are cut into n_levels ordinal categories by
    tau_sim.  ``rater_counts`` holds J_g per group (absolute counts, so
    unequal allocations are ratios times a base J); ``k0_fraction`` is
    the share of D = 0 items in each rater's workload.
    """

    psi: float
    phi: float
    a: tuple[float, ...]
    x1: float = 0.5
    n_levels: int = 7
    rater_counts: tuple[int, ...] | None = None
    k0_fraction: float = 0.5
    tau_sim: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        if len(self.a) < 2:
            raise DataError("need at least two groups")
        if self.a[0] != 0.0:
            raise DataError("group offsets are anchored at a_1 = 0")
        if self.phi <= 0.0:
            raise DataError("phi must be positive")
        if not 0.0 < self.k0_fraction < 1.0:
            raise DataError("k0_fraction must be in (0, 1)")
        if self.rater_counts is None:
            object.__setattr__(self, "rater_counts", (10,) * len(self.a))
        else:
            counts = tuple(int(j) for j in self.rater_counts)
            if len(counts) != len(self.a) or any(j <= 0 for j in counts):
                raise DataError("rater_counts needs one positive entry per group")
            object.__setattr__(self, "rater_counts", counts)
        if self.tau_sim is not None:
            ts = tuple(float(v) for v in self.tau_sim)
            if len(ts) != self.n_levels - 1 or np.any(np.diff(ts) <= 0):
                raise DataError("tau_sim must be n_levels - 1 increasing cuts")
            object.__setattr__(self, "tau_sim", ts)

    @property
    def n_groups(self) -> int:
        return len(self.a)

    def thresholds(self) -> np.ndarray:
        """Declared tau_sim, or the pooled-mixture-quantile default."""
        if self.tau_sim is not None:
            return np.asarray(self.tau_sim, dtype=float)
        return default_sim_thresholds(self)


@dataclass(frozen=True)
class PowerSpec:
    """Specification of one minimum-sample-size problem."""

    alpha: float
    beta: float
    truth: TrueDesign
    metric: str = "roc"
    t: float | None = None
    k_cap: int = 10 ** 6

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0 or not 0.0 < self.beta < 1.0:
            raise DataError("alpha and beta must be in (0, 1)")
        if self.metric not in ("roc", "auc"):
            raise DataError("metric must be 'roc' or 'auc'")
        if self.metric == "roc" and (self.t is None or not 0.0 < self.t < 1.0):
            raise DataError("metric 'roc' requires t in (0, 1)")


@dataclass(frozen=True)
class SampleSizeResult:
    """Smallest K with eta(K) at or above the target noncentrality."""

    k_min: int
    eta_target: float
    eta_at_k: float
    eta_below_k: float
    eta_per_item: float
    metric: str
    t: float | None


# --------------------------------------------------------------------- #
# Noncentral chi-square
# --------------------------------------------------------------------- #


def noncentral_chisq_cdf(x: float, df: int, eta: float) -> float:
    """P(chi2_df(eta) <= x) via the Poisson-weighted central series.

    Terms are accumulated outward from the Poisson mode of eta/2 and the
    series stops once the remaining Poisson mass drops below 1e-12.
    """
    if df < 1:
        raise DataError("df must be at least 1")
    if eta < 0.0:
        raise DataError("noncentrality must be nonnegative")
    if x <= 0.0:
        return 0.0
    if eta == 0.0:
        return float(chi2.cdf(x, df))
    half = 0.5 * eta
    mode = int(half)
    log_w_mode = -half + mode * np.log(half) - float(gammaln(mode + 1))
    acc = 0.0
    mass = 0.0
    # walk up from the mode, then down, with the pmf recurrences
    w = np.exp(log_w_mode)
    j = mode
    while True:
        acc += w * float(chi2.cdf(x, df + 2 * j))
        mass += w
        if 1.0 - mass < _POISSON_TAIL:
            return float(min(max(acc, 0.0), 1.0))
        j += 1
        w *= half / j
        if w == 0.0 or j - mode > 10_000_000:
            break
    w = np.exp(log_w_mode)
    j = mode
    while j > 0:
        w *= j / half
        j -= 1
        acc += w * float(chi2.cdf(x, df + 2 * j))
        mass += w
        if 1.0 - mass < _POISSON_TAIL:
            break
    return float(min(max(acc, 0.0), 1.0))


def solve_eta(alpha: float, beta: float, df: int) -> float:
    """Noncentrality giving power 1 - beta at level alpha, by bisection."""
    if not 0.0 < alpha < 1.0 or not 0.0 < beta < 1.0:
        raise DataError("alpha and beta must be in (0, 1)")
    crit = float(chi2.ppf(1.0 - alpha, df))
    target = 1.0 - beta

    def power(eta: float) -> float:
        return 1.0 - noncentral_chisq_cdf(crit, df, eta)

    if target <= power(0.0):
        return 0.0
    lo, hi = 0.0, 200.0
    while power(hi) < target:
        hi *= 2.0
        assert hi < 1e9, "noncentrality bracket failed for valid (alpha, beta, df)"
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        pm = power(mid)
        if abs(pm - target) <= 1e-8:
            return mid
        if pm < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------- #
# Truth construction
# --------------------------------------------------------------------- #


def sim_design_spec(n_groups: int, reference: str | None = None) -> DesignSpec:
    """Canonical design for simulated data: groups g1..gG plus covariate x1."""
    levels = tuple(f"g{i}" for i in range(1, n_groups + 1))
    ref = levels[-1] if reference is None else reference
    return DesignSpec(levels, ref, ("x1",))


def _gl_nodes_unit() -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(_GL_NODES)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def default_sim_thresholds(design: TrueDesign) -> np.ndarray:
    """Equally weighted quantile cuts of the pooled latent mixture.

    The mixture puts equal prior mass on the two statuses, weights
    groups by their rater counts, and integrates the uniform covariate
    by quadrature; the cuts put mass 1/L in every ordinal category.
    """
    nodes, weights = _gl_nodes_unit()
    raters = np.asarray(design.rater_counts, dtype=float)
    w_g = raters / raters.sum()
    sd1 = np.sqrt(design.phi)
    mu0 = 1.0 + nodes
    mu1 = 1.0 + 2.0 * nodes[None, :] + design.psi + np.asarray(design.a)[:, None]

    def mixture_cdf(c: float) -> float:
        f0 = weights @ ndtr(c - mu0)
        f1 = w_g @ (ndtr((c - mu1) / sd1) @ weights)
        return 0.5 * f0 + 0.5 * f1

    lo = float(mu1.min() - 10.0 * max(1.0, sd1) - 2.0)
    hi = float(mu1.max() + 10.0 * max(1.0, sd1) + 2.0)
    lo = min(lo, float(mu0.min() - 12.0))
    hi = max(hi, float(mu0.max() + 12.0))
    cuts = np.empty(design.n_levels - 1)
    for l in range(1, design.n_levels):
        cuts[l - 1] = brentq(
            lambda c: mixture_cdf(c) - l / design.n_levels, lo, hi, xtol=1e-12
        )
    return cuts


def true_gamma(design: TrueDesign, spec: DesignSpec | None = None) -> ModelParams:
    """Map the latent simulation truth onto the regression parameters.

    The latent intercept of 1 is absorbed into the thresholds, the
    reference group's offset into alpha0, so any reference choice yields
    the same implied ROC curves and AUCs.
    """
    spec = sim_design_spec(design.n_groups) if spec is None else spec
    if spec.n_groups != design.n_groups or len(spec.covariate_names) != 1:
        raise DataError("design spec must declare the simulation groups plus x1")
    p = spec.p
    a = dict(zip(spec.group_levels, design.a))
    a_ref = a[spec.reference_group]
    alpha1 = np.zeros(p)
    alpha1[-1] = 1.0
    alpha2 = np.zeros(p)
    alpha2[-1] = 1.0
    for j, level in enumerate(spec.dummy_levels):
        alpha2[j] = a[level] - a_ref
    return ModelParams(
        tau=design.thresholds() - 1.0,
        alpha0=design.psi + a_ref,
        alpha1=alpha1,
        alpha2=alpha2,
        beta0=0.5 * np.log(design.phi),
        beta1=np.zeros(p),
        beta2=np.zeros(p),
    )


# --------------------------------------------------------------------- #
# Expected information and the sample-size scan
# --------------------------------------------------------------------- #


def expected_information(
    gamma0: ModelParams,
    design: TrueDesign,
    k_items: float,
    spec: DesignSpec | None = None,
) -> np.ndarray:
    """Fisher information of the whole design at gamma0, K items per rater.

    Cells are (group, status, quadrature node); each contributes its
    category-probability-weighted score outer products.  The result is
    exactly linear in ``k_items``.
    """
    spec = sim_design_spec(design.n_groups) if spec is None else spec
    nodes, weights = _gl_nodes_unit()
    n_levels = gamma0.n_levels
    raters = np.asarray(design.rater_counts, dtype=float)

    cell_x, cell_d, cell_w = [], [], []
    for g, level in enumerate(spec.group_levels):
        for d, frac in ((0, design.k0_fraction), (1, 1.0 - design.k0_fraction)):
            for node, w in zip(nodes, weights):
                x = spec.encode_profile(CovariateProfile(level, (float(node),)))
                cell_x.append(x)
                cell_d.append(d)
                cell_w.append(raters[g] * k_items * frac * w)
    cell_x = np.asarray(cell_x)
    cell_d = np.asarray(cell_d, dtype=float)
    cell_w = np.asarray(cell_w)

    n_cells = cell_x.shape[0]
    x_rep = np.repeat(cell_x, n_levels, axis=0)
    d_rep = np.repeat(cell_d, n_levels)
    w_rep = np.repeat(cell_w, n_levels)
    scores = np.tile(np.arange(1, n_levels + 1), n_cells)
    pseudo = Design(x=x_rep, d=d_rep, scores=scores, n_levels=n_levels)

    probs = np.exp(per_observation_loglik(pseudo, gamma0))
    grads = per_observation_scores(pseudo, gamma0)
    info = (grads * (w_rep * probs)[:, None]).T @ grads
    return 0.5 * (info + info.T)


def _true_lambda_and_f(gamma0: ModelParams, design: TrueDesign, spec: DesignSpec,
                       metric: str, t: float | None):
    xs = [
        spec.encode_profile(CovariateProfile(level, (design.x1,)))
        for level in spec.group_levels
    ]
    if metric == "auc":
        lam = np.array([auc_at(gamma0, x) for x in xs])
        f = np.vstack([auc_jacobian(gamma0, x) for x in xs])
    else:
        lam = np.array([roc_at(gamma0, x, t) for x in xs])
        f = np.vstack([roc_jacobian(gamma0, x, t) for x in xs])
    return lam, f


def min_sample_size(power_spec: PowerSpec) -> SampleSizeResult:
    """Smallest per-rater item count K meeting the power requirement."""
    truth = power_spec.truth
    spec = sim_design_spec(truth.n_groups)
    gamma0 = true_gamma(truth, spec)
    lam, f = _true_lambda_and_f(gamma0, truth, spec, power_spec.metric, power_spec.t)
    k_contrast = contrast_matrix(truth.n_groups)
    lambda_c = k_contrast @ lam
    if np.max(np.abs(lambda_c)) < 1e-14:
        raise StatisticalError(
            "Lambda_C = 0 under the stated truth: no finite sample size can "
            "reach the requested power"
        )
    eta_target = solve_eta(power_spec.alpha, power_spec.beta, truth.n_groups - 1)

    info_1 = expected_information(gamma0, truth, 1.0, spec)
    w = np.linalg.eigvalsh(info_1)
    if w.min() <= 0.0:
        raise SingularMatrixError(
            "expected information is not positive definite at the truth "
            f"(min eigenvalue {w.min():.3e})"
        )
    sigma_1 = np.linalg.inv(info_1)
    kf = k_contrast @ f
    var_1 = kf @ sigma_1 @ kf.T
    eta_1 = float(lambda_c @ np.linalg.solve(var_1, lambda_c))
    if eta_1 <= 0.0:
        raise StatisticalError("noncentrality per item is not positive")

    def eta_at(k: int) -> float:
        return k * eta_1

    k = max(1, int(np.floor(eta_target / eta_1)) - 2)
    while eta_at(k) < eta_target:
        k += 1
        if k > power_spec.k_cap:
            raise StatisticalError(
                f"sample-size scan exceeded the cap of {power_spec.k_cap}"
            )
    while k > 1 and eta_at(k - 1) >= eta_target:
        k -= 1
    return SampleSizeResult(
        k_min=k,
        eta_target=eta_target,
        eta_at_k=eta_at(k),
        eta_below_k=eta_at(k - 1) if k > 1 else 0.0,
        eta_per_item=eta_1,
        metric=power_spec.metric,
        t=power_spec.t,
    )
