"""Location-scale ordinal probit regression with analytic derivatives.

The latent model behind an ordinal score R in 1..L is

    P(R <= l | D, x) = Phi( (tau_l - m) / xi ),
    m  = alpha0*D + alpha1.x + alpha2.(D*x),
    xi = exp(beta0*D + beta1.x + beta2.(D*x)),

with thresholds -inf = tau_0 < tau_1 < ... < tau_{L-1} < tau_L = +inf.
The log likelihood, its gradient (score) and Hessian are computed in
closed form; :func:`fit` runs Newton-Raphson with a backtracking line
search on an unconstrained threshold parameterization and returns the
MLE together with the observed-information covariance.

Parameter-vector ordering is a published contract:
``(alpha0, alpha1[1..p], alpha2[1..p], beta0, beta1[1..p], beta2[1..p],
tau[1..L-1])`` for a total dimension of ``4p + L + 1``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .data import Design, DesignSpec, ObservationTable, build_design
from .errors import DataError, SingularMatrixError

__all__ = [
    "ModelParams",
    "FitOptions",
    "FittedModel",
    "log_likelihood",
    "score",
    "hessian",
    "per_observation_scores",
    "fit",
    "vcov_at",
    "parameter_names",
    "model_to_dict",
    "model_from_dict",
]

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
_LOG_PROB_FLOOR = np.log(1e-300)
_LOG_SCALE_CLIP = 250.0


@dataclass(frozen=True)
class ModelParams:
    """Full parameter vector gamma, split into named blocks."""

    tau: np.ndarray
    alpha0: float
    alpha1: np.ndarray
    alpha2: np.ndarray
    beta0: float
    beta1: np.ndarray
    beta2: np.ndarray

    def __post_init__(self):
        for name in ("tau", "alpha1", "alpha2", "beta1", "beta2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "alpha0", float(self.alpha0))
        object.__setattr__(self, "beta0", float(self.beta0))
        p = self.alpha1.shape[0]
        for name in ("alpha2", "beta1", "beta2"):
            if getattr(self, name).shape != (p,):
                raise DataError(f"{name} must have length {p}")
        if self.tau.ndim != 1 or self.tau.size < 1:
            raise DataError("tau must hold at least one threshold")
        if np.any(np.diff(self.tau) <= 0):
            raise DataError("thresholds must be strictly increasing")

    @property
    def p(self) -> int:
        return self.alpha1.shape[0]

    @property
    def n_levels(self) -> int:
        return self.tau.shape[0] + 1

    @property
    def dim(self) -> int:
        return 4 * self.p + self.n_levels + 1

    @property
    def location_coef(self) -> np.ndarray:
        """(alpha0, alpha1, alpha2) stacked; multiplies (D, x, D*x)."""
        return np.concatenate([[self.alpha0], self.alpha1, self.alpha2])

    @property
    def scale_coef(self) -> np.ndarray:
        """(beta0, beta1, beta2) stacked; multiplies (D, x, D*x)."""
        return np.concatenate([[self.beta0], self.beta1, self.beta2])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.location_coef, self.scale_coef, self.tau])

    @classmethod
    def from_vector(cls, vec, p: int, n_levels: int) -> "ModelParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (4 * p + n_levels + 1,):
            raise DataError(
                f"parameter vector has length {vec.size}, expected {4 * p + n_levels + 1}"
            )
        q = 2 * p + 1
        return cls(
            tau=vec[2 * q:],
            alpha0=vec[0],
            alpha1=vec[1:p + 1],
            alpha2=vec[p + 1:q],
            beta0=vec[q],
            beta1=vec[q + 1:q + p + 1],
            beta2=vec[q + p + 1:2 * q],
        )

    @classmethod
    def zeros(cls, p: int, tau) -> "ModelParams":
        z = np.zeros(p)
        return cls(tau=np.asarray(tau, dtype=float), alpha0=0.0, alpha1=z,
                   alpha2=z.copy(), beta0=0.0, beta1=z.copy(), beta2=z.copy())


def parameter_names(p: int, n_levels: int, column_names=None) -> list[str]:
    """Names in vector order; covariate labels are used when supplied."""
    cols = list(column_names) if column_names is not None else [
        f"x{j + 1}" for j in range(p)
    ]
    if len(cols) != p:
        raise DataError("column_names length does not match p")
    names = ["alpha0"]
    names += [f"alpha1[{c}]" for c in cols]
    names += [f"alpha2[{c}]" for c in cols]
    names += ["beta0"]
    names += [f"beta1[{c}]" for c in cols]
    names += [f"beta2[{c}]" for c in cols]
    names += [f"tau[{l}]" for l in range(1, n_levels)]
    return names


# --------------------------------------------------------------------- #
# Stable normal-interval primitives
# --------------------------------------------------------------------- #


def _norm_logpdf(z: np.ndarray) -> np.ndarray:
    return -0.5 * z * z - _LOG_SQRT_2PI


def _log1mexp(x: np.ndarray) -> np.ndarray:
    """log(1 - exp(x)) for x <= 0, accurate near both ends."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < -np.log(2.0)
    with np.errstate(divide="ignore"):
        out[small] = np.log1p(-np.exp(x[small]))
        out[~small] = np.log(-np.expm1(x[~small]))
    return out


def _interval_logp(ku: np.ndarray, kv: np.ndarray) -> np.ndarray:
    """log P(kv < Z <= ku) for standard normal Z, exact in both tails.

    ku may be +inf (last category) and kv -inf (first category).
    """
    ku = np.asarray(ku, dtype=float)
    kv = np.asarray(kv, dtype=float)
    logp = np.zeros(ku.shape)
    u_inf = np.isinf(ku)
    v_inf = np.isinf(kv)

    both = ~u_inf & ~v_inf
    if np.any(both):
        bu, bv = ku[both], kv[both]
        lp = np.empty(bu.shape)
        upper_tail = bv >= 0
        lower_tail = (bu <= 0) & ~upper_tail
        center = ~upper_tail & ~lower_tail
        with np.errstate(divide="ignore", invalid="ignore"):
            lp[center] = np.log(ndtr(bu[center]) - ndtr(bv[center]))
            a = log_ndtr(-bv[upper_tail])
            lp[upper_tail] = a + _log1mexp(log_ndtr(-bu[upper_tail]) - a)
            a = log_ndtr(bu[lower_tail])
            lp[lower_tail] = a + _log1mexp(log_ndtr(bv[lower_tail]) - a)
        logp[both] = lp
    only_v = v_inf & ~u_inf
    logp[only_v] = log_ndtr(ku[only_v])
    only_u = u_inf & ~v_inf
    logp[only_u] = log_ndtr(-kv[only_u])

    logp = np.nan_to_num(logp, nan=_LOG_PROB_FLOOR, neginf=_LOG_PROB_FLOOR)
    return np.minimum(logp, 0.0)


def _interval_terms(ku: np.ndarray, kv: np.ndarray):
    """log P(kv < Z <= ku) plus the ratios pdf(ku)/P and pdf(kv)/P.

    The ratios are formed in log space, so Mills-ratio behaviour in the
    far tails falls out exactly wherever doubles can represent it.
    """
    logp = _interval_logp(ku, kv)
    u_inf = np.isinf(ku)
    v_inf = np.isinf(kv)
    ru = np.zeros(ku.shape)
    rv = np.zeros(kv.shape)
    ru[~u_inf] = np.exp(_norm_logpdf(ku[~u_inf]) - logp[~u_inf])
    rv[~v_inf] = np.exp(_norm_logpdf(kv[~v_inf]) - logp[~v_inf])
    return logp, ru, rv


class _Workspace:
    """Per-dataset buffers reused across Newton iterations."""

    def __init__(self, design: Design):
        x = np.asarray(design.x, dtype=float)
        d = np.asarray(design.d, dtype=float)
        self.e = np.hstack([d[:, None], x, d[:, None] * x])
        self.scores = np.asarray(design.scores, dtype=np.int64)
        self.n_levels = design.n_levels
        self.p = x.shape[1]
        self.q = 2 * self.p + 1
        self.dim = 2 * self.q + self.n_levels - 1
        self.n = self.scores.shape[0]
        self.cat_rows = [
            np.flatnonzero(self.scores == l) for l in range(1, self.n_levels + 1)
        ]

    def bounds(self, params: ModelParams):
        """Per-row (kappa_upper, kappa_lower, xi) at the given parameters."""
        m = self.e @ params.location_coef
        log_xi = np.clip(self.e @ params.scale_coef, -_LOG_SCALE_CLIP, _LOG_SCALE_CLIP)
        xi = np.exp(log_xi)
        tau_full = np.concatenate([[-np.inf], params.tau, [np.inf]])
        with np.errstate(invalid="ignore"):
            ku = (tau_full[self.scores] - m) / xi
            kv = (tau_full[self.scores - 1] - m) / xi
        return ku, kv, xi


def _as_workspace(design: Design | _Workspace) -> _Workspace:
    return design if isinstance(design, _Workspace) else _Workspace(design)


def _check_dims(ws: _Workspace, params: ModelParams) -> None:
    if params.p != ws.p or params.n_levels != ws.n_levels:
        raise DataError(
            f"parameters sized for (p={params.p}, L={params.n_levels}) do not match "
            f"the design (p={ws.p}, L={ws.n_levels})"
        )


def log_likelihood(design: Design, params: ModelParams) -> float:
    """Sum of per-row log category probabilities (floored at 1e-300)."""
    ws = _as_workspace(design)
    _check_dims(ws, params)
    if ws.n == 0:
        return 0.0
    ku, kv, _ = ws.bounds(params)
    logp = _interval_logp(ku, kv)
    return float(np.sum(np.maximum(logp, _LOG_PROB_FLOOR)))


def _row_scalars(ws: _Workspace, params: ModelParams):
    """Shared per-row pieces for score and Hessian assembly."""
    ku, kv, xi = ws.bounds(params)
    logp, ru, rv = _interval_terms(ku, kv)
    kuf = np.where(np.isfinite(ku), ku, 0.0)
    kvf = np.where(np.isfinite(kv), kv, 0.0)
    a = ru - rv
    b = kuf * ru - kvf * rv
    return logp, ru, rv, kuf, kvf, xi, a, b


def _assemble_score(ws: _Workspace, scal) -> np.ndarray:
    _, ru, rv, _, _, xi, a, b = scal
    g = np.zeros(ws.dim)
    g[:ws.q] = ws.e.T @ (-a / xi)
    g[ws.q:2 * ws.q] = ws.e.T @ (-b)
    upper = np.bincount(ws.scores - 1, weights=ru / xi, minlength=ws.n_levels)
    lower = np.bincount(ws.scores - 1, weights=rv / xi, minlength=ws.n_levels)
    g[2 * ws.q:] = upper[:ws.n_levels - 1] - lower[1:ws.n_levels]
    return g


def score(design: Design, params: ModelParams) -> np.ndarray:
    """Analytic gradient of the log likelihood, in contract order."""
    ws = _as_workspace(design)
    _check_dims(ws, params)
    if ws.n == 0:
        return np.zeros(ws.dim)
    return _assemble_score(ws, _row_scalars(ws, params))


def per_observation_loglik(design: Design, params: ModelParams) -> np.ndarray:
    """Per-row log category probabilities (floored at 1e-300)."""
    ws = _as_workspace(design)
    _check_dims(ws, params)
    if ws.n == 0:
        return np.zeros(0)
    ku, kv, _ = ws.bounds(params)
    return np.maximum(_interval_logp(ku, kv), _LOG_PROB_FLOOR)


def per_observation_scores(design: Design, params: ModelParams) -> np.ndarray:
    """(N, dim) matrix of per-row gradient contributions; rows sum to score()."""
    ws = _as_workspace(design)
    _check_dims(ws, params)
    out = np.zeros((ws.n, ws.dim))
    if ws.n == 0:
        return out
    _, ru, rv, _, _, xi, a, b = _row_scalars(ws, params)
    out[:, :ws.q] = ws.e * (-a / xi)[:, None]
    out[:, ws.q:2 * ws.q] = ws.e * (-b)[:, None]
    rows = np.arange(ws.n)
    has_upper = ws.scores <= ws.n_levels - 1
    out[rows[has_upper], 2 * ws.q + ws.scores[has_upper] - 1] = (ru / xi)[has_upper]
    has_lower = ws.scores >= 2
    out[rows[has_lower], 2 * ws.q + ws.scores[has_lower] - 2] += (-rv / xi)[has_lower]
    return out


def _assemble_hessian(ws: _Workspace, scal) -> np.ndarray:
    h = np.zeros((ws.dim, ws.dim))
    _, ru, rv, kuf, kvf, xi, a, b = scal
    inv_xi = 1.0 / xi
    inv_xi2 = inv_xi * inv_xi

    c_mm = -(b + a * a) * inv_xi2
    c_ms = ((1.0 - kuf ** 2) * ru - (1.0 - kvf ** 2) * rv - a * b) * inv_xi
    c_ss = (kuf * (1.0 - kuf ** 2) * ru - kvf * (1.0 - kvf ** 2) * rv) - b * b
    c_mtu = ru * (kuf + a) * inv_xi2
    c_mtv = -rv * (kvf + a) * inv_xi2
    c_stu = ru * (kuf ** 2 - 1.0 + b) * inv_xi
    c_stv = rv * (1.0 - kvf ** 2 - b) * inv_xi
    c_tutu = -ru * (kuf + ru) * inv_xi2
    c_tvtv = rv * (kvf - rv) * inv_xi2
    c_tutv = ru * rv * inv_xi2

    q, nt = ws.q, ws.n_levels - 1
    loc = slice(0, q)
    sca = slice(q, 2 * q)
    tau = slice(2 * q, 2 * q + nt)

    h[loc, loc] = ws.e.T @ (c_mm[:, None] * ws.e)
    h[loc, sca] = ws.e.T @ (c_ms[:, None] * ws.e)
    h[sca, loc] = h[loc, sca].T
    h[sca, sca] = ws.e.T @ (c_ss[:, None] * ws.e)

    h_lt = np.zeros((q, nt))
    h_st = np.zeros((q, nt))
    for l0, rows in enumerate(ws.cat_rows):  # l0 = category - 1
        if rows.size == 0:
            continue
        er = ws.e[rows]
        if l0 <= nt - 1:
            h_lt[:, l0] += er.T @ c_mtu[rows]
            h_st[:, l0] += er.T @ c_stu[rows]
        if l0 >= 1:
            h_lt[:, l0 - 1] += er.T @ c_mtv[rows]
            h_st[:, l0 - 1] += er.T @ c_stv[rows]
    h[loc, tau] = h_lt
    h[tau, loc] = h_lt.T
    h[sca, tau] = h_st
    h[tau, sca] = h_st.T

    upper = np.bincount(ws.scores - 1, weights=c_tutu, minlength=ws.n_levels)
    lower = np.bincount(ws.scores - 1, weights=c_tvtv, minlength=ws.n_levels)
    diag = upper[:nt] + lower[1:ws.n_levels]
    cross = np.bincount(ws.scores - 1, weights=c_tutv, minlength=ws.n_levels)[1:nt]
    tt = np.zeros((nt, nt))
    tt[np.arange(nt), np.arange(nt)] = diag
    if nt >= 2:
        tt[np.arange(nt - 1), np.arange(1, nt)] = cross
        tt[np.arange(1, nt), np.arange(nt - 1)] = cross
    h[tau, tau] = tt
    return h


def hessian(design: Design, params: ModelParams) -> np.ndarray:
    """Analytic second-derivative matrix of the log likelihood.

    The sign convention is the plain Hessian d2l/dgamma dgamma'; callers
    negate it for information.  The threshold block is exactly
    tridiagonal because each row's category touches two adjacent
    thresholds at most.
    """
    ws = _as_workspace(design)
    _check_dims(ws, params)
    if ws.n == 0:
        return np.zeros((ws.dim, ws.dim))
    return _assemble_hessian(ws, _row_scalars(ws, params))


def _loglik_score_hessian(ws: _Workspace, params: ModelParams):
    """One-pass evaluation shared by the Newton iterations."""
    scal = _row_scalars(ws, params)
    ll = float(np.sum(np.maximum(scal[0], _LOG_PROB_FLOOR)))
    return ll, _assemble_score(ws, scal), _assemble_hessian(ws, scal)


# --------------------------------------------------------------------- #
# Fitting
# --------------------------------------------------------------------- #


@dataclass(frozen=True)
class FitOptions:
    gradient_tol: float = 1e-8
    loglik_rel_tol: float = 1e-12
    max_iter: int = 200
    armijo: float = 1e-4
    min_step: float = 2.0 ** -30
    min_cell_count: int = 5  # (group, status) count below this triggers a warning


@dataclass(frozen=True)
class FittedModel:
    """MLE gamma-hat with its observed-information covariance."""

    params: ModelParams
    vcov: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    gradient_norm: float
    spec: DesignSpec | None
    n_obs: int

    @property
    def n_levels(self) -> int:
        return self.params.n_levels

    def parameter_names(self) -> list[str]:
        cols = self.spec.column_names if self.spec is not None else None
        return parameter_names(self.params.p, self.n_levels, cols)


def _theta_from_tau(tau: np.ndarray) -> np.ndarray:
    theta = np.empty_like(tau)
    theta[0] = tau[0]
    theta[1:] = np.log(np.diff(tau))
    return theta


def _tau_from_theta(theta: np.ndarray) -> np.ndarray:
    inc = np.concatenate([[theta[0]], np.exp(theta[1:])])
    tau = np.cumsum(inc)
    # tiny increments can tie in floating point when |tau| is large;
    # nudge so candidate parameters always satisfy strict ordering
    for l in range(1, tau.size):
        if tau[l] <= tau[l - 1]:
            tau[l] = np.nextafter(tau[l - 1], np.inf)
    return tau


_THETA_CLIP = 30.0  # bounds log threshold increments inside the optimizer


def _params_from_free(phi: np.ndarray, p: int, n_levels: int) -> ModelParams:
    q = 2 * p + 1
    vec = phi.copy()
    theta = phi[2 * q:].copy()
    theta[1:] = np.clip(theta[1:], -_THETA_CLIP, _THETA_CLIP)
    vec[2 * q:] = _tau_from_theta(theta)
    return ModelParams.from_vector(vec, p, n_levels)


def _transform_derivatives(g: np.ndarray, h: np.ndarray | None, theta: np.ndarray, q: int):
    """Chain-rule the gamma-space gradient/Hessian into theta space."""
    nt = theta.size
    jac = np.zeros((nt, nt))
    jac[:, 0] = 1.0
    for m in range(1, nt):
        jac[m:, m] = np.exp(theta[m])
    ts = slice(2 * q, 2 * q + nt)
    g_out = g.copy()
    g_out[ts] = jac.T @ g[ts]
    if h is None:
        return g_out, None
    h_out = h.copy()
    h_out[:, ts] = h_out[:, ts] @ jac
    h_out[ts, :] = jac.T @ h_out[ts, :]
    # second-derivative correction of the cumulative-exp reparameterization
    tail_sums = np.cumsum(g[ts][::-1])[::-1]
    for m in range(1, nt):
        h_out[2 * q + m, 2 * q + m] += np.exp(theta[m]) * tail_sums[m]
    return g_out, h_out


def _starting_thresholds(ws: _Workspace) -> np.ndarray:
    counts = np.bincount(ws.scores - 1, minlength=ws.n_levels)
    cum = np.cumsum(counts)[:ws.n_levels - 1] / max(ws.n, 1)
    cum = np.clip(cum, 0.5 / max(ws.n, 1), 1.0 - 0.5 / max(ws.n, 1))
    tau0 = ndtri(cum)
    for l in range(1, tau0.size):
        tau0[l] = max(tau0[l], tau0[l - 1] + 1e-3)
    return tau0


def _fit_preflight(table: ObservationTable, options: FitOptions) -> None:
    counts = table.group_status_counts()
    missing = [
        f"{table.group_levels[g]} (D={d})"
        for g in range(table.n_groups)
        for d in (0, 1)
        if counts[g, d] == 0
    ]
    if missing:
        raise DataError(
            "each group needs rows with both statuses; missing: " + ", ".join(missing)
        )
    thin = [
        f"{table.group_levels[g]} (D={d}: {counts[g, d]})"
        for g in range(table.n_groups)
        for d in (0, 1)
        if counts[g, d] < options.min_cell_count
    ]
    if thin:
        warnings.warn(
            "small (group, status) cell counts may make the asymptotics unreliable: "
            + "; ".join(thin),
            stacklevel=3,
        )
    cat = table.category_counts()
    empty = [str(l + 1) for l in range(1, table.n_levels - 1) if cat[l] == 0]
    if empty:
        warnings.warn(
            "interior score categories with no observations weaken threshold "
            "identification: " + ", ".join(empty),
            stacklevel=3,
        )


def fit(
    table: ObservationTable,
    spec: DesignSpec | None = None,
    options: FitOptions | None = None,
) -> FittedModel:
    """Maximum-likelihood fit by Newton-Raphson with backtracking.

    Thresholds are optimized as (tau_1, log successive increments) so
    ordering holds throughout; results are reported on the tau scale.
    Deterministic: the same table, spec and options give bitwise
    identical output.
    """
    options = options or FitOptions()
    spec = spec or DesignSpec.for_table(table)
    _fit_preflight(table, options)
    design = build_design(table, spec)
    ws = _Workspace(design)
    q = ws.q

    tau0 = _starting_thresholds(ws)
    phi = np.zeros(ws.dim)
    phi[2 * q:] = _theta_from_tau(tau0)

    params = _params_from_free(phi, ws.p, ws.n_levels)
    ll, g, h = _loglik_score_hessian(ws, params)
    g_phi, h_phi = _transform_derivatives(g, h, phi[2 * q:], q)
    grad_norm = float(np.max(np.abs(g_phi)))
    converged = grad_norm <= options.gradient_tol
    iterations = 0
    stalls = 0

    while not converged and iterations < options.max_iter:
        step = _newton_direction(g_phi, h_phi)
        new_phi, new_ll, moved = _backtrack(ws, phi, step, g_phi, ll, options)
        if not moved:
            break
        iterations += 1
        rel_change = abs(new_ll - ll) / max(1.0, abs(ll))
        phi = new_phi
        params = _params_from_free(phi, ws.p, ws.n_levels)
        ll, g, h = _loglik_score_hessian(ws, params)
        g_phi, h_phi = _transform_derivatives(g, h, phi[2 * q:], q)
        grad_norm = float(np.max(np.abs(g_phi)))
        converged = grad_norm <= options.gradient_tol
        stalls = stalls + 1 if rel_change <= options.loglik_rel_tol else 0
        if stalls >= 2:
            break

    # Near the optimum the Armijo improvement can sink below the floating
    # point resolution of the summed log likelihood while the gradient is
    # still above tolerance; full Newton steps are locally convergent, so
    # polish with the gradient norm as the merit function.
    for _ in range(8):
        if converged or not np.isfinite(grad_norm) or grad_norm > 1e-4:
            break
        step = _newton_direction(g_phi, h_phi)
        cand = _project(phi + step, ws.q)
        cand_params = _params_from_free(cand, ws.p, ws.n_levels)
        c_ll, c_g, c_h = _loglik_score_hessian(ws, cand_params)
        c_gphi, c_hphi = _transform_derivatives(c_g, c_h, cand[2 * q:], q)
        c_norm = float(np.max(np.abs(c_gphi)))
        if not np.isfinite(c_ll) or c_norm >= grad_norm:
            break
        phi, params, ll, g, h = cand, cand_params, c_ll, c_g, c_h
        g_phi, h_phi = c_gphi, c_hphi
        grad_norm = c_norm
        iterations += 1
        converged = grad_norm <= options.gradient_tol

    # Covariance on the tau scale via the chain rule through the
    # increment parameterization: at interior optima this equals the
    # inverse negated gamma-space Hessian exactly, and it stays PSD when
    # a weakly identified threshold collapses against its neighbour.
    names = parameter_names(
        ws.p, ws.n_levels, design.column_names if design.column_names else None
    )
    vcov_phi = _invert_information(-h_phi, names, strict=converged)
    trans = np.eye(ws.dim)
    theta = phi[2 * q:]
    trans[2 * q:, 2 * q] = 1.0
    for m in range(1, theta.size):
        trans[2 * q + m:, 2 * q + m] = np.exp(np.clip(theta[m], -_THETA_CLIP, _THETA_CLIP))
    vcov = trans @ vcov_phi @ trans.T
    vcov = 0.5 * (vcov + vcov.T)
    return FittedModel(
        params=params,
        vcov=vcov,
        loglik=ll,
        iterations=iterations,
        converged=converged,
        gradient_norm=grad_norm,
        spec=spec,
        n_obs=table.n_obs,
    )


def _newton_direction(g_phi: np.ndarray, h_phi: np.ndarray) -> np.ndarray:
    """Solve (-H) d = g when -H is positive definite, else scaled ascent."""
    try:
        chol = np.linalg.cholesky(-h_phi)
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, g_phi))
        if np.all(np.isfinite(step)):
            return step
    except np.linalg.LinAlgError:
        pass
    return g_phi / max(1.0, float(np.max(np.abs(g_phi))))


def _project(phi: np.ndarray, q: int) -> np.ndarray:
    """Keep log threshold increments inside the numeric box."""
    out = phi.copy()
    out[2 * q + 1:] = np.clip(out[2 * q + 1:], -_THETA_CLIP, _THETA_CLIP)
    return out


def _backtrack(ws, phi, step, g_phi, ll, options):
    slope = float(g_phi @ step)
    if slope <= 0.0:  # fallback direction degenerated; try raw gradient
        step = g_phi / max(1.0, float(np.max(np.abs(g_phi))))
        slope = float(g_phi @ step)
    t = 1.0
    while t >= options.min_step:
        cand = _project(phi + t * step, ws.q)
        cand_ll = log_likelihood(ws, _params_from_free(cand, ws.p, ws.n_levels))
        if np.isfinite(cand_ll) and cand_ll >= ll + options.armijo * t * slope:
            if np.array_equal(cand, phi):
                break  # projection pinned the step; no real progress
            return cand, cand_ll, True
        t *= 0.5
    return phi, ll, False


def _describe_direction(names: list[str], direction: np.ndarray) -> str:
    order = np.argsort(-np.abs(direction))[:4]
    return ", ".join(f"{names[j]}={direction[j]:+.3f}" for j in order)


def _invert_information(info: np.ndarray, names: list[str], strict: bool) -> np.ndarray:
    """Invert the (negated-Hessian) information matrix.

    With ``strict`` (the converged case) an indefinite matrix raises and
    a nearly singular one warns, naming the weakly identified direction;
    without it (non-converged diagnostics) the positive part is
    pseudo-inverted so callers still get a symmetric PSD matrix.
    """
    w, v = np.linalg.eigh(0.5 * (info + info.T))
    scale = float(np.max(np.abs(w))) if w.size else 0.0
    if not strict:
        keep = w > max(1e-12 * scale, 0.0)
        if not np.any(keep):
            return np.zeros_like(info)
        vcov = (v[:, keep] / w[keep]) @ v[:, keep].T
        return 0.5 * (vcov + vcov.T)
    if w.size == 0 or w.min() <= 0.0 or not np.all(np.isfinite(w)):
        raise SingularMatrixError(
            "information matrix is singular or indefinite at the solution; "
            f"near-null direction: {_describe_direction(names, v[:, int(np.argmin(w))])}",
            condition_number=float(w.max() / max(w.min(), 1e-300)) if w.size else np.inf,
        )
    if w.min() < 1e-12 * scale:
        warnings.warn(
            "information matrix is nearly singular; variances along "
            f"{_describe_direction(names, v[:, int(np.argmin(w))])} are unreliable",
            stacklevel=3,
        )
    vcov = (v / w) @ v.T
    return 0.5 * (vcov + vcov.T)


def vcov_at(params: ModelParams, design: Design) -> np.ndarray:
    """Inverse negated Hessian at arbitrary params (not only at the MLE)."""
    ws = _as_workspace(design)
    names = parameter_names(
        ws.p, ws.n_levels,
        design.column_names if getattr(design, "column_names", None) else None,
    )
    return _invert_information(-hessian(ws, params), names, strict=True)


# --------------------------------------------------------------------- #
# Serialization
# --------------------------------------------------------------------- #


def model_to_dict(model: FittedModel) -> dict:
    """JSON-ready payload: named parameters, vcov (row-major), diagnostics."""
    spec = model.spec
    return {
        "parameters": {
            "names": model.parameter_names(),
            "values": model.params.to_vector().tolist(),
        },
        "n_levels": model.n_levels,
        "vcov": model.vcov.ravel().tolist(),
        "loglik": model.loglik,
        "convergence": {
            "converged": bool(model.converged),
            "iterations": model.iterations,
            "gradient_norm": model.gradient_norm,
            "n_obs": model.n_obs,
        },
        "design": None if spec is None else {
            "group_levels": list(spec.group_levels),
            "reference_group": spec.reference_group,
            "covariate_names": list(spec.covariate_names),
        },
    }


def model_from_dict(payload: dict) -> FittedModel:
    values = np.asarray(payload["parameters"]["values"], dtype=float)
    n_levels = int(payload["n_levels"])
    p = (values.size - n_levels - 1) // 4
    params = ModelParams.from_vector(values, p, n_levels)
    dim = params.dim
    vcov = np.asarray(payload["vcov"], dtype=float).reshape(dim, dim)
    spec_payload = payload.get("design")
    spec = None
    if spec_payload is not None:
        spec = DesignSpec(
            tuple(spec_payload["group_levels"]),
            spec_payload["reference_group"],
            tuple(spec_payload["covariate_names"]),
        )
    conv = payload["convergence"]
    return FittedModel(
        params=params,
        vcov=vcov,
        loglik=float(payload["loglik"]),
        iterations=int(conv["iterations"]),
        converged=bool(conv["converged"]),
        gradient_norm=float(conv["gradient_norm"]),
        spec=spec,
        n_obs=int(conv["n_obs"]),
    )


def save_model(model: FittedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2)


def load_model(path) -> FittedModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
