"""Likelihood, analytic derivatives, and the Newton fit."""

import numpy as np
import pytest
from scipy.stats import norm

from conftest import loglik_fd_gradient, random_instance, score_fd_jacobian
from ordroc.data import Design, DesignSpec, ObservationTable  # noqa: F401
from ordroc.errors import DataError
from ordroc.probit import (
    FitOptions,
    ModelParams,
    fit,
    hessian,
    log_likelihood,
    model_from_dict,
    model_to_dict,
    per_observation_loglik,
    score,
    vcov_at,
)
from ordroc.simulate import SimSetting, generate


def toy_design(scores, d, n_levels):
    scores = np.asarray(scores)
    return Design(
        x=np.empty((scores.size, 0)),
        d=np.asarray(d, dtype=float),
        scores=scores,
        n_levels=n_levels,
    )


def toy_params(tau):
    z = np.zeros(0)
    return ModelParams(tau=np.asarray(tau, dtype=float), alpha0=0.0, alpha1=z,
                       alpha2=z, beta0=0.0, beta1=z, beta2=z)


def test_loglik_symmetric_probit_single_row():
    design = toy_design([1], [0], n_levels=2)
    assert log_likelihood(design, toy_params([0.0])) == pytest.approx(np.log(0.5))


def test_loglik_additivity():
    design = toy_design([1, 2], [0, 0], n_levels=2)
    assert log_likelihood(design, toy_params([0.0])) == pytest.approx(2 * np.log(0.5))


def test_loglik_interior_category_against_normal_cdf():
    design = toy_design([2], [1], n_levels=3)
    expected = np.log(norm.cdf(1.0) - norm.cdf(-1.0))
    assert log_likelihood(design, toy_params([-1.0, 1.0])) == pytest.approx(expected, abs=1e-12)


def test_score_tau_component_hand_value():
    # single row R=1, D=0, tau=0: d/dtau log Phi(0) = pdf(0)/Phi(0)
    design = toy_design([1], [0], n_levels=2)
    g = score(design, toy_params([0.0]))
    assert g.shape == (3,)  # p=0 keeps (alpha0, beta0, tau1)
    assert g[-1] == pytest.approx(norm.pdf(0.0) / 0.5, rel=1e-12)


def test_empty_table_gives_zero_score_and_hessian():
    design = toy_design(np.empty(0, dtype=int), np.empty(0), n_levels=3)
    params = toy_params([-0.5, 0.5])
    assert log_likelihood(design, params) == 0.0
    assert np.array_equal(score(design, params), np.zeros(params.dim))
    assert np.array_equal(hessian(design, params), np.zeros((params.dim, params.dim)))


def test_score_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(10):
        design, params = random_instance(rng, n=20, p=2, n_levels=4)
        g = score(design, params)
        g_fd = loglik_fd_gradient(design, params)
        worst = max(worst, np.max(np.abs(g - g_fd) / np.maximum(1.0, np.abs(g_fd))))
    assert worst <= 1e-6, f"max relative score error {worst:.3e}"


def test_hessian_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(10):
        design, params = random_instance(rng, n=20, p=2, n_levels=4)
        h = hessian(design, params)
        assert np.allclose(h, h.T, atol=1e-10)
        h_fd = score_fd_jacobian(design, params)
        worst = max(worst, np.max(np.abs(h - h_fd) / np.maximum(1.0, np.abs(h_fd))))
    assert worst <= 1e-5, f"max relative hessian error {worst:.3e}"


def test_tau_block_is_exactly_tridiagonal(rng):
    design, params = random_instance(rng, n=120, p=2, n_levels=5)
    h = hessian(design, params)
    q = 2 * params.p + 1
    tt = h[2 * q:, 2 * q:]
    # (tau1, tau3), (tau1, tau4), (tau2, tau4) and anything further are 0
    assert tt[0, 2] == 0.0 and tt[0, 3] == 0.0 and tt[1, 3] == 0.0
    assert np.all(np.triu(np.abs(tt), k=2) == 0.0)


def test_category_probabilities_normalize(rng):
    design, params = random_instance(rng, n=15, p=2, n_levels=5)
    total = np.zeros(15)
    for level in range(1, 6):
        d2 = Design(x=design.x, d=design.d,
                    scores=np.full(15, level), n_levels=5)
        total += np.exp(per_observation_loglik(d2, params))
    assert np.allclose(total, 1.0, atol=1e-12)


def _small_sim_table(seed=0, setting=1, groups=3, k=40, raters=5):
    cfg = SimSetting(setting=setting, n_groups=groups, items_per_rater=k,
                     raters_per_group=raters, seed=seed)
    return cfg, generate(cfg)


def test_fit_is_deterministic():
    cfg, table = _small_sim_table(seed=12)
    spec = cfg.design_spec()
    m1 = fit(table, spec)
    m2 = fit(table, spec)
    assert np.array_equal(m1.params.to_vector(), m2.params.to_vector())
    assert np.array_equal(m1.vcov, m2.vcov)
    assert m1.loglik == m2.loglik


def test_fit_reaches_gradient_tolerance():
    cfg, table = _small_sim_table(seed=3)
    model = fit(table, cfg.design_spec())
    assert model.converged
    assert model.gradient_norm <= FitOptions().gradient_tol


def test_fit_requires_both_statuses_per_group():
    table = ObservationTable.create(
        [1, 2, 2, 1], [0, 0, 0, 1], ["a", "a", "b", "b"], n_levels=2,
    )
    with pytest.raises(DataError, match="both statuses"):
        fit(table)


def test_vcov_symmetric_and_halves_under_duplication():
    cfg, table = _small_sim_table(seed=21)
    spec = cfg.design_spec()
    model = fit(table, spec)
    assert np.max(np.abs(model.vcov - model.vcov.T)) < 1e-12

    doubled = ObservationTable.create(
        np.concatenate([table.scores, table.scores]),
        np.concatenate([table.status, table.status]),
        list(np.asarray(table.group_levels)[table.group_codes]) * 2,
        np.vstack([table.covariates, table.covariates]),
        n_levels=table.n_levels,
        group_levels=table.group_levels,
        covariate_names=table.covariate_names,
    )
    model2 = fit(doubled, spec)
    assert np.allclose(model2.vcov, 0.5 * model.vcov, rtol=1e-6, atol=1e-14)


def test_vcov_closed_form_binomial_probit():
    # L=2, p=0, all D=0: the tau information is N * pdf(k)^2 / (Phi(k)(1-Phi(k)))
    # at the MLE Phi(k) = (share of R=1); the D coefficients carry no
    # information on a D=0-only design, so the full matrix is singular.
    scores = np.array([1] * 30 + [2] * 70)
    design = toy_design(scores, np.zeros(100), n_levels=2)
    tau_hat = norm.ppf(0.3)
    info = 100 * norm.pdf(tau_hat) ** 2 / (norm.cdf(tau_hat) * (1 - norm.cdf(tau_hat)))
    h = hessian(design, toy_params([tau_hat]))
    assert -h[-1, -1] == pytest.approx(info, rel=1e-10)
    assert score(design, toy_params([tau_hat]))[-1] == pytest.approx(0.0, abs=1e-10)
    from ordroc.errors import SingularMatrixError

    with pytest.raises(SingularMatrixError):
        vcov_at(toy_params([tau_hat]), design)

    # three-category mixed-status design (binary data cannot identify the
    # scale): vcov_at is the inverse negated Hessian
    scores2 = np.array([1] * 30 + [2] * 40 + [3] * 30 + [1] * 20 + [2] * 30 + [3] * 50)
    d2 = np.concatenate([np.zeros(100), np.ones(100)])
    design2 = toy_design(scores2, d2, n_levels=3)
    params2 = toy_params([-0.5, 0.5])
    v2 = vcov_at(params2, design2)
    assert np.allclose(v2 @ (-hessian(design2, params2)), np.eye(4), atol=1e-9)


def test_probability_shift_invariance():
    # shifting all simulated thresholds and the latent intercept by the
    # same constant parameterizes the same distribution; the refit must
    # reproduce the same per-row category probabilities (the thresholds
    # absorb the location intercept)
    from ordroc.data import build_design

    rng = np.random.default_rng(99)
    n, n_levels, shift = 600, 5, 2.5
    x1 = rng.uniform(size=n)
    d = rng.integers(0, 2, size=n)
    groups = np.where(rng.uniform(size=n) < 0.5, "a", "b")
    z = rng.standard_normal(n)
    mean = 1.0 + x1 + d * (0.5 + x1)
    tau = np.array([0.3, 1.0, 1.7, 2.4])
    tables = []
    for c in (0.0, shift):
        latent = mean + c + z
        scores = np.searchsorted(tau + c, latent) + 1
        tables.append(ObservationTable.create(
            scores, d, groups, x1[:, None], n_levels=n_levels,
            group_levels=("a", "b"), covariate_names=("x1",),
        ))
    assert np.array_equal(tables[0].scores, tables[1].scores)
    spec = DesignSpec.for_table(tables[0])
    probs = []
    for table in tables:
        model = fit(table, spec)
        probs.append(np.exp(per_observation_loglik(build_design(table, spec),
                                                   model.params)))
    assert np.allclose(probs[0], probs[1], atol=1e-6)


def test_alpha_recovery_monte_carlo():
    # beta fixed at 0 (phi=1), known thresholds: mean of alpha0-hat over
    # replications should sit within 3 MC standard errors of the truth
    reps = 500
    est = np.empty(reps)
    cfg = SimSetting(setting=1, n_groups=2, items_per_rater=100,
                     raters_per_group=5, phi=1.0, seed=77)
    spec = cfg.design_spec()
    truth_alpha0 = cfg.psi  # reference group's offset is 0 in setting 1
    for r in range(reps):
        table = generate(cfg, rep=r)
        model = fit(table, spec)
        est[r] = model.params.alpha0
    se = est.std(ddof=1) / np.sqrt(reps)
    assert abs(est.mean() - truth_alpha0) <= 3 * se, (
        f"mean alpha0 {est.mean():.4f} vs truth {truth_alpha0} (3se={3*se:.4f})"
    )


def test_accepted_steps_never_decrease_loglik():
    # the line-search contract: refitting with progressively tighter
    # iteration caps yields a nondecreasing log likelihood sequence
    cfg, table = _small_sim_table(seed=31)
    spec = cfg.design_spec()
    lls = []
    for max_iter in (1, 2, 3, 5, 8, 200):
        model = fit(table, spec, FitOptions(max_iter=max_iter))
        lls.append(model.loglik)
    assert np.all(np.diff(lls) >= -1e-10)


def test_empty_interior_category_warns():
    # category 3 of 4 is never observed: the fit must proceed with a
    # warning, the bounding thresholds being only weakly identified
    rng = np.random.default_rng(4)
    n = 400
    scores = rng.choice([1, 2, 4], size=n, p=[0.3, 0.4, 0.3])
    table = ObservationTable.create(
        scores, rng.integers(0, 2, size=n),
        np.where(rng.uniform(size=n) < 0.5, "a", "b"), n_levels=4,
    )
    with pytest.warns(UserWarning, match="interior score categories"):
        model = fit(table)
    assert model.converged
    counts = table.category_counts()
    assert counts[2] == 0


def test_model_json_round_trip():
    cfg, table = _small_sim_table(seed=15)
    model = fit(table, cfg.design_spec())
    payload = model_to_dict(model)
    back = model_from_dict(payload)
    assert np.array_equal(back.params.to_vector(), model.params.to_vector())
    assert np.array_equal(back.vcov, model.vcov)
    assert back.spec == model.spec
    names = payload["parameters"]["names"]
    assert names[0] == "alpha0"
    assert names[-1] == f"tau[{model.n_levels - 1}]"
    assert len(names) == 4 * model.params.p + model.n_levels + 1
