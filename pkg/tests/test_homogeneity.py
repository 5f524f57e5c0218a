"""Contrasts, the chi-square statistic, curve-wide testing, and pairs."""

import numpy as np
import pytest
from scipy.stats import chi2, norm

from conftest import fitted_from_params
from ordroc.data import CovariateProfile
from ordroc.errors import DataError, SingularMatrixError
from ordroc.homogeneity import (
    contrast_matrix,
    homogeneity_test,
    lambda_vector,
    pairwise,
    roc_curve_test,
)
from ordroc.power import TrueDesign, sim_design_spec, true_gamma
from ordroc.probit import fit
from ordroc.roc import default_fpr_grid, roc_at
from ordroc.simulate import SimSetting, generate


def truth_model(a, psi=0.5, phi=1.5, vcov_scale=1e-4):
    """FittedModel at the exact truth with a small isotropic vcov."""
    spec = sim_design_spec(len(a))
    design = TrueDesign(psi=psi, phi=phi, a=tuple(a), n_levels=7)
    gamma0 = true_gamma(design, spec)
    model = fitted_from_params(gamma0, spec,
                               vcov=np.eye(gamma0.dim) * vcov_scale)
    return model, spec


def test_contrast_matrix_structure():
    k = contrast_matrix(5)
    assert k.shape == (4, 5)
    assert np.allclose(k[:, :4], np.eye(4))
    assert np.all(k[:, 4] == -1.0)
    assert np.linalg.matrix_rank(k) == 4
    for row in k:
        assert np.sum(row == 1.0) == 1 and np.sum(row == -1.0) == 1


def test_lambda_vector_identical_groups_are_equal():
    model, spec = truth_model([0.0, 0.0, 0.0])
    lam, f = lambda_vector(model, spec.profiles_at([0.5]), metric="roc", t=0.3)
    assert lam.shape == (3,)
    assert np.all(lam == lam[0])
    assert f.shape == (3, model.params.dim)


def test_lambda_vector_setting4_auc_values():
    model, spec = truth_model([0.0, 0.2, 0.4, 0.6, 0.8])
    lam, _ = lambda_vector(model, spec.profiles_at([0.5]), metric="auc")
    assert np.allclose(lam, [0.736, 0.776, 0.812, 0.844, 0.873], atol=1e-3)


def test_lambda_vector_jacobian_zero_structure():
    model, spec = truth_model([0.0, 0.3])
    _, f = lambda_vector(model, spec.profiles_at([0.5]), metric="auc")
    p = model.params.p
    assert np.all(f[:, 1:p + 1] == 0.0)
    assert np.all(f[:, 4 * p + 2:] == 0.0)


def test_lambda_vector_validates_profiles():
    model, spec = truth_model([0.0, 0.3])
    bad = [CovariateProfile("g1", (0.5,)), CovariateProfile("g2", (0.6,))]
    with pytest.raises(DataError, match="share the continuous covariates"):
        lambda_vector(model, bad, metric="auc")
    with pytest.raises(DataError, match="declared group order"):
        lambda_vector(model, list(reversed(spec.profiles_at([0.5]))), metric="auc")


def test_statistic_null_point_gives_zero():
    model, spec = truth_model([0.0, 0.0, 0.0, 0.0])
    lam, f = lambda_vector(model, spec.profiles_at([0.5]), metric="auc")
    report = homogeneity_test(lam, f, model.vcov)
    assert report.statistic == pytest.approx(0.0, abs=1e-20)
    assert report.p_value == pytest.approx(1.0)
    assert not report.reject
    assert report.df == 3


def test_statistic_critical_value_matches_chi2():
    model, spec = truth_model([0.0, 0.1, 0.2, 0.3, 0.4])
    lam, f = lambda_vector(model, spec.profiles_at([0.5]), metric="auc")
    report = homogeneity_test(lam, f, model.vcov, alpha=0.05)
    assert report.df == 4
    assert report.critical_value == pytest.approx(chi2.ppf(0.95, 4), rel=1e-12)
    assert report.critical_value == pytest.approx(9.4877, abs=1e-3)
    assert report.reject == (report.statistic > report.critical_value)
    assert report.p_value == pytest.approx(chi2.sf(report.statistic, 4), rel=1e-12)


def test_statistic_invariant_to_contrast_reference():
    model, spec = truth_model([0.0, 0.25, 0.5])
    lam, f = lambda_vector(model, spec.profiles_at([0.5]), metric="roc", t=0.4)
    base = homogeneity_test(lam, f, model.vcov).statistic
    # contrast against group 1 instead of the last group
    k_alt = np.zeros((2, 3))
    k_alt[:, 1:] = np.eye(2)
    k_alt[:, 0] = -1.0
    alt = homogeneity_test(lam, f, model.vcov, contrast=k_alt).statistic
    assert alt == pytest.approx(base, rel=1e-9)


def test_statistic_variance_matches_naive_triple_product():
    model, spec = truth_model([0.0, 0.2, 0.4])
    lam, f = lambda_vector(model, spec.profiles_at([0.5]), metric="auc")
    report = homogeneity_test(lam, f, model.vcov)
    k = contrast_matrix(3)
    naive = np.zeros((2, 2))
    kf = k @ f
    for i in range(2):
        for j in range(2):
            for a in range(f.shape[1]):
                for b in range(f.shape[1]):
                    naive[i, j] += kf[i, a] * model.vcov[a, b] * kf[j, b]
    assert np.allclose(report.var_lambda_c, naive, atol=1e-12)


def test_statistic_singular_variance_reported():
    lam = np.array([0.7, 0.7, 0.8])
    f = np.vstack([np.ones(5), np.ones(5), np.full(5, 2.0)])  # two rows coincide
    with pytest.raises(SingularMatrixError) as err:
        homogeneity_test(lam, f, np.eye(5))
    assert err.value.condition_number is None or err.value.condition_number > 1e12


def test_roc_curve_test_no_rejection_for_identical_groups():
    model, spec = truth_model([0.0, 0.0, 0.0])
    report = roc_curve_test(model, spec.profiles_at([0.5]),
                            grid=default_fpr_grid(64))
    assert not np.any(report.reject)
    assert report.rejection_regions == ()
    assert report.statistic.shape == (64,)
    assert np.all(report.statistic >= 0.0)


def test_roc_curve_test_detects_separated_groups():
    model, spec = truth_model([0.0, 0.6], vcov_scale=1e-5)
    report = roc_curve_test(model, spec.profiles_at([0.5]),
                            grid=default_fpr_grid(64))
    assert np.any(report.reject)
    assert len(report.rejection_regions) >= 1
    for lo, hi in report.rejection_regions:
        assert 0.0 < lo <= hi < 1.0


def test_roc_curve_region_boundaries_refined_by_bisection():
    model, spec = truth_model([0.0, 0.35], vcov_scale=1e-3)
    grid = default_fpr_grid(128)
    report = roc_curve_test(model, spec.profiles_at([0.5]), grid=grid)
    if not report.rejection_regions or np.all(report.reject):
        pytest.skip("vcov scale gave no interior crossing on this grid")
    spacing = grid[1] - grid[0]
    xs = [spec.encode_profile(p) for p in spec.profiles_at([0.5])]
    k = contrast_matrix(2)
    for lo, hi in report.rejection_regions:
        for boundary in (lo, hi):
            if grid[0] < boundary < grid[-1] and not np.isclose(boundary, grid[0]):
                # psi at the refined boundary is close to critical
                lam = np.array([roc_at(model.params, x, boundary) for x in xs])
                from ordroc.roc import roc_jacobian

                f = np.vstack([roc_jacobian(model.params, x, boundary) for x in xs])
                lc = k @ lam
                vc = (k @ f) @ model.vcov @ (k @ f).T
                psi = float(lc @ np.linalg.solve(vc, lc))
                if abs(boundary - grid[0]) > spacing / 2 and abs(boundary - grid[-1]) > spacing / 2:
                    assert abs(psi - report.critical_value) < 0.15 * report.critical_value


def test_setting2_contrast_gap_shrinks_near_one():
    # true Lambda_C(t) for the one-different-group design goes to 0 as t->1
    spec = sim_design_spec(3)
    design = TrueDesign(psi=0.5, phi=1.5, a=(0.0, 0.0, 0.5), n_levels=7)
    gamma0 = true_gamma(design, spec)
    xs = [spec.encode_profile(p) for p in spec.profiles_at([0.5])]
    gaps = []
    for t in (0.5, 0.9, 0.99, 0.999):
        lam = np.array([roc_at(gamma0, x, t) for x in xs])
        gaps.append(abs(lam[0] - lam[2]))
    assert all(np.diff(gaps) < 0.0)
    assert gaps[-1] < 0.01


def test_pairwise_counts_and_antisymmetry():
    model, spec = truth_model([0.0, 0.2, 0.4, 0.6, 0.8])
    report = pairwise(model, spec.profiles_at([0.5]), metric="auc")
    assert len(report.pairs) == 10
    lam, _ = lambda_vector(model, spec.profiles_at([0.5]), metric="auc")
    idx = {g: i for i, g in enumerate(spec.group_levels)}
    for row, (a, b) in enumerate(report.pairs):
        assert report.delta[row] == pytest.approx(lam[idx[a]] - lam[idx[b]], abs=1e-14)
        width = report.ci_upper[row] - report.ci_lower[row]
        assert width > 0.0
        # antisymmetry: swapping the pair flips the sign, same width
        swapped_delta = lam[idx[b]] - lam[idx[a]]
        assert swapped_delta == pytest.approx(-report.delta[row], abs=1e-14)


def test_pairwise_interval_consistency_with_significance():
    model, spec = truth_model([0.0, 0.15, 0.3], vcov_scale=1e-3)
    report = pairwise(model, spec.profiles_at([0.5]), metric="roc", t=0.3,
                      level=0.95)
    z = norm.ppf(0.975)
    for row in range(len(report.pairs)):
        sd = np.sqrt(report.variance[row])
        expect_sig = abs(report.delta[row]) > z * sd
        assert bool(report.significant[row]) == expect_sig
        assert report.ci_lower[row] <= report.delta[row] <= report.ci_upper[row]


def test_pairwise_bonferroni_widens_intervals():
    model, spec = truth_model([0.0, 0.2, 0.4])
    plain = pairwise(model, spec.profiles_at([0.5]), metric="auc")
    adj = pairwise(model, spec.profiles_at([0.5]), metric="auc", bonferroni=True)
    widths_plain = plain.ci_upper - plain.ci_lower
    widths_adj = adj.ci_upper - adj.ci_lower
    assert np.all(widths_adj > widths_plain)


def test_pairwise_on_fitted_model_runs_end_to_end():
    cfg = SimSetting(setting=2, n_groups=3, items_per_rater=80,
                     raters_per_group=5, seed=17)
    spec = cfg.design_spec()
    model = fit(generate(cfg), spec)
    report = pairwise(model, spec.profiles_at([0.5]), metric="auc")
    assert len(report.pairs) == 3
    assert np.all(np.isfinite(report.delta))
    assert np.all(report.variance >= 0.0)
