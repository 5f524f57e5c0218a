"""Shared oracles and fixtures: finite differences and random instances."""

import numpy as np
import pytest

from ordroc.data import Design
from ordroc.probit import ModelParams, log_likelihood, score

FD_STEP = float(np.finfo(float).eps) ** (1.0 / 3.0)


def finite_diff_gradient(fn, vec, step=FD_STEP):
    """Central finite differences of a scalar function of a vector."""
    vec = np.asarray(vec, dtype=float)
    out = np.zeros_like(vec)
    for j in range(vec.size):
        h = step * max(1.0, abs(vec[j]))
        vp, vm = vec.copy(), vec.copy()
        vp[j] += h
        vm[j] -= h
        out[j] = (fn(vp) - fn(vm)) / (2.0 * h)
    return out


def finite_diff_jacobian(fn, vec, step=FD_STEP):
    """Central finite differences of a vector function of a vector."""
    vec = np.asarray(vec, dtype=float)
    cols = []
    for j in range(vec.size):
        h = step * max(1.0, abs(vec[j]))
        vp, vm = vec.copy(), vec.copy()
        vp[j] += h
        vm[j] -= h
        cols.append((np.asarray(fn(vp)) - np.asarray(fn(vm))) / (2.0 * h))
    return np.column_stack(cols)


def loglik_fd_gradient(design, params):
    def fn(vec):
        return log_likelihood(design, ModelParams.from_vector(vec, params.p, params.n_levels))

    return finite_diff_gradient(fn, params.to_vector())


def score_fd_jacobian(design, params):
    def fn(vec):
        return score(design, ModelParams.from_vector(vec, params.p, params.n_levels))

    return finite_diff_jacobian(fn, params.to_vector())


def random_instance(rng, n=20, p=2, n_levels=4, coef_scale=0.5, beta_scale=0.3):
    """Small random design + valid parameters for derivative checks."""
    x = rng.normal(size=(n, p))
    d = rng.integers(0, 2, size=n)
    scores = rng.integers(1, n_levels + 1, size=n)
    design = Design(x=x, d=d, scores=scores, n_levels=n_levels)
    tau = np.sort(rng.normal(size=n_levels - 1) * 1.2)
    tau += np.arange(n_levels - 1) * 0.05
    params = ModelParams(
        tau=tau,
        alpha0=rng.normal() * coef_scale,
        alpha1=rng.normal(size=p) * coef_scale,
        alpha2=rng.normal(size=p) * coef_scale,
        beta0=rng.normal() * beta_scale,
        beta1=rng.normal(size=p) * beta_scale,
        beta2=rng.normal(size=p) * beta_scale,
    )
    return design, params


def fitted_from_params(params, spec, vcov=None):
    """Wrap known parameters as a FittedModel (identity vcov by default)."""
    from ordroc.probit import FittedModel

    dim = params.dim
    return FittedModel(
        params=params,
        vcov=np.eye(dim) if vcov is None else np.asarray(vcov, dtype=float),
        loglik=0.0,
        iterations=0,
        converged=True,
        gradient_norm=0.0,
        spec=spec,
        n_obs=0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
