"""Quasi-Newton sub-problems: covariate gain rates and dwell-law hyperparameters.

Both blocks are smooth, low-dimensional and solved with limited-memory BFGS
(scipy's implementation) behind a small problem abstraction.  Objectives and
analytic gradients live here so they can be finite-difference checked.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import digamma, gammaln, polygamma

from .errors import NumericalStateError
from .posteriors import GammaPosterior, NormalGammaPosterior, normal_gamma_kl
from .chains import LOG_HALF_2PI

__all__ = [
    "SmoothProblem",
    "maximize_smooth",
    "covariate_objective",
    "update_covariate_rates",
    "duration_objective",
    "update_duration_hyperparams",
]

GRAD_TOL = 1e-8
MAX_ITER = 100


@dataclass
class SmoothProblem:
    """A smooth maximization problem: value-and-gradient callable plus start."""

    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]]
    x0: np.ndarray
    grad_tol: float = GRAD_TOL
    max_iter: int = MAX_ITER
    label: str = "smooth-problem"


@dataclass
class SmoothResult:
    x: np.ndarray
    value: float
    converged: bool
    n_iter: int


def maximize_smooth(problem: SmoothProblem) -> SmoothResult:
    """Run L-BFGS-B on the negated objective; warn (not fail) on iteration cap."""

    def negated(x):
        value, grad = problem.value_and_grad(x)
        return -value, -grad

    res = minimize(
        negated,
        np.asarray(problem.x0, dtype=float),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": problem.max_iter, "gtol": problem.grad_tol, "ftol": 1e-14},
    )
    if not res.success and res.nit >= problem.max_iter:
        warnings.warn(
            f"{problem.label}: optimizer hit the iteration cap, using best point found",
            RuntimeWarning,
        )
    return SmoothResult(x=res.x, value=-res.fun, converged=bool(res.success), n_iter=res.nit)


# ---------------------------------------------------------------------------
# Covariate gain rates
# ---------------------------------------------------------------------------


def covariate_objective(
    eps: np.ndarray,
    covariates: np.ndarray,
    rate_weights: np.ndarray,
    post_shape: np.ndarray,
    prior_rate: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Objective and gradient for the covariate-rate reparameterization.

    ``eps`` is (U, R); the gain-rate parameters are ``post_shape * exp(-eps)``
    so the posterior gain mean is exp(eps).  ``rate_weights`` is the (T, U)
    table of noise-weighted expected rates excluding the covariate factor.
    The objective is the covariate block of the variational bound:

        sum_ur [ post_shape * eps - prior_rate * exp(eps) ]
        - sum_tu rate_weights * exp(sum_r eps_ur * x_tr)

    which is concave in eps with stationary point at the prior when no
    observations are present.
    """
    eps = np.asarray(eps, dtype=float)
    exponent = covariates @ eps.T  # (T, U)
    if not np.all(np.isfinite(exponent)):
        raise NumericalStateError("covariate objective exponent is non-finite")
    with np.errstate(over="raise"):
        try:
            gain_at_obs = np.exp(exponent)
            gain_mean = np.exp(eps)
        except FloatingPointError:
            raise NumericalStateError("covariate objective exponent overflow")
    weighted = rate_weights * gain_at_obs
    value = float(np.sum(post_shape * eps - prior_rate * gain_mean) - weighted.sum())
    grad = post_shape - prior_rate * gain_mean - weighted.T @ covariates
    return value, grad


def update_covariate_rates(
    covariates: np.ndarray,
    rate_weights: np.ndarray,
    count_weighted: np.ndarray,
    prior_shape: np.ndarray,
    prior_rate: np.ndarray,
) -> tuple[GammaPosterior, SmoothResult]:
    """Conjugate shape update plus a BFGS solve of each unit's rates.

    All covariates of one unit are optimized together; units decouple, so
    each is its own small concave problem.  Starts from eps = 0 (rate equal
    to the freshly updated shape) and returns the gamma table with
    rate = shape * exp(-eps*).
    """
    post_shape = np.asarray(prior_shape, dtype=float) + count_weighted
    n_units, n_cov = post_shape.shape
    if n_cov == 0:
        return GammaPosterior(post_shape, np.asarray(prior_rate, float).copy()), SmoothResult(
            np.zeros(0), 0.0, True, 0
        )

    prior_rate = np.asarray(prior_rate, dtype=float)
    eps_star = np.zeros((n_units, n_cov))
    total_value = 0.0
    converged = True
    n_iter = 0
    for u in range(n_units):
        shape_u = post_shape[u : u + 1]
        rate_u = prior_rate[u : u + 1]
        weights_u = rate_weights[:, u : u + 1]

        def value_and_grad(flat, shape_u=shape_u, rate_u=rate_u, weights_u=weights_u):
            value, grad = covariate_objective(
                flat.reshape(1, n_cov), covariates, weights_u, shape_u, rate_u
            )
            return value, grad.ravel()

        res = maximize_smooth(
            SmoothProblem(value_and_grad, np.zeros(n_cov), label=f"covariate-rates[u={u}]")
        )
        eps_star[u] = res.x
        total_value += res.value
        converged &= res.converged
        n_iter = max(n_iter, res.n_iter)
    summary = SmoothResult(eps_star.ravel(), total_value, converged, n_iter)
    return GammaPosterior(post_shape, post_shape * np.exp(-eps_star)), summary


# ---------------------------------------------------------------------------
# Dwell-law hyperparameters
# ---------------------------------------------------------------------------


def _unpack(params: np.ndarray, n_states: int) -> NormalGammaPosterior:
    p = params.reshape(n_states, 4)
    return NormalGammaPosterior(p[:, 0], np.exp(p[:, 1]), np.exp(p[:, 2]), np.exp(p[:, 3]))


def _pack(ng: NormalGammaPosterior) -> np.ndarray:
    return np.stack([ng.mu, np.log(ng.lam), np.log(ng.alpha), np.log(ng.beta)], axis=1).ravel()


def duration_objective(
    params: np.ndarray,
    dwell_stats: np.ndarray,
    prior: NormalGammaPosterior,
    max_dwell: int,
) -> tuple[float, np.ndarray]:
    """Dwell-law block of the bound with its analytic gradient.

    ``params`` packs (mu, log lam, log alpha, log beta) per state.  The value
    is the dwell-statistics-weighted expected log density, minus the Jensen
    bound on the truncation normalizer, minus the KL to the normal-gamma
    prior; all per state, summed.
    """
    D = max_dwell
    S = dwell_stats.shape[1]
    ng = _unpack(params, S)
    log_d = np.log(np.arange(1, D + 1, dtype=float))
    value = 0.0
    grad = np.zeros((S, 4))

    for j in range(S):
        c = dwell_stats[:, j]
        c_tot = float(c.sum())
        mu, lam, alpha, beta = ng.mu[j], ng.lam[j], ng.alpha[j], ng.beta[j]
        dev = log_d - mu
        # Expected log density term.
        elog = (
            -log_d
            - LOG_HALF_2PI
            + 0.5 * (digamma(alpha) - np.log(beta))
            - 0.5 * (dev**2 * alpha / beta + 1.0 / lam)
        )
        value += float(c @ elog)
        grad[j, 0] += alpha / beta * float(c @ dev)
        grad[j, 1] += 0.5 / lam**2 * c_tot
        grad[j, 2] += float(c @ (0.5 * polygamma(1, alpha) - dev**2 / (2.0 * beta)))
        grad[j, 3] += float(c @ (-0.5 / beta + dev**2 * alpha / (2.0 * beta**2)))

        # Truncation normalizer: log of the summed expected density.
        ratio = lam / (1.0 + lam)
        beta_hat = 1.0 + ratio * dev**2 / (2.0 * beta)
        log_v = (
            -log_d
            - LOG_HALF_2PI
            + 0.5 * (np.log(lam) - np.log1p(lam))
            + gammaln(alpha + 0.5)
            - gammaln(alpha)
            - 0.5 * np.log(beta)
            - (alpha + 0.5) * np.log(beta_hat)
        )
        v = np.exp(log_v)
        total = float(v.sum())
        value -= c_tot * np.log(total)
        d_bh_mu = -ratio * dev / beta
        d_bh_lam = dev**2 / (2.0 * beta * (1.0 + lam) ** 2)
        d_bh_beta = -ratio * dev**2 / (2.0 * beta**2)
        dl_mu = -(alpha + 0.5) * d_bh_mu / beta_hat
        dl_lam = 0.5 * (1.0 / lam - 1.0 / (1.0 + lam)) - (alpha + 0.5) * d_bh_lam / beta_hat
        dl_alpha = digamma(alpha + 0.5) - digamma(alpha) - np.log(beta_hat)
        dl_beta = -0.5 / beta - (alpha + 0.5) * d_bh_beta / beta_hat
        scale = -c_tot / total
        grad[j, 0] += scale * float(v @ dl_mu)
        grad[j, 1] += scale * float(v @ dl_lam)
        grad[j, 2] += scale * float(v @ dl_alpha)
        grad[j, 3] += scale * float(v @ dl_beta)

        # Prior regularizer: -KL(q || prior).
        mu0, lam0 = prior.mu[j], prior.lam[j]
        alpha0, beta0 = prior.alpha[j], prior.beta[j]
        grad[j, 0] -= lam0 * (mu - mu0) * alpha / beta
        grad[j, 1] -= 0.5 / lam - lam0 / (2.0 * lam**2)
        grad[j, 2] -= (
            (alpha - 0.5) * polygamma(1, alpha)
            - 1.0
            - (alpha0 - 0.5) * polygamma(1, alpha)
            + beta0 / beta
            + 0.5 * lam0 * (mu - mu0) ** 2 / beta
        )
        grad[j, 3] -= alpha0 / beta - beta0 * alpha / beta**2 - 0.5 * lam0 * (
            mu - mu0
        ) ** 2 * alpha / beta**2

    prior_slice = NormalGammaPosterior(prior.mu, prior.lam, prior.alpha, prior.beta)
    value -= float(np.sum(normal_gamma_kl(ng, prior_slice)))

    # Chain rule for the log-reparameterized positive parameters.
    grad[:, 1] *= ng.lam
    grad[:, 2] *= ng.alpha
    grad[:, 3] *= ng.beta
    return value, grad.ravel()


def update_duration_hyperparams(
    dwell_stats: np.ndarray,
    prior: NormalGammaPosterior,
    current: NormalGammaPosterior,
    max_dwell: int,
) -> tuple[NormalGammaPosterior, SmoothResult | None]:
    """Ascend the dwell-law block for one chain (both states jointly).

    States whose dwell statistics carry no mass fall back to the prior; the
    step is rejected if it would lower the block objective.
    """
    S = dwell_stats.shape[1]
    mass = dwell_stats.sum(axis=0)
    if np.all(mass <= 0):
        return prior.copy(), None

    start = current.copy()
    for j in range(S):
        if mass[j] <= 0:
            for f in ("mu", "lam", "alpha", "beta"):
                getattr(start, f)[j] = getattr(prior, f)[j]

    def value_and_grad(x):
        return duration_objective(x, dwell_stats, prior, max_dwell)

    x0 = _pack(start)
    problem = SmoothProblem(value_and_grad, x0, label="dwell-law")
    res = maximize_smooth(problem)
    value0, _ = duration_objective(x0, dwell_stats, prior, max_dwell)
    if res.value < value0 - 1e-10:
        return start, res
    new = _unpack(res.x, S)
    for j in range(S):
        if mass[j] <= 0:
            for f in ("mu", "lam", "alpha", "beta"):
                getattr(new, f)[j] = getattr(prior, f)[j]
    return new, res
