"""Closed-form gamma coordinate updates.

Each update is the exact maximizer of the variational objective with respect
to its block, holding every other posterior fixed.  Population hyperparameter
updates (concentration / inverse-mean pairs, unit noise shapes) come from the
Stirling-type lower bound on the negative log-gamma normalizer, so they are
exact ascent steps on the bounded objective the engine reports.

All functions are pure: they take grouped statistics and return new
posteriors; cache refreshes live in the engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalStateError
from .posteriors import GammaPosterior

__all__ = [
    "SufficientStats",
    "update_overdispersion",
    "update_unit_shape",
    "update_rate_sites",
    "update_population_hyperparams",
    "update_autocorrelated_gains",
]


@dataclass
class SufficientStats:
    """Grouped statistics feeding one rate-site update.

    ``count_sum[u]`` is the responsibility-weighted count total for the site
    and ``rate_sum[u]`` the matching expected-rate total (both already summed
    over times and presentations).
    """

    count_sum: np.ndarray
    rate_sum: np.ndarray

    def __post_init__(self):
        self.count_sum = np.asarray(self.count_sum, dtype=float)
        self.rate_sum = np.asarray(self.rate_sum, dtype=float)
        if np.any(self.count_sum < 0):
            raise NumericalStateError("count sums must be nonnegative")
        if np.any(self.rate_sum < 0) or not np.all(np.isfinite(self.rate_sum)):
            raise NumericalStateError("rate sums must be finite and nonnegative")


def update_overdispersion(
    counts: np.ndarray, expected_rate: np.ndarray, noise_shape_mean: np.ndarray
) -> GammaPosterior:
    """Per-observation noise posterior.

    shape = E[s_u] + N_m, rate = E[s_u] + expected rate at the observation's
    (time, unit) cell.
    """
    if not np.all(np.isfinite(expected_rate)):
        raise NumericalStateError("expected-rate cache contains non-finite entries")
    shape = noise_shape_mean + counts
    rate = noise_shape_mean + expected_rate
    return GammaPosterior(shape, rate)


def update_unit_shape(
    obs_per_unit: np.ndarray,
    theta: GammaPosterior,
    unit_idx: np.ndarray,
    prior: tuple[float, float],
    n_units: int,
    mean_floor: float = 1.0,
) -> GammaPosterior:
    """Posterior over each unit's noise shape s_u.

    Every observation contributes 1/2 to the shape and
    E[theta] - E[log theta] - 1 (nonnegative for any gamma) to the rate.

    The bound behind this update is valid only for shapes above roughly 1;
    below it the surrogate objective is unbounded and weakly informed counts
    drive a runaway collapse of the posterior mean.  ``mean_floor`` caps the
    rate so the mean never drops under the floor; since the objective is
    increasing in the rate up to its unconstrained optimum, the capped value
    is the exact constrained maximizer and ascent is preserved.
    """
    a, b = prior
    increment = theta.mean() - theta.mean_log() - 1.0
    if np.any(increment < -1e-12):
        raise NumericalStateError("negative rate increment in unit-shape update")
    rate_inc = np.bincount(unit_idx, weights=np.maximum(increment, 0.0), minlength=n_units)
    shape = a + 0.5 * obs_per_unit
    rate = b + rate_inc
    if mean_floor and mean_floor > 0:
        rate = np.minimum(rate, shape / mean_floor)
    return GammaPosterior(shape, rate)


def update_rate_sites(
    stats: SufficientStats, prior_shape, prior_rate
) -> GammaPosterior:
    """Shared table update for baselines, feature gains and covariate shapes.

    ``prior_shape``/``prior_rate`` are the (expected) prior parameters:
    hyperparameter means for hierarchical sites, fixed constants otherwise.
    """
    return GammaPosterior(prior_shape + stats.count_sum, prior_rate + stats.rate_sum)


def update_population_hyperparams(
    site_mean: np.ndarray,
    site_mean_log: np.ndarray,
    conc: GammaPosterior,
    inv_mean: GammaPosterior,
    conc_prior: tuple[float, float],
    inv_mean_prior: tuple[float, float],
) -> tuple[GammaPosterior, GammaPosterior]:
    """Joint update of a (concentration, inverse-mean) hierarchy.

    The concentration update uses the bounded objective; the inverse-mean
    update then uses the refreshed concentration mean.  Site arrays hold the
    current posterior means / expected logs of every site under the hierarchy.
    """
    a_c, b_c = conc_prior
    a_d, b_d = inv_mean_prior
    n_sites = site_mean.size
    rate_inc = float(
        np.sum(inv_mean.mean() * site_mean - site_mean_log - inv_mean.mean_log() - 1.0)
    )
    if n_sites > 0 and rate_inc <= 0 and not np.isclose(rate_inc, 0.0, atol=1e-10):
        raise NumericalStateError(
            f"concentration rate increment must be positive, got {rate_inc}"
        )
    new_conc = GammaPosterior(a_c + 0.5 * n_sites, b_c + max(rate_inc, 0.0))
    c_mean = float(new_conc.mean())
    new_inv_mean = GammaPosterior(
        a_d + n_sites * c_mean, b_d + c_mean * float(np.sum(site_mean))
    )
    return new_conc, new_inv_mean


def update_autocorrelated_gains(
    counts: np.ndarray,
    base_rate: np.ndarray,
    innovations: GammaPosterior,
    prior_shape: float,
    prior_rate: float,
) -> GammaPosterior:
    """One unit's log-autoregressive noise chain.

    ``counts`` and ``base_rate`` are clock-ordered; the observation-level
    noise factor at clock position tau is the running product of innovations
    up to tau.  Each innovation j sees the suffix count sum and the suffix of
    expected rates weighted by the running product excluding itself.
    """
    if not np.all(np.isfinite(base_rate)):
        raise NumericalStateError("expected-rate cache contains non-finite entries")
    n = counts.shape[0]
    means = innovations.mean()
    cum = np.cumprod(means)
    # Suffix count sums: shape increment for innovation j.
    count_inc = np.cumsum(counts[::-1])[::-1]
    # rate term for innovation j: sum_{tau >= j} base_rate[tau] * prod_{tau' <= tau, != j} mean.
    weighted = base_rate * cum
    suffix = np.cumsum(weighted[::-1])[::-1]
    rate_inc = suffix / means
    if n != rate_inc.shape[0]:
        raise NumericalStateError("innovation chain length mismatch")
    return GammaPosterior(prior_shape + count_inc, prior_rate + rate_inc)
