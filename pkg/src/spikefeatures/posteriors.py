"""Posterior building blocks: gamma, Dirichlet, normal-gamma and chain marginals.

Every rate-like site in the model (baselines, feature gains, covariate gains,
per-observation noise, unit noise shapes, population hyperparameters) carries a
gamma posterior, so :class:`GammaPosterior` holds arrays of shapes and rates and
is reused for all of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

from .errors import NumericalStateError

__all__ = [
    "GammaPosterior",
    "DirichletPosterior",
    "NormalGammaPosterior",
    "ChainPosterior",
    "gamma_kl",
    "dirichlet_kl",
]


@dataclass
class GammaPosterior:
    """Gamma(shape, rate) over one site or a table of sites.

    ``shape`` and ``rate`` are broadcast-compatible positive arrays (scalars
    allowed).  Mean is ``shape / rate`` and the expected log is
    ``digamma(shape) - log(rate)``.
    """

    shape: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        self.shape = np.asarray(self.shape, dtype=float)
        self.rate = np.asarray(self.rate, dtype=float)
        if not (np.all(np.isfinite(self.shape)) and np.all(np.isfinite(self.rate))):
            raise NumericalStateError("gamma posterior has non-finite parameters")
        if np.any(self.shape <= 0) or np.any(self.rate <= 0):
            raise NumericalStateError("gamma posterior requires positive shape and rate")

    def mean(self) -> np.ndarray:
        return self.shape / self.rate

    def mean_log(self) -> np.ndarray:
        return digamma(self.shape) - np.log(self.rate)

    def entropy(self) -> np.ndarray:
        a, b = self.shape, self.rate
        return a - np.log(b) + gammaln(a) + (1.0 - a) * digamma(a)

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        return rng.gamma(self.shape, 1.0 / self.rate, size=size)

    def copy(self) -> "GammaPosterior":
        return GammaPosterior(self.shape.copy(), self.rate.copy())


def gamma_kl(q: GammaPosterior, prior_shape, prior_rate) -> np.ndarray:
    """Elementwise KL(q || Gamma(prior_shape, prior_rate)), natural log."""
    a0 = np.asarray(prior_shape, dtype=float)
    b0 = np.asarray(prior_rate, dtype=float)
    a, b = q.shape, q.rate
    return (
        (a - a0) * digamma(a)
        - gammaln(a)
        + gammaln(a0)
        + a0 * (np.log(b) - np.log(b0))
        + a * (b0 - b) / b
    )


@dataclass
class DirichletPosterior:
    """Dirichlet pseudo-counts over rows; last axis is the category axis."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if np.any(self.counts <= 0) or not np.all(np.isfinite(self.counts)):
            raise NumericalStateError("dirichlet posterior requires positive finite counts")

    def mean(self) -> np.ndarray:
        return self.counts / self.counts.sum(axis=-1, keepdims=True)

    def mean_log(self) -> np.ndarray:
        return digamma(self.counts) - digamma(self.counts.sum(axis=-1, keepdims=True))

    def copy(self) -> "DirichletPosterior":
        return DirichletPosterior(self.counts.copy())


def dirichlet_kl(q: DirichletPosterior, prior_counts) -> np.ndarray:
    """KL(q || Dir(prior_counts)) per row (summed over the category axis)."""
    a = q.counts
    a0 = np.broadcast_to(np.asarray(prior_counts, dtype=float), a.shape)
    atot = a.sum(axis=-1)
    a0tot = a0.sum(axis=-1)
    return (
        gammaln(atot)
        - gammaln(a).sum(axis=-1)
        - gammaln(a0tot)
        + gammaln(a0).sum(axis=-1)
        + ((a - a0) * (digamma(a) - digamma(atot)[..., None])).sum(axis=-1)
    )


@dataclass
class NormalGammaPosterior:
    """Normal-gamma over (mean, precision) of a log-normal dwell law.

    Parameterization (mu, lam, alpha, beta): precision tau ~ Gamma(alpha, beta)
    and mean | tau ~ Normal(mu, 1/(lam*tau)).  Fields are arrays so one object
    can hold the posteriors for both chain states.
    """

    mu: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        bad = (
            np.any(self.lam <= 0)
            or np.any(self.alpha <= 0)
            or np.any(self.beta <= 0)
            or not all(
                np.all(np.isfinite(f)) for f in (self.mu, self.lam, self.alpha, self.beta)
            )
        )
        if bad:
            raise NumericalStateError("normal-gamma posterior parameters out of domain")

    def mean_precision(self) -> np.ndarray:
        return self.alpha / self.beta

    def mean_log_precision(self) -> np.ndarray:
        return digamma(self.alpha) - np.log(self.beta)

    def copy(self) -> "NormalGammaPosterior":
        return NormalGammaPosterior(
            self.mu.copy(), self.lam.copy(), self.alpha.copy(), self.beta.copy()
        )

    def as_vector(self) -> np.ndarray:
        return np.stack([self.mu, self.lam, self.alpha, self.beta], axis=-1)


def normal_gamma_kl(q: NormalGammaPosterior, p: NormalGammaPosterior) -> np.ndarray:
    """KL(q || p) between normal-gamma distributions, elementwise."""
    elog_tau = q.mean_log_precision()
    etau = q.mean_precision()
    # E_q[log q]: uses E[(m-mu_q)^2 tau] = 1/lam_q and beta_q*E[tau] = alpha_q.
    eq_logq = (
        q.alpha * np.log(q.beta)
        - gammaln(q.alpha)
        + 0.5 * np.log(q.lam / (2.0 * np.pi))
        + (q.alpha - 0.5) * elog_tau
        - q.alpha
        - 0.5
    )
    # E_q[log p]: uses E[(m-mu_p)^2 tau] = (mu_q-mu_p)^2 E[tau] + 1/lam_q.
    eq_logp = (
        p.alpha * np.log(p.beta)
        - gammaln(p.alpha)
        + 0.5 * np.log(p.lam / (2.0 * np.pi))
        + (p.alpha - 0.5) * elog_tau
        - p.beta * etau
        - 0.5 * p.lam * ((q.mu - p.mu) ** 2 * etau + 1.0 / q.lam)
    )
    return eq_logq - eq_logp


@dataclass
class ChainPosterior:
    """Smoothed posterior for one binary feature chain.

    ``on_prob[t]`` is P(feature on at time t); ``two_slice[t]`` the joint of
    (state_t, state_{t+1}); ``log_norm`` the chain partition function for the
    variational potentials (``emission_logits``, ``log_trans``, ``log_init``)
    that produced the smoothing pass.  ``dwell_stats`` holds the per-state
    conditional dwell-length distribution in the semi-Markov case, with
    ``entry_mass`` the expected number of segments per state.
    """

    on_prob: np.ndarray
    two_slice: np.ndarray
    log_norm: float
    emission_logits: np.ndarray
    log_trans: np.ndarray
    log_init: np.ndarray
    dwell_stats: np.ndarray | None = None
    entry_mass: np.ndarray | None = None
    dwell_logits: np.ndarray | None = field(default=None, repr=False)

    def marginals(self) -> np.ndarray:
        """(T, 2) matrix of [off, on] probabilities."""
        return np.stack([1.0 - self.on_prob, self.on_prob], axis=1)

    def copy(self) -> "ChainPosterior":
        return ChainPosterior(
            self.on_prob.copy(),
            self.two_slice.copy(),
            self.log_norm,
            self.emission_logits.copy(),
            self.log_trans.copy(),
            self.log_init.copy(),
            None if self.dwell_stats is None else self.dwell_stats.copy(),
            None if self.entry_mass is None else self.entry_mass.copy(),
            None if self.dwell_logits is None else self.dwell_logits.copy(),
        )
