"""Recovery metrics: normalized mutual information, feature matching, and
posterior-predictive rate intervals."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .chains import chain_alignment_entropy
from .engine import FitResult

__all__ = [
    "normalized_mutual_info",
    "nmi_matrix",
    "match_features",
    "NmiReport",
    "build_report",
    "unused_features",
    "predicted_rates",
]

UNUSED_GAIN_BAND = (0.9, 1.1)
UNUSED_ENTROPY_NATS = 0.6
UNUSED_LOG_GAIN = 0.1


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def normalized_mutual_info(inferred_on_prob: np.ndarray, true_states: np.ndarray) -> float:
    """Mutual information of the time-averaged joint, normalized to [0, 1].

    The joint over (true, inferred) binary states is the plug-in average of
    the posterior marginals against the true indicators; zero marginal
    entropy on either side yields 0 by convention.
    """
    xi = np.asarray(inferred_on_prob, dtype=float)
    z = np.asarray(true_states, dtype=float)
    if xi.shape != z.shape:
        raise ValueError(f"length mismatch: {xi.shape} vs {z.shape}")
    joint = np.array(
        [
            [np.mean((1 - z) * (1 - xi)), np.mean((1 - z) * xi)],
            [np.mean(z * (1 - xi)), np.mean(z * xi)],
        ]
    )
    h_true = _entropy(joint.sum(axis=1))
    h_inferred = _entropy(joint.sum(axis=0))
    if h_true <= 0 or h_inferred <= 0:
        return 0.0
    outer = joint.sum(axis=1)[:, None] * joint.sum(axis=0)[None, :]
    mask = joint > 0
    info = float((joint[mask] * np.log(joint[mask] / outer[mask])).sum())
    return max(info, 0.0) / np.sqrt(h_true * h_inferred)


def nmi_matrix(feature_probs: np.ndarray, true_states: np.ndarray) -> np.ndarray:
    """(K_true, K) normalized mutual information between every pair."""
    K_true = true_states.shape[1]
    K = feature_probs.shape[1]
    out = np.zeros((K_true, K))
    for i in range(K_true):
        for j in range(K):
            out[i, j] = normalized_mutual_info(feature_probs[:, j], true_states[:, i])
    return out


def match_features(matrix: np.ndarray) -> list[tuple[int, int]]:
    """Injective assignment of true to inferred features maximizing total NMI."""
    if not np.all(np.isfinite(matrix)):
        raise ValueError("assignment requires a finite score matrix")
    rows, cols = linear_sum_assignment(matrix, maximize=True)
    return sorted(zip(rows.tolist(), cols.tolist()))


@dataclass
class NmiReport:
    matrix: np.ndarray
    assignment: list[tuple[int, int]]
    matched_nmi: list[float]
    unused: np.ndarray
    gain_population_mean: np.ndarray
    mean_state_entropy: np.ndarray

    def to_dict(self) -> dict:
        return {
            "nmi_matrix": self.matrix.tolist(),
            "assignment": [[int(a), int(b)] for a, b in self.assignment],
            "matched_nmi": [float(v) for v in self.matched_nmi],
            "unused_features": [bool(v) for v in self.unused],
            "gain_population_mean": [float(v) for v in self.gain_population_mean],
            "mean_state_entropy_nats": [float(v) for v in self.mean_state_entropy],
        }


def unused_features(fit: FitResult, log_gain_tol: float = UNUSED_LOG_GAIN) -> np.ndarray:
    """Flag features the model left unused.

    A feature is unused when every unit's posterior gain mean is pinned near
    1 (mean absolute log gain below ``log_gain_tol``), i.e. the feature has
    confidently no effect on any rate.  Features carrying real effects show
    unit gains spread over decades, an order of magnitude above the
    threshold, while abandoned chains shrink to within a few percent of 1;
    this separates them regardless of whether the abandoned chain's state
    marginals stay maximally uncertain or collapse to an inert path.
    """
    gain_means = fit.gains.mean()
    if gain_means.shape[1] == 0:
        return np.zeros(0, dtype=bool)
    return np.abs(np.log(gain_means)).mean(axis=0) < log_gain_tol


def build_report(fit: FitResult, true_states: np.ndarray) -> NmiReport:
    probs = fit.feature_probs()
    matrix = nmi_matrix(probs, true_states)
    assignment = match_features(matrix)
    matched = [float(matrix[i, j]) for i, j in assignment]
    return NmiReport(
        matrix=matrix,
        assignment=assignment,
        matched_nmi=matched,
        unused=unused_features(fit),
        gain_population_mean=fit.gain_population_mean(),
        mean_state_entropy=np.array(
            [chain_alignment_entropy(c.on_prob) for c in fit.chains]
        ),
    )


def predicted_rates(
    fit: FitResult,
    times,
    unit: int,
    n_draws: int = 1000,
    rng: np.random.Generator | None = None,
    include_features=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior-predictive rate mean and central 95% interval per time bin.

    Draws every rate factor and the feature states from the variational
    posterior; ``include_features`` restricts which chains contribute.
    Returns (mean (n_times,), interval (2, n_times)).
    """
    if n_draws < 100:
        warnings.warn("fewer than 100 draws gives unstable interval estimates", RuntimeWarning)
    rng = np.random.default_rng() if rng is None else rng
    times = np.atleast_1d(np.asarray(times, dtype=int))
    K = len(fit.chains)
    features = range(K) if include_features is None else list(include_features)

    baseline = rng.gamma(
        fit.baseline.shape[unit], 1.0 / fit.baseline.rate[unit], size=n_draws
    )
    rates = np.repeat(baseline[:, None], times.size, axis=1)
    for k in features:
        gain = rng.gamma(
            fit.gains.shape[unit, k], 1.0 / fit.gains.rate[unit, k], size=n_draws
        )
        on = rng.random((n_draws, times.size)) < fit.chains[k].on_prob[times][None, :]
        rates *= np.where(on, gain[:, None], 1.0)
    for r in range(fit.obs.n_covariates):
        gain = rng.gamma(
            fit.covariate_gains.shape[unit, r],
            1.0 / fit.covariate_gains.rate[unit, r],
            size=n_draws,
        )
        rates *= gain[:, None] ** fit.obs.covariates[times, r][None, :]
    mean = rates.mean(axis=0)
    interval = np.percentile(rates, [2.5, 97.5], axis=0)
    return mean, interval
