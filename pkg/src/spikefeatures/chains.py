"""Binary-chain smoothing: exact forward-backward, explicit-duration variant,
Dirichlet updates for chain parameters, and the truncated log-normal dwell law.

The recursions are written over a generic state dimension S so they can be
checked against brute-force enumeration; the model instantiates them with
S = 2 (off / on).
"""

from __future__ import annotations

import numpy as np
from scipy.special import digamma, gammaln, logsumexp

from .errors import DataValidationError, DegenerateEmissionError, NumericalStateError
from .posteriors import DirichletPosterior, GammaPosterior, NormalGammaPosterior

__all__ = [
    "compute_emissions",
    "forward_backward",
    "hsmm_forward_backward",
    "update_chain_priors",
    "duration_pmf_expectation",
    "expected_log_duration_pmf",
    "duration_potentials",
    "sample_paths",
]

LOG_HALF_2PI = 0.5 * np.log(2.0 * np.pi)


def compute_emissions(
    counts_tu: np.ndarray,
    noise_weighted_rate_excl: np.ndarray,
    baseline_mean: np.ndarray,
    gain: GammaPosterior,
) -> np.ndarray:
    """Log emission potentials (T, 2) for one feature chain.

    ``noise_weighted_rate_excl`` is the (T, U) table of noise-mean-weighted
    expected rates with this chain's factor excluded.  The on column collects
    the count-weighted expected log gain minus the marginal expected-rate
    increase the gain would cause; the off column is identically zero, so the
    potentials are already expressed relative to the off state.
    """
    gain_mean = gain.mean()
    on = counts_tu @ gain.mean_log() - noise_weighted_rate_excl @ (
        baseline_mean * (gain_mean - 1.0)
    )
    if not np.all(np.isfinite(on)):
        raise NumericalStateError("emission potentials contain non-finite entries")
    return np.stack([np.zeros_like(on), on], axis=1)


def forward_backward(
    emission_logits: np.ndarray,
    log_trans: np.ndarray,
    log_init: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Exact smoothing for a discrete chain with arbitrary log-potentials.

    Returns (marginals (T, S), two-slice joints (T-1, S, S), log normalizer).
    Stability comes from per-step normalization folded into the normalizer,
    with each slice's emission shifted by its max first.
    """
    eta = np.asarray(emission_logits, dtype=float)
    T, S = eta.shape
    shift = eta.max(axis=1)
    if not np.all(np.isfinite(shift)):
        raise DegenerateEmissionError("emission slice with no admissible state")
    e = np.exp(eta - shift[:, None])
    trans = np.exp(log_trans)
    init = np.exp(log_init)

    alpha = np.empty((T, S))
    scale = np.empty(T)
    a = init * e[0]
    scale[0] = a.sum()
    if scale[0] <= 0:
        raise DegenerateEmissionError("initial slice has zero total mass")
    alpha[0] = a / scale[0]
    for t in range(1, T):
        a = (alpha[t - 1] @ trans) * e[t]
        scale[t] = a.sum()
        if scale[t] <= 0:
            raise DegenerateEmissionError(f"slice {t} has zero total mass")
        alpha[t] = a / scale[t]

    beta = np.empty((T, S))
    beta[T - 1] = 1.0
    two_slice = np.empty((max(T - 1, 0), S, S))
    for t in range(T - 2, -1, -1):
        w = e[t + 1] * beta[t + 1]
        beta[t] = (trans @ w) / scale[t + 1]
        two_slice[t] = alpha[t][:, None] * trans * w[None, :] / scale[t + 1]

    marginals = alpha * beta
    marginals /= marginals.sum(axis=1, keepdims=True)
    log_norm = float(np.log(scale).sum() + shift.sum())
    return marginals, two_slice, log_norm


def hsmm_forward_backward(
    emission_logits: np.ndarray,
    log_trans: np.ndarray,
    log_init: np.ndarray,
    duration_logits: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
    """Explicit-duration smoothing over complete segmentations of 0..T-1.

    ``duration_logits[j, d-1]`` is the log dwell potential for spending
    exactly d steps in state j (d = 1..D); every segment, including the last,
    runs its full dwell, so paths are alternating-state compositions of T.

    Returns (marginals (T, S), two-slice joints, dwell distribution (D, S)
    conditioned on entry into each state, expected entry counts (S,),
    log normalizer).  Cost is O(S D T).
    """
    eta = np.asarray(emission_logits, dtype=float)
    dur = np.asarray(duration_logits, dtype=float)
    T, S = eta.shape
    D = dur.shape[1]
    if D < 1:
        raise DataValidationError("max dwell must be >= 1")

    # cum_em[t] = sum of emissions before time t, per state.
    cum_em = np.vstack([np.zeros(S), np.cumsum(eta, axis=0)])

    alpha_start = np.full((T, S), -np.inf)
    end_mass = np.full((T, S), -np.inf)
    alpha_start[0] = log_init
    for t in range(T):
        dmax = min(D, t + 1)
        ds = np.arange(1, dmax + 1)
        starts = t - ds + 1
        vals = alpha_start[starts] + dur.T[ds - 1] + (cum_em[t + 1] - cum_em[starts])
        end_mass[t] = logsumexp(vals, axis=0)
        if t + 1 < T:
            alpha_start[t + 1] = logsumexp(end_mass[t][:, None] + log_trans, axis=0)
    log_norm = float(logsumexp(end_mass[T - 1]))
    if not np.isfinite(log_norm):
        raise DegenerateEmissionError("no admissible segmentation")

    # beta_start[t, j]: suffix mass given a segment of j starts at t.
    # boundary[t, j]: suffix mass given a segment of state j ends at t-1;
    # boundary[T] = 0 terminates the recursion (segments must tile 0..T-1).
    beta_start = np.full((T, S), -np.inf)
    boundary = np.full((T + 1, S), -np.inf)
    boundary[T] = 0.0
    for t in range(T - 1, -1, -1):
        dmax = min(D, T - t)
        ds = np.arange(1, dmax + 1)
        ends = t + ds
        vals = dur.T[ds - 1] + (cum_em[ends] - cum_em[t]) + boundary[ends]
        beta_start[t] = logsumexp(vals, axis=0)
        boundary[t] = logsumexp(log_trans + beta_start[t][None, :], axis=1)

    check = logsumexp(log_init + beta_start[0])
    if not np.isclose(check, log_norm, atol=1e-8, rtol=1e-10):
        raise NumericalStateError("forward/backward normalizers disagree")

    # Segment posteriors -> state marginals and dwell statistics.
    occupancy_diff = np.zeros((T + 1, S))
    dwell_counts = np.zeros((D, S))
    for t0 in range(T):
        dmax = min(D, T - t0)
        ds = np.arange(1, dmax + 1)
        ends = t0 + ds
        log_post = (
            alpha_start[t0]
            + dur.T[ds - 1]
            + (cum_em[ends] - cum_em[t0])
            + boundary[ends]
            - log_norm
        )
        post = np.exp(log_post)
        occupancy_diff[t0] += post.sum(axis=0)
        np.subtract.at(occupancy_diff, ends, post)
        dwell_counts[ds - 1] += post
    marginals = np.cumsum(occupancy_diff[:T], axis=0)
    np.clip(marginals, 0.0, 1.0, out=marginals)

    entry_mass = dwell_counts.sum(axis=0)
    dwell = np.divide(
        dwell_counts,
        entry_mass[None, :],
        out=np.zeros_like(dwell_counts),
        where=entry_mass[None, :] > 0,
    )

    # Consecutive-pair joints: cross terms are segment boundaries; staying
    # inside one segment adds to the diagonal on top of any self re-entry.
    two_slice = np.zeros((max(T - 1, 0), S, S))
    diag = np.arange(S)
    for t in range(T - 1):
        cross = np.exp(end_mass[t][:, None] + log_trans + beta_start[t + 1][None, :] - log_norm)
        within = np.maximum(marginals[t] - cross.sum(axis=1), 0.0)
        two_slice[t] = cross
        two_slice[t][diag, diag] += within
    return marginals, two_slice, dwell, entry_mass, log_norm


def update_chain_priors(
    two_slice: np.ndarray,
    init_marginal: np.ndarray,
    trans_prior: np.ndarray,
    init_prior: np.ndarray,
    semi_markov: bool = False,
) -> tuple[DirichletPosterior, DirichletPosterior, np.ndarray, np.ndarray]:
    """Dirichlet updates for the transition matrix and initial state.

    Returns the two posteriors plus the expected-log parameters the next
    smoothing pass should use.  In semi-Markov mode the transition matrix is
    the forced alternation (dwell laws own persistence), so only the initial
    state is learned.
    """
    init_counts = DirichletPosterior(np.asarray(init_prior, dtype=float) + init_marginal)
    log_init = init_counts.mean_log()
    if semi_markov:
        S = init_marginal.shape[0]
        log_trans = np.full((S, S), -np.inf)
        off_diag = ~np.eye(S, dtype=bool)
        log_trans[off_diag] = np.log(1.0 / (S - 1)) if S > 1 else 0.0
        trans_counts = DirichletPosterior(np.broadcast_to(trans_prior, (S, S)).copy())
        return trans_counts, init_counts, log_trans, log_init
    trans_counts = DirichletPosterior(
        np.asarray(trans_prior, dtype=float) + two_slice.sum(axis=0)
    )
    return trans_counts, init_counts, trans_counts.mean_log(), log_init


def duration_pmf_expectation(ng: NormalGammaPosterior, d) -> np.ndarray:
    """Expected dwell density at integer d under the normal-gamma posterior.

    This is the Student-t predictive density of the log-normal law evaluated
    at log d, with the 1/d change-of-variables factor; summing it over a
    truncation window gives the expected (sub-unit) normalizer.
    """
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 1):
        raise DataValidationError("dwell durations start at 1")
    log_d = np.log(d_arr)
    beta_hat = 1.0 + (ng.lam / (1.0 + ng.lam)) * (log_d - ng.mu) ** 2 / (2.0 * ng.beta)
    log_val = (
        -log_d
        - LOG_HALF_2PI
        + 0.5 * (np.log(ng.lam) - np.log1p(ng.lam))
        + gammaln(ng.alpha + 0.5)
        - gammaln(ng.alpha)
        - 0.5 * np.log(ng.beta)
        - (ng.alpha + 0.5) * np.log(beta_hat)
    )
    return np.exp(log_val)


def expected_log_duration_pmf(ng: NormalGammaPosterior, d) -> np.ndarray:
    """E[log LogNormal(d | mean, precision)] under the normal-gamma posterior."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 1):
        raise DataValidationError("dwell durations start at 1")
    log_d = np.log(d_arr)
    return (
        -log_d
        - LOG_HALF_2PI
        + 0.5 * ng.mean_log_precision()
        - 0.5 * ((log_d - ng.mu) ** 2 * ng.mean_precision() + 1.0 / ng.lam)
    )


def duration_potentials(ng: NormalGammaPosterior, max_dwell: int) -> np.ndarray:
    """Log dwell potentials (S, D) for the explicit-duration pass.

    Per state: expected log density minus the log of the summed expected
    density over 1..D (the truncation normalizer, bounded via Jensen).
    """
    ds = np.arange(1, max_dwell + 1, dtype=float)
    per_state = []
    for j in range(ng.mu.shape[0]):
        slice_ng = NormalGammaPosterior(ng.mu[j], ng.lam[j], ng.alpha[j], ng.beta[j])
        elog = expected_log_duration_pmf(slice_ng, ds)
        norm = np.log(np.sum(duration_pmf_expectation(slice_ng, ds)))
        per_state.append(elog - norm)
    return np.stack(per_state, axis=0)


def sample_paths(
    emission_logits: np.ndarray,
    log_trans: np.ndarray,
    log_init: np.ndarray,
    rng: np.random.Generator,
    n_paths: int,
) -> np.ndarray:
    """Joint draws from the chain defined by the variational potentials.

    Forward-filter backward-sample; returns an (n_paths, T) integer array.
    """
    eta = np.asarray(emission_logits, dtype=float)
    T, S = eta.shape
    shift = eta.max(axis=1)
    e = np.exp(eta - shift[:, None])
    trans = np.exp(log_trans)
    alpha = np.empty((T, S))
    a = np.exp(log_init) * e[0]
    alpha[0] = a / a.sum()
    for t in range(1, T):
        a = (alpha[t - 1] @ trans) * e[t]
        alpha[t] = a / a.sum()
    paths = np.empty((n_paths, T), dtype=np.int64)
    paths[:, T - 1] = rng.choice(S, size=n_paths, p=alpha[T - 1])
    for t in range(T - 2, -1, -1):
        w = alpha[t][None, :] * trans.T[paths[:, t + 1]]
        w /= w.sum(axis=1, keepdims=True)
        cdf = np.cumsum(w, axis=1)
        draws = rng.random(n_paths)
        paths[:, t] = np.minimum((draws[:, None] > cdf).sum(axis=1), S - 1)
    return paths


def chain_alignment_entropy(on_prob: np.ndarray) -> float:
    """Mean Bernoulli entropy of the marginals, in nats."""
    p = np.clip(on_prob, 1e-12, 1.0 - 1e-12)
    return float(np.mean(-p * np.log(p) - (1.0 - p) * np.log(1.0 - p)))
