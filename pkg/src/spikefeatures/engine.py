"""Fit engine: expected-rate caches, variational objective, sweep loop, restarts.

The sweep order is: baselines, baseline hierarchy, then per feature chain
(gains, gain hierarchy, emissions, chain parameters, smoothing, dwell laws),
then covariates, then observation noise.  Every conjugate step is the exact
maximizer of the reported (bounded) objective given the other blocks, so the
per-sweep objective trace is non-decreasing up to float error.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import chains as chainmod
from . import conjugate
from .config import PIN_OFF_COUNT, PIN_ON_COUNT, ModelConfig
from .data import ObservationSet
from .errors import NumericalStateError
from .optimize import update_covariate_rates, update_duration_hyperparams
from .posteriors import (
    ChainPosterior,
    DirichletPosterior,
    GammaPosterior,
    NormalGammaPosterior,
    dirichlet_kl,
    gamma_kl,
    normal_gamma_kl,
)

__all__ = ["RateCache", "FitResult", "init_posteriors", "expected_rate", "compute_elbo", "fit"]


@dataclass
class RateCache:
    """Expected-rate factorization: baseline mean x feature factor x covariate factor.

    ``feature_factor[t, u]`` multiplies the mean-field contribution of every
    chain; per-chain exclusion divides one chain's factor back out.
    """

    baseline_mean: np.ndarray    # (U,)
    feature_factor: np.ndarray   # (T, U)
    covariate_factor: np.ndarray  # (T, U)

    def expected_grid(self) -> np.ndarray:
        return self.baseline_mean[None, :] * self.feature_factor * self.covariate_factor

    @staticmethod
    def chain_factor(on_prob: np.ndarray, gain_mean: np.ndarray) -> np.ndarray:
        return 1.0 + on_prob[:, None] * (gain_mean[None, :] - 1.0)

    def exclude_feature(self, on_prob: np.ndarray, gain_mean: np.ndarray) -> np.ndarray:
        factor = self.chain_factor(on_prob, gain_mean)
        return self.feature_factor / np.maximum(factor, 1e-300)


@dataclass
class FitResult:
    """All posterior sites plus fit diagnostics; mutated in place by sweeps."""

    obs: ObservationSet
    config: ModelConfig
    baseline: GammaPosterior
    baseline_conc: GammaPosterior
    baseline_inv_mean: GammaPosterior
    gains: GammaPosterior                 # (U, K)
    gain_conc: GammaPosterior             # (K,)
    gain_inv_mean: GammaPosterior         # (K,)
    covariate_gains: GammaPosterior       # (U, R)
    noise: GammaPosterior | None          # per-observation, record order
    noise_shape: GammaPosterior | None    # (U,)
    chains: list[ChainPosterior]
    trans: list[DirichletPosterior]
    init: list[DirichletPosterior]
    durations: list[NormalGammaPosterior]
    cache: RateCache
    elbo_trace: list[float] = field(default_factory=list)
    elbo_terms: dict = field(default_factory=dict)
    diagnostics: list[dict] = field(default_factory=list)
    sweep_records: list = field(default_factory=list, repr=False)
    restart_index: int = 0
    converged: bool = False
    seed: int | None = None

    @property
    def n_features(self) -> int:
        return self.config.n_features

    def feature_probs(self) -> np.ndarray:
        """(T, K) matrix of posterior on-probabilities."""
        if not self.chains:
            return np.zeros((self.obs.n_times, 0))
        return np.stack([c.on_prob for c in self.chains], axis=1)

    def gain_population_mean(self) -> np.ndarray:
        """(K,) mean over units of the posterior gain means."""
        if self.gains.shape.shape[1] == 0:
            return np.zeros(0)
        return self.gains.mean().mean(axis=0)


def _trans_prior(cfg: ModelConfig) -> np.ndarray:
    return np.full((2, 2), cfg.priors.trans_pseudo)


def _init_prior(cfg: ModelConfig) -> np.ndarray:
    if cfg.pin_initial_state:
        return np.array([PIN_OFF_COUNT, PIN_ON_COUNT])
    return np.full(2, cfg.priors.init_pseudo)


def _duration_prior(cfg: ModelConfig) -> NormalGammaPosterior:
    mu, lam, alpha, beta = cfg.priors.duration
    two = np.full(2, 1.0)
    return NormalGammaPosterior(mu * two, lam * two, alpha * two, beta * two)


def init_posteriors(obs: ObservationSet, cfg: ModelConfig, seed=None) -> FitResult:
    """Seed-deterministic initial state: sites near prior means, random marginals."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    T, U, R, K = obs.n_times, obs.n_units, obs.n_covariates, cfg.n_features
    sigma = cfg.init_jitter

    def jitter(rate, size):
        rate = np.broadcast_to(np.asarray(rate, dtype=float), size).copy()
        if sigma > 0:
            rate *= np.exp(sigma * rng.standard_normal(size))
        return rate

    a_c, b_c = cfg.priors.baseline_conc
    a_d, b_d = cfg.priors.baseline_inv_mean
    baseline_conc = GammaPosterior(np.float64(a_c), jitter(b_c, ()))
    baseline_inv_mean = GammaPosterior(np.float64(a_d), jitter(b_d, ()))
    c0 = float(baseline_conc.mean())
    d0 = float(baseline_inv_mean.mean())
    baseline = GammaPosterior(np.full(U, c0), jitter(c0 * d0, (U,)))

    a_cz, b_cz = cfg.priors.gain_conc
    a_dz, b_dz = cfg.priors.gain_inv_mean
    gain_conc = GammaPosterior(np.full(K, a_cz), jitter(b_cz, (K,)))
    gain_inv_mean = GammaPosterior(np.full(K, a_dz), jitter(b_dz, (K,)))
    cz = gain_conc.mean()
    dz = gain_inv_mean.mean()
    gains = GammaPosterior(
        np.broadcast_to(cz, (U, K)).copy(), jitter(cz * dz, (U, K))
    )

    a_x, b_x = cfg.priors.covariate
    covariate_gains = GammaPosterior(np.full((U, R), a_x), jitter(b_x, (U, R)))

    a_s, b_s = cfg.priors.noise_shape
    if cfg.overdispersion:
        noise_shape = GammaPosterior(np.full(U, a_s), jitter(b_s, (U,)))
        s_mean = noise_shape.mean()[obs.unit_idx]
        noise = GammaPosterior(s_mean.copy(), s_mean.copy())
    else:
        noise_shape = None
        noise = None

    trans_prior = _trans_prior(cfg)
    init_prior = _init_prior(cfg)
    dur_prior = _duration_prior(cfg)
    chain_list, trans_list, init_list, dur_list = [], [], [], []
    for k in range(K):
        on_prob = rng.uniform(0.2, 0.8, size=T)
        marg = np.stack([1.0 - on_prob, on_prob], axis=1)
        two_slice = marg[:-1, :, None] * marg[1:, None, :]
        # Posterior chain parameters start at the prior; marginals stay random.
        trans_post, init_post, log_trans, log_init = chainmod.update_chain_priors(
            np.zeros((0, 2, 2)), np.zeros(2), trans_prior, init_prior, cfg.semi_markov
        )
        dwell_logits = None
        dwell_stats = None
        entry_mass = None
        if cfg.semi_markov:
            dwell_logits = chainmod.duration_potentials(dur_prior, cfg.max_dwell)
            dwell_stats = np.zeros((cfg.max_dwell, 2))
            entry_mass = np.zeros(2)
        chain_list.append(
            ChainPosterior(
                on_prob=on_prob,
                two_slice=two_slice,
                log_norm=0.0,
                emission_logits=np.zeros((T, 2)),
                log_trans=log_trans,
                log_init=log_init,
                dwell_stats=dwell_stats,
                entry_mass=entry_mass,
                dwell_logits=dwell_logits,
            )
        )
        trans_list.append(trans_post)
        init_list.append(init_post)
        dur_list.append(dur_prior.copy())

    state = FitResult(
        obs=obs,
        config=cfg,
        baseline=baseline,
        baseline_conc=baseline_conc,
        baseline_inv_mean=baseline_inv_mean,
        gains=gains,
        gain_conc=gain_conc,
        gain_inv_mean=gain_inv_mean,
        covariate_gains=covariate_gains,
        noise=noise,
        noise_shape=noise_shape,
        chains=chain_list,
        trans=trans_list,
        init=init_list,
        durations=dur_list,
        cache=RateCache(np.ones(U), np.ones((T, U)), np.ones((T, U))),
        seed=None if seed is None else int(seed),
    )
    refresh_cache(state)
    return state


# ---------------------------------------------------------------------------
# Caches and noise moments
# ---------------------------------------------------------------------------


def refresh_cache(state: FitResult) -> None:
    """Recompute the full H/F/G factorization from the current posteriors."""
    obs = state.obs
    H = state.baseline.mean()
    F = np.ones((obs.n_times, obs.n_units))
    gain_means = state.gains.mean()
    for k, chain in enumerate(state.chains):
        F *= RateCache.chain_factor(chain.on_prob, gain_means[:, k])
    G = covariate_grid(obs.covariates, state.covariate_gains)
    state.cache = RateCache(H, F, G)


def covariate_grid(covariates: np.ndarray, gains: GammaPosterior) -> np.ndarray:
    """(T, U) covariate factor under the power-of-the-mean approximation."""
    T = covariates.shape[0]
    U = gains.shape.shape[0]
    if covariates.shape[1] == 0:
        return np.ones((T, U))
    return np.exp(covariates @ np.log(gains.mean()).T)


def noise_moments(state: FitResult) -> tuple[np.ndarray, np.ndarray]:
    """Per-observation noise mean and expected log, in record order."""
    obs = state.obs
    if state.noise is None:
        return np.ones(obs.n_obs), np.zeros(obs.n_obs)
    if not state.config.autocorrelated_noise:
        return state.noise.mean(), state.noise.mean_log()
    # Running products per unit: segmented cumulative sums in log space.
    order, starts = _unit_order(obs)
    log_mean = np.log(state.noise.mean())[order]
    log_elog = state.noise.mean_log()[order]
    cum_mean = _segmented_cumsum(log_mean, starts)
    cum_elog = _segmented_cumsum(log_elog, starts)
    mean = np.empty(obs.n_obs)
    elog = np.empty(obs.n_obs)
    mean[order] = np.exp(cum_mean)
    elog[order] = cum_elog
    return mean, elog


def _unit_order(obs: ObservationSet) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(obs.unit_idx, kind="stable")
    boundaries = np.flatnonzero(np.diff(obs.unit_idx[order])) + 1
    starts = np.concatenate([[0], boundaries])
    return order, starts


def _segmented_cumsum(values: np.ndarray, starts: np.ndarray) -> np.ndarray:
    out = np.cumsum(values)
    prev_totals = np.zeros(starts.size)
    prev_totals[1:] = out[starts[1:] - 1]
    lengths = np.diff(np.append(starts, values.size))
    return out - np.repeat(prev_totals, lengths)


def noise_grid(state: FitResult) -> np.ndarray:
    """(T, U) sums of per-observation noise means over presentations."""
    mean, _ = noise_moments(state)
    return state.obs.scatter_to_grid(mean)


def expected_rate(state: FitResult, t: int, u: int, exact: bool = False) -> float:
    """Posterior expected event rate at one (time, unit) cell.

    ``exact`` evaluates the covariate factor through the gamma-ratio identity
    instead of the power-of-the-mean approximation.
    """
    gm = state.gains.mean()
    factor = 1.0
    for k, chain in enumerate(state.chains):
        xi = chain.on_prob[t]
        factor *= 1.0 - xi + xi * gm[u, k]
    cov = 1.0
    for r in range(state.obs.n_covariates):
        x = state.obs.covariates[t, r]
        a = state.covariate_gains.shape[u, r]
        b = state.covariate_gains.rate[u, r]
        if exact:
            cov *= np.exp(gammaln(a + x) - gammaln(a) - x * np.log(b))
        else:
            cov *= (a / b) ** x
    return float(state.baseline.mean()[u] * factor * cov)


# ---------------------------------------------------------------------------
# Variational objective
# ---------------------------------------------------------------------------


def _bounded_hierarchy_block(
    site: GammaPosterior, conc: GammaPosterior, inv_mean: GammaPosterior
) -> float:
    """Expected bounded log prior of sites under a (conc, inv-mean) hierarchy,
    plus the site entropies."""
    c_mean = conc.mean()
    value = (
        (c_mean - 1.0) * (site.mean_log() + 1.0)
        - c_mean * inv_mean.mean() * site.mean()
        + c_mean * inv_mean.mean_log()
        + 0.5 * conc.mean_log()
        + site.entropy()
    )
    return float(np.sum(value))


def _noise_block(state: FitResult) -> float:
    """Bounded expected log prior of the noise sites plus their entropies."""
    noise, shape = state.noise, state.noise_shape
    s_mean = shape.mean()[state.obs.unit_idx]
    s_mean_log = shape.mean_log()[state.obs.unit_idx]
    value = (
        0.5 * s_mean_log
        + s_mean
        - 1.0
        + (s_mean - 1.0) * noise.mean_log()
        - s_mean * noise.mean()
        + noise.entropy()
    )
    return float(np.sum(value))


def compute_elbo(state: FitResult) -> tuple[float, dict]:
    """Assemble the bounded variational objective; returns (value, term map).

    The chain contribution uses the smoothing-pass normalizer in place of the
    explicit state entropy; transition and initial-state pieces cancel exactly
    because the stored chain potentials equal the current expected-log
    parameters.  Constants depending only on the counts are dropped.
    """
    obs, cfg = state.obs, state.config
    terms: dict[str, float] = {}
    theta_mean, theta_mean_log = noise_moments(state)
    theta_grid = obs.scatter_to_grid(theta_mean)

    n = obs.counts.astype(float)
    evidence = float(n @ theta_mean_log)
    evidence += float(obs.counts_tu.sum(axis=0) @ state.baseline.mean_log())
    gain_mean_log = state.gains.mean_log()
    for k, chain in enumerate(state.chains):
        evidence += float(chain.on_prob @ (obs.counts_tu @ gain_mean_log[:, k]))
    if obs.n_covariates:
        count_weighted = obs.counts_tu.T @ obs.covariates
        evidence += float(np.sum(count_weighted * state.covariate_gains.mean_log()))
    terms["evidence_counts"] = evidence
    terms["evidence_rate"] = -float(
        np.sum(theta_grid * state.cache.feature_factor * state.cache.covariate_factor
               * state.cache.baseline_mean[None, :])
    )

    chain_term = 0.0
    for k, chain in enumerate(state.chains):
        chain_term += chain.log_norm - float(
            np.sum(chain.marginals() * chain.emission_logits)
        )
        if cfg.semi_markov:
            ng = state.durations[k]
            new_logits = chainmod.duration_potentials(ng, cfg.max_dwell)
            counts = chain.dwell_stats * chain.entry_mass[None, :]
            chain_term += float(np.sum(counts * (new_logits.T - chain.dwell_logits.T)))
    terms["chains"] = chain_term

    if cfg.overdispersion:
        terms["noise_sites"] = _noise_block(state)
        a_s, b_s = cfg.priors.noise_shape
        terms["noise_shape"] = -float(np.sum(gamma_kl(state.noise_shape, a_s, b_s)))

    terms["baseline_sites"] = _bounded_hierarchy_block(
        state.baseline, state.baseline_conc, state.baseline_inv_mean
    )
    a_c, b_c = cfg.priors.baseline_conc
    a_d, b_d = cfg.priors.baseline_inv_mean
    terms["baseline_hyper"] = -float(
        gamma_kl(state.baseline_conc, a_c, b_c) + gamma_kl(state.baseline_inv_mean, a_d, b_d)
    )

    gain_sites = 0.0
    for k in range(cfg.n_features):
        gain_sites += _bounded_hierarchy_block(
            GammaPosterior(state.gains.shape[:, k], state.gains.rate[:, k]),
            GammaPosterior(state.gain_conc.shape[k], state.gain_conc.rate[k]),
            GammaPosterior(state.gain_inv_mean.shape[k], state.gain_inv_mean.rate[k]),
        )
    terms["gain_sites"] = gain_sites
    a_cz, b_cz = cfg.priors.gain_conc
    a_dz, b_dz = cfg.priors.gain_inv_mean
    terms["gain_hyper"] = -float(
        np.sum(gamma_kl(state.gain_conc, a_cz, b_cz))
        + np.sum(gamma_kl(state.gain_inv_mean, a_dz, b_dz))
    )

    if obs.n_covariates:
        a_x, b_x = cfg.priors.covariate
        terms["covariate_sites"] = -float(np.sum(gamma_kl(state.covariate_gains, a_x, b_x)))

    dir_term = 0.0
    init_prior = _init_prior(cfg)
    trans_prior = _trans_prior(cfg)
    for k in range(cfg.n_features):
        dir_term -= float(dirichlet_kl(state.init[k], init_prior))
        if not cfg.semi_markov:
            dir_term -= float(np.sum(dirichlet_kl(state.trans[k], trans_prior)))
    if cfg.n_features:
        terms["chain_priors"] = dir_term

    if cfg.semi_markov and cfg.n_features:
        prior = _duration_prior(cfg)
        terms["durations"] = -float(
            sum(np.sum(normal_gamma_kl(ng, prior)) for ng in state.durations)
        )

    for name, value in terms.items():
        if not np.isfinite(value):
            raise NumericalStateError(f"objective block '{name}' is non-finite ({value})")
    return float(sum(terms.values())), terms


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


def run_sweep(state: FitResult) -> None:
    """One full coordinate-ascent pass, mutating the state in place."""
    obs, cfg = state.obs, state.config
    theta_grid = noise_grid(state)
    refresh_cache(state)
    cache = state.cache
    counts_per_unit = obs.counts_tu.sum(axis=0)

    # Baselines and their hierarchy.
    rate_sum = np.sum(theta_grid * cache.feature_factor * cache.covariate_factor, axis=0)
    c0 = float(state.baseline_conc.mean())
    d0 = float(state.baseline_inv_mean.mean())
    state.baseline = conjugate.update_rate_sites(
        conjugate.SufficientStats(counts_per_unit, rate_sum), c0, c0 * d0
    )
    cache.baseline_mean = state.baseline.mean()
    state.baseline_conc, state.baseline_inv_mean = conjugate.update_population_hyperparams(
        state.baseline.mean(),
        state.baseline.mean_log(),
        state.baseline_conc,
        state.baseline_inv_mean,
        cfg.priors.baseline_conc,
        cfg.priors.baseline_inv_mean,
    )

    trans_prior = _trans_prior(cfg)
    init_prior = _init_prior(cfg)
    dur_prior = _duration_prior(cfg)
    for k, chain in enumerate(state.chains):
        gain_k = GammaPosterior(state.gains.shape[:, k], state.gains.rate[:, k])
        factor_excl = cache.exclude_feature(chain.on_prob, gain_k.mean())
        weighted_excl = theta_grid * factor_excl * cache.covariate_factor

        cz = float(state.gain_conc.mean()[k])
        dz = float(state.gain_inv_mean.mean()[k])
        count_sum = obs.counts_tu.T @ chain.on_prob
        rate_sum = cache.baseline_mean * (chain.on_prob @ weighted_excl)
        gain_k = conjugate.update_rate_sites(
            conjugate.SufficientStats(count_sum, rate_sum), cz, cz * dz
        )
        state.gains.shape[:, k] = gain_k.shape
        state.gains.rate[:, k] = gain_k.rate

        conc_k, invm_k = conjugate.update_population_hyperparams(
            gain_k.mean(),
            gain_k.mean_log(),
            GammaPosterior(state.gain_conc.shape[k], state.gain_conc.rate[k]),
            GammaPosterior(state.gain_inv_mean.shape[k], state.gain_inv_mean.rate[k]),
            cfg.priors.gain_conc,
            cfg.priors.gain_inv_mean,
        )
        state.gain_conc.shape[k] = conc_k.shape
        state.gain_conc.rate[k] = conc_k.rate
        state.gain_inv_mean.shape[k] = invm_k.shape
        state.gain_inv_mean.rate[k] = invm_k.rate

        emissions = chainmod.compute_emissions(
            obs.counts_tu, weighted_excl, cache.baseline_mean, gain_k
        )
        init_marginal = np.array([1.0 - chain.on_prob[0], chain.on_prob[0]])
        trans_post, init_post, log_trans, log_init = chainmod.update_chain_priors(
            chain.two_slice, init_marginal, trans_prior, init_prior, cfg.semi_markov
        )
        state.trans[k] = trans_post
        state.init[k] = init_post

        if cfg.semi_markov:
            dwell_logits = chainmod.duration_potentials(state.durations[k], cfg.max_dwell)
            marg, two_slice, dwell, entry, log_norm = chainmod.hsmm_forward_backward(
                emissions, log_trans, log_init, dwell_logits
            )
            state.durations[k], _ = update_duration_hyperparams(
                dwell, dur_prior, state.durations[k], cfg.max_dwell
            )
            new_chain = ChainPosterior(
                marg[:, 1], two_slice, log_norm, emissions, log_trans, log_init,
                dwell, entry, dwell_logits,
            )
        else:
            marg, two_slice, log_norm = chainmod.forward_backward(
                emissions, log_trans, log_init
            )
            new_chain = ChainPosterior(
                marg[:, 1], two_slice, log_norm, emissions, log_trans, log_init
            )
        state.chains[k] = new_chain
        cache.feature_factor = factor_excl * RateCache.chain_factor(
            new_chain.on_prob, gain_k.mean()
        )

    if obs.n_covariates:
        count_weighted = obs.counts_tu.T @ obs.covariates
        rate_weights = theta_grid * cache.feature_factor * cache.baseline_mean[None, :]
        a_x, b_x = cfg.priors.covariate
        prior_shape = np.full((obs.n_units, obs.n_covariates), a_x)
        prior_rate = np.full((obs.n_units, obs.n_covariates), b_x)
        state.covariate_gains, _ = update_covariate_rates(
            obs.covariates, rate_weights, count_weighted, prior_shape, prior_rate
        )
        cache.covariate_factor = covariate_grid(obs.covariates, state.covariate_gains)

    if cfg.overdispersion:
        rate_at_obs = (
            cache.baseline_mean[obs.unit_idx]
            * cache.feature_factor[obs.time_idx, obs.unit_idx]
            * cache.covariate_factor[obs.time_idx, obs.unit_idx]
        )
        if cfg.autocorrelated_noise:
            _update_noise_chains(state, rate_at_obs)
        else:
            s_mean = state.noise_shape.mean()[obs.unit_idx]
            state.noise = conjugate.update_overdispersion(
                obs.counts.astype(float), rate_at_obs, s_mean
            )
        state.noise_shape = conjugate.update_unit_shape(
            obs.obs_per_unit, state.noise, obs.unit_idx, cfg.priors.noise_shape,
            obs.n_units, mean_floor=cfg.priors.noise_shape_floor,
        )

    if cfg.debug_checks:
        _check_cache_coherence(state)


def _update_noise_chains(state: FitResult, rate_at_obs: np.ndarray) -> None:
    """Innovation-chain updates, one clock-ordered block per unit."""
    obs = state.obs
    order, starts = _unit_order(obs)
    ends = np.concatenate([starts[1:], [obs.n_obs]])
    new_shape = state.noise.shape.copy()
    new_rate = state.noise.rate.copy()
    s_mean = state.noise_shape.mean()
    for start, end in zip(starts, ends):
        idx = order[start:end]
        u = obs.unit_idx[idx[0]]
        block = conjugate.update_autocorrelated_gains(
            obs.counts[idx].astype(float),
            rate_at_obs[idx],
            GammaPosterior(state.noise.shape[idx], state.noise.rate[idx]),
            float(s_mean[u]),
            float(s_mean[u]),
        )
        new_shape[idx] = block.shape
        new_rate[idx] = block.rate
    state.noise = GammaPosterior(new_shape, new_rate)


def _check_cache_coherence(state: FitResult) -> None:
    cached = state.cache
    saved = cached.feature_factor, cached.covariate_factor, cached.baseline_mean
    refresh_cache(state)
    fresh = state.cache
    ok = (
        np.allclose(saved[0], fresh.feature_factor, rtol=1e-9, atol=1e-12)
        and np.allclose(saved[1], fresh.covariate_factor, rtol=1e-9, atol=1e-12)
        and np.allclose(saved[2], fresh.baseline_mean, rtol=1e-9, atol=1e-12)
    )
    if not ok:
        raise NumericalStateError("rate cache drifted from a fresh recomputation")


# ---------------------------------------------------------------------------
# Fit loop
# ---------------------------------------------------------------------------


def _run_restart(obs, cfg, seed, index) -> FitResult:
    state = init_posteriors(obs, cfg, seed)
    trace: list[tuple] = []
    previous = None
    for sweep in range(cfg.max_sweeps):
        started = time.perf_counter()
        run_sweep(state)
        value, terms = compute_elbo(state)
        state.elbo_trace.append(value)
        state.elbo_terms = terms
        trace.append((index, sweep, value, time.perf_counter() - started, dict(terms)))
        if previous is not None and abs(value - previous) < cfg.tol * max(abs(previous), 1e-12):
            state.converged = True
            break
        previous = value
    state.diagnostics = [
        {
            "restart": index,
            "seed": seed,
            "n_sweeps": len(state.elbo_trace),
            "converged": state.converged,
            "final_elbo": state.elbo_trace[-1] if state.elbo_trace else float("-inf"),
            "error": None,
        }
    ]
    state.sweep_records = trace
    return state


def fit(obs: ObservationSet, cfg: ModelConfig, trace_path=None) -> FitResult:
    """Run the configured number of restarts and return the best by objective.

    A numerical failure aborts only its restart; the failure is recorded in
    the returned diagnostics.  ``trace_path`` makes the engine write one
    delimited row per sweep (all restarts).
    """
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    children = root.spawn(cfg.n_restarts)
    best: FitResult | None = None
    diagnostics: list[dict] = []
    records: list[tuple] = []
    for index, child in enumerate(children):
        seed = int(child.generate_state(1)[0])
        try:
            state = _run_restart(obs, cfg, seed, index)
        except NumericalStateError as err:
            diagnostics.append(
                {
                    "restart": index,
                    "seed": seed,
                    "n_sweeps": 0,
                    "converged": False,
                    "final_elbo": float("-inf"),
                    "error": str(err),
                }
            )
            continue
        diagnostics.extend(state.diagnostics)
        records.extend(state.sweep_records)
        if best is None or state.elbo_trace[-1] > best.elbo_trace[-1]:
            best = state
            best.restart_index = index
    if best is None:
        raise NumericalStateError(
            "every restart failed: " + "; ".join(d["error"] or "?" for d in diagnostics)
        )
    best.diagnostics = diagnostics
    if trace_path is not None:
        _write_trace(trace_path, records)
    return best


def _write_trace(path, records) -> None:
    term_names = sorted({name for *_, terms in records for name in terms})
    with open(path, "w") as fh:
        fh.write("restart,sweep,elbo,seconds," + ",".join(term_names) + "\n")
        for restart, sweep, value, seconds, terms in records:
            cols = [str(restart), str(sweep), repr(value), f"{seconds:.6f}"]
            cols += [repr(terms.get(name, 0.0)) for name in term_names]
            fh.write(",".join(cols) + "\n")
