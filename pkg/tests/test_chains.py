import itertools

import numpy as np
import pytest
from scipy.special import digamma, gammaln, logsumexp

from spikefeatures.chains import (
    compute_emissions,
    duration_pmf_expectation,
    expected_log_duration_pmf,
    forward_backward,
    sample_paths,
    update_chain_priors,
)
from spikefeatures.errors import DegenerateEmissionError
from spikefeatures.posteriors import GammaPosterior, NormalGammaPosterior


def _dwell_density_quadrature(mu, lam, alpha, beta, d, epsrel=1e-10):
    """Adaptive 2-D quadrature of LogNormal(d | m, 1/tau) x NormalGamma."""
    from scipy.integrate import quad

    log_d = np.log(d)

    def inner(m):
        def over_tau(tau):
            log_val = (
                alpha * np.log(beta)
                - gammaln(alpha)
                + 0.5 * np.log(lam * tau / (2 * np.pi))
                + (alpha - 1.0) * np.log(tau)
                - beta * tau
                - 0.5 * lam * tau * (m - mu) ** 2
                + 0.5 * np.log(tau / (2 * np.pi))
                - log_d
                - 0.5 * tau * (log_d - m) ** 2
            )
            return np.exp(log_val)

        value, _ = quad(over_tau, 0.0, np.inf, epsabs=1e-14, epsrel=epsrel, limit=300)
        return value

    left, _ = quad(inner, -np.inf, mu, epsabs=1e-14, epsrel=epsrel, limit=300)
    right, _ = quad(inner, mu, np.inf, epsabs=1e-14, epsrel=epsrel, limit=300)
    return left + right


def enumerate_chain(eta, log_trans, log_init):
    """Brute-force posterior over all state paths."""
    T, S = eta.shape
    logps = []
    paths = list(itertools.product(range(S), repeat=T))
    for path in paths:
        lp = log_init[path[0]] + eta[0, path[0]]
        for t in range(1, T):
            lp += log_trans[path[t - 1], path[t]] + eta[t, path[t]]
        logps.append(lp)
    logps = np.array(logps)
    log_norm = logsumexp(logps)
    post = np.exp(logps - log_norm)
    marg = np.zeros((T, S))
    two = np.zeros((T - 1, S, S))
    for p, path in zip(post, paths):
        for t, s in enumerate(path):
            marg[t, s] += p
        for t in range(T - 1):
            two[t, path[t], path[t + 1]] += p
    return marg, two, log_norm


class TestForwardBackward:
    def test_uniform_potentials_give_uniform_marginals(self):
        T = 6
        eta = np.zeros((T, 2))
        log_trans = np.log(np.full((2, 2), 0.5))
        log_init = np.log(np.full(2, 0.5))
        marg, two, log_norm = forward_backward(eta, log_trans, log_init)
        assert np.allclose(marg, 0.5)
        assert np.allclose(two, 0.25)

    def test_single_slice_is_softmax(self):
        eta = np.array([[0.3, -1.2]])
        log_init = np.array([np.log(0.4), np.log(0.6)])
        marg, two, log_norm = forward_backward(eta, np.zeros((2, 2)), log_init)
        logits = log_init + eta[0]
        expected = np.exp(logits - logsumexp(logits))
        assert np.allclose(marg[0], expected, atol=1e-14)
        assert two.shape == (0, 2, 2)
        assert log_norm == pytest.approx(logsumexp(logits))

    def test_matches_enumeration_on_asymmetric_chain(self):
        rng = np.random.default_rng(0)
        T = 3
        eta = rng.normal(size=(T, 2))
        log_trans = np.log(np.array([[0.7, 0.3], [0.4, 0.6]]))
        log_init = np.log(np.array([0.5, 0.5]))
        marg, two, log_norm = forward_backward(eta, log_trans, log_init)
        marg_o, two_o, log_norm_o = enumerate_chain(eta, log_trans, log_init)
        assert np.max(np.abs(marg - marg_o)) < 1e-12
        assert np.max(np.abs(two - two_o)) < 1e-12
        assert abs(log_norm - log_norm_o) < 1e-12

    def test_unnormalized_potentials_match_enumeration(self):
        # Expected-log parameters are not normalized probabilities; the
        # recursion must not assume rows summing to one.
        rng = np.random.default_rng(1)
        for trial in range(20):
            T, S = rng.integers(2, 7), rng.integers(2, 4)
            eta = rng.normal(scale=2.0, size=(T, S))
            log_trans = rng.normal(scale=1.0, size=(S, S)) - 1.0
            log_init = rng.normal(scale=1.0, size=S) - 1.0
            marg, two, log_norm = forward_backward(eta, log_trans, log_init)
            marg_o, two_o, log_norm_o = enumerate_chain(eta, log_trans, log_init)
            assert np.max(np.abs(marg - marg_o)) < 1e-11
            assert np.max(np.abs(two - two_o)) < 1e-11
            assert abs(log_norm - log_norm_o) < 1e-11

    def test_marginal_consistency_of_two_slice(self):
        rng = np.random.default_rng(2)
        eta = rng.normal(size=(8, 2))
        log_trans = rng.normal(size=(2, 2))
        log_init = rng.normal(size=2)
        marg, two, _ = forward_backward(eta, log_trans, log_init)
        assert np.allclose(two.sum(axis=2), marg[:-1], atol=1e-12)
        assert np.allclose(two.sum(axis=1), marg[1:], atol=1e-12)

    def test_constant_emission_shift_moves_only_log_norm(self):
        rng = np.random.default_rng(3)
        eta = rng.normal(size=(7, 2))
        log_trans = rng.normal(size=(2, 2))
        log_init = rng.normal(size=2)
        marg0, two0, ln0 = forward_backward(eta, log_trans, log_init)
        c = 3.7
        marg1, two1, ln1 = forward_backward(eta + c, log_trans, log_init)
        assert np.allclose(marg0, marg1, atol=1e-12)
        assert np.allclose(two0, two1, atol=1e-12)
        assert ln1 - ln0 == pytest.approx(7 * c, abs=1e-9)

    def test_all_impossible_slice_raises(self):
        eta = np.zeros((3, 2))
        eta[1] = -np.inf
        with pytest.raises(DegenerateEmissionError):
            forward_backward(eta, np.zeros((2, 2)), np.zeros(2))


class TestEmissions:
    def test_time_bins_without_observations_get_zero_potentials(self):
        counts_tu = np.zeros((4, 3))
        weighted = np.zeros((4, 3))
        gain = GammaPosterior(np.full(3, 2.0), np.full(3, 2.0))
        eta = compute_emissions(counts_tu, weighted, np.ones(3), gain)
        assert np.all(eta == 0.0)

    def test_direct_substitution_single_observation(self):
        # E[log gain] pinned to log 2 exactly; the on-state rate increase is
        # scaled to 1.5, so the on potential is 3 log 2 - 1.5.
        alpha = 5.0
        beta = np.exp(digamma(alpha)) / 2.0
        gain = GammaPosterior(np.array([alpha]), np.array([beta]))
        gain_mean = alpha / beta
        counts_tu = np.array([[3.0]])
        weighted = np.array([[1.5 / (gain_mean - 1.0)]])
        eta = compute_emissions(counts_tu, weighted, np.ones(1), gain)
        assert eta[0, 1] == pytest.approx(3.0 * np.log(2.0) - 1.5, rel=1e-12)
        assert eta[0, 0] == 0.0

    def test_matches_explicit_expectation_on_one_slice(self):
        # The potential difference must equal the difference of expected
        # complete-data log likelihoods with the feature on vs off, computed
        # from first principles with gamma moments.
        rng = np.random.default_rng(4)
        U = 5
        counts = rng.poisson(2.0, size=U).astype(float)
        baseline = GammaPosterior(rng.uniform(2, 6, U), rng.uniform(2, 6, U))
        gain = GammaPosterior(rng.uniform(2, 6, U), rng.uniform(2, 6, U))
        other_gain = GammaPosterior(rng.uniform(2, 6, U), rng.uniform(2, 6, U))
        other_on = rng.uniform(0.2, 0.8)
        theta_mean = rng.uniform(0.5, 1.5, U)

        other_factor = 1.0 - other_on + other_on * other_gain.mean()
        excl = theta_mean * other_factor  # (theta-bar) * F_excl, G == 1
        eta = compute_emissions(
            counts[None, :], excl[None, :], baseline.mean(), gain
        )

        def expected_loglik(z):
            value = float(
                counts @ (baseline.mean_log() + z * gain.mean_log())
            )
            rate = baseline.mean() * other_factor * (gain.mean() ** z)
            value -= float(theta_mean @ rate)
            return value

        assert eta[0, 1] - eta[0, 0] == pytest.approx(
            expected_loglik(1) - expected_loglik(0), rel=1e-12
        )


class TestChainPriors:
    def test_no_transitions_keeps_prior(self):
        trans, init, log_trans, log_init = update_chain_priors(
            np.zeros((0, 2, 2)), np.array([0.3, 0.7]), np.full((2, 2), 1.0), np.full(2, 1.0)
        )
        assert np.allclose(trans.counts, 1.0)
        assert np.allclose(init.counts, [1.3, 1.7])

    def test_dirichlet_identity(self):
        two = np.zeros((1, 2, 2))
        two[0, 0] = [3.0, 1.0]
        trans, _, log_trans, _ = update_chain_priors(
            two, np.array([1.0, 0.0]), np.full((2, 2), 1.0), np.full(2, 1.0)
        )
        assert np.allclose(trans.counts[0], [4.0, 2.0])
        assert log_trans[0, 0] == pytest.approx(digamma(4.0) - digamma(6.0))

    def test_pinned_initial_state_stays_off(self):
        for xi0 in (0.0, 0.5, 1.0):
            _, _, _, log_init = update_chain_priors(
                np.zeros((0, 2, 2)),
                np.array([1.0 - xi0, xi0]),
                np.full((2, 2), 1.0),
                np.array([1000.0, 1.0]),
            )
            assert np.exp(log_init[1]) < 0.002

    def test_semi_markov_forces_alternation(self):
        _, _, log_trans, _ = update_chain_priors(
            np.zeros((0, 2, 2)), np.zeros(2), np.full((2, 2), 1.0), np.full(2, 1.0),
            semi_markov=True,
        )
        assert log_trans[0, 1] == 0.0 and log_trans[1, 0] == 0.0
        assert np.isneginf(log_trans[0, 0]) and np.isneginf(log_trans[1, 1])


class TestDurationLaw:
    def test_unit_duration_collapses_correction(self):
        ng = NormalGammaPosterior(np.array(0.0), np.array(1.5), np.array(2.0), np.array(3.0))
        value = duration_pmf_expectation(ng, 1.0)
        expected = (
            (1.0 / np.sqrt(2 * np.pi))
            * np.sqrt(1.5 / 2.5)
            * np.exp(gammaln(2.5) - gammaln(2.0))
            / np.sqrt(3.0)
        )
        assert value == pytest.approx(expected, rel=1e-12)

    def test_truncated_mass_is_subunit(self):
        # The integer sum approximates the continuous unit integral, so it
        # stays below 1 (plus discretization slack) whenever the dwell scale
        # is well above the unit grid spacing.
        rng = np.random.default_rng(5)
        for _ in range(10):
            ng = NormalGammaPosterior(
                np.array(rng.uniform(np.log(4.0), np.log(25.0))),
                np.array(rng.uniform(0.5, 3.0)),
                np.array(rng.uniform(1.5, 5.0)),
                np.array(rng.uniform(0.8, 3.0)),
            )
            total = duration_pmf_expectation(ng, np.arange(1, 3000)).sum()
            assert total <= 1.0 + 1e-3

    def test_rejects_subunit_durations(self):
        ng = NormalGammaPosterior(np.array(0.0), np.array(1.0), np.array(1.0), np.array(1.0))
        with pytest.raises(Exception):
            duration_pmf_expectation(ng, 0)

    def test_matches_two_dimensional_quadrature(self):
        # E[p(d)] = integral of LogNormal(d | m, 1/tau) NG(m, tau) dm dtau,
        # done with adaptive quadrature nested over (m, tau).
        rng = np.random.default_rng(6)
        for _ in range(5):
            mu = rng.normal(1.0, 0.5)
            lam = rng.uniform(0.8, 3.0)
            alpha = rng.uniform(1.5, 4.0)
            beta = rng.uniform(0.8, 3.0)
            ng = NormalGammaPosterior(np.array(mu), np.array(lam), np.array(alpha), np.array(beta))
            for d in (1.0, 2.0, 5.0, 10.0):
                oracle = _dwell_density_quadrature(mu, lam, alpha, beta, d)
                value = float(duration_pmf_expectation(ng, d))
                assert abs(value - oracle) / oracle < 1e-6

    def test_expected_log_density_matches_quadrature(self):
        ng = NormalGammaPosterior(np.array(1.2), np.array(1.5), np.array(3.0), np.array(2.0))
        taus = np.linspace(1e-6, 80.0, 2000)
        ms = np.linspace(-12.0, 14.0, 2000)
        M, Tau = np.meshgrid(ms, taus, indexing="ij")
        log_ng = (
            3.0 * np.log(2.0)
            - gammaln(3.0)
            + 0.5 * np.log(1.5 * Tau / (2 * np.pi))
            + 2.0 * np.log(Tau)
            - 2.0 * Tau
            - 0.75 * Tau * (M - 1.2) ** 2
        )
        weight = np.exp(log_ng)
        d = 3.0
        log_p = 0.5 * np.log(Tau / (2 * np.pi)) - np.log(d) - 0.5 * Tau * (np.log(d) - M) ** 2
        oracle = np.trapezoid(np.trapezoid(weight * log_p, taus, axis=1), ms)
        value = float(expected_log_duration_pmf(ng, d))
        assert value == pytest.approx(oracle, rel=1e-5)


def test_sampled_paths_match_smoothed_marginals():
    rng = np.random.default_rng(8)
    eta = rng.normal(size=(5, 2))
    log_trans = np.log(np.array([[0.8, 0.2], [0.3, 0.7]]))
    log_init = np.log(np.array([0.6, 0.4]))
    marg, _, _ = forward_backward(eta, log_trans, log_init)
    paths = sample_paths(eta, log_trans, log_init, rng, 200_000)
    freq = paths.mean(axis=0)
    assert np.max(np.abs(freq - marg[:, 1])) < 0.005
