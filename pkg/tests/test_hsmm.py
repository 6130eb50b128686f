import numpy as np
import pytest
from scipy.special import logsumexp

from spikefeatures.chains import forward_backward, hsmm_forward_backward


def enumerate_segmentations(eta, log_trans, log_init, duration_logits):
    """Brute-force posterior over alternating-segment tilings of 0..T-1."""
    T, S = eta.shape
    D = duration_logits.shape[1]
    segmentations = []

    def recurse(t, prev, logp, segments):
        if t == T:
            segmentations.append((logp, segments))
            return
        for j in range(S):
            step = log_init[j] if prev is None else log_trans[prev, j]
            if np.isneginf(step):
                continue
            for d in range(1, min(D, T - t) + 1):
                lp = step + duration_logits[j, d - 1] + eta[t : t + d, j].sum()
                recurse(t + d, j, logp + lp, segments + [(t, d, j)])

    recurse(0, None, 0.0, [])
    logps = np.array([lp for lp, _ in segmentations])
    log_norm = logsumexp(logps)
    post = np.exp(logps - log_norm)

    marg = np.zeros((T, S))
    two = np.zeros((max(T - 1, 0), S, S))
    dwell_counts = np.zeros((D, S))
    for p, (lp, segments) in zip(post, segmentations):
        state_path = np.empty(T, dtype=int)
        for t0, d, j in segments:
            state_path[t0 : t0 + d] = j
            dwell_counts[d - 1, j] += p
        for t in range(T):
            marg[t, state_path[t]] += p
        for t in range(T - 1):
            two[t, state_path[t], state_path[t + 1]] += p
    entries = dwell_counts.sum(axis=0)
    dwell = np.divide(dwell_counts, entries[None, :], out=np.zeros_like(dwell_counts),
                      where=entries[None, :] > 0)
    return marg, two, dwell, entries, log_norm


def _alternating():
    log_trans = np.array([[-np.inf, 0.0], [0.0, -np.inf]])
    return log_trans


class TestExplicitDuration:
    def test_forced_single_segment(self):
        T, D = 5, 5
        eta = np.random.default_rng(0).normal(size=(T, 2))
        log_init = np.array([0.0, -np.inf])
        dur = np.full((2, D), -np.inf)
        dur[0, D - 1] = 0.0  # off state dwells exactly T
        dur[1, :] = np.log(1.0 / D)
        marg, two, dwell, entries, log_norm = hsmm_forward_backward(
            eta, _alternating(), log_init, dur
        )
        assert np.allclose(marg[:, 0], 1.0)
        assert log_norm == pytest.approx(eta[:, 0].sum(), abs=1e-10)
        assert dwell[D - 1, 0] == pytest.approx(1.0)

    def test_matches_segmentation_enumeration(self):
        rng = np.random.default_rng(1)
        for trial in range(30):
            T = int(rng.integers(2, 7))
            D = int(rng.integers(1, 5))
            eta = rng.normal(size=(T, 2))
            dur = np.log(rng.dirichlet(np.ones(D), size=2))
            log_init = np.log(rng.dirichlet(np.ones(2)))
            marg, two, dwell, entries, log_norm = hsmm_forward_backward(
                eta, _alternating(), log_init, dur
            )
            marg_o, two_o, dwell_o, entries_o, log_norm_o = enumerate_segmentations(
                eta, _alternating(), log_init, dur
            )
            assert abs(log_norm - log_norm_o) < 1e-10
            assert np.max(np.abs(marg - marg_o)) < 1e-10
            assert np.max(np.abs(two - two_o)) < 1e-10
            assert np.max(np.abs(dwell - dwell_o)) < 1e-10
            assert np.max(np.abs(entries - entries_o)) < 1e-10

    def test_enumeration_with_self_reentry_allowed(self):
        rng = np.random.default_rng(2)
        log_trans = np.log(rng.dirichlet(np.ones(2), size=2))
        for trial in range(10):
            T, D = 5, 3
            eta = rng.normal(size=(T, 2))
            dur = np.log(rng.dirichlet(np.ones(D), size=2))
            log_init = np.log(rng.dirichlet(np.ones(2)))
            out = hsmm_forward_backward(eta, log_trans, log_init, dur)
            oracle = enumerate_segmentations(eta, log_trans, log_init, dur)
            for got, want in zip(out, oracle):
                assert np.max(np.abs(np.asarray(got) - np.asarray(want))) < 1e-10

    def test_unit_dwell_reduces_to_markov_chain(self):
        # D = 1 makes every dwell one step; the dwell potential acts as a
        # per-step emission offset and the result must match plain smoothing.
        rng = np.random.default_rng(3)
        T = 5
        eta = rng.normal(size=(T, 2))
        log_trans = np.log(rng.dirichlet(np.ones(2), size=2))
        log_init = np.log(rng.dirichlet(np.ones(2)))
        dur = rng.normal(size=(2, 1))
        marg, two, dwell, entries, log_norm = hsmm_forward_backward(
            eta, log_trans, log_init, dur
        )
        marg_h, two_h, log_norm_h = forward_backward(
            eta + dur[:, 0][None, :], log_trans, log_init
        )
        assert np.max(np.abs(marg - marg_h)) < 1e-10
        assert np.max(np.abs(two - two_h)) < 1e-10
        assert abs(log_norm - log_norm_h) < 1e-10

    def test_dwell_columns_are_distributions(self):
        rng = np.random.default_rng(4)
        eta = rng.normal(size=(8, 2))
        dur = np.log(rng.dirichlet(np.ones(4), size=2))
        log_init = np.log(np.array([0.5, 0.5]))
        _, _, dwell, entries, _ = hsmm_forward_backward(eta, _alternating(), log_init, dur)
        for j in range(2):
            if entries[j] > 0:
                assert dwell[:, j].sum() == pytest.approx(1.0, abs=1e-9)
                assert np.all(dwell[:, j] >= 0)

    def test_marginal_consistency(self):
        rng = np.random.default_rng(5)
        eta = rng.normal(size=(7, 2))
        dur = np.log(rng.dirichlet(np.ones(3), size=2))
        log_init = np.log(np.array([0.7, 0.3]))
        marg, two, _, _, _ = hsmm_forward_backward(eta, _alternating(), log_init, dur)
        assert np.allclose(two.sum(axis=2), marg[:-1], atol=1e-9)
        assert np.allclose(two.sum(axis=1), marg[1:], atol=1e-9)
