"""Scikit-learn style estimator wrapping the variational fit engine."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from .config import ModelConfig, PriorConfig, config_from_dict
from .data import ObservationSet, build_observation_set
from .engine import fit as engine_fit
from .engine import refresh_cache

__all__ = ["SpikeFeatureModel"]


class SpikeFeatureModel(BaseEstimator, TransformerMixin):
    """Discover binary time-varying stimulus features from event counts.

    Parameters mirror the engine configuration; ``X`` is an (M, 3) integer
    array of (time, unit, count) records (or a prebuilt
    :class:`~spikefeatures.data.ObservationSet`), with per-time covariates
    passed to :meth:`fit` separately.

    After fitting, ``features_`` holds the (T, K) posterior on-probabilities,
    ``elbo_trace_`` the objective trace of the winning restart and ``result_``
    the full posterior state.
    """

    def __init__(
        self,
        n_features: int = 5,
        *,
        semi_markov: bool = False,
        max_dwell: int = 1,
        priors: dict | None = None,
        pin_initial_state: bool = False,
        overdispersion: bool = True,
        autocorrelated_noise: bool = False,
        tol: float = 1e-4,
        max_sweeps: int = 500,
        n_restarts: int = 10,
        random_state: int | None = None,
    ):
        self.n_features = n_features
        self.semi_markov = semi_markov
        self.max_dwell = max_dwell
        self.priors = priors
        self.pin_initial_state = pin_initial_state
        self.overdispersion = overdispersion
        self.autocorrelated_noise = autocorrelated_noise
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.n_restarts = n_restarts
        self.random_state = random_state

    def _build_config(self) -> ModelConfig:
        cfg = config_from_dict(
            {
                "n_features": self.n_features,
                "semi_markov": self.semi_markov,
                "max_dwell": self.max_dwell,
                "pin_initial_state": self.pin_initial_state,
                "overdispersion": self.overdispersion,
                "autocorrelated_noise": self.autocorrelated_noise,
                "tol": self.tol,
                "max_sweeps": self.max_sweeps,
                "n_restarts": self.n_restarts,
                "seed": self.random_state,
                "priors": self.priors or {},
            }
        )
        return cfg

    def _as_observations(self, X, covariates=None) -> ObservationSet:
        if isinstance(X, ObservationSet):
            return X
        records = check_array(X, dtype=np.int64, ensure_2d=True)
        if records.shape[1] != 3:
            raise ValueError("X must have exactly three columns: time, unit, count")
        return build_observation_set(records, covariate_table=covariates)

    def fit(self, X, y=None, covariates=None):
        obs = self._as_observations(X, covariates)
        cfg = self._build_config()
        self.result_ = engine_fit(obs, cfg)
        self.features_ = self.result_.feature_probs()
        self.elbo_trace_ = list(self.result_.elbo_trace)
        self.elbo_ = self.elbo_trace_[-1]
        self.n_times_ = obs.n_times
        self.n_units_ = obs.n_units
        self.converged_ = self.result_.converged
        return self

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise NotFittedError("call fit before using this estimator")

    def transform(self, X):
        """Posterior feature probabilities at each record's time, (M, K)."""
        self._check_fitted()
        if isinstance(X, ObservationSet):
            times = X.time_idx
        else:
            records = check_array(X, dtype=np.int64, ensure_2d=True)
            times = records[:, 0]
        if times.min() < 0 or times.max() >= self.n_times_:
            raise ValueError("record times fall outside the fitted stimulus range")
        return self.features_[times]

    def predict(self, X):
        """Expected event count for each (time, unit) record."""
        self._check_fitted()
        if isinstance(X, ObservationSet):
            times, units = X.time_idx, X.unit_idx
        else:
            records = check_array(X, dtype=np.int64, ensure_2d=True)
            times, units = records[:, 0], records[:, 1]
        state = self.result_
        refresh_cache(state)
        grid = state.cache.expected_grid()
        return grid[times, units]

    def score(self, X=None, y=None) -> float:
        """Final value of the variational objective for the training fit."""
        self._check_fitted()
        return float(self.elbo_)
