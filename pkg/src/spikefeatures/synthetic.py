"""Sampling complete datasets from the generative model with known truth."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ObservationSet, build_observation_set
from .errors import DataValidationError

__all__ = ["GeneratorConfig", "GroundTruth", "generate", "write_ground_truth", "read_truth_states"]


@dataclass
class GeneratorConfig:
    """Knobs for the synthetic protocol.

    Rates are specified in events/second and converted with ``bin_width``;
    gains are drawn per (unit, feature) from a gamma law.  Covariates are
    binary Markov paths scaled by ``covariate_amplitude``.
    """

    n_units: int = 50
    n_times: int = 2000
    n_true_features: int = 2
    n_covariates: int = 0
    bin_width: float = 0.0333
    baseline_rate_hz: float = 10.0
    baseline_shape: float = 10.0
    gain_prior: tuple[float, float] = (1.0, 1.0)
    covariate_gain_prior: tuple[float, float] = (1.0, 1.0)
    covariate_amplitude: float = 1.0
    covariate_stay_prob: float = 0.95
    stay_off: float = 0.95
    stay_on: float = 0.90
    semi_markov: bool = False
    dwell_log_mean: tuple[float, float] = (3.0, 2.3)
    dwell_log_sd: tuple[float, float] = (0.3, 0.3)
    max_dwell: int = 50
    noise_shape: float | None = 4.0
    n_presentations: int = 1

    def validate(self) -> None:
        if min(self.n_units, self.n_times, self.n_presentations) < 1:
            raise DataValidationError("n_units, n_times and n_presentations must be >= 1")
        if self.n_true_features < 0 or self.n_covariates < 0:
            raise DataValidationError("feature and covariate counts must be >= 0")
        if not (0 < self.stay_off < 1 and 0 < self.stay_on < 1):
            raise DataValidationError("stay probabilities must lie in (0, 1)")
        if self.noise_shape is not None and self.noise_shape <= 0:
            raise DataValidationError("noise_shape must be positive or null")
        if self.bin_width <= 0 or self.baseline_rate_hz <= 0:
            raise DataValidationError("bin_width and baseline_rate_hz must be positive")


@dataclass
class GroundTruth:
    states: np.ndarray            # (T, K_true) 0/1
    gains: np.ndarray             # (U, K_true)
    baselines: np.ndarray         # (U,) expected events per bin
    covariates: np.ndarray        # (T, R)
    covariate_gains: np.ndarray   # (U, R)
    noise: np.ndarray             # (M,) multiplicative draws, record order
    stay_probs: tuple[float, float]


def _markov_path(rng, T, stay0, stay1, p1_init) -> np.ndarray:
    flips = rng.random(T)
    path = np.empty(T, dtype=np.int8)
    state = 1 if flips[0] < p1_init else 0
    path[0] = state
    stay = (stay0, stay1)
    for t in range(1, T):
        if flips[t] >= stay[state]:
            state = 1 - state
        path[t] = state
    return path


def _semi_markov_path(rng, T, cfg: GeneratorConfig) -> np.ndarray:
    # Dwell pmf: log-normal density at the integers 1..D, renormalized.
    ds = np.arange(1, cfg.max_dwell + 1, dtype=float)
    pmfs = []
    for j in range(2):
        m, s = cfg.dwell_log_mean[j], cfg.dwell_log_sd[j]
        dens = np.exp(-0.5 * ((np.log(ds) - m) / s) ** 2) / ds
        pmfs.append(dens / dens.sum())
    path = np.empty(T, dtype=np.int8)
    state = int(rng.random() < 0.5)
    t = 0
    while t < T:
        dwell = int(rng.choice(ds, p=pmfs[state]))
        path[t : t + dwell] = state
        t += dwell
        state = 1 - state
    return path


def generate(cfg: GeneratorConfig, seed=None) -> tuple[ObservationSet, GroundTruth]:
    """Sample a dataset and its generating parameters, fully seed-deterministic."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    T, U, K, R = cfg.n_times, cfg.n_units, cfg.n_true_features, cfg.n_covariates

    p_off = 1.0 - cfg.stay_off
    p_on = 1.0 - cfg.stay_on
    p1_init = p_off / (p_off + p_on)
    if cfg.semi_markov:
        states = np.stack([_semi_markov_path(rng, T, cfg) for _ in range(K)], axis=1) \
            if K else np.zeros((T, 0), dtype=np.int8)
    else:
        states = np.stack(
            [_markov_path(rng, T, cfg.stay_off, cfg.stay_on, p1_init) for _ in range(K)],
            axis=1,
        ) if K else np.zeros((T, 0), dtype=np.int8)

    covariates = np.zeros((T, R))
    for r in range(R):
        covariates[:, r] = cfg.covariate_amplitude * _markov_path(
            rng, T, cfg.covariate_stay_prob, cfg.covariate_stay_prob, 0.5
        )

    mean_per_bin = cfg.baseline_rate_hz * cfg.bin_width
    baselines = rng.gamma(cfg.baseline_shape, mean_per_bin / cfg.baseline_shape, size=U)
    ga, gb = cfg.gain_prior
    gains = rng.gamma(ga, 1.0 / gb, size=(U, K))
    ca, cb = cfg.covariate_gain_prior
    covariate_gains = rng.gamma(ca, 1.0 / cb, size=(U, R))

    rate_grid = baselines[None, :].repeat(T, axis=0)
    if K:
        rate_grid = rate_grid * np.exp(states.astype(float) @ np.log(gains).T)
    if R:
        rate_grid = rate_grid * np.exp(covariates @ np.log(covariate_gains).T)

    P = cfg.n_presentations
    if cfg.noise_shape is None or np.isinf(cfg.noise_shape):
        noise = np.ones((P, T, U))
    else:
        noise = rng.gamma(cfg.noise_shape, 1.0 / cfg.noise_shape, size=(P, T, U))
    counts = rng.poisson(rate_grid[None, :, :] * noise)

    t_idx = np.tile(np.repeat(np.arange(T), U), P)
    u_idx = np.tile(np.arange(U), T * P)
    records = np.stack([t_idx, u_idx, counts.reshape(-1)], axis=1)
    obs = build_observation_set(records, covariates if R else None, n_times=T, n_units=U)
    truth = GroundTruth(
        states=states,
        gains=gains,
        baselines=baselines,
        covariates=covariates,
        covariate_gains=covariate_gains,
        noise=noise.reshape(-1),
        stay_probs=(cfg.stay_off, cfg.stay_on),
    )
    return obs, truth


def generator_config_from_dict(payload: dict) -> GeneratorConfig:
    cfg = GeneratorConfig()
    for key, value in payload.items():
        if not hasattr(cfg, key):
            raise DataValidationError(f"unknown generator field '{key}'")
        current = getattr(cfg, key)
        if isinstance(current, tuple):
            value = tuple(float(v) for v in value)
        setattr(cfg, key, value)
    for name in ("n_units", "n_times", "n_true_features", "n_covariates",
                 "max_dwell", "n_presentations"):
        setattr(cfg, name, int(getattr(cfg, name)))
    cfg.validate()
    return cfg


def generator_config_to_dict(cfg: GeneratorConfig) -> dict:
    return dataclasses.asdict(cfg)


def write_ground_truth(out_dir, truth: GroundTruth) -> list[Path]:
    """Write the 0/1 state matrix and the gains table as delimited text."""
    out_dir = Path(out_dir)
    states_path = out_dir / "truth_states.csv"
    K = truth.states.shape[1]
    with open(states_path, "w") as fh:
        fh.write(",".join(f"z{k}" for k in range(K)) + "\n")
        for row in truth.states:
            fh.write(",".join(str(int(v)) for v in row) + "\n")
    gains_path = out_dir / "truth_gains.csv"
    with open(gains_path, "w") as fh:
        fh.write(",".join(f"g{k}" for k in range(K)) + "\n")
        for row in truth.gains:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return [states_path, gains_path]


def read_truth_states(path) -> np.ndarray:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        K = len(header)
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != K:
                raise DataValidationError(f"{path}:{lineno}: expected {K} fields")
            rows.append([float(p) for p in parts])
    return np.asarray(rows)
