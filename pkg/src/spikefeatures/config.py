"""Model configuration: prior hyperparameters, chain options, convergence controls."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataValidationError

__all__ = ["PriorConfig", "ModelConfig", "config_from_dict", "config_to_dict", "load_config"]

# Pseudo-counts realizing a strong "all features start off" belief.
PIN_OFF_COUNT = 1000.0
PIN_ON_COUNT = 1.0


@dataclass
class PriorConfig:
    """Gamma/Dirichlet/normal-gamma prior hyperparameters.

    The feature-gain hierarchy defaults favor a large concentration, keeping
    gains pinned near 1 unless the data demand otherwise; everything is
    overridable from the config file.
    """

    baseline_conc: tuple[float, float] = (1.0, 1.0)        # (a_c, b_c) baseline hierarchy
    baseline_inv_mean: tuple[float, float] = (1.0, 1.0)    # (a_d, b_d) baseline hierarchy
    gain_conc: tuple[float, float] = (2.0, 0.1)            # (a_c, b_c) per-feature hierarchy
    gain_inv_mean: tuple[float, float] = (1.0, 1.0)        # (a_d, b_d) per-feature hierarchy
    covariate: tuple[float, float] = (1.0, 1.0)            # fixed (a, b) per covariate gain
    noise_shape: tuple[float, float] = (4.0, 4.0)          # (a, b) prior on unit noise shape
    noise_shape_floor: float = 1.0                         # posterior-mean floor for s_u
    init_pseudo: float = 1.0                               # Dirichlet counts for initial state
    trans_pseudo: float = 1.0                              # Dirichlet counts for transition rows
    duration: tuple[float, float, float, float] = (math.log(5.0), 1.0, 2.0, 2.0)

    def validate(self) -> None:
        pairs = {
            "baseline_conc": self.baseline_conc,
            "baseline_inv_mean": self.baseline_inv_mean,
            "gain_conc": self.gain_conc,
            "gain_inv_mean": self.gain_inv_mean,
            "covariate": self.covariate,
            "noise_shape": self.noise_shape,
        }
        for name, (a, b) in pairs.items():
            if not (a > 0 and b > 0):
                raise DataValidationError(f"prior {name} must be positive, got {(a, b)}")
        if self.init_pseudo <= 0 or self.trans_pseudo <= 0:
            raise DataValidationError("Dirichlet pseudo-counts must be positive")
        if self.noise_shape_floor < 0:
            raise DataValidationError("noise_shape_floor must be nonnegative")
        mu, lam, alpha, beta = self.duration
        if not (lam > 0 and alpha > 0 and beta > 0):
            raise DataValidationError("duration prior (lam, alpha, beta) must be positive")


@dataclass
class ModelConfig:
    """Everything the fit loop needs besides the data."""

    n_features: int = 5
    semi_markov: bool = False
    max_dwell: int = 1
    priors: PriorConfig = field(default_factory=PriorConfig)
    pin_initial_state: bool = False
    overdispersion: bool = True
    autocorrelated_noise: bool = False
    tol: float = 1e-4
    max_sweeps: int = 500
    n_restarts: int = 10
    seed: int | None = None
    init_jitter: float = 0.1
    debug_checks: bool = False

    def validate(self) -> None:
        if self.n_features < 0:
            raise DataValidationError("n_features must be >= 0")
        if self.semi_markov and self.max_dwell < 1:
            raise DataValidationError("max_dwell must be >= 1 in semi-Markov mode")
        if self.tol <= 0:
            raise DataValidationError("tol must be positive")
        if self.max_sweeps < 1 or self.n_restarts < 1:
            raise DataValidationError("max_sweeps and n_restarts must be >= 1")
        if self.autocorrelated_noise and not self.overdispersion:
            raise DataValidationError("autocorrelated_noise requires overdispersion")
        self.priors.validate()


def _pair(value, name):
    pair = tuple(float(v) for v in value)
    if len(pair) != 2:
        raise DataValidationError(f"prior {name} must have two entries")
    return pair


def config_from_dict(payload: dict) -> ModelConfig:
    """Build a config from a JSON-compatible dict; absent keys keep defaults."""
    payload = dict(payload)
    prior_payload = payload.pop("priors", {})
    priors = PriorConfig()
    for key, value in prior_payload.items():
        if not hasattr(priors, key):
            raise DataValidationError(f"unknown prior field '{key}'")
        if key in ("init_pseudo", "trans_pseudo", "noise_shape_floor"):
            setattr(priors, key, float(value))
        elif key == "duration":
            quad = tuple(float(v) for v in value)
            if len(quad) != 4:
                raise DataValidationError("duration prior must have four entries")
            priors.duration = quad
        else:
            setattr(priors, key, _pair(value, key))
    cfg = ModelConfig(priors=priors)
    for key, value in payload.items():
        if not hasattr(cfg, key):
            raise DataValidationError(f"unknown config field '{key}'")
        setattr(cfg, key, value)
    cfg.n_features = int(cfg.n_features)
    cfg.max_dwell = int(cfg.max_dwell)
    cfg.max_sweeps = int(cfg.max_sweeps)
    cfg.n_restarts = int(cfg.n_restarts)
    if cfg.seed is not None:
        cfg.seed = int(cfg.seed)
    cfg.validate()
    return cfg


def config_to_dict(cfg: ModelConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["priors"] = dataclasses.asdict(cfg.priors)
    return out


def load_config(path) -> ModelConfig:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise DataValidationError(f"{path}:{err.lineno}: invalid JSON ({err.msg})")
    if not isinstance(payload, dict):
        raise DataValidationError(f"{path}: config must be a JSON object")
    return config_from_dict(payload)
