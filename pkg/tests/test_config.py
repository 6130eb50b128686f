import json

import pytest

from spikefeatures import DataValidationError, ModelConfig, config_from_dict, load_config
from spikefeatures.config import config_to_dict


def test_defaults_round_trip():
    cfg = config_from_dict({})
    assert cfg.n_features == 5
    assert cfg.n_restarts == 10
    assert cfg.tol == 1e-4
    assert cfg.priors.gain_conc == (2.0, 0.1)
    again = config_from_dict(config_to_dict(cfg))
    assert config_to_dict(again) == config_to_dict(cfg)


def test_partial_priors_keep_other_defaults():
    cfg = config_from_dict({"priors": {"noise_shape": [8, 2]}})
    assert cfg.priors.noise_shape == (8.0, 2.0)
    assert cfg.priors.baseline_conc == (1.0, 1.0)


def test_unknown_field_rejected():
    with pytest.raises(DataValidationError, match="unknown config field"):
        config_from_dict({"n_chains": 3})
    with pytest.raises(DataValidationError, match="unknown prior field"):
        config_from_dict({"priors": {"gamma": [1, 1]}})


def test_invalid_values_rejected():
    with pytest.raises(DataValidationError):
        config_from_dict({"tol": 0.0})
    with pytest.raises(DataValidationError):
        config_from_dict({"semi_markov": True, "max_dwell": 0})
    with pytest.raises(DataValidationError):
        config_from_dict({"priors": {"covariate": [1.0, -2.0]}})
    with pytest.raises(DataValidationError):
        ModelConfig(autocorrelated_noise=True, overdispersion=False).validate()


def test_load_config_reports_json_errors(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text("{ not json")
    with pytest.raises(DataValidationError, match="invalid JSON"):
        load_config(path)
    path.write_text(json.dumps({"n_features": 3, "priors": {"duration": [1.6, 1, 2, 2]}}))
    cfg = load_config(path)
    assert cfg.n_features == 3
    assert cfg.priors.duration == (1.6, 1.0, 2.0, 2.0)
