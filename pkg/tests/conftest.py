import numpy as np
import pytest

from spikefeatures import GeneratorConfig, ModelConfig, generate


@pytest.fixture(scope="session")
def desk_dataset():
    """Small two-feature dataset shared by the slower integration tests."""
    gen = GeneratorConfig(
        n_units=20, n_times=400, n_true_features=1, n_covariates=0, noise_shape=4.0
    )
    return generate(gen, seed=7)


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(n_features=1, n_restarts=1, max_sweeps=5, seed=0)
    base.update(overrides)
    return ModelConfig(**base)
