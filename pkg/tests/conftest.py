import numpy as np
import pytest

from posinv import Model, ModelConfig, init_random


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(
        n_layers=1, n_heads=2, n_kv_heads=1, d_model=32, d_head=16,
        d_ff=64, vocab_size=260, max_seq_len=256,
    )


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    return Model(tiny_config, init_random(tiny_config, 3))


def random_config(rng: np.random.Generator) -> ModelConfig:
    n_layers = int(rng.integers(1, 3))
    n_heads = int(rng.choice([2, 4]))
    n_kv_heads = int(rng.choice([1, 2]))
    d_head = int(rng.choice([8, 16]))
    return ModelConfig(
        n_layers=n_layers, n_heads=n_heads, n_kv_heads=n_kv_heads,
        d_model=n_heads * d_head, d_head=d_head,
        d_ff=int(rng.choice([32, 64])), vocab_size=260, max_seq_len=256,
    )
