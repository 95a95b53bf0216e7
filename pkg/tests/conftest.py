import numpy as np
import pytest

from lemon import ModelSpec, random_weights
from lemon.rng import substream


@pytest.fixture
def rng():
    """Factory for deterministic per-test generators."""
    def make(*tags) -> np.random.Generator:
        return substream(0xBEEF, *tags)
    return make


@pytest.fixture
def toy_spec():
    def make(style="pre_ln", depth=2, width=8, head_dim=4, ratio=2.0,
             vocab=11, **kw) -> ModelSpec:
        return ModelSpec(norm_style=style, depth=depth, width=width,
                         head_dim=head_dim, mlp_ratio=ratio,
                         vocab_or_classes=vocab, **kw).validate()
    return make


@pytest.fixture
def toy_model(toy_spec):
    def make(seed=1, **kw):
        spec = toy_spec(**kw)
        return random_weights(spec, substream(seed, "toy")), spec
    return make
