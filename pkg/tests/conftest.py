import numpy as np
import pytest

from fuzzqe.kg import KnowledgeGraph
from fuzzqe.model import GMode, ModelConfig, NormMode, init_parameters


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_kg():
    """Entities a=0, b=1, c=2, d=3; relations r=0, s=1.

    Edges: a r b, a r c, b s d (all in the train split).
    """
    return KnowledgeGraph(4, 2, [(0, 0, 1), (0, 0, 2), (1, 1, 3)], [], [])


def small_model(rng, d=8, E=12, R=5, K=2, **kw):
    config = ModelConfig(d=d, K=K, **kw)
    params = init_parameters(rng, config, E, R)
    return params, config


@pytest.fixture
def model_factory(rng):
    def make(**kw):
        return small_model(rng, **kw)
    return make
