import numpy as np
import pytest

from handbayes import synth
from handbayes.dataset import Dataset, Record


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def default_population():
    """The full paper-scale synthetic population (13 writers, 4 chars, 30 reps)."""
    return synth.generate_population(synth.PopulationConfig(seed=0))


@pytest.fixture(scope="session")
def small_population():
    """A light population for harness-level tests."""
    cfg = synth.PopulationConfig(m=5, reps=8, seed=11)
    return synth.generate_population(cfg)


def make_dataset(rows):
    return Dataset.from_records([Record(*row) for row in rows])


@pytest.fixture
def tiny_dataset():
    return make_dataset([
        (1, "a", 1, np.array([1.0, 0.1, 0.0, 0.2, 0.0, 0.1, 0.0, 0.0, 0.1])),
        (1, "a", 2, np.array([1.2, 0.0, 0.1, 0.1, 0.1, 0.0, 0.1, 0.1, 0.0])),
        (1, "d", 1, np.array([0.8, 0.2, 0.1, 0.0, 0.2, 0.1, 0.0, 0.0, 0.2])),
        (2, "a", 1, np.array([1.1, 0.1, 0.1, 0.1, 0.0, 0.0, 0.1, 0.2, 0.0])),
        (2, "d", 1, np.array([0.9, 0.0, 0.2, 0.1, 0.1, 0.2, 0.0, 0.1, 0.1])),
    ])
