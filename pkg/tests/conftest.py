import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_dists(rng, n, N=10, alpha=0.7):
    return rng.dirichlet(np.full(N, alpha), size=n)


@pytest.fixture(scope="session")
def tiny_synth():
    from aspectpatch.dataio import synth_generate

    return synth_generate(40, size_range=(48, 64), seed=3)
