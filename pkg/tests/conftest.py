import numpy as np
import pytest

from sostensor.tensor import ComponentSet, from_components


@pytest.fixture
def two_vectors():
    """Rows e1 and (e1 + e2)/sqrt2 in R^2."""
    return ComponentSet(np.array([[1.0, 0.0], [1.0, 1.0]]) / np.array([[1.0], [np.sqrt(2.0)]]))


@pytest.fixture
def e1_cubed():
    return from_components(ComponentSet(np.array([[1.0, 0.0]])))


def random_symmetric(n, seed):
    from sostensor.tensor import symmetrize
    return symmetrize(np.random.default_rng(seed).standard_normal((n, n, n)))
