import numpy as np
import pytest


def random_stochastic(rng, r, density=0.7):
    """Irreducible r x r stochastic matrix: a random cycle plus random extra edges."""
    A = rng.random((r, r)) * (rng.random((r, r)) < density)
    perm = rng.permutation(r)
    for k in range(r):
        A[perm[k], perm[(k + 1) % r]] += 0.2 + rng.random()
    return A / A.sum(axis=1, keepdims=True)


def random_substochastic(rng, r, leak=(0.3, 0.9)):
    P = random_stochastic(rng, r)
    return P * rng.uniform(*leak, size=(r, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
