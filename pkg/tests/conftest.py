import warnings

import numpy as np
import pytest
from scipy import sparse

from dflgcrf.gcrf import GcrfParams, Potentials


def random_similarity(rng, N, density=0.4):
    A = sparse.random(N, N, density=density, random_state=rng, data_rvs=rng.random)
    A = sparse.triu(A, k=1)
    return (A + A.T).tocsr()


def random_instance(rng, N=None, K=None, L=None):
    N = N or int(rng.integers(2, 21))
    K = K or int(rng.integers(1, 4))
    L = L or int(rng.integers(1, 3))
    pot = Potentials(rng.standard_normal((N, K)), tuple(random_similarity(rng, N) for _ in range(L)))
    params = GcrfParams(rng.uniform(-1.5, 1.5, K), rng.uniform(-1.5, 1.5, L))
    return params, pot, rng.standard_normal(N)


def central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(analytic, numeric, floor=1e-3):
    """Componentwise relative error; entries far below the largest one use a floor.

    The denominator is ``max(|numeric_i|, floor * max|numeric|, 1e-10)`` so a
    near-zero component is judged against the gradient's overall scale.
    """
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    scale = max(float(np.max(np.abs(n))) * floor, 1e-10) if n.size else 1.0
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(n), scale))) if n.size else 0.0


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield
