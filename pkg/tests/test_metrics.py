import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from weightrecon.data import project_to_sphere
from weightrecon.linalg import make_rng
from weightrecon.metrics import per_point_errors, rho


def sphere(rng, n, d):
    return project_to_sphere(rng.standard_normal((n, d)), np.sqrt(d))


def brute_rho(X, Xh):
    n, d = X.shape
    Xs = project_to_sphere(X, np.sqrt(d))
    return min(
        sum(np.linalg.norm(Xs[i] - Xh[p[i]]) for i in range(n)) for p in itertools.permutations(range(n))
    ) / (n * np.sqrt(d))


def test_identity_and_antipodal(rng):
    X = sphere(rng, 6, 5)
    r, perm = rho(X, X)
    assert r == pytest.approx(0.0, abs=1e-14) and np.array_equal(perm, np.arange(6))
    x = sphere(rng, 1, 9)
    assert rho(x, -x)[0] == pytest.approx(2.0)


def test_truth_is_rescaled(rng):
    X = sphere(rng, 4, 3)
    assert rho(3 * X, X)[0] == pytest.approx(0.0, abs=1e-15)


def test_matches_brute_force(rng):
    for _ in range(20):
        X, Xh = rng.standard_normal((5, 4)), sphere(rng, 5, 4)
        assert rho(X, Xh)[0] == pytest.approx(brute_rho(X, Xh), rel=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 7))
def test_assignment_dominates_nearest(seed, n):
    rng = make_rng(seed)
    X, Xh = sphere(rng, n, 3), sphere(rng, n, 3)
    r, _ = rho(X, Xh)
    assert per_point_errors(X, Xh).mean() / np.sqrt(3) <= r + 1e-12
    perm = rng.permutation(n)
    assert rho(X[perm], Xh[perm])[0] == pytest.approx(r, rel=1e-12)
    assert r >= 0


def test_zero_only_for_permutation(rng):
    X = sphere(rng, 5, 4)
    assert rho(X, X[::-1])[0] == pytest.approx(0.0, abs=1e-15)
    Y = X.copy()
    Y[0] = project_to_sphere(Y[0] + 0.01, 2.0)
    assert rho(X, Y)[0] > 0


def test_per_point_errors(rng):
    X = sphere(rng, 4, 3)
    np.testing.assert_array_equal(per_point_errors(X, X), 0)
    xh = np.tile(sphere(rng, 1, 3), (4, 1))
    np.testing.assert_allclose(per_point_errors(X, xh), np.linalg.norm(X - xh[0], axis=1))
    with pytest.raises(ValueError):
        rho(X, X[:3])
