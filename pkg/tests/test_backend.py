import itertools

import numpy as np
import pytest

from weightrecon import _backend


def brute_force(cost):
    n = cost.shape[0]
    return min(cost[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n)))


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
def test_assignment_matches_brute_force(backend, rng, n):
    for _ in range(30):
        cost = rng.standard_normal((n, n))
        perm = backend.linear_sum_assignment(cost)
        assert sorted(perm.tolist()) == list(range(n))
        assert cost[np.arange(n), perm].sum() == pytest.approx(brute_force(cost), abs=1e-12)


def test_assignment_integer_ties(backend, rng):
    for _ in range(50):
        cost = rng.integers(0, 3, (5, 5)).astype(float)
        perm = backend.linear_sum_assignment(cost)
        assert cost[np.arange(5), perm].sum() == brute_force(cost)


def test_backends_agree_bit_for_bit(rng):
    from weightrecon import _core_py

    core = pytest.importorskip("weightrecon._core")
    for n in (7, 20, 50):
        cost = rng.standard_normal((n, n))
        np.testing.assert_array_equal(core.linear_sum_assignment(cost), _core_py.linear_sum_assignment(cost))
        a = rng.standard_normal((n, n))
        a = a + a.T
        w1, v1, s1 = core.jacobi_eigh(a, 1e-14, 100)
        w2, v2, s2 = _core_py.jacobi_eigh(a, 1e-14, 100)
        assert s1 == s2
        np.testing.assert_allclose(w1, w2, rtol=0, atol=1e-12 * np.abs(w1).max())


@pytest.mark.parametrize("n", [1, 2, 5, 12])
def test_jacobi_eigenpairs(backend, rng, n):
    a = rng.standard_normal((n, n))
    a = a @ a.T
    w, v, sweeps = backend.jacobi_eigh(a, 1e-14, 100)
    assert np.all(np.diff(w) <= 0)
    np.testing.assert_allclose(v.T @ v, np.eye(n), atol=1e-12)
    np.testing.assert_allclose(a @ v, v * w, atol=1e-10 * np.abs(w).max())
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a)[::-1], atol=1e-11 * np.abs(w).max())


def test_selected_backend_is_reported():
    assert _backend.BACKEND in ("cython", "python")
