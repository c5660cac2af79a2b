"""Dense linear-algebra substrate.

All arrays are float64. Random draws go through :func:`make_rng`, which fixes
the generator to numpy's PCG64 so a seed pins the stream on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from weightrecon import _backend


class SolverError(RuntimeError):
    """An iterative or factorisation routine failed to produce a result."""


class SingularMatrixError(SolverError):
    pass


def make_rng(seed: int | np.random.Generator | None = None) -> np.random.Generator:
    """PCG64-backed generator; passes an existing generator through untouched."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def _as_finite(a, name="a"):
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def svd(a):
    """Thin SVD ``a = U @ diag(s) @ Vt`` with ``s`` non-increasing.

    Backed by LAPACK ``gesdd`` with a ``gesvd`` retry when divide-and-conquer
    does not converge.
    """
    a = _as_finite(a)
    try:
        return scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        pass
    try:
        return scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"SVD did not converge: {exc}") from exc


def jacobi_eigh(a, tol: float = 1e-14, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in decreasing order and the eigenvectors as columns.
    """
    a = _as_finite(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("jacobi_eigh needs a square matrix")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ValueError("jacobi_eigh needs a symmetric matrix")
    w, v, sweeps = _backend.jacobi_eigh(np.ascontiguousarray(a), tol, max_sweeps)
    if sweeps >= max_sweeps:
        raise SolverError(f"Jacobi eigensolver hit the sweep cap ({max_sweeps})")
    return w, v


def default_ridge(a) -> float:
    """``1e-10 * trace(a) / n``, the fallback shift for Gram systems."""
    a = np.asarray(a)
    n = a.shape[0]
    return 1e-10 * float(np.trace(a)) / max(n, 1)


def solve_spd(a, b, ridge: float = 0.0):
    """Solve ``(a + ridge*I) x = b`` for symmetric positive (semi)definite ``a``."""
    a = _as_finite(a)
    b = _as_finite(b, "b")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("solve_spd needs a square matrix")
    shifted = a + ridge * np.eye(a.shape[0]) if ridge else a
    try:
        factor = scipy.linalg.cho_factor(shifted, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"Cholesky failed with ridge={ridge:g}") from exc
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def solve_gram(a, b, ridge: float, rcond_min: float = 1e-10):
    """Solve ``a x = b``, shifting ``a`` by ``ridge*I`` only when it is numerically singular.

    "Singular" means the Cholesky factorisation fails or LAPACK's reciprocal
    condition estimate falls below ``rcond_min``. Returns ``(x, ridge_used)``.
    """
    a = _as_finite(a)
    b = _as_finite(b, "b")
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
        rcond, info = scipy.linalg.lapack.dpocon(factor[0], np.abs(a).sum(axis=0).max(), uplo="L")
        if info == 0 and rcond >= rcond_min:
            return scipy.linalg.cho_solve(factor, b, check_finite=False), 0.0
    except np.linalg.LinAlgError:
        pass
    return solve_spd(a, b, ridge), ridge


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    """Achieved relative residual ``||apply(x) - b|| / ||b||``."""
    converged: bool


def cg_solve(
    apply: Callable[[np.ndarray], np.ndarray],
    b,
    tol: float = 1e-10,
    max_iters: int | None = None,
) -> CGResult:
    """Conjugate gradients for a symmetric PSD operator given only as ``apply``.

    Stops once the recursive residual falls below ``tol * ||b||``; the true
    residual is recomputed on exit. Non-convergence is reported through
    ``converged`` rather than raised. The last iterate is returned: CG
    decreases the energy-norm error monotonically even when the residual
    norm oscillates.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = _as_finite(b, "b")
    n = b.shape[0]
    if max_iters is None:
        max_iters = 2 * n
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return CGResult(x, 0, 0.0, True)

    r = b.copy()
    d = r.copy()
    rr = r @ r
    it = 0
    converged = False
    while it < max_iters:
        ad = apply(d)
        if not np.all(np.isfinite(ad)):
            raise SolverError("operator produced non-finite values")
        dad = d @ ad
        if dad <= 0.0:
            break
        step = rr / dad
        x += step * d
        r -= step * ad
        it += 1
        rr_new = r @ r
        if np.sqrt(rr_new) <= tol * bnorm:
            converged = True
            break
        d = r + (rr_new / rr) * d
        rr = rr_new

    true_res = np.linalg.norm(apply(x) - b) / bnorm
    return CGResult(x, it, float(true_res), converged)


def assignment_min_cost(cost):
    """Exact minimum-cost perfect matching; ``perm[i]`` is the column for row ``i``."""
    cost = _as_finite(cost, "cost")
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("assignment needs a square cost matrix")
    return _backend.linear_sum_assignment(np.ascontiguousarray(cost))


def orthonormal_basis(a, tol: float = 1e-12):
    """Orthonormal basis of the column space of ``a`` (numerical rank via SVD)."""
    u, s, _ = svd(a)
    if s.size == 0 or s[0] == 0.0:
        return u[:, :0]
    return u[:, : int(np.sum(s > tol * s[0]))]


def principal_angles(a, b, atol: float = 1e-8):
    """Principal angles (radians, non-decreasing) between two column spaces."""
    a = _as_finite(a)
    b = _as_finite(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    for name, m in (("a", a), ("b", b)):
        if np.abs(m.T @ m - np.eye(m.shape[1])).max(initial=0.0) > atol:
            raise ValueError(f"{name} does not have orthonormal columns")
    overlap = a.T @ b
    cosines = np.linalg.svd(overlap, compute_uv=False)
    # arccos loses all resolution near 0; small angles come from the sines
    sines = np.sort(np.linalg.svd(b - a @ overlap, compute_uv=False))
    from_cos = np.arccos(np.clip(cosines, -1.0, 1.0))
    from_sin = np.arcsin(np.clip(sines, -1.0, 1.0))
    return np.sort(np.where(cosines**2 > 0.5, from_sin, from_cos))
