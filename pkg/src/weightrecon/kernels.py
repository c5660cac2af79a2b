"""Random-feature kernels, MMD, width-bound calculators and their empirical checks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.spatial.distance import cdist

from weightrecon.data import project_to_sphere
from weightrecon.linalg import make_rng
from weightrecon.model import ACTIVATIONS, RfParams, init_rf

MC_CHUNK = 65536


def kernel_p(rf: RfParams, x, x_prime, chunk: int = MC_CHUNK):
    """Finite-width kernel ``phi(x) . phi(x')``; scalar for vectors, Gram matrix for batches.

    Features are formed ``chunk`` at a time so very wide models stay in memory.
    """
    act, _ = ACTIVATIONS[rf.activation]
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(x_prime, dtype=np.float64))
    K = np.zeros((X.shape[0], Y.shape[0]))
    for start in range(0, rf.p, chunk):
        V, b = rf.V[start : start + chunk], rf.b[start : start + chunk]
        K += act(X @ V.T + b) @ act(Y @ V.T + b).T
    K /= rf.p
    if np.ndim(x) == 1 and np.ndim(x_prime) == 1:
        return float(K[0, 0])
    return K


class MCKernel(NamedTuple):
    value: np.ndarray
    stderr: np.ndarray


def kernel_inf_mc_gram(activation: str, d: int, X, Y, samples: int, rng=None, chunk: int = MC_CHUNK) -> MCKernel:
    """Monte-Carlo estimate of ``E[act(v.x + b) act(v.y + b)]`` for all pairs.

    ``v ~ N(0, I/d)``, ``b ~ N(0, 1)``, drawn in fixed-size chunks so the
    stream (and the estimate) depends only on ``rng`` and ``samples``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    act, _ = ACTIVATIONS[activation]
    rng = make_rng(rng)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    s1 = np.zeros((X.shape[0], Y.shape[0]))
    s2 = np.zeros_like(s1)
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        V = rng.standard_normal((m, d)) / np.sqrt(d)
        b = rng.standard_normal(m)
        Fa = act(X @ V.T + b)
        Fb = act(Y @ V.T + b)
        s1 += Fa @ Fb.T
        s2 += (Fa * Fa) @ (Fb * Fb).T
        done += m
    mean = s1 / samples
    var = np.maximum(s2 / samples - mean**2, 0.0)
    return MCKernel(mean, np.sqrt(var / samples))


def kernel_inf_mc(activation: str, d: int, x, x_prime, samples: int, rng=None) -> tuple[float, float]:
    """Scalar infinite-width kernel estimate and its standard error."""
    est = kernel_inf_mc_gram(activation, d, x, x_prime, samples, rng)
    return float(est.value[0, 0]), float(est.stderr[0, 0])


def mmd_squared(kernel: Callable, points_a, weights_a, points_b, weights_b) -> float:
    """Squared MMD between the signed measures ``sum a_i delta(x_i)`` and ``sum b_j delta(y_j)``.

    ``kernel(A, B)`` must return the Gram matrix between the rows of ``A`` and ``B``.
    """
    a = np.asarray(weights_a, dtype=np.float64)
    b = np.asarray(weights_b, dtype=np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("weights must be finite")
    val = (
        a @ kernel(points_a, points_a) @ a
        - 2.0 * a @ kernel(points_a, points_b) @ b
        + b @ kernel(points_b, points_b) @ b
    )
    val = float(val)
    return 0.0 if -1e-12 <= val < 0.0 else val


# Width bounds ----------------------------------------------------------------

@dataclass(frozen=True)
class BoundInputs:
    d: int
    eps: float = 0.5
    delta: float = 0.1
    M: float = 1.0
    Lip: float = 1.0
    C: float | None = None
    c: float | None = None
    alpha_l1: float | None = None
    """``||alpha||_1 + ||alpha_hat||_1``."""
    Delta: float | None = None

    def __post_init__(self):
        for name in ("d", "eps", "delta", "M", "Lip", "C", "c", "alpha_l1", "Delta"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be strictly positive, got {v}")


class WidthBound(NamedTuple):
    p_min: float
    delta_max: float
    delta_ok: bool
    """Whether the supplied failure probability respects ``delta_max``."""


def _width_bound(d, eps, delta, M, Lip):
    two_d1 = 2 * d + 1
    p_min = (8 * M**4 * two_d1 / eps**2) * (
        math.log((2 + 4 * d) / delta) + (2 * d / two_d1) * math.log(6 * Lip * M / (math.sqrt(d) * eps))
    )
    delta_max = 4 * (1 + 2 * d) * Lip * M / (math.sqrt(d) * eps)
    return WidthBound(p_min, delta_max, delta <= delta_max)


def lemma1_width_bound(inputs: BoundInputs) -> WidthBound:
    """Width above which ``sup |k_p - k_inf| <= eps`` holds with probability ``1 - delta``."""
    return _width_bound(inputs.d, inputs.eps, inputs.delta, inputs.M, inputs.Lip)


def theorem1_width_bound(inputs: BoundInputs) -> WidthBound:
    """Recovery width bound; the RKHS constant ``C`` is caller-supplied, never derived."""
    if inputs.C is None or inputs.c is None or inputs.alpha_l1 is None:
        raise ValueError("recovery bound needs C, c and alpha_l1")
    C, c, S, d, M, Lip = inputs.C, inputs.c, inputs.alpha_l1, inputs.d, inputs.M, inputs.Lip
    two_d1 = 2 * d + 1
    p_min = (128 * C**2 * M**4 * two_d1 * S**4 / c**4) * (
        math.log((2 + 4 * d) / inputs.delta)
        + (2 * d / two_d1) * math.log(24 * C * Lip * M * S**2 / (math.sqrt(d) * c**2))
    )
    delta_max = 16 * C * (1 + 2 * d) * Lip * M * S**2 / (math.sqrt(d) * c**2)
    return WidthBound(p_min, delta_max, inputs.delta <= delta_max)


def theorem1_eps(C: float, c: float, alpha_l1: float) -> float:
    """Kernel accuracy the recovery argument asks of the concentration bound."""
    return c**2 / (4 * C * alpha_l1**2)


# Empirical checks ---------------------------------------------------------------

@dataclass
class ConcentrationReport:
    fraction: float
    sup_deviation: np.ndarray
    passed: np.ndarray
    eps: float
    p: int
    mc_samples: int
    max_stderr: float
    mc_budget_ok: bool
    """``3 * max stderr <= eps / 10``."""
    note: str = (
        "sup taken over a finite random grid; it under-estimates the sphere-wide sup, "
        "so a pass here is a necessary condition only"
    )


def sphere_points(n: int, d: int, rng=None):
    rng = make_rng(rng)
    return project_to_sphere(rng.standard_normal((n, d)), np.sqrt(d))


def concentration_trial(
    activation: str,
    d: int,
    p: int,
    eps: float,
    grid_size: int = 50,
    trials: int = 100,
    mc_samples: int = 10**6,
    rng=None,
) -> ConcentrationReport:
    """Fraction of trials whose grid-sup kernel deviation stays within ``eps``.

    Each trial draws fresh features ``(V, b)`` and a fresh grid on the
    ``sqrt(d)`` sphere; the Monte-Carlo draws behind the infinite-width
    reference are the same in every trial.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    rng = make_rng(rng)
    mc_seed = int(rng.integers(2**63))
    sups, max_se = [], 0.0
    for _ in range(trials):
        rf = init_rf(d, p, rng, activation)
        grid = sphere_points(grid_size, d, rng)
        ref = kernel_inf_mc_gram(activation, d, grid, grid, mc_samples, make_rng(mc_seed))
        dev = np.abs(kernel_p(rf, grid, grid) - ref.value)
        sups.append(dev.max())
        max_se = max(max_se, float(ref.stderr.max()))
    sups = np.asarray(sups)
    passed = sups <= eps
    return ConcentrationReport(
        float(passed.mean()), sups, passed, eps, p, mc_samples, max_se, 3 * max_se <= eps / 10
    )


@dataclass
class WitnessReport:
    distances: np.ndarray
    """Per true point, distance to its nearest reconstruction."""
    nearest: np.ndarray
    bump: np.ndarray
    """Bump function of each true point evaluated at its nearest reconstruction."""
    Delta: float
    passed: bool


def bump(dist, Delta: float):
    """``exp(t^2 / (t^2 - Delta^2))`` inside the ball of radius ``Delta``, else 0."""
    dist = np.asarray(dist, dtype=np.float64)
    out = np.zeros_like(dist)
    inside = dist < Delta
    t2 = dist[inside] ** 2
    out[inside] = np.exp(t2 / (t2 - Delta**2))
    return out


def separation_witness(X, Xhat, Delta: float) -> WitnessReport:
    """Does every true point have a reconstruction strictly within ``Delta``?"""
    dists = cdist(np.asarray(X, dtype=np.float64), np.asarray(Xhat, dtype=np.float64))
    nearest = dists.argmin(axis=1)
    best = dists[np.arange(len(nearest)), nearest]
    return WitnessReport(best, nearest, bump(best, Delta), Delta, bool(np.all(best < Delta)))


def min_separation(X) -> float:
    D = cdist(X, X)
    np.fill_diagonal(D, np.inf)
    return float(D.min())
