"""Reconstruction error measures."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from weightrecon.data import project_to_sphere
from weightrecon.linalg import assignment_min_cost


def _check(X_true, X_hat):
    X_true = np.asarray(X_true, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X_true.ndim != 2 or X_true.shape != X_hat.shape:
        raise ValueError(f"shape mismatch {X_true.shape} vs {X_hat.shape}")
    return X_true, X_hat


def rho(X_true, X_hat):
    """Permutation-matched mean distance normalised by ``n * sqrt(d)``.

    ``X_true`` rows are rescaled to norm ``sqrt(d)`` first. Returns
    ``(rho, perm)`` where ``X_hat[perm[i]]`` is matched to ``X_true[i]``.
    """
    X_true, X_hat = _check(X_true, X_hat)
    n, d = X_true.shape
    cost = cdist(project_to_sphere(X_true, np.sqrt(d)), X_hat)
    perm = assignment_min_cost(cost)
    return float(cost[np.arange(n), perm].sum() / (n * np.sqrt(d))), perm


def per_point_errors(X_true, X_hat):
    """Distance from each true point to its nearest reconstruction."""
    X_true, X_hat = _check(X_true, X_hat)
    return cdist(X_true, X_hat).min(axis=1)
