"""Data-subspace estimation from the first-layer weight change."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from weightrecon.linalg import svd


class DegenerateSpectrumError(ValueError):
    pass


@dataclass
class SubspaceEstimate:
    basis: np.ndarray
    """``d x r`` orthonormal columns."""
    singular_values: np.ndarray
    rank_deficient: bool
    """True when ``sigma_r <= 1e-12 * sigma_1``: the basis extends past the numerical rank."""


def estimate_basis(delta_w1, r: int) -> SubspaceEstimate:
    """Leading ``r`` right singular vectors of the ``p x d`` first-layer change."""
    delta_w1 = np.asarray(delta_w1, dtype=np.float64)
    if not 1 <= r <= min(delta_w1.shape):
        raise ValueError(f"r={r} outside [1, {min(delta_w1.shape)}]")
    _, s, vt = svd(delta_w1)
    deficient = bool(s[0] == 0.0 or s[r - 1] <= 1e-12 * s[0])
    return SubspaceEstimate(vt[:r].T.copy(), s, deficient)


def detect_rank(singular_values, drop_ratio: float = 10.0) -> int:
    """Index ``k`` maximising ``s[k-1] / s[k]``, or ``len(s)`` if no ratio reaches ``drop_ratio``.

    A zero ``s[k]`` after a positive ``s[k-1]`` counts as an infinite ratio;
    ties go to the smallest ``k``.
    """
    s = np.asarray(singular_values, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("need a non-empty 1-D spectrum")
    if np.any(s < 0) or np.any(np.diff(s) > 1e-12 * max(s[0], 0.0)):
        raise ValueError("spectrum must be non-negative and non-increasing")
    if s[0] == 0.0:
        raise DegenerateSpectrumError("all singular values are zero")
    head, tail = s[:-1], s[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(tail > 0, head / tail, np.where(head > 0, np.inf, 1.0))
    if ratios.size == 0:
        return s.size
    k = int(np.argmax(ratios))
    if ratios[k] < drop_ratio:
        return s.size
    return k + 1


def write_spectrum_csv(path, singular_values, **columns) -> None:
    """One row per singular value; extra keyword columns are repeated on every row."""
    keys = list(columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys + ["index", "singular_value"])
        for i, v in enumerate(singular_values, start=1):
            w.writerow([columns[k] for k in keys] + [i, repr(float(v))])
