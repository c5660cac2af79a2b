"""Synthetic subspace data, CIFAR-10 ingestion, and the dataset container.

Every sample is rescaled onto the sphere of radius ``sqrt(d)``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from weightrecon.linalg import make_rng

CIFAR_RECORD = 1 + 3072
CIFAR_RECORDS_PER_BATCH = 10000
CIFAR_DIM = 3072
CIFAR_CLASSES = 10

_MAGIC = b"WRDSET01"
_HEADER = struct.Struct("<8sQQQQQ")  # magic, n, d, K, r (0 = absent), len(source tag)


class DataError(ValueError):
    pass


class DegenerateDirectionError(DataError):
    """A zero vector has no direction to project onto the sphere."""


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    U: np.ndarray | None = None
    source: str = "synthetic"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.X.ndim != 2 or self.Y.ndim != 2 or self.Y.shape[0] != self.X.shape[0]:
            raise DataError(f"bad shapes X{self.X.shape} Y{self.Y.shape}")
        if self.U is not None and self.U.shape[0] != self.X.shape[1]:
            raise DataError(f"basis has {self.U.shape[0]} rows, data has d={self.X.shape[1]}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return self.Y.shape[1]

    @property
    def r(self) -> int | None:
        return None if self.U is None else self.U.shape[1]

    def check(self, tol: float = 1e-9) -> None:
        """Raise :class:`DataError` if the sphere or subspace invariants fail."""
        norms = np.linalg.norm(self.X, axis=1)
        radius = np.sqrt(self.d)
        if np.abs(norms - radius).max(initial=0.0) > tol * radius:
            raise DataError("rows are not on the sqrt(d) sphere")
        if self.U is not None:
            if np.abs(self.U.T @ self.U - np.eye(self.r)).max(initial=0.0) > tol:
                raise DataError("basis columns are not orthonormal")
            resid = self.X - (self.X @ self.U) @ self.U.T
            if np.linalg.norm(resid) > 1e-8 * np.linalg.norm(self.X):
                raise DataError("data leaves the span of the basis")

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for a in (self.X, self.Y) + (() if self.U is None else (self.U,)):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def project_to_sphere(x, radius: float):
    """Scale ``x`` (a vector, or each row of a matrix) to norm ``radius``."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateDirectionError("cannot project the zero vector onto a sphere")
    return x * (radius / norms)


def gen_synthetic(n: int, d: int, r: int, sigma: float, rng=None) -> Dataset:
    """Points on a random r-dimensional subspace of R^d with noisy linear labels.

    Draw order (fixed for reproducibility): basis, coordinates, teacher ``g``,
    label noise.
    """
    if not 1 <= r <= d:
        raise DataError(f"need 1 <= r <= d, got r={r}, d={d}")
    if n < 1 or sigma < 0:
        raise DataError("need n >= 1 and sigma >= 0")
    rng = make_rng(rng)
    U, _ = np.linalg.qr(rng.standard_normal((d, r)))
    coords = rng.standard_normal((n, r))
    X = project_to_sphere(coords @ U.T, np.sqrt(d))
    g = rng.standard_normal(d) / np.sqrt(d)
    noise = sigma * rng.standard_normal(n)
    y = X @ g + noise
    return Dataset(X, y[:, None], U, "synthetic", {"g": g, "sigma": sigma})


def read_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Labels (uint8) and raw pixel rows (uint8, R/G/B planes) of one batch file."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        raise DataError(f"{path}: length {raw.size} is not a multiple of {CIFAR_RECORD}")
    records = raw.reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].copy()
    if labels.max() >= CIFAR_CLASSES:
        raise DataError(f"{path}: label byte {labels.max()} out of range")
    return labels, records[:, 1:].copy()


def _batch_files(path) -> list[Path]:
    path = Path(path)
    if path.is_file():
        return [path]
    files = sorted(path.glob("data_batch_*.bin")) or sorted(path.glob("data_batch_*"))
    if not files:
        raise DataError(f"no CIFAR-10 batch files under {path}")
    return files


def load_cifar10(path, n: int, rng=None) -> Dataset:
    """Class-balanced CIFAR-10 subset, pixels /255 then rescaled to norm sqrt(3072).

    Within each class the candidate records (in file order) are shuffled by
    ``rng`` and the first ``n/10`` are kept; rows are ordered by class.
    """
    if n < CIFAR_CLASSES or n % CIFAR_CLASSES:
        raise DataError("n must be a positive multiple of 10")
    rng = make_rng(rng)
    per_class = n // CIFAR_CLASSES
    labels, pixels = [], []
    for f in _batch_files(path):
        lab, pix = read_cifar_batch(f)
        labels.append(lab)
        pixels.append(pix)
    labels = np.concatenate(labels)
    pixels = np.concatenate(pixels)

    chosen = []
    for c in range(CIFAR_CLASSES):
        idx = np.flatnonzero(labels == c)
        if idx.size < per_class:
            raise DataError(f"class {c} has {idx.size} images, need {per_class}")
        chosen.append(idx[rng.permutation(idx.size)[:per_class]])
    chosen = np.concatenate(chosen)

    raw = pixels[chosen].astype(np.float64) / 255.0
    X = project_to_sphere(raw, np.sqrt(CIFAR_DIM))
    Y = np.zeros((n, CIFAR_CLASSES))
    Y[np.arange(n), labels[chosen]] = 1.0
    # scale[i] maps X[i] back to [0, 1] pixels: raw = X * scale
    scale = np.linalg.norm(raw, axis=1) / np.sqrt(CIFAR_DIM)
    meta = {"indices": chosen, "labels": labels[chosen], "scale": scale}
    return Dataset(X, Y, None, "cifar10", meta)


def save_dataset(path, ds: Dataset) -> None:
    """Binary container: header then row-major little-endian float64 X, Y, U."""
    tag = ds.source.encode()
    r = 0 if ds.U is None else ds.U.shape[1]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, ds.n, ds.d, ds.K, r, len(tag)))
        fh.write(tag)
        for a in (ds.X, ds.Y) + (() if ds.U is None else (ds.U,)):
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise DataError(f"{path}: truncated header")
        magic, n, d, K, r, taglen = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise DataError(f"{path}: not a dataset container")
        tag = fh.read(taglen).decode()
        body = np.frombuffer(fh.read(), dtype="<f8")
    sizes = [n * d, n * K, d * r]
    if body.size != sum(sizes):
        raise DataError(f"{path}: payload has {body.size} values, expected {sum(sizes)}")
    X = body[: sizes[0]].reshape(n, d).copy()
    Y = body[sizes[0] : sizes[0] + sizes[1]].reshape(n, K).copy()
    U = body[sizes[0] + sizes[1] :].reshape(d, r).copy() if r else None
    return Dataset(X, Y, U, tag)


def write_cifar_batch(path, labels, pixels) -> None:
    """Write records in the CIFAR-10 binary layout (used for fixtures and export)."""
    labels = np.asarray(labels, dtype=np.uint8)
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(labels), CIFAR_DIM)
    out = np.concatenate([labels[:, None], pixels], axis=1)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    out.tofile(path)
