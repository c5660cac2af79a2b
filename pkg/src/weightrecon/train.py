"""Full-batch gradient descent on the squared loss, and the RF min-norm solution."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from weightrecon.data import Dataset
from weightrecon.linalg import solve_spd
from weightrecon.model import MlpParams, ParamMask, RfParams

DIVERGENCE_LOSS = 1e12


@dataclass
class TrainRecord:
    theta0: np.ndarray
    thetaf: np.ndarray
    loss_trace: np.ndarray
    epochs: int
    converged: bool
    lr: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def delta(self) -> np.ndarray:
        return self.thetaf - self.theta0

    def masked_delta(self, params, mask=ParamMask.ALL) -> np.ndarray:
        return self.delta[params.mask_slice(mask)]

    @property
    def final_loss(self) -> float:
        return float(self.loss_trace[-1]) if len(self.loss_trace) else float("nan")


class DivergenceError(RuntimeError):
    def __init__(self, msg, record: TrainRecord):
        super().__init__(msg)
        self.record = record


def _mlp_loss_grad(layers, X, Y):
    H = [X]
    D = []
    for W in layers[:-1]:
        Z = H[-1] @ W.T
        D.append(Z > 0.0)
        H.append(np.where(D[-1], Z, 0.0))
    resid = H[-1] @ layers[-1].T - Y
    loss = 0.5 * float(np.sum(resid * resid))
    grads = [None] * len(layers)
    delta = resid
    for l in range(len(layers) - 1, -1, -1):
        if l < len(layers) - 1:
            delta = (delta @ layers[l + 1]) * D[l]
        grads[l] = delta.T @ H[l]
    return loss, grads


def train_gd(
    params0,
    dataset: Dataset,
    lr: float = 1e-4,
    loss_target: float = 1e-7,
    max_epochs: int = 10**6,
):
    """Minimise ``0.5 * sum_i ||f(x_i) - y_i||^2`` by full-batch gradient descent.

    ``loss_trace[t]`` is the loss before update ``t``; the run stops as soon as
    the loss is at or below ``loss_target`` or after ``max_epochs`` updates.
    For :class:`RfParams` only ``theta`` moves.

    Raises:
        DivergenceError: loss became non-finite or exceeded 1e12.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    X, Y = dataset.X, dataset.Y
    theta0 = params0.flatten()

    if isinstance(params0, RfParams):
        Phi = params0.features(X)
        y = Y[:, 0]
        weights = [params0.theta.copy()]

        def loss_grad():
            resid = Phi @ weights[0] - y
            return 0.5 * float(resid @ resid), [Phi.T @ resid]

        def current():
            return params0.with_flat(weights[0])

    elif isinstance(params0, MlpParams):
        weights = [W.copy() for W in params0.layers]

        def loss_grad():
            return _mlp_loss_grad(weights, X, Y)

        def current():
            return MlpParams(weights, params0.activation)

    else:
        raise TypeError(f"cannot train {type(params0).__name__}")

    trace = []
    converged = False
    epochs = 0
    while True:
        loss, grads = loss_grad()
        trace.append(loss)
        if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
            record = TrainRecord(theta0, current().flatten(), np.asarray(trace), epochs, False, lr)
            raise DivergenceError(f"training diverged at epoch {epochs} (loss {loss:.3g})", record)
        if loss <= loss_target:
            converged = True
            break
        if epochs >= max_epochs:
            break
        for W, g in zip(weights, grads):
            W -= lr * g
        epochs += 1

    final = current()
    return final, TrainRecord(theta0, final.flatten(), np.asarray(trace), epochs, converged, lr)


class MinNormSolution(NamedTuple):
    theta: np.ndarray
    alpha: np.ndarray
    residual: float


def rf_min_norm(rf: RfParams, dataset: Dataset, ridge: float = 0.0) -> MinNormSolution:
    """``theta* = Phi^T alpha`` with ``alpha = (Phi Phi^T + ridge I)^{-1} y``."""
    Phi = rf.features(dataset.X)
    n, p = Phi.shape
    if p <= n:
        raise ValueError(f"min-norm interpolation needs p > n (got p={p}, n={n})")
    y = dataset.Y[:, 0]
    alpha = solve_spd(Phi @ Phi.T, y, ridge)
    theta = Phi.T @ alpha
    return MinNormSolution(theta, alpha, float(np.linalg.norm(Phi @ theta - y)))


def write_loss_csv(path, record: TrainRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(record.loss_trace):
            w.writerow([i, repr(float(v))])
