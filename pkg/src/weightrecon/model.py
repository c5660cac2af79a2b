"""Bias-free ReLU networks and the random-feature model.

Both model classes work on batches: inputs are ``(n, d)`` arrays and outputs
``(n, K)``. Parameter-space quantities are flat vectors restricted by a
:class:`ParamMask`. Gradient rows are stacked candidate-major, so row
``i*K + k`` of :meth:`param_gradient` is the gradient of output ``k`` at
sample ``i``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from weightrecon.linalg import make_rng


class ParamMask(str, Enum):
    ALL = "all"
    LAST = "last"


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_prime(z):
    # derivative at exactly 0 is taken as 0
    return (z > 0.0).astype(np.float64)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _sigmoid_prime(z):
    s = _sigmoid(z)
    return s * (1.0 - s)


ACTIVATIONS = {
    "relu": (_relu, _relu_prime),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "sigmoid": (_sigmoid, _sigmoid_prime),
}


def _batch(X):
    X = np.asarray(X, dtype=np.float64)
    return X[None, :] if X.ndim == 1 else X


def _cotangent(u, n, K):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = np.broadcast_to(u, (n, K))
    if u.shape != (n, K):
        raise ValueError(f"cotangent shape {u.shape}, expected {(n, K)}")
    return u


@dataclass
class MlpParams:
    """Weights ``W_1 (p x d), ..., W_L (K x p)`` of a bias-free ReLU network."""

    layers: list
    activation: str = "relu"

    def __post_init__(self):
        self.layers = [np.asarray(W, dtype=np.float64) for W in self.layers]
        if not self.layers:
            raise ValueError("need at least one layer")
        if self.activation != "relu":
            raise ValueError("MLP models support the relu activation only")
        for a, b in zip(self.layers, self.layers[1:]):
            if b.shape[1] != a.shape[0]:
                raise ValueError(f"layer shapes {a.shape} and {b.shape} do not compose")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def d_in(self) -> int:
        return self.layers[0].shape[1]

    @property
    def K(self) -> int:
        return self.layers[-1].shape[0]

    @property
    def n_params(self) -> int:
        return sum(W.size for W in self.layers)

    def n_selected(self, mask: ParamMask) -> int:
        return self.layers[-1].size if ParamMask(mask) is ParamMask.LAST else self.n_params

    def mask_slice(self, mask: ParamMask) -> slice:
        if ParamMask(mask) is ParamMask.LAST:
            return slice(self.n_params - self.layers[-1].size, self.n_params)
        return slice(0, self.n_params)

    def _selected_layers(self, mask):
        return [self.depth - 1] if ParamMask(mask) is ParamMask.LAST else list(range(self.depth))

    def flatten(self) -> np.ndarray:
        return np.concatenate([W.ravel() for W in self.layers])

    def with_flat(self, theta) -> "MlpParams":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"flat vector has shape {theta.shape}, expected ({self.n_params},)")
        out, pos = [], 0
        for W in self.layers:
            out.append(theta[pos : pos + W.size].reshape(W.shape).copy())
            pos += W.size
        return MlpParams(out, self.activation)

    def _unflatten_masked(self, v, mask):
        """Per-layer tangent matrices, ``None`` for layers outside the mask."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n_selected(mask),):
            raise ValueError(f"vector has shape {v.shape}, expected ({self.n_selected(mask)},)")
        R = [None] * self.depth
        pos = 0
        for l in self._selected_layers(mask):
            W = self.layers[l]
            R[l] = v[pos : pos + W.size].reshape(W.shape)
            pos += W.size
        return R

    def _forward(self, X):
        """Hidden activations ``H_0 = X, ..., H_{L-1}``, ReLU masks, and output."""
        H = [X]
        D = []
        for W in self.layers[:-1]:
            Z = H[-1] @ W.T
            D.append(Z > 0.0)
            H.append(np.where(D[-1], Z, 0.0))
        return H, D, H[-1] @ self.layers[-1].T

    def forward(self, X):
        return self._forward(_batch(X))[2]

    def hidden(self, X):
        """Penultimate activations ``h_{L-1}(x)``."""
        return self._forward(_batch(X))[0][-1]

    def _deltas(self, D, seed):
        """Back-propagate ``seed`` (shape ``(..., K)``) to every layer's output."""
        L = self.depth
        deltas = [None] * L
        deltas[L - 1] = seed
        for l in range(L - 2, -1, -1):
            active = D[l][:, None, :] if seed.ndim == 3 else D[l]
            deltas[l] = (deltas[l + 1] @ self.layers[l + 1]) * active
        return deltas

    def param_gradient(self, X, mask=ParamMask.ALL):
        X = _batch(X)
        n, K = X.shape[0], self.K
        H, D, _ = self._forward(X)
        seed = np.broadcast_to(np.eye(K), (n, K, K))
        if ParamMask(mask) is ParamMask.ALL:
            deltas = self._deltas(D, seed)
        else:
            deltas = [None] * (self.depth - 1) + [seed]
        blocks = [
            np.einsum("nka,nb->nkab", deltas[l], H[l]).reshape(n * K, -1)
            for l in self._selected_layers(mask)
        ]
        return np.concatenate(blocks, axis=1)

    def gradient_sq_norms(self, X, mask=ParamMask.ALL):
        """``||grad_theta f_k(x_i)||^2`` over the masked parameters, shape ``(n, K)``."""
        X = _batch(X)
        n, K = X.shape[0], self.K
        H, D, _ = self._forward(X)
        hnorm = np.sum(H[-1] ** 2, axis=1)
        if ParamMask(mask) is ParamMask.LAST:
            return np.broadcast_to(hnorm[:, None], (n, K)).copy()
        deltas = self._deltas(D, np.broadcast_to(np.eye(K), (n, K, K)))
        return sum(
            np.sum(deltas[l] ** 2, axis=2) * np.sum(H[l] ** 2, axis=1)[:, None]
            for l in range(self.depth)
        )

    def vjp(self, X, U, mask=ParamMask.ALL):
        """``G^T u`` summed over samples: gradient of ``sum_i u_i . f(x_i)``."""
        X = _batch(X)
        U = _cotangent(U, X.shape[0], self.K)
        H, D, _ = self._forward(X)
        sel = self._selected_layers(mask)
        grads = {}
        delta = U
        for l in range(self.depth - 1, sel[0] - 1, -1):
            if l < self.depth - 1:
                delta = (delta @ self.layers[l + 1]) * D[l]
            grads[l] = delta.T @ H[l]
        return np.concatenate([grads[l].ravel() for l in sel])

    def jvp(self, X, v, mask=ParamMask.ALL):
        """``G v`` reshaped to ``(n, K)``: directional derivative along ``v``."""
        X = _batch(X)
        R = self._unflatten_masked(v, mask)
        H = X
        Hdot = None
        for l, W in enumerate(self.layers[:-1]):
            Z = H @ W.T
            Zdot = None
            if R[l] is not None:
                Zdot = H @ R[l].T
            if Hdot is not None:
                Zdot = Hdot @ W.T if Zdot is None else Zdot + Hdot @ W.T
            act = Z > 0.0
            H = np.where(act, Z, 0.0)
            Hdot = None if Zdot is None else np.where(act, Zdot, 0.0)
        out = np.zeros((X.shape[0], self.K))
        if R[-1] is not None:
            out += H @ R[-1].T
        if Hdot is not None:
            out += Hdot @ self.layers[-1].T
        return out

    def input_gradient(self, X, cotangent):
        X = _batch(X)
        U = _cotangent(cotangent, X.shape[0], self.K)
        _, D, _ = self._forward(X)
        delta = U
        for l in range(self.depth - 2, -1, -1):
            delta = (delta @ self.layers[l + 1]) * D[l]
        return delta @ self.layers[0]

    def mixed_input_gradient(self, X, v, U, mask=ParamMask.ALL):
        """Row ``i`` is ``grad_x [ u_i . (G(x) v) ]`` at ``x = x_i``.

        Reverse pass through the tangent computation of :meth:`jvp` with the
        ReLU patterns held fixed (exact away from kinks).
        """
        X = _batch(X)
        U = _cotangent(U, X.shape[0], self.K)
        R = self._unflatten_masked(v, mask)
        _, D, _ = self._forward(X)
        L = self.depth
        g_tan = U @ self.layers[-1]
        g_val = U @ R[-1] if R[-1] is not None else np.zeros_like(g_tan)
        for l in range(L - 2, -1, -1):
            a_tan = g_tan * D[l]
            a_val = g_val * D[l]
            W = self.layers[l]
            g_tan = a_tan @ W
            g_val = a_val @ W
            if R[l] is not None:
                g_val = g_val + a_tan @ R[l]
        return g_val


@dataclass
class RfParams:
    """Random-feature model ``f(x) = theta . act(V x + b) / sqrt(p)``; only theta trains."""

    V: np.ndarray
    b: np.ndarray
    theta: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.theta = np.asarray(self.theta, dtype=np.float64)
        p = self.V.shape[0]
        if self.b.shape != (p,) or self.theta.shape != (p,):
            raise ValueError("V, b, theta disagree on the width p")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def p(self) -> int:
        return self.V.shape[0]

    @property
    def d_in(self) -> int:
        return self.V.shape[1]

    K = 1
    depth = 2

    @property
    def n_params(self) -> int:
        return self.p

    def n_selected(self, mask=None) -> int:
        return self.p

    def mask_slice(self, mask=None) -> slice:
        return slice(0, self.p)

    def flatten(self):
        return self.theta.copy()

    def with_flat(self, theta) -> "RfParams":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.p,):
            raise ValueError(f"flat vector has shape {theta.shape}, expected ({self.p},)")
        return RfParams(self.V, self.b, theta.copy(), self.activation)

    def _pre(self, X):
        return X @ self.V.T + self.b

    def features(self, X):
        act, _ = ACTIVATIONS[self.activation]
        return act(self._pre(_batch(X))) / np.sqrt(self.p)

    def forward(self, X):
        return (self.features(X) @ self.theta)[:, None]

    def param_gradient(self, X, mask=None):
        return self.features(X)

    def gradient_sq_norms(self, X, mask=None):
        return np.sum(self.features(X) ** 2, axis=1)[:, None]

    def jvp(self, X, v, mask=None):
        return (self.features(X) @ np.asarray(v, dtype=np.float64))[:, None]

    def vjp(self, X, U, mask=None):
        X = _batch(X)
        U = _cotangent(U, X.shape[0], 1)
        return self.features(X).T @ U[:, 0]

    def input_gradient(self, X, cotangent):
        return self.mixed_input_gradient(X, self.theta, cotangent)

    def mixed_input_gradient(self, X, v, U, mask=None):
        X = _batch(X)
        U = _cotangent(U, X.shape[0], 1)
        _, dact = ACTIVATIONS[self.activation]
        return (U * dact(self._pre(X)) * v) @ self.V / np.sqrt(self.p)


def init_mlp(d: int, width: int, depth: int, K: int, rng=None) -> MlpParams:
    """Entries ``N(0, 1/fan_in)``; ``depth`` counts weight matrices."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    rng = make_rng(rng)
    dims = [d] + [width] * (depth - 1) + [K]
    layers = [rng.standard_normal((dims[i + 1], dims[i])) / np.sqrt(dims[i]) for i in range(depth)]
    return MlpParams(layers)


def init_rf(d: int, p: int, rng=None, activation: str = "tanh") -> RfParams:
    """``V ~ N(0, 1/d)``, ``b ~ N(0, 1)``, ``theta = 0``."""
    rng = make_rng(rng)
    V = rng.standard_normal((p, d)) / np.sqrt(d)
    b = rng.standard_normal(p)
    return RfParams(V, b, np.zeros(p), activation)


# Functional wrappers ----------------------------------------------------------

def forward(params, x):
    out = params.forward(x)
    return out[0] if np.ndim(x) == 1 else out


def rf_features(rf: RfParams, x):
    out = rf.features(x)
    return out[0] if np.ndim(x) == 1 else out


def param_gradient(params, mask, x):
    return params.param_gradient(x, mask)


def input_gradient(params, x, cotangent):
    out = params.input_gradient(x, cotangent)
    return out[0] if np.ndim(x) == 1 else out


def jvp_params(params, mask, x, v):
    out = params.jvp(x, v, mask)
    return out[0] if np.ndim(x) == 1 else out


def vjp_params(params, mask, x, u):
    return params.vjp(x, u, mask)


# Checkpoint container ----------------------------------------------------------

_CKPT_MAGIC = b"WRCKPT01"
_CKPT_HEAD = struct.Struct("<8sII16s")  # magic, kind (0 mlp / 1 rf), n arrays, activation


def save_checkpoint(path, params) -> None:
    if isinstance(params, RfParams):
        kind, arrays = 1, [params.V, params.b[:, None], params.theta[:, None]]
    else:
        kind, arrays = 0, params.layers
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEAD.pack(_CKPT_MAGIC, kind, len(arrays), params.activation.encode().ljust(16, b"\0")))
        for a in arrays:
            fh.write(struct.pack("<QQ", *a.shape))
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic, kind, count, act = _CKPT_HEAD.unpack(fh.read(_CKPT_HEAD.size))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint")
        shapes = [struct.unpack("<QQ", fh.read(16)) for _ in range(count)]
        arrays = []
        for shape in shapes:
            size = shape[0] * shape[1]
            arrays.append(np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).copy())
    activation = act.rstrip(b"\0").decode()
    if kind == 1:
        V, b, theta = arrays
        return RfParams(V, b[:, 0], theta[:, 0], activation)
    return MlpParams(arrays, activation)
