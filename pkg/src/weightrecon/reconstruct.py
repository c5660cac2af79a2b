"""Reconstruction of training data from a weight change.

The objective is the squared norm of the part of ``delta`` orthogonal to the
span of the model's parameter gradients at the candidate points, evaluated as
``||delta||^2 - delta^T G^T alpha`` with ``(G G^T + ridge I) alpha = G delta``.
Candidates live on the sphere of radius ``sqrt(d)`` and are optimised by
projected heavy-ball gradient descent, either directly in ``R^d`` or through
coordinates ``z`` in a given orthonormal basis (``x = basis @ z``). By default
the descent runs on the loss divided by ``||delta||^2``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from weightrecon.data import project_to_sphere
from weightrecon.linalg import SolverError, cg_solve, make_rng, solve_gram
from weightrecon.model import MlpParams, ParamMask, RfParams

DENSE_PARAM_LIMIT = 200_000
RIDGE_SCALE = 1e-10


class Solver(str, Enum):
    AUTO = "auto"
    DENSE = "dense-gram"
    CG = "matrix-free-cg"


class ReconstructionError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass
class ReconProblem:
    """Everything the attacker holds: trained parameters and the masked weight change."""

    params: MlpParams | RfParams
    delta: np.ndarray
    n_candidates: int
    mask: ParamMask = ParamMask.LAST
    basis: np.ndarray | None = None
    solver: Solver = Solver.AUTO
    cg_tol: float = 1e-10
    cg_max_iters: int | None = None
    normalize: bool = True
    """Descend on ``loss / ||delta||^2`` so step sizes do not depend on the weight scale."""

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.float64)
        self.mask = ParamMask(self.mask)
        self.solver = Solver(self.solver)
        expected = self.params.n_selected(self.mask)
        if self.delta.shape != (expected,):
            raise ValueError(f"delta has shape {self.delta.shape}, mask selects {expected} parameters")
        if self.n_candidates < 1:
            raise ValueError("need at least one candidate")
        if self.basis is not None:
            self.basis = np.asarray(self.basis, dtype=np.float64)
            if self.basis.shape[0] != self.d:
                raise ValueError(f"basis has {self.basis.shape[0]} rows, inputs have d={self.d}")
            gram = self.basis.T @ self.basis
            if np.abs(gram - np.eye(gram.shape[0])).max(initial=0.0) > 1e-8:
                raise ValueError("basis columns are not orthonormal")

    @classmethod
    def from_training(cls, params_f, record, n_candidates, mask=ParamMask.LAST, **kwargs):
        mask = ParamMask(mask)
        return cls(params_f, record.masked_delta(params_f, mask), n_candidates, mask, **kwargs)

    def with_basis(self, basis) -> "ReconProblem":
        return dataclasses.replace(self, basis=basis)

    @property
    def d(self) -> int:
        return self.params.d_in

    @property
    def K(self) -> int:
        return self.params.K

    @property
    def resolved_solver(self) -> Solver:
        if self.solver is Solver.AUTO:
            return Solver.DENSE if self.delta.size <= DENSE_PARAM_LIMIT else Solver.CG
        return self.solver


@dataclass
class LossEvaluation:
    loss: float
    alpha: np.ndarray
    """``(n, K)`` coefficients of the gradient rows."""
    residual: np.ndarray
    """``delta - G^T alpha``."""
    ridge: float
    """Shift actually applied to the Gram system (0 when it was well conditioned)."""
    cg_iterations: int = 0
    cg_converged: bool = True


@dataclass
class ReconResult:
    Xhat: np.ndarray
    alpha: np.ndarray
    loss_trace: np.ndarray
    """Rows of ``(iteration, loss)`` at the trace stride."""
    iterations: int
    best_iteration: int
    best_loss: float
    initial_loss: float
    Z: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def evaluate(problem: ReconProblem, Xhat) -> LossEvaluation:
    """Loss, optimal coefficients, and residual at the candidates ``Xhat``."""
    Xhat = np.asarray(Xhat, dtype=np.float64)
    n, K = Xhat.shape[0], problem.K
    params, mask, delta = problem.params, problem.mask, problem.delta
    dd = float(delta @ delta)
    cg_iters, cg_ok = 0, True

    if problem.resolved_solver is Solver.DENSE:
        G = params.param_gradient(Xhat, mask)
        gram = G @ G.T
        rhs = G @ delta
        alpha, ridge = solve_gram(gram, rhs, RIDGE_SCALE * float(np.trace(gram)) / (n * K))
        residual = delta - G.T @ alpha
    else:
        ridge = RIDGE_SCALE * float(np.sum(params.gradient_sq_norms(Xhat, mask))) / (n * K)
        rhs = params.jvp(Xhat, delta, mask).ravel()

        def apply(a):
            back = params.vjp(Xhat, a.reshape(n, K), mask)
            return params.jvp(Xhat, back, mask).ravel() + ridge * a

        max_iters = problem.cg_max_iters or 5 * n * K
        sol = cg_solve(apply, rhs, problem.cg_tol, max_iters)
        alpha, cg_iters, cg_ok = sol.x, sol.iterations, sol.converged
        residual = delta - params.vjp(Xhat, alpha.reshape(n, K), mask)

    loss = dd - float(rhs @ alpha)
    if -1e-9 * max(dd, 1.0) <= loss < 0.0:
        loss = 0.0
    return LossEvaluation(loss, alpha.reshape(n, K), residual, ridge, cg_iters, cg_ok)


def recon_loss_and_alpha(problem: ReconProblem, Xhat):
    """``(loss, alpha)`` with ``alpha`` flattened candidate-major (length ``n*K``)."""
    ev = evaluate(problem, Xhat)
    return ev.loss, ev.alpha.ravel()


def recon_loss_gradient(problem: ReconProblem, Xhat, evaluation: LossEvaluation | None = None):
    """Euclidean gradient of the loss in ``Xhat`` with ``alpha`` held at its optimum."""
    Xhat = np.asarray(Xhat, dtype=np.float64)
    ev = evaluation if evaluation is not None else evaluate(problem, Xhat)
    return -2.0 * problem.params.mixed_input_gradient(Xhat, ev.residual, ev.alpha, problem.mask)


def init_candidates(n: int, d: int, basis=None, rng=None):
    """Uniform points on the ``sqrt(d)`` sphere, in ``R^d`` or in basis coordinates ``R^r``."""
    rng = make_rng(rng)
    dim = d if basis is None else np.asarray(basis).shape[1]
    return project_to_sphere(rng.standard_normal((n, dim)), np.sqrt(d))


def _projected_momentum(problem, Y0, lift, pull, lr, momentum, iters, trace_every):
    radius = np.sqrt(problem.d)
    dd = float(problem.delta @ problem.delta)
    scale = 1.0 / dd if problem.normalize and dd > 0 else 1.0
    Y = project_to_sphere(Y0, radius)
    velocity = np.zeros_like(Y)
    trace = []
    best_loss, best_Y, best_ev, best_it = np.inf, Y, None, 0
    initial = None
    cg_total, cg_failures = 0, 0
    ev = None
    for it in range(iters + 1):
        X = lift(Y)
        try:
            ev = evaluate(problem, X)
        except (ValueError, SolverError) as exc:
            raise ReconstructionError(f"loss evaluation failed at iteration {it}: {exc}", np.asarray(trace)) from exc
        cg_total += ev.cg_iterations
        cg_failures += not ev.cg_converged
        if not np.isfinite(ev.loss):
            raise ReconstructionError(f"non-finite loss at iteration {it}", np.asarray(trace))
        if initial is None:
            initial = ev.loss
        if ev.loss < best_loss:
            best_loss, best_Y, best_ev, best_it = ev.loss, Y, ev, it
        if it % trace_every == 0 or it == iters:
            trace.append((it, ev.loss))
        if it == iters:
            break
        grad = pull(recon_loss_gradient(problem, X, ev)) * scale
        velocity = momentum * velocity + grad
        Y = project_to_sphere(Y - lr * velocity, radius)

    diagnostics = {
        "solver": problem.resolved_solver.value,
        "ridge": best_ev.ridge,
        "cg_iterations": cg_total,
        "cg_failures": cg_failures,
        "final_loss": ev.loss,
    }
    return best_Y, best_ev, ReconResult(
        Xhat=lift(best_Y),
        alpha=best_ev.alpha.ravel(),
        loss_trace=np.asarray(trace, dtype=np.float64),
        iterations=iters,
        best_iteration=best_it,
        best_loss=best_loss,
        initial_loss=initial,
        diagnostics=diagnostics,
    )


def run_full_space(
    problem: ReconProblem,
    init=None,
    lr: float = 20.0,
    momentum: float = 0.9,
    iters: int = 10_000,
    rng=None,
    trace_every: int = 100,
) -> ReconResult:
    """Projected heavy-ball descent over ``Xhat`` in ``R^{n x d}``; returns the best iterate."""
    if init is None:
        init = init_candidates(problem.n_candidates, problem.d, None, rng)
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (problem.n_candidates, problem.d):
        raise ValueError(f"init has shape {init.shape}")
    _, _, result = _projected_momentum(
        problem, init, lambda Y: Y, lambda g: g, lr, momentum, iters, trace_every
    )
    return result


def run_subspace(
    problem: ReconProblem,
    init_Z=None,
    lr: float = 20.0,
    momentum: float = 0.9,
    iters: int = 10_000,
    rng=None,
    trace_every: int = 100,
) -> ReconResult:
    """Same optimiser over coordinates ``Z`` with candidates ``Z @ basis.T``.

    ``||basis @ z|| = ||z||``, so keeping ``z`` on the ``sqrt(d)`` sphere keeps
    every candidate there too.
    """
    U = problem.basis
    if U is None:
        raise ValueError("run_subspace needs a problem with a basis")
    if init_Z is None:
        init_Z = init_candidates(problem.n_candidates, problem.d, U, rng)
    init_Z = np.asarray(init_Z, dtype=np.float64)
    if init_Z.shape != (problem.n_candidates, U.shape[1]):
        raise ValueError(f"init_Z has shape {init_Z.shape}")
    best_Z, _, result = _projected_momentum(
        problem, init_Z, lambda Z: Z @ U.T, lambda g: g @ U, lr, momentum, iters, trace_every
    )
    result.Z = best_Z
    return result
