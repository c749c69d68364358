"""ADMM for spectral-norm regularised shape fitting.

Unknowns are the 2x3 motion blocks ``M_i``; the penalised problem is

    min 0.5 * ||W - sum_i M_i B_i||_F^2 + alpha * sum_i ||M_i||_2

and the noiseless variant minimises ``sum_i ||M_i||_2`` subject to
``W = sum_i M_i B_i``. Both split ``M~ = Z`` and update M (blockwise
prox), Z (closed form) and the dual Y in turn.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .prox import prox_spectral, spectral_norms
from .shapes import Landmarks2D, ShapeDictionary, ShapeError

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Raised when an iterate becomes non-finite."""


@dataclass(frozen=True)
class MotionStack:
    """Motion blocks stored as a ``(k, 2, 3)`` array."""

    blocks: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=float)
        if b.ndim != 3 or b.shape[1:] != (2, 3) or b.shape[0] < 1:
            raise ShapeError(f"expected k x 2 x 3 motion blocks, got {b.shape}")
        if not np.all(np.isfinite(b)):
            raise ShapeError("motion blocks must be finite")
        object.__setattr__(self, "blocks", b)

    @classmethod
    def from_stacked(cls, stacked) -> "MotionStack":
        stacked = np.asarray(stacked, dtype=float)
        k = stacked.shape[1] // 3
        return cls(stacked.reshape(2, k, 3).transpose(1, 0, 2))

    @classmethod
    def zeros(cls, k: int) -> "MotionStack":
        return cls(np.zeros((k, 2, 3)))

    @property
    def k(self) -> int:
        return self.blocks.shape[0]

    @property
    def stacked(self) -> np.ndarray:
        """The ``(2, 3k)`` horizontal concatenation ``[M_1 ... M_k]``."""
        return stack_blocks(self.blocks)


def stack_blocks(blocks) -> np.ndarray:
    blocks = np.asarray(blocks)
    return blocks.transpose(1, 0, 2).reshape(2, -1)


def unstack_blocks(stacked) -> np.ndarray:
    stacked = np.asarray(stacked)
    return stacked.reshape(2, -1, 3).transpose(1, 0, 2)


@dataclass(frozen=True)
class SolverConfig:
    alpha: float = 1.0
    mu0: float = 1.0
    tol: float = 1e-4
    max_iter: int = 500
    adaptive_mu: bool = True
    mu_ratio: float = 10.0
    mu_factor: float = 2.0
    mu_every: int = 10

    def __post_init__(self):
        if self.alpha < 0 or self.mu0 <= 0 or self.tol <= 0 or self.max_iter < 1:
            raise ValueError("invalid solver configuration")
        if self.mu_ratio <= 0 or self.mu_factor <= 0 or self.mu_every < 1:
            raise ValueError("invalid step-size adaptation parameters")


@dataclass
class SolverReport:
    iterations: int = 0
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    objective: float = np.inf
    converged: bool = False
    objective_trace: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "objective": self.objective,
            "converged": self.converged,
        }


@dataclass
class AdmmState:
    M: np.ndarray  # (2, 3k)
    Z: np.ndarray
    Y: np.ndarray
    mu: float

    @classmethod
    def initial(cls, k: int, mu: float) -> "AdmmState":
        zeros = np.zeros((2, 3 * k))
        return cls(zeros.copy(), zeros.copy(), zeros.copy(), mu)


def _visible_problem(W: Landmarks2D, dictionary: ShapeDictionary):
    vis = W.visibility
    if not vis.any():
        raise ShapeError("no observations")
    if dictionary.p != W.p:
        raise ShapeError(f"dictionary has {dictionary.p} landmarks, observations {W.p}")
    return W.points[:, vis], dictionary.stacked[:, vis]


def objective_penalized(W: Landmarks2D, dictionary: ShapeDictionary, M: MotionStack, alpha: float) -> float:
    """Penalised objective over the visible landmarks."""
    if M.k != dictionary.k:
        raise ShapeError("motion stack and dictionary sizes differ")
    Wv, Bv = _visible_problem(W, dictionary)
    resid = Wv - M.stacked @ Bv
    return float(0.5 * np.sum(resid**2) + alpha * np.sum(spectral_norms(M.blocks)))


def update_M(state: AdmmState, alpha: float) -> MotionStack:
    Q = state.Z - state.Y / state.mu
    return MotionStack(prox_spectral(unstack_blocks(Q), alpha / state.mu))


class _RidgeSolver:
    """Applies ``(B B^T + mu I)^{-1}`` from the right for any mu > 0.

    ``B B^T`` is diagonalised once, so adapting mu costs nothing.
    """

    def __init__(self, B):
        evals, self.V = np.linalg.eigh(B @ B.T)
        self.evals = np.maximum(evals, 0.0)

    def solve(self, R, mu: float):
        return ((R @ self.V) / (self.evals + mu)) @ self.V.T


def update_Z(W, dictionary: ShapeDictionary, M: MotionStack, Y, mu: float) -> np.ndarray:
    """Closed-form Z step: ``(W B^T + mu M + Y)(B B^T + mu I)^{-1}``."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    if isinstance(W, Landmarks2D):
        Wv, B = _visible_problem(W, dictionary)
    else:
        Wv, B = np.asarray(W, dtype=float), dictionary.stacked
    rhs = Wv @ B.T + mu * M.stacked + Y
    try:
        return np.linalg.solve((B @ B.T + mu * np.eye(B.shape[0])).T, rhs.T).T
    except np.linalg.LinAlgError as exc:  # pragma: no cover - mu > 0 keeps it PD
        raise RuntimeError("ridge solve failed") from exc


def _adapt_mu(mu, r, s, cfg: SolverConfig, it: int):
    # changing mu every iteration can make the iterates cycle; only
    # rebalance every ``mu_every`` steps
    if not cfg.adaptive_mu or it % cfg.mu_every:
        return mu
    if r > cfg.mu_ratio * s:
        return mu * cfg.mu_factor
    if s > cfg.mu_ratio * r:
        return mu / cfg.mu_factor
    return mu


def _run_admm(k, cfg: SolverConfig, z_step, objective, alpha, use_z=False):
    """Shared loop. ``z_step(M, Y, mu)`` returns the new Z.

    ``use_z`` selects the Z iterate as the returned solution.
    """
    st = AdmmState.initial(k, cfg.mu0)
    report = SolverReport()
    for it in range(1, cfg.max_iter + 1):
        Q = unstack_blocks(st.Z - st.Y / st.mu)
        st.M = stack_blocks(prox_spectral(Q, alpha / st.mu))
        Z_old = st.Z
        st.Z = z_step(st.M, st.Y, st.mu)
        st.Y = st.Y + st.mu * (st.M - st.Z)
        if not (np.all(np.isfinite(st.Z)) and np.all(np.isfinite(st.M))):
            raise DivergenceError("numerical divergence")
        r = float(np.linalg.norm(st.M - st.Z))
        s = float(st.mu * np.linalg.norm(st.Z - Z_old))
        scale = max(np.linalg.norm(st.M), np.linalg.norm(st.Z), 1.0)
        report.objective_trace.append(objective(st.Z))
        report.iterations = it
        report.primal_residual, report.dual_residual = r, s
        if r <= cfg.tol * scale and s <= cfg.tol * scale:
            report.converged = True
            break
        st.mu = _adapt_mu(st.mu, r, s, cfg, it)
    out = st.Z if use_z else st.M
    report.objective = objective(out)
    if not report.converged:
        log.info("ADMM stopped after %d iterations (r=%.3g, s=%.3g)", report.iterations, r, s)
    return MotionStack.from_stacked(out), report


def solve_penalized(W: Landmarks2D, dictionary: ShapeDictionary, cfg: SolverConfig = SolverConfig()):
    """Solve the penalised convex program.

    Invisible landmarks are dropped from both ``W`` and the bases before
    solving. ``W`` is expected to be centralised over its visible columns.

    Returns
    -------
    motions : MotionStack
    report : SolverReport
        ``converged`` is False when ``max_iter`` ran out; no exception.
    """
    Wv, B = _visible_problem(W, dictionary)
    ridge = _RidgeSolver(B)
    WBt = Wv @ B.T
    alpha = cfg.alpha

    def z_step(M, Y, mu):
        return ridge.solve(WBt + mu * M + Y, mu)

    def objective(X):
        resid = Wv - X @ B
        return float(0.5 * np.sum(resid**2) + alpha * np.sum(spectral_norms(unstack_blocks(X))))

    return _run_admm(dictionary.k, cfg, z_step, objective, alpha)


class _AffineProjector:
    """Projection onto ``{Z : Z B = W}``."""

    def __init__(self, Wv, B, rtol: float = 1e-6):
        self.Wv = Wv
        self.B = B
        self.pinv = np.linalg.pinv(B)
        # W must lie in the (numerical) row space of B
        nw = np.linalg.norm(Wv)
        if nw > 0 and np.linalg.norm(Wv @ self.pinv @ B - Wv) > rtol * nw:
            raise ShapeError("infeasible or degenerate constraint")

    def project(self, Q):
        return Q - (Q @ self.B - self.Wv) @ self.pinv


def solve_noiseless(W: Landmarks2D, dictionary: ShapeDictionary, cfg: SolverConfig = SolverConfig()):
    """Minimise the sum of spectral norms subject to exact reprojection.

    ``cfg.alpha`` is ignored; the prox weight is ``1/mu``. The returned
    blocks are the Z iterate, which satisfies the constraint exactly.
    """
    Wv, B = _visible_problem(W, dictionary)
    proj = _AffineProjector(Wv, B)

    def z_step(M, Y, mu):
        return proj.project(M + Y / mu)

    def objective(X):
        return float(np.sum(spectral_norms(unstack_blocks(X))))

    return _run_admm(dictionary.k, replace(cfg, alpha=1.0), z_step, objective, 1.0, use_z=True)


def equality_residual(W: Landmarks2D, dictionary: ShapeDictionary, M: MotionStack) -> float:
    Wv, B = _visible_problem(W, dictionary)
    return float(np.linalg.norm(Wv - M.stacked @ B))
