"""Outlier-robust shape fitting with a sparse correction matrix and translation.

Solves

    min 0.5 * ||W - sum_i M_i B_i - E - T 1^T||_F^2
        + alpha * sum_i ||M_i||_2 + beta * ||E||_1

by multi-block ADMM with the Gauss-Seidel order M, Z, E, T, Y. W is used
uncentred since T is estimated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .admm import (
    DivergenceError,
    MotionStack,
    SolverConfig,
    SolverReport,
    _adapt_mu,
    _RidgeSolver,
    _visible_problem,
    stack_blocks,
    unstack_blocks,
)
from .prox import prox_spectral, soft_threshold, spectral_norms
from .shapes import Landmarks2D, ShapeDictionary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RobustConfig(SolverConfig):
    beta: float = 0.1

    def __post_init__(self):
        super().__post_init__()
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


@dataclass
class RobustSolution:
    motions: MotionStack
    E: np.ndarray  # (2, p), zero at invisible landmarks
    T: np.ndarray  # (2,)
    report: SolverReport


def robust_objective(Wv, B, M, E, T, alpha, beta) -> float:
    resid = Wv - M @ B - E - T[:, None]
    return float(
        0.5 * np.sum(resid**2)
        + alpha * np.sum(spectral_norms(unstack_blocks(M)))
        + beta * np.sum(np.abs(E))
    )


def solve_robust(W: Landmarks2D, dictionary: ShapeDictionary, cfg: RobustConfig = RobustConfig()) -> RobustSolution:
    """Fit motions, sparse outlier corrections and a translation.

    Convergence requires the usual primal and dual residuals plus
    stagnation of E, all relative to ``max(||M||, ||Z||, 1)``. Multi-block
    ADMM has no convergence guarantee; a run that exhausts ``max_iter``
    comes back with ``report.converged = False``.
    """
    Wv, B = _visible_problem(W, dictionary)
    k = dictionary.k
    ridge = _RidgeSolver(B)
    alpha, beta = cfg.alpha, cfg.beta
    mu = cfg.mu0
    M = np.zeros((2, 3 * k))
    Z = np.zeros_like(M)
    Y = np.zeros_like(M)
    E = np.zeros_like(Wv)
    T = np.zeros(2)
    report = SolverReport()
    for it in range(1, cfg.max_iter + 1):
        M = stack_blocks(prox_spectral(unstack_blocks(Z - Y / mu), alpha / mu))
        Z_old, E_old = Z, E
        Z = ridge.solve((Wv - E - T[:, None]) @ B.T + mu * M + Y, mu)
        ZB = Z @ B
        E = soft_threshold(Wv - ZB - T[:, None], beta)
        T = np.mean(Wv - ZB - E, axis=1)
        Y = Y + mu * (M - Z)
        if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(E))):
            raise DivergenceError("numerical divergence")
        r = float(np.linalg.norm(M - Z))
        s = float(mu * np.linalg.norm(Z - Z_old))
        e_step = float(np.linalg.norm(E - E_old))
        scale = max(np.linalg.norm(M), np.linalg.norm(Z), 1.0)
        report.objective_trace.append(robust_objective(Wv, B, Z, E, T, alpha, beta))
        report.iterations = it
        report.primal_residual, report.dual_residual = r, s
        tol = cfg.tol * scale
        if r <= tol and s <= tol and e_step <= tol:
            report.converged = True
            break
        mu = _adapt_mu(mu, r, s, cfg, it)
    if not report.converged:
        log.warning("robust ADMM did not converge in %d iterations", report.iterations)
    report.objective = robust_objective(Wv, B, M, E, T, alpha, beta)
    E_full = np.zeros((2, W.p))
    E_full[:, W.visibility] = E
    return RobustSolution(MotionStack.from_stacked(M), E_full, T, report)


def classify_outliers(sol: RobustSolution, threshold: float) -> np.ndarray:
    """Flag landmarks whose outlier correction has norm above ``threshold``."""
    return np.linalg.norm(sol.E, axis=0) > threshold
