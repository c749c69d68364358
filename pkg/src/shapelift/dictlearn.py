"""Nonnegative sparse shape dictionaries and a PCA baseline.

Shapes are handled as columns of a ``(3p, n)`` matrix ``X``; the
dictionary is ``D`` with ``k`` unit-ball columns and the cost is

    0.5 * ||X - D C||_F^2 + lam * sum(C),   C >= 0,  ||D[:, i]|| <= 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .shapes import ShapeDictionary, ShapeError, centralize

log = logging.getLogger(__name__)

ACTIVE_ATOM_THRESHOLD = 1e-6


@dataclass
class TrainingSet:
    shapes: np.ndarray  # (n, 3, p), centralized and aligned
    residuals: np.ndarray  # alignment residual of each shape to the reference

    @property
    def n(self) -> int:
        return self.shapes.shape[0]

    @property
    def p(self) -> int:
        return self.shapes.shape[2]

    @property
    def matrix(self) -> np.ndarray:
        return self.shapes.reshape(self.n, -1).T

    @property
    def mean_shape(self) -> np.ndarray:
        return self.shapes.mean(axis=0)


def build_training_set(shapes, reference=None, align: bool = True) -> TrainingSet:
    """Centralise shapes and rotate each onto ``reference`` (default: the first)."""
    shapes = np.asarray(shapes, dtype=float)
    if shapes.ndim != 3 or shapes.shape[1] != 3 or shapes.shape[0] < 1:
        raise ShapeError(f"expected n x 3 x p training shapes, got {shapes.shape}")
    out = np.array([centralize(s)[0] for s in shapes])
    residuals = np.zeros(len(out))
    if align:
        ref = out[0] if reference is None else centralize(reference)[0]
        for j, s in enumerate(out):
            U, _, Vt = np.linalg.svd(ref @ s.T)
            d = np.ones(3)
            d[-1] = np.sign(np.linalg.det(U @ Vt)) or 1.0
            out[j] = U @ np.diag(d) @ Vt @ s
            residuals[j] = np.linalg.norm(out[j] - ref)
    return TrainingSet(out, residuals)


@dataclass(frozen=True)
class DictLearnConfig:
    k: int = 128
    lam: float = 0.1
    delta1: float | None = None  # None: 1 / Lipschitz estimate
    delta2: float | None = None
    outer_iters: int = 200
    inner_iters: int = 500
    seed: int = 0
    nonneg: bool = True
    tol: float = 1e-6

    def __post_init__(self):
        if self.k < 1 or self.lam < 0 or self.outer_iters < 1 or self.inner_iters < 1:
            raise ValueError("invalid dictionary-learning configuration")


def _as_matrix(shapes) -> np.ndarray:
    if isinstance(shapes, TrainingSet):
        return shapes.matrix
    arr = np.asarray(shapes, dtype=float)
    if arr.ndim == 3:
        return arr.reshape(arr.shape[0], -1).T
    return arr


def _dict_matrix(dictionary) -> np.ndarray:
    if isinstance(dictionary, ShapeDictionary):
        return dictionary.bases.reshape(dictionary.k, -1).T
    return np.asarray(dictionary, dtype=float)


def coding_cost(D, X, C, lam: float) -> float:
    return float(0.5 * np.sum((X - D @ C) ** 2) + lam * np.sum(np.abs(C)))


def coding_gradient(D, X, C) -> np.ndarray:
    """Gradient of the smooth part ``0.5 * ||X - D C||^2`` with respect to C."""
    return D.T @ (D @ C - X)


def _shrink(V, t, nonneg):
    if nonneg:
        return np.maximum(V - t, 0.0)
    return np.sign(V) * np.maximum(np.abs(V) - t, 0.0)


def _code(D, X, lam, C0, nonneg, tol, max_iter, step=None):
    G = D.T @ D
    H = D.T @ X
    L = float(np.linalg.eigvalsh(G)[-1]) if G.size else 0.0
    k, n = D.shape[1], X.shape[1]
    if L <= 0:
        return np.zeros((k, n))
    step = 1.0 / L if step is None else min(step, 1.0 / L)
    C = np.zeros((k, n)) if C0 is None else np.array(C0, dtype=float)
    if nonneg:
        C = np.maximum(C, 0.0)

    def cost(C):
        return 0.5 * np.sum(C * (G @ C)) - np.sum(H * C) + lam * np.sum(np.abs(C))

    const = 0.5 * np.sum(X**2)
    f = cost(C)
    Yk, t = C.copy(), 1.0
    for _ in range(max_iter):
        C_new = _shrink(Yk - step * (G @ Yk - H), step * lam, nonneg)
        f_new = cost(C_new)
        if f_new > f:
            # restart momentum from the last accepted point
            Yk, t = C.copy(), 1.0
            C_new = _shrink(C - step * (G @ C - H), step * lam, nonneg)
            f_new = cost(C_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        Yk = C_new + ((t - 1.0) / t_new) * (C_new - C)
        decrease = f - f_new
        C, f, t = C_new, f_new, t_new
        if decrease <= tol * max(abs(f + const), 1e-300):
            break
    return C


def nonneg_sparse_code(dictionary, shapes, lam: float, C0=None, nonneg: bool = True,
                       tol: float = 1e-8, max_iter: int = 5000) -> np.ndarray:
    """Nonnegative sparse codes of the training shapes.

    Accelerated projected gradient (gradient step, then clamp or
    soft-threshold) until the relative cost decrease drops below ``tol``.

    Returns
    -------
    C : ndarray (k, n)
    """
    D = _dict_matrix(dictionary)
    X = _as_matrix(shapes)
    if np.isinf(lam):
        return np.zeros((D.shape[1], X.shape[1]))
    return _code(D, X, lam, C0, nonneg, tol, max_iter)


def _project_columns(D):
    norms = np.linalg.norm(D, axis=0)
    return D / np.maximum(norms, 1.0)


@dataclass
class LearnResult:
    dictionary: ShapeDictionary
    C: np.ndarray
    cost_trace: list


def learn_dictionary(shapes, cfg: DictLearnConfig = DictLearnConfig()) -> LearnResult:
    """Alternate sparse coding and a projected dictionary gradient step.

    The dictionary starts from ``k`` training shapes drawn uniformly (with
    replacement only when ``k > n``). Each dictionary step backtracks from
    ``1/L`` until the cost does not increase, so the recorded cost trace is
    non-increasing.
    """
    X = _as_matrix(shapes)
    dim, n = X.shape
    if n < 1:
        raise ShapeError("empty training set")
    p = dim // 3
    rng = np.random.default_rng(cfg.seed)
    idx = rng.choice(n, size=cfg.k, replace=cfg.k > n)
    D = _project_columns(X[:, idx].copy())
    C = _code(D, X, cfg.lam, None, cfg.nonneg, 1e-8, cfg.inner_iters, cfg.delta1)
    cost = coding_cost(D, X, C, cfg.lam)
    trace = [cost]
    for it in range(cfg.outer_iters):
        C_new = _code(D, X, cfg.lam, C, cfg.nonneg, 1e-8, cfg.inner_iters, cfg.delta1)
        if coding_cost(D, X, C_new, cfg.lam) <= cost:
            C = C_new
            cost = coding_cost(D, X, C, cfg.lam)
        grad = (D @ C - X) @ C.T
        Lc = float(np.linalg.eigvalsh(C @ C.T)[-1])
        step = cfg.delta2 if cfg.delta2 is not None else (1.0 / Lc if Lc > 0 else 0.0)
        while step > 0:
            D_new = _project_columns(D - step * grad)
            cost_new = coding_cost(D_new, X, C, cfg.lam)
            if cost_new <= cost:
                D, cost = D_new, cost_new
                break
            step *= 0.5
            if step < 1e-16:
                break
        trace.append(cost)
        if trace[-2] - cost < cfg.tol * max(abs(cost), 1e-300):
            break
    bases = D.T.reshape(cfg.k, 3, p)
    mean = X.mean(axis=1).reshape(3, p)
    return LearnResult(ShapeDictionary(bases, nonneg=cfg.nonneg, mean_shape=mean), C, trace)


def pca_basis(shapes, m: int):
    """Top-``m`` principal directions of the vectorised shapes.

    Returns
    -------
    basis : ndarray (m, 3p)
        Orthonormal rows.
    mean : ndarray (3, p)
    """
    X = _as_matrix(shapes)
    dim, n = X.shape
    if not 1 <= m <= min(dim, n):
        raise ValueError(f"m must be in [1, {min(dim, n)}], got {m}")
    mean = X.mean(axis=1)
    _, _, Vt = np.linalg.svd((X - mean[:, None]).T, full_matrices=False)
    return Vt[:m], mean.reshape(3, -1)


def pca_error(shapes, m: int) -> float:
    """Half the squared residual of projecting onto the PCA span plus mean."""
    X = _as_matrix(shapes)
    mean = X.mean(axis=1, keepdims=True)
    if m == 0:
        return float(0.5 * np.sum((X - mean) ** 2))
    basis, _ = pca_basis(X, m)
    Xc = X - mean
    resid = Xc - basis.T @ (basis @ Xc)
    return float(0.5 * np.sum(resid**2))


def representability_curve(shapes, basis, lambda_grid=None, nonneg: bool = True):
    """Sparsity-vs-error pairs for a dictionary, or for PCA with ``basis="pca"``.

    For a dictionary each entry is ``(mean active atoms per shape, error)``
    with error ``0.5 * sum_j ||S_j - D c_j||^2``; atoms count as active when
    ``|C_ij| > 1e-6``. For PCA each entry is ``(components, error)``.
    """
    X = _as_matrix(shapes)
    if isinstance(basis, str):
        if basis != "pca":
            raise ValueError(f"unknown baseline {basis!r}")
        return [(m, pca_error(X, m)) for m in range(1, min(X.shape) + 1)]
    if lambda_grid is None or len(lambda_grid) == 0:
        raise ValueError("lambda grid must be nonempty")
    D = _dict_matrix(basis)
    out = []
    C = None
    for lam in sorted(lambda_grid, reverse=True):
        if np.isinf(lam):
            C = np.zeros((D.shape[1], X.shape[1]))
        else:
            C = _code(D, X, lam, C, nonneg, 1e-10, 20000)
        active = float(np.mean(np.sum(np.abs(C) > ACTIVE_ATOM_THRESHOLD, axis=0)))
        out.append((lam, active, float(0.5 * np.sum((X - D @ C) ** 2))))
    order = {lam: i for i, lam in enumerate(lambda_grid)}
    out.sort(key=lambda r: order[r[0]])
    return [(a, e) for _, a, e in out]
