r"""Proximal and projection operators used by the ADMM solvers.

The spectral-norm prox works on stacks of 2x3 blocks at once. With
:math:`A = U \mathrm{diag}(\sigma) V^T` and shrunk singular values
:math:`d`, the prox is :math:`U \mathrm{diag}(d/\sigma) U^T A`, so only
the 2x2 Gram matrix :math:`AA^T` has to be diagonalised and no right
singular vectors are formed.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class SvdTriple(NamedTuple):
    U: np.ndarray
    sigma: np.ndarray
    Vt: np.ndarray


def project_l1_ball(v, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection of a nonnegative vector onto the l1 ball.

    Sort-based threshold search: find ``tau`` with
    ``sum(max(v - tau, 0)) == radius``.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    v = np.asarray(v, dtype=float)
    if v.sum() <= radius:
        return v.copy()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - radius
    idx = np.arange(1, u.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


def _gram_terms(A):
    """Entries of the 2x2 Gram matrices ``A A^T`` of a ``(..., 2, 3)`` stack."""
    r0, r1 = A[..., 0, :], A[..., 1, :]
    a = np.einsum("...i,...i->...", r0, r0)
    b = np.einsum("...i,...i->...", r0, r1)
    d = np.einsum("...i,...i->...", r1, r1)
    return a, b, d


def _top_eigvec(a, b, d, l1):
    """Unit eigenvector of ``[[a, b], [b, d]]`` for eigenvalue ``l1``."""
    # two algebraically equivalent forms; keep the larger (better conditioned)
    x1, y1 = b, l1 - a
    x2, y2 = l1 - d, b
    n1 = np.hypot(x1, y1)
    n2 = np.hypot(x2, y2)
    use1 = n1 >= n2
    x = np.where(use1, x1, x2)
    y = np.where(use1, y1, y2)
    n = np.where(use1, n1, n2)
    flat = n <= 1e-300
    n = np.where(flat, 1.0, n)
    return np.where(flat, 1.0, x / n), np.where(flat, 0.0, y / n)


def _singular_pairs(a, b, d, A=None):
    half_tr = 0.5 * (a + d)
    disc = np.sqrt(0.25 * (a - d) ** 2 + b * b)
    l1 = half_tr + disc
    s1 = np.sqrt(l1)
    if A is None:
        return l1, s1, None
    # s1 * s2 = |r0 x r1|; sqrt(half_tr - disc) would cancel catastrophically
    area = np.linalg.norm(np.cross(A[..., 0, :], A[..., 1, :]), axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s2 = np.where(s1 > 0, np.minimum(area / s1, s1), 0.0)
    return l1, s1, s2


def _gram_eig(A):
    """Singular values (descending) and left singular vectors of a 2x3 stack."""
    a, b, d = _gram_terms(A)
    l1, s1, s2 = _singular_pairs(a, b, d, A)
    x, y = _top_eigvec(a, b, d, l1)
    U = np.stack([np.stack([x, -y], axis=-1), np.stack([y, x], axis=-1)], axis=-2)
    return np.stack([s1, s2], axis=-1), U


def svd_2x3(A) -> SvdTriple:
    """Thin SVD of a 2x3 matrix via its Gram matrix.

    Falls back to LAPACK when the singular values are within 1e-12 of
    each other or the second is below 1e-6 of the first, where the right
    vectors cannot be recovered stably from ``U^T A``.
    """
    A = np.asarray(A, dtype=float)
    sigma, U = _gram_eig(A)
    if sigma[0] - sigma[1] < 1e-12 or sigma[1] < 1e-6 * sigma[0]:
        U, sigma, Vt = np.linalg.svd(A, full_matrices=False)
        return SvdTriple(U, sigma, Vt)
    Vt = (U.T @ A) / sigma[:, None]
    return SvdTriple(U, sigma, Vt)


def _shrink(s1, s2, lam):
    level = 0.5 * (s1 + s2 - lam)
    tail = s1 - s2 >= lam
    dead = s1 + s2 <= lam
    d1 = np.where(dead, 0.0, np.where(tail, s1 - lam, level))
    d2 = np.where(dead, 0.0, np.where(tail, s2, level))
    return d1, d2


def shrink_singular_values(sigma, lam):
    """Prox of ``lam * max(sigma)`` for descending pairs ``sigma``, vectorised.

    Equals ``sigma - lam * P_l1(sigma / lam)`` with the unit l1 ball.
    """
    sigma = np.asarray(sigma, dtype=float)
    d1, d2 = _shrink(sigma[..., 0], sigma[..., 1], lam)
    return np.stack([d1, d2], axis=-1)


def prox_spectral(A, lam: float) -> np.ndarray:
    r"""Proximal operator of ``lam * ||X||_2`` for 2x3 matrices.

    Parameters
    ----------
    A : array_like, shape (2, 3) or (k, 2, 3)
        A single block or a stack of independent blocks.
    lam : float
        Nonnegative weight.

    Returns
    -------
    X : ndarray
        Same shape as ``A``.
    """
    A = np.asarray(A, dtype=float)
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if lam == 0:
        return A.copy()
    a, b, d = _gram_terms(A)
    l1, s1, s2 = _singular_pairs(a, b, d, A)
    d1, d2 = _shrink(s1, s2, lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        w1 = np.where(s1 > 0, d1 / s1, 0.0)
        w2 = np.where(s2 > 0, d2 / s2, 0.0)
    x, y = _top_eigvec(a, b, d, l1)
    # P = U diag(w) U^T = w2 I + (w1 - w2) u u^T; equal weights make U irrelevant
    g = w1 - w2
    p00 = (w2 + g * x * x)[..., None]
    p01 = (g * x * y)[..., None]
    p11 = (w2 + g * y * y)[..., None]
    r0, r1 = A[..., 0, :], A[..., 1, :]
    return np.stack([p00 * r0 + p01 * r1, p01 * r0 + p11 * r1], axis=-2)


def soft_threshold(X, beta: float) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.sign(X) * np.maximum(np.abs(X) - beta, 0.0)


def spectral_norms(blocks) -> np.ndarray:
    """Largest singular value of each 2x3 block in a stack."""
    _, s1, _ = _singular_pairs(*_gram_terms(np.asarray(blocks, dtype=float)))
    return s1
