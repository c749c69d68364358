"""Shape containers, the weak-perspective camera and shape error metrics.

Shapes are plain ``(3, p)`` float arrays and rotations are ``(3, 3)``
arrays; only objects that carry more than one array (landmarks with
visibility, dictionaries, motion stacks) get a dedicated class.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised for degenerate or inconsistent shape inputs."""


def as_shape(points, rows: int = 3) -> np.ndarray:
    """Validate and return a finite ``(rows, p)`` float array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != rows or arr.shape[1] < 1:
        raise ShapeError(f"expected a {rows}xp matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("shape has non-finite entries")
    return arr


@dataclass(frozen=True)
class Landmarks2D:
    """2D landmark observations with per-landmark visibility.

    Coordinates of invisible landmarks are carried along but never read
    by the solvers; they may hold anything, including NaN.
    """

    points: np.ndarray
    visibility: np.ndarray = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] != 2 or pts.shape[1] < 1:
            raise ShapeError(f"expected a 2xp landmark matrix, got {pts.shape}")
        if self.visibility is None:
            vis = np.ones(pts.shape[1], dtype=bool)
        else:
            vis = np.asarray(self.visibility, dtype=bool).reshape(-1)
            if vis.shape[0] != pts.shape[1]:
                raise ShapeError("visibility length does not match landmark count")
        if not np.all(np.isfinite(pts[:, vis])):
            raise ShapeError("visible landmarks must be finite")
        pts.setflags(write=False)
        vis.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "visibility", vis)

    @property
    def p(self) -> int:
        return self.points.shape[1]

    @property
    def visible_points(self) -> np.ndarray:
        return self.points[:, self.visibility]

    def with_points(self, points) -> "Landmarks2D":
        return Landmarks2D(points, self.visibility)


@dataclass(frozen=True)
class CameraWeakPerspective:
    s: float = 1.0

    def __post_init__(self):
        if not self.s > 0:
            raise ShapeError("camera scale must be positive")


@dataclass(frozen=True)
class ShapeDictionary:
    """Ordered basis shapes, stored as a ``(k, 3, p)`` array."""

    bases: np.ndarray
    nonneg: bool = True
    mean_shape: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        b = np.asarray(self.bases, dtype=float)
        if b.ndim == 2:
            b = b[None]
        if b.ndim != 3 or b.shape[1] != 3 or b.shape[0] < 1 or b.shape[2] < 1:
            raise ShapeError(f"expected k x 3 x p bases, got {b.shape}")
        if not np.all(np.isfinite(b)):
            raise ShapeError("bases have non-finite entries")
        b.setflags(write=False)
        object.__setattr__(self, "bases", b)
        if self.mean_shape is not None:
            object.__setattr__(self, "mean_shape", as_shape(self.mean_shape))

    @classmethod
    def from_list(cls, bases, **kw) -> "ShapeDictionary":
        return cls(np.stack([as_shape(b) for b in bases]), **kw)

    @property
    def k(self) -> int:
        return self.bases.shape[0]

    @property
    def p(self) -> int:
        return self.bases.shape[2]

    @property
    def stacked(self) -> np.ndarray:
        """The ``(3k, p)`` vertical concatenation of the bases."""
        return self.bases.reshape(3 * self.k, self.p)

    def columns(self, mask) -> "ShapeDictionary":
        """Dictionary restricted to the landmark columns selected by ``mask``."""
        mean = None if self.mean_shape is None else self.mean_shape[:, mask]
        return ShapeDictionary(self.bases[:, :, mask], self.nonneg, mean)

    def centralized(self) -> "ShapeDictionary":
        b = self.bases - self.bases.mean(axis=2, keepdims=True)
        mean = None
        if self.mean_shape is not None:
            mean = self.mean_shape - self.mean_shape.mean(axis=1, keepdims=True)
        return ShapeDictionary(b, self.nonneg, mean)


def rotation_is_valid(R, atol: float = 1e-8) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.allclose(R.T @ R, np.eye(3), atol=atol)
        and abs(np.linalg.det(R) - 1.0) <= atol
    )


def complete_rotation(Rbar) -> np.ndarray:
    """Append the cross-product third row to a 2x3 matrix with orthonormal rows."""
    Rbar = np.asarray(Rbar, dtype=float)
    return np.vstack([Rbar, np.cross(Rbar[0], Rbar[1])])


def rotation_about_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_about_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_zyz(a: float, b: float, c: float) -> np.ndarray:
    return rotation_about_z(a) @ rotation_about_y(b) @ rotation_about_z(c)


def centralize(obj):
    """Subtract row means.

    Parameters
    ----------
    obj : array_like or Landmarks2D
        A ``(d, p)`` matrix, or landmarks whose means are taken over the
        visible columns only.

    Returns
    -------
    centered : same type as ``obj``
    means : ndarray
        The subtracted row means.
    """
    if isinstance(obj, Landmarks2D):
        vis = obj.visibility
        if not vis.any():
            raise ShapeError("no observations")
        means = obj.points[:, vis].mean(axis=1)
        pts = obj.points.copy()
        pts[:, vis] -= means[:, None]
        return obj.with_points(pts), means
    arr = np.asarray(obj, dtype=float)
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise ShapeError("no observations")
    means = arr.mean(axis=1)
    return arr - means[:, None], means


def normalize_unit_variance(obj):
    """Scale so that the average per-direction variance is one.

    Returns the scaled object and the factor ``sigma`` it was divided by,
    where ``sigma**2`` is the mean squared entry over the considered
    columns. The input is expected to be centralized already.
    """
    if isinstance(obj, Landmarks2D):
        vals = obj.visible_points
    else:
        vals = np.asarray(obj, dtype=float)
    if vals.size == 0:
        raise ShapeError("no observations")
    sigma = float(np.sqrt(np.mean(vals**2)))
    if sigma == 0.0:
        raise ShapeError("degenerate shape")
    if isinstance(obj, Landmarks2D):
        pts = obj.points.copy()
        pts[:, obj.visibility] /= sigma
        return obj.with_points(pts), sigma
    return vals / sigma, sigma


def compose_shape(dictionary: ShapeDictionary, c) -> np.ndarray:
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.shape[0] != dictionary.k:
        raise ShapeError(f"got {c.shape[0]} coefficients for {dictionary.k} bases")
    return np.tensordot(c, dictionary.bases, axes=1)


def compose_relaxed(dictionary: ShapeDictionary, c, rotations) -> np.ndarray:
    """Shape under the rotatable-basis model, ``sum_i c_i R_i B_i``."""
    c = np.asarray(c, dtype=float).reshape(-1)
    rots = np.asarray(rotations, dtype=float)
    if c.shape[0] != dictionary.k or rots.shape != (dictionary.k, 3, 3):
        raise ShapeError("coefficient/rotation count does not match dictionary")
    return np.einsum("i,iab,ibp->ap", c, rots, dictionary.bases)


def project_weak_perspective(shape, cam: CameraWeakPerspective, R, t=(0.0, 0.0)) -> Landmarks2D:
    shape = as_shape(shape)
    R = np.asarray(R, dtype=float)
    t = np.asarray(t, dtype=float).reshape(2, 1)
    return Landmarks2D(cam.s * (R[:2] @ shape) + t)


def procrustes_align(a, b):
    """Similarity transform taking ``a`` onto ``b`` in the least-squares sense.

    Returns
    -------
    R : ndarray (3, 3)
        Proper rotation (det +1).
    scale : float
    t : ndarray (3,)
    aligned : ndarray
        ``scale * R @ a + t``.
    """
    a = as_shape(a, rows=np.asarray(a).shape[0])
    b = as_shape(b, rows=a.shape[0])
    if a.shape != b.shape:
        raise ShapeError("shapes must have equal size")
    a0, ma = centralize(a)
    b0, mb = centralize(b)
    na = np.sum(a0**2)
    if na == 0.0 or np.sum(b0**2) == 0.0:
        raise ShapeError("degenerate shape")
    U, sv, Vt = np.linalg.svd(b0 @ a0.T)
    d = np.ones(a.shape[0])
    d[-1] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ np.diag(d) @ Vt
    scale = float(np.sum(sv * d) / na)
    t = mb - scale * R @ ma
    return R, scale, t, scale * R @ a + t[:, None]


def error_3d(estimate, truth) -> float:
    """Mean per-landmark distance after removing translation and scale only."""
    est = as_shape(estimate)
    tru = as_shape(truth)
    if est.shape != tru.shape:
        raise ShapeError("shapes must have equal size")
    e0, _ = centralize(est)
    t0, _ = centralize(tru)
    if not np.any(t0):
        raise ShapeError("degenerate shape")
    denom = np.sum(e0**2)
    scale = max(np.sum(e0 * t0) / denom, 0.0) if denom > 0 else 0.0
    return float(np.mean(np.linalg.norm(scale * e0 - t0, axis=0)))


def error_2d(model: Landmarks2D, annotation: Landmarks2D) -> float:
    if model.p != annotation.p:
        raise ShapeError("landmark counts differ")
    vis = model.visibility & annotation.visibility
    if not vis.any():
        raise ShapeError("no mutually visible landmarks")
    diff = model.points[:, vis] - annotation.points[:, vis]
    return float(np.mean(np.linalg.norm(diff, axis=0)))
