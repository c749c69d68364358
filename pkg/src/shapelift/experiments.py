"""Synthetic data and experiment drivers.

Everything here is a deterministic function of an integer seed. Seeds
for sub-tasks (grid cells, trials, instances) are derived with
``numpy.random.SeedSequence`` from the parent seed and the task indices,
so results do not depend on evaluation order or worker count.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation as _Rot

from . import admm, reconstruct, robust
from .admm import MotionStack, SolverConfig
from .dictlearn import DictLearnConfig, TrainingSet, build_training_set, learn_dictionary
from .shapes import (
    CameraWeakPerspective,
    Landmarks2D,
    ShapeDictionary,
    ShapeError,
    centralize,
    error_3d,
    normalize_unit_variance,
    project_weak_perspective,
    rotation_about_y,
    rotation_zyz,
)

log = logging.getLogger(__name__)

#: Solver settings for the exact-recovery study; residuals must be well
#: below the 1e-3 relative-error success threshold.
RECOVERY_CONFIG = SolverConfig(tol=1e-6, max_iter=3000)
RECOVERY_THRESHOLD = 1e-3

DEFAULT_P_VALUES = (10, 20, 40, 80, 160)
DEFAULT_Z_VALUES = (1, 3, 5, 10, 20, 35, 50)


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def worker_count() -> int:
    env = os.environ.get("SHAPELIFT_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cap))
        except ValueError:
            log.warning("ignoring non-integer SHAPELIFT_THREADS=%r", env)
    return cap


def parallel_map(func, items):
    """Order-preserving map, parallel when more than one worker is allowed."""
    items = list(items)
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items))


def random_rotation(rng: np.random.Generator, mode: str = "zyz") -> np.ndarray:
    """Random rotation: ZYZ Euler angles uniform on [0, 2pi], or Haar-uniform."""
    if mode == "zyz":
        a, b, c = rng.uniform(0.0, 2.0 * np.pi, size=3)
        return rotation_zyz(a, b, c)
    if mode == "haar":
        Q, R = np.linalg.qr(rng.normal(size=(3, 3)))
        Q = Q @ np.diag(np.sign(np.diag(R)))
        if np.linalg.det(Q) < 0:
            Q[:, 0] = -Q[:, 0]
        return Q
    raise ValueError(f"unknown rotation mode {mode!r}")


# -- exact recovery ---------------------------------------------------------


@dataclass
class RecoveryInstance:
    dictionary: ShapeDictionary
    true_motions: MotionStack
    W: Landmarks2D
    seed: int
    support: np.ndarray = field(default=None)


def make_recovery_instance(k: int, p: int, z: int, seed: int, rotation_mode: str = "zyz") -> RecoveryInstance:
    """Gaussian bases and ``z`` random active blocks ``c_i Rbar_i``, c_i ~ U(0, 1)."""
    if not 1 <= z <= k or p < 1:
        raise ValueError(f"need 1 <= z <= k and p >= 1 (k={k}, p={p}, z={z})")
    rng = np.random.default_rng(seed)
    bases = rng.normal(size=(k, 3, p))
    support = np.sort(rng.choice(k, size=z, replace=False))
    blocks = np.zeros((k, 2, 3))
    for i in support:
        c = rng.uniform(0.0, 1.0)
        while c == 0.0:
            c = rng.uniform(0.0, 1.0)
        blocks[i] = c * random_rotation(rng, rotation_mode)[:2]
    W = np.einsum("iab,ibp->ap", blocks, bases)
    return RecoveryInstance(ShapeDictionary(bases, nonneg=False), MotionStack(blocks), Landmarks2D(W), seed, support)


def relative_error(estimate: MotionStack, truth: MotionStack) -> float:
    nt = np.linalg.norm(truth.blocks)
    if nt == 0:
        raise ValueError("zero truth")
    return float(np.linalg.norm(estimate.blocks - truth.blocks) / nt)


def recovery_trial(k: int, p: int, z: int, seed: int, cfg: SolverConfig = RECOVERY_CONFIG) -> float:
    """Relative error of one noiseless recovery; inf when the solver fails."""
    inst = make_recovery_instance(k, p, z, seed)
    try:
        est, _ = admm.solve_noiseless(inst.W, inst.dictionary, cfg)
    except (ShapeError, admm.DivergenceError) as exc:
        log.info("trial k=%d p=%d z=%d failed: %s", k, p, z, exc)
        return float("inf")
    return relative_error(est, inst.true_motions)


@dataclass
class PhaseGridResult:
    k: int
    p_values: tuple
    z_values: tuple
    frequency: np.ndarray  # (len(p_values), len(z_values))
    trials: int
    seed: int

    def rows(self):
        for a, p in enumerate(self.p_values):
            for b, z in enumerate(self.z_values):
                yield {"k": self.k, "p": p, "z": z, "trials": self.trials,
                       "successes": int(round(self.frequency[a, b] * self.trials)),
                       "frequency": self.frequency[a, b]}


def _cell_task(args):
    k, p, z, seed, trials, cfg = args
    hits = 0
    for t in range(trials):
        trial_seed = int(np.random.SeedSequence([seed, p, z, t]).generate_state(1)[0])
        if recovery_trial(k, p, z, trial_seed, cfg) < RECOVERY_THRESHOLD:
            hits += 1
    return hits


def phase_grid(k: int = 50, p_values=DEFAULT_P_VALUES, z_values=DEFAULT_Z_VALUES, trials: int = 20,
               seed: int = 0, cfg: SolverConfig = RECOVERY_CONFIG) -> PhaseGridResult:
    """Exact-recovery frequency over a (p, z) grid."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p_values, z_values = tuple(int(p) for p in p_values), tuple(int(z) for z in z_values)
    tasks = [(k, p, z, seed, trials, cfg) for p in p_values for z in z_values if z <= k]
    counts = dict(zip([(t[1], t[2]) for t in tasks], parallel_map(_cell_task, tasks)))
    freq = np.zeros((len(p_values), len(z_values)))
    for a, p in enumerate(p_values):
        for b, z in enumerate(z_values):
            freq[a, b] = counts.get((p, z), 0) / trials
    return PhaseGridResult(k, p_values, z_values, freq, trials, seed)


def grid_regions(p_values, z_values):
    """Masks for the easy (many landmarks, sparse) and hard triangular thirds.

    Cells are placed on the unit square by their index along each axis;
    the easy third has ``z_pos - p_pos <= -1/3`` and the hard third
    ``z_pos - p_pos >= 1/3``.
    """
    u = np.linspace(0.0, 1.0, len(p_values))[:, None]
    v = np.linspace(0.0, 1.0, len(z_values))[None, :]
    d = v - u
    return d <= -1.0 / 3.0 + 1e-12, d >= 1.0 / 3.0 - 1e-12


# -- skeleton shapes ----------------------------------------------------------

JOINT_NAMES = (
    "pelvis", "thorax", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)
JOINT_PARENTS = (-1, 0, 1, 1, 3, 4, 1, 6, 7, 0, 9, 10, 0, 12, 13)
# offsets from the parent joint in the parent frame (y up, x to the left)
JOINT_OFFSETS = np.array([
    [0.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.25, 0.0],
    [0.18, 0.0, 0.0], [0.0, -0.28, 0.0], [0.0, -0.25, 0.0],
    [-0.18, 0.0, 0.0], [0.0, -0.28, 0.0], [0.0, -0.25, 0.0],
    [0.1, 0.0, 0.0], [0.0, -0.42, 0.0], [0.0, -0.4, 0.0],
    [-0.1, 0.0, 0.0], [0.0, -0.42, 0.0], [0.0, -0.4, 0.0],
])
# how freely each joint's bone may swing, relative to the pose amplitude
JOINT_MOBILITY = np.array([0.3, 0.3, 0.3, 0.15, 1.0, 1.0, 0.15, 1.0, 1.0, 0.15, 1.0, 1.0, 0.15, 1.0, 1.0])


def skeleton_pose(local_rotvecs) -> np.ndarray:
    """Forward kinematics: per-joint rotation vectors to a 3x15 shape.

    Joint ``j`` sits at ``pos[parent] + G[parent] @ offset[j]`` where ``G``
    accumulates local rotations from the root; entry 0 orients the whole
    body.
    """
    rv = np.asarray(local_rotvecs, dtype=float).reshape(len(JOINT_NAMES), 3)
    local = _Rot.from_rotvec(rv).as_matrix()
    G = np.empty_like(local)
    pos = np.zeros((len(JOINT_NAMES), 3))
    for j, parent in enumerate(JOINT_PARENTS):
        if parent < 0:
            G[j] = local[j]
            continue
        pos[j] = pos[parent] + G[parent] @ JOINT_OFFSETS[j]
        G[j] = G[parent] @ local[j]
    return centralize(pos.T)[0]


def random_rotvecs(rng: np.random.Generator, amplitude: float) -> np.ndarray:
    return amplitude * JOINT_MOBILITY[:, None] * rng.normal(size=(len(JOINT_NAMES), 3))


@dataclass
class SkeletonMotions:
    """A few "motion categories", each a key pose that samples jitter around."""

    keys: np.ndarray  # (m, 15, 3) rotation vectors
    jitter: float

    @classmethod
    def random(cls, rng, n_categories: int = 8, amplitude: float = 0.9, jitter: float = 0.15):
        keys = np.stack([random_rotvecs(rng, amplitude) for _ in range(n_categories)])
        keys[:, 0] = 0.0  # categories differ in articulation, not global heading
        return cls(keys, jitter)

    def sample(self, rng, category: int | None = None, spread: float = 1.0) -> np.ndarray:
        if category is None:
            category = int(rng.integers(len(self.keys)))
        rv = spread * self.keys[category] + random_rotvecs(rng, self.jitter)
        rv[0] = 0.0
        return skeleton_pose(rv)


def skeleton_motions(seed: int, n_categories: int = 8, amplitude: float = 0.9) -> SkeletonMotions:
    """The motion categories behind ``skeleton_training_set(seed, ...)``."""
    return SkeletonMotions.random(derive_rng(seed, 0), n_categories, amplitude)


def skeleton_training_set(seed: int, n: int = 600, n_categories: int = 8,
                          amplitude: float = 0.9) -> tuple[TrainingSet, SkeletonMotions]:
    rng = derive_rng(seed, 0)
    motions = SkeletonMotions.random(rng, n_categories, amplitude)
    shapes = np.stack([motions.sample(rng, j % n_categories) for j in range(n)])
    return build_training_set(shapes), motions


def skeleton_dictionary(seed: int, k: int = 64, n: int = 600, lam: float = 0.01,
                        outer_iters: int = 100) -> tuple[ShapeDictionary, TrainingSet, SkeletonMotions]:
    train, motions = skeleton_training_set(seed, n)
    res = learn_dictionary(train, DictLearnConfig(k=k, lam=lam, outer_iters=outer_iters, seed=seed))
    return res.dictionary, train, motions


# -- 2D observations ------------------------------------------------------------


def orbit_rotation(frame: int, frames_per_rev: int) -> np.ndarray:
    return rotation_about_y(2.0 * np.pi * frame / frames_per_rev)


def simulate_camera_orbit(shape_sequence, frames_per_rev: int) -> list:
    """Orthographic projections from a camera circling the vertical axis."""
    if frames_per_rev < 1:
        raise ValueError("frames_per_rev must be >= 1")
    cam = CameraWeakPerspective(1.0)
    return [project_weak_perspective(S, cam, orbit_rotation(t, frames_per_rev))
            for t, S in enumerate(shape_sequence)]


def add_gaussian_noise(W: Landmarks2D, sigma: float, seed: int) -> Landmarks2D:
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return W
    rng = np.random.default_rng(seed)
    pts = W.points.copy()
    pts[:, W.visibility] += sigma * rng.normal(size=(2, int(W.visibility.sum())))
    return W.with_points(pts)


def outlier_box(W: Landmarks2D, expand: float = 0.2):
    """Bounding box of the visible landmarks, widened by ``expand`` of its size."""
    pts = W.visible_points
    lo, hi = pts.min(axis=1), pts.max(axis=1)
    pad = 0.5 * expand * (hi - lo)
    return lo - pad, hi + pad


def add_outliers(W: Landmarks2D, fraction: float, seed: int, range_box=None):
    """Replace ``floor(fraction * p + 0.5)`` visible landmarks by uniform points.

    Returns the corrupted landmarks and the boolean mask of replaced ones.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    count = int(np.floor(fraction * W.p + 0.5))
    visible = np.nonzero(W.visibility)[0]
    count = min(count, len(visible))
    mask = np.zeros(W.p, dtype=bool)
    if count == 0:
        return W, mask
    rng = np.random.default_rng(seed)
    lo, hi = outlier_box(W) if range_box is None else map(np.asarray, range_box)
    idx = np.sort(rng.choice(visible, size=count, replace=False))
    pts = W.points.copy()
    pts[:, idx] = rng.uniform(lo[:, None], hi[:, None], size=(2, count))
    mask[idx] = True
    return W.with_points(pts), mask


@dataclass
class PoseInstance:
    W: Landmarks2D  # raw image coordinates (uncentred)
    truth: np.ndarray  # 3 x p shape in the camera frame
    rotation: np.ndarray
    outliers: np.ndarray | None = None


def make_pose_instance(motions: SkeletonMotions, seed: int, difficulty: str = "mixed",
                       scale: float = 1.0) -> PoseInstance:
    """One skeleton seen by a weak-perspective camera.

    ``easy``: near-frontal view of a mildly articulated pose; ``hard``: the
    subject faces away (azimuth in [pi/2, 3pi/2]) and the pose is pushed
    further from the category mean; ``mixed``: any azimuth.
    """
    rng = np.random.default_rng(seed)
    if difficulty == "easy":
        S = motions.sample(rng, spread=0.5)
        az = rng.uniform(-np.pi / 6, np.pi / 6)
    elif difficulty == "hard":
        S = motions.sample(rng, spread=1.3)
        az = rng.uniform(0.5 * np.pi, 1.5 * np.pi)
    elif difficulty == "mixed":
        S = motions.sample(rng)
        az = rng.uniform(0.0, 2.0 * np.pi)
    else:
        raise ValueError(f"unknown difficulty {difficulty!r}")
    elev = rng.uniform(-np.pi / 12, np.pi / 12)
    c, s = np.cos(elev), np.sin(elev)
    R = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]) @ rotation_about_y(az)
    t = rng.uniform(-1.0, 1.0, size=2)
    W = project_weak_perspective(S, CameraWeakPerspective(scale), R, t)
    return PoseInstance(W, R @ S, R)


# -- pipelines ------------------------------------------------------------------


class NormalizedProblem(NamedTuple):
    W: Landmarks2D
    dictionary: ShapeDictionary
    scale: float  # observations were divided by this
    offset: np.ndarray  # visible-landmark mean removed from W, shape (2,)
    basis_scales: np.ndarray  # each centred basis was divided by these


def prepare_problem(W: Landmarks2D, dictionary: ShapeDictionary, center: bool = True) -> NormalizedProblem:
    """Normalise observations and bases to unit average variance.

    ``W`` is centred over its visible landmarks unless ``center`` is False
    (the robust model estimates the translation itself); its scale is
    always computed from the centred points. Each basis is centralised and
    scaled independently.
    """
    Wc, means = centralize(W)
    _, scale = normalize_unit_variance(Wc)
    Wn = Wc if center else W
    pts = Wn.points.copy()
    pts[:, W.visibility] /= scale
    bases = dictionary.centralized().bases
    nb = np.sqrt(np.mean(bases**2, axis=(1, 2)))
    nb = np.where(nb > 0, nb, 1.0)
    mean = dictionary.mean_shape
    if mean is not None:
        mean = centralize(mean)[0]
        mean = mean / np.sqrt(np.mean(mean**2))
    D = ShapeDictionary(bases / nb[:, None, None], dictionary.nonneg, mean)
    return NormalizedProblem(Wn.with_points(pts), D, float(scale), np.asarray(means, dtype=float), nb)


@dataclass
class PipelineResult:
    shape: np.ndarray  # camera frame, normalised units
    coefficients: np.ndarray
    rotation: np.ndarray | None = None
    rotations: np.ndarray | None = None
    E: np.ndarray | None = None
    T: np.ndarray | None = None
    report: admm.SolverReport | None = None
    objective: float = float("nan")
    degenerate: bool = False


PIPELINES = (
    "convex", "convex-refine", "altern", "altern-stiefel", "direct",
    "robust-convex", "robust-convex-refine", "robust-altern",
)


def run_pipeline(name: str, W: Landmarks2D, dictionary: ShapeDictionary, alpha: float = 1.0,
                 beta: float = 0.1, cfg: SolverConfig | None = None, normalize: bool = True) -> PipelineResult:
    """Run one named reconstruction pipeline on raw observations.

    convex / direct
        Penalised (resp. noiseless) convex program, direct reconstruction.
    convex-refine
        Convex program, rotation synchronisation, alternating refinement.
    altern / altern-stiefel
        Alternating minimisation from the mean shape, with the SVD
        (resp. Stiefel-gradient) rotation update.
    robust-*
        The same with the sparse outlier term and a free translation.
    """
    if name not in PIPELINES:
        raise ValueError(f"unknown pipeline {name!r}; choose from {', '.join(PIPELINES)}")
    cfg = cfg or SolverConfig(alpha=alpha)
    is_robust = name.startswith("robust-")
    if normalize:
        norm = prepare_problem(W, dictionary, center=not is_robust)
        Wn, D = norm.W, norm.dictionary
    else:
        Wn, D = (W if is_robust else centralize(W)[0]), dictionary
    if name in ("convex", "direct"):
        solver = admm.solve_penalized if name == "convex" else admm.solve_noiseless
        M, report = solver(Wn, D, cfg)
        shape, c, rots = reconstruct.direct_reconstruct(M, D)
        return PipelineResult(shape, c, rotations=rots, report=report, objective=report.objective)
    if name == "convex-refine":
        M, report = admm.solve_penalized(Wn, D, cfg)
        ref = reconstruct.refine_reconstruct(M, Wn, D, alpha)
        return PipelineResult(ref.camera_shape, ref.c, rotation=ref.R, report=report,
                              objective=ref.post_objective, degenerate=ref.degenerate)
    if name in ("altern", "altern-stiefel"):
        c0, R0 = reconstruct.mean_shape_init(D)
        mode = "svd-projection" if name == "altern" else "stiefel-gradient"
        res = reconstruct.alternating_minimize(Wn, D, c0, R0, alpha, mode)
        shape = res.R @ np.tensordot(res.c, D.bases, axes=1)
        return PipelineResult(shape, res.c, rotation=res.R, report=_alternating_report(res),
                              objective=res.objective)
    rcfg = robust.RobustConfig(alpha=alpha, beta=beta, mu0=cfg.mu0, tol=cfg.tol, max_iter=cfg.max_iter,
                               adaptive_mu=cfg.adaptive_mu, mu_ratio=cfg.mu_ratio, mu_factor=cfg.mu_factor,
                               mu_every=cfg.mu_every)
    if name == "robust-convex":
        sol = robust.solve_robust(Wn, D, rcfg)
        shape, c, rots = reconstruct.direct_reconstruct(sol.motions, D)
        return PipelineResult(shape, c, rotations=rots, E=sol.E, T=sol.T, report=sol.report,
                              objective=sol.report.objective)
    if name == "robust-convex-refine":
        sol = robust.solve_robust(Wn, D, rcfg)
        ref = reconstruct.refine_reconstruct(sol.motions, Wn, D, alpha, beta=beta, init_E=sol.E, init_T=sol.T)
        return PipelineResult(ref.camera_shape, ref.c, rotation=ref.R, E=ref.E, T=ref.T, report=sol.report,
                              objective=ref.post_objective, degenerate=ref.degenerate)
    c0, R0 = reconstruct.mean_shape_init(D)
    res = reconstruct.alternating_minimize(Wn, D, c0, R0, alpha, "svd-projection", beta=beta)
    shape = res.R @ np.tensordot(res.c, D.bases, axes=1)
    return PipelineResult(shape, res.c, rotation=res.R, E=res.E, T=res.T, report=_alternating_report(res),
                          objective=res.objective)


def _alternating_report(res) -> admm.SolverReport:
    # no primal/dual split for the alternating scheme; residuals stay NaN
    return admm.SolverReport(res.iterations, float("nan"), float("nan"), res.objective, res.converged,
                             list(res.trace))


def normalized_error(estimate, truth) -> float:
    """3D error with the truth scaled to unit average variance."""
    t0, _ = centralize(truth)
    _, s = normalize_unit_variance(t0)
    return error_3d(estimate, t0 / s)


@dataclass
class ComparisonRow:
    pipeline: str
    instances: int
    mean_error_3d: float
    mean_objective: float
    converged_fraction: float
    mean_seconds: float = float("nan")


def compare_pipelines(instances, pipelines, dictionary: ShapeDictionary, alpha: float = 1.0,
                      beta: float = 0.1, timing: bool = False, per_instance: list | None = None):
    """Run every pipeline on every instance and aggregate.

    ``instances`` are :class:`PoseInstance` objects (or anything with ``W``
    and ``truth``). When ``per_instance`` is a list, one dict per
    (pipeline, instance) run is appended to it.
    """
    instances = list(instances)
    if not instances:
        raise ValueError("no instances")
    for name in pipelines:
        if name not in PIPELINES:
            raise ValueError(f"unknown pipeline {name!r}")
    rows = []
    for name in pipelines:
        errs, objs, conv, secs = [], [], [], []
        for j, inst in enumerate(instances):
            t0 = time.perf_counter()
            res = run_pipeline(name, inst.W, dictionary, alpha, beta)
            secs.append(time.perf_counter() - t0)
            err = normalized_error(res.shape, inst.truth)
            errs.append(err)
            objs.append(res.objective)
            conv.append(res.report.converged if res.report is not None else True)
            if per_instance is not None:
                per_instance.append({"pipeline": name, "instance": j, "error_3d": err,
                                     "objective": res.objective})
        rows.append(ComparisonRow(name, len(instances), float(np.mean(errs)), float(np.mean(objs)),
                                  float(np.mean(conv)), float(np.mean(secs)) if timing else float("nan")))
    return rows
