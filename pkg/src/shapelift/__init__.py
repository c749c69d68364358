"""3D shape estimation from 2D landmarks via a convex relaxation of sparse shape models."""

from .admm import (
    DivergenceError,
    MotionStack,
    SolverConfig,
    SolverReport,
    equality_residual,
    objective_penalized,
    solve_noiseless,
    solve_penalized,
)
from .dictlearn import DictLearnConfig, learn_dictionary, nonneg_sparse_code, pca_basis, representability_curve
from .prox import project_l1_ball, prox_spectral, shrink_singular_values
from .reconstruct import (
    alternating_minimize,
    direct_reconstruct,
    mean_shape_init,
    refine_reconstruct,
    sync_rotations,
)
from .robust import RobustConfig, RobustSolution, classify_outliers, solve_robust
from .shapes import (
    CameraWeakPerspective,
    Landmarks2D,
    ShapeDictionary,
    ShapeError,
    centralize,
    error_2d,
    error_3d,
    normalize_unit_variance,
    procrustes_align,
    project_weak_perspective,
)

__version__ = "0.1.0"

__all__ = [
    "CameraWeakPerspective", "DictLearnConfig", "DivergenceError", "Landmarks2D", "MotionStack",
    "RobustConfig", "RobustSolution", "ShapeDictionary", "ShapeError", "SolverConfig", "SolverReport",
    "alternating_minimize", "centralize", "classify_outliers", "direct_reconstruct", "equality_residual",
    "error_2d", "error_3d", "learn_dictionary", "mean_shape_init", "nonneg_sparse_code",
    "normalize_unit_variance", "objective_penalized", "pca_basis", "procrustes_align",
    "project_l1_ball", "project_weak_perspective", "prox_spectral", "refine_reconstruct",
    "representability_curve", "shrink_singular_values", "solve_noiseless", "solve_penalized",
    "solve_robust", "sync_rotations",
]
