import numpy as np
import pytest

from oracles import penalized_objective
from shapelift import experiments as ex
from shapelift.admm import MotionStack, SolverConfig, objective_penalized
from shapelift.shapes import (
    CameraWeakPerspective,
    Landmarks2D,
    project_weak_perspective,
    rotation_about_y,
    rotation_is_valid,
)

# -- recovery instances --------------------------------------------------------------------


def test_recovery_instance_full_support():
    inst = ex.make_recovery_instance(6, 10, 6, 1)
    assert np.all(np.linalg.norm(inst.true_motions.blocks, axis=(1, 2)) > 0)


def test_recovery_instance_support_and_residual():
    inst = ex.make_recovery_instance(20, 15, 4, 2)
    nz = np.nonzero(np.linalg.norm(inst.true_motions.blocks, axis=(1, 2)))[0]
    np.testing.assert_array_equal(nz, inst.support)
    assert len(nz) == 4
    W = np.einsum("iab,ibp->ap", inst.true_motions.blocks, inst.dictionary.bases)
    np.testing.assert_array_equal(W, inst.W.points)


def test_recovery_instance_deterministic():
    a, b = ex.make_recovery_instance(10, 8, 3, 7), ex.make_recovery_instance(10, 8, 3, 7)
    np.testing.assert_array_equal(a.W.points, b.W.points)
    np.testing.assert_array_equal(a.true_motions.blocks, b.true_motions.blocks)
    np.testing.assert_array_equal(a.dictionary.bases, b.dictionary.bases)


@pytest.mark.parametrize("mode", ["zyz", "haar"])
def test_recovery_blocks_are_scaled_stiefel(mode):
    inst = ex.make_recovery_instance(12, 5, 12, 3, rotation_mode=mode)
    for M in inst.true_motions.blocks:
        c2 = np.sum(M**2) / 2
        np.testing.assert_allclose(M @ M.T, c2 * np.eye(2), atol=1e-10)
        assert 0 < np.sqrt(c2) <= 1


@pytest.mark.parametrize("k,p,z", [(5, 5, 0), (5, 5, 6), (5, 0, 1)])
def test_recovery_instance_rejects_ranges(k, p, z):
    with pytest.raises(ValueError):
        ex.make_recovery_instance(k, p, z, 0)


def test_noiseless_objective_is_alpha_sum_c():
    inst = ex.make_recovery_instance(8, 12, 3, 11)
    c = np.sqrt(np.sum(inst.true_motions.blocks**2, axis=(1, 2)) / 2)
    for alpha in (0.5, 1.0, 2.0):
        obj = objective_penalized(inst.W, inst.dictionary, inst.true_motions, alpha)
        assert obj == pytest.approx(alpha * c.sum(), rel=1e-10)
        ref = penalized_objective(inst.W.points, inst.dictionary.bases, inst.true_motions.blocks, alpha)
        assert obj == pytest.approx(ref, rel=1e-10)


# -- relative error --------------------------------------------------------------------------


def test_relative_error_examples(rng):
    T = MotionStack(rng.normal(size=(4, 2, 3)))
    assert ex.relative_error(T, T) == 0.0
    assert ex.relative_error(MotionStack.zeros(4), T) == pytest.approx(1.0, abs=1e-15)
    assert ex.relative_error(MotionStack(1.1 * T.blocks), T) == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(ValueError):
        ex.relative_error(T, MotionStack.zeros(4))


# -- phase grid --------------------------------------------------------------------------------


def test_phase_grid_small_cells():
    res = ex.phase_grid(k=10, p_values=(30,), z_values=(1, 10), trials=3, seed=4)
    assert res.frequency.shape == (1, 2)
    assert np.all((0 <= res.frequency) & (res.frequency <= 1))
    assert res.frequency[0, 0] == 1.0
    rows = list(res.rows())
    assert [(r["p"], r["z"]) for r in rows] == [(30, 1), (30, 10)]
    assert rows[0]["successes"] == 3 and rows[0]["trials"] == 3


def test_phase_grid_underdetermined_cell_fails():
    res = ex.phase_grid(k=50, p_values=(5,), z_values=(45,), trials=5, seed=0)
    assert res.frequency[0, 0] <= 0.2


def test_phase_grid_deterministic():
    a = ex.phase_grid(k=8, p_values=(6, 12), z_values=(2, 5), trials=2, seed=9)
    b = ex.phase_grid(k=8, p_values=(6, 12), z_values=(2, 5), trials=2, seed=9)
    np.testing.assert_array_equal(a.frequency, b.frequency)


def test_phase_grid_validation():
    with pytest.raises(ValueError):
        ex.phase_grid(trials=0)
    # cells with z > k are skipped and record zero
    res = ex.phase_grid(k=3, p_values=(10,), z_values=(5,), trials=1)
    assert res.frequency[0, 0] == 0.0


def test_grid_regions_are_disjoint_triangles():
    easy, hard = ex.grid_regions(ex.DEFAULT_P_VALUES, ex.DEFAULT_Z_VALUES)
    assert not np.any(easy & hard)
    assert easy[-1, 0] and hard[0, -1]
    assert not easy[0, 0] and not hard[-1, -1]


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("SHAPELIFT_THREADS", "1")
    assert ex.worker_count() == 1
    monkeypatch.setenv("SHAPELIFT_THREADS", "3")
    assert 1 <= ex.worker_count() <= 3


# -- camera orbit, noise, outliers ---------------------------------------------------------------


def test_orbit_frame_zero_is_front_projection(rng):
    S = rng.normal(size=(3, 7))
    W = ex.simulate_camera_orbit([S], 12)[0]
    np.testing.assert_allclose(W.points, S[:2], atol=1e-15)


def test_orbit_half_revolution_negates_x(rng):
    S = rng.normal(size=(3, 7))
    W = ex.simulate_camera_orbit([S, S, S], 4)[2]
    np.testing.assert_allclose(W.points[0], -S[0], atol=1e-12)
    np.testing.assert_allclose(W.points[1], S[1], atol=1e-12)


def test_orbit_matches_explicit_projection(rng):
    seq = [rng.normal(size=(3, 5)) for _ in range(9)]
    out = ex.simulate_camera_orbit(seq, 7)
    for t, (S, W) in enumerate(zip(seq, out)):
        R = rotation_about_y(2 * np.pi * t / 7)
        ref = project_weak_perspective(S, CameraWeakPerspective(1.0), R)
        np.testing.assert_allclose(W.points, ref.points, atol=1e-14)
        assert rotation_is_valid(ex.orbit_rotation(t, 7))
    with pytest.raises(ValueError):
        ex.simulate_camera_orbit(seq, 0)


def test_noise_sigma_zero_unchanged(rng):
    W = Landmarks2D(rng.normal(size=(2, 6)))
    assert ex.add_gaussian_noise(W, 0.0, 1) is W
    a, b = ex.add_gaussian_noise(W, 0.1, 5), ex.add_gaussian_noise(W, 0.1, 5)
    np.testing.assert_array_equal(a.points, b.points)
    assert not np.array_equal(a.points, W.points)
    with pytest.raises(ValueError):
        ex.add_gaussian_noise(W, -1.0, 0)


def test_noise_skips_invisible(rng):
    vis = np.array([True, False, True, True])
    pts = rng.normal(size=(2, 4))
    pts[:, 1] = np.nan
    W = ex.add_gaussian_noise(Landmarks2D(pts, vis), 0.5, 0)
    assert np.all(np.isnan(W.points[:, 1]))


def test_outliers_zero_fraction(rng):
    W = Landmarks2D(rng.normal(size=(2, 15)))
    W2, mask = ex.add_outliers(W, 0.0, 3)
    np.testing.assert_array_equal(W2.points, W.points)
    assert not mask.any()


def test_outliers_count_and_box(rng):
    W = Landmarks2D(rng.normal(size=(2, 15)))
    W2, mask = ex.add_outliers(W, 0.2, 3)
    assert mask.sum() == 3
    changed = np.any(W2.points != W.points, axis=0)
    np.testing.assert_array_equal(changed, mask)
    lo, hi = ex.outlier_box(W)
    assert np.all((W2.points[:, mask] >= lo[:, None]) & (W2.points[:, mask] <= hi[:, None]))
    W3, mask3 = ex.add_outliers(W, 0.2, 3)
    np.testing.assert_array_equal(W3.points, W2.points)
    with pytest.raises(ValueError):
        ex.add_outliers(W, 1.5, 0)


@pytest.mark.parametrize("fraction,count", [(0.1, 2), (0.0333, 0), (0.0334, 1), (1.0, 15)])
def test_outlier_rounding_rule(rng, fraction, count):
    W = Landmarks2D(rng.normal(size=(2, 15)))
    assert ex.add_outliers(W, fraction, 0)[1].sum() == count


# -- skeleton data and pipelines ------------------------------------------------------------------


def test_skeleton_shapes_have_fixed_bone_lengths():
    m = ex.skeleton_motions(0)
    rng = np.random.default_rng(0)
    a, b = m.sample(rng), m.sample(rng)
    assert a.shape == (3, 15)
    par = np.array(ex.JOINT_PARENTS)
    for j in range(1, 15):
        la = np.linalg.norm(a[:, j] - a[:, par[j]])
        lb = np.linalg.norm(b[:, j] - b[:, par[j]])
        assert la == pytest.approx(lb, rel=1e-12)


def test_pose_instance_deterministic_and_projected():
    m = ex.skeleton_motions(0)
    a, b = ex.make_pose_instance(m, 3, "hard"), ex.make_pose_instance(m, 3, "hard")
    np.testing.assert_array_equal(a.W.points, b.W.points)
    assert rotation_is_valid(a.rotation)
    Wc = a.W.points - a.W.points.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(Wc, a.truth[:2] - a.truth[:2].mean(axis=1, keepdims=True), atol=1e-12)
    with pytest.raises(ValueError):
        ex.make_pose_instance(m, 0, "medium")


def test_prepare_problem_normalises(small_pose_model):
    D, _, motions = small_pose_model
    inst = ex.make_pose_instance(motions, 1)
    norm = ex.prepare_problem(inst.W, D)
    np.testing.assert_allclose(norm.W.points.mean(axis=1), 0, atol=1e-12)
    assert np.mean(norm.W.points**2) == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(np.mean(norm.dictionary.bases**2, axis=(1, 2)), 1.0, rtol=1e-12)
    raw = ex.prepare_problem(inst.W, D, center=False)
    np.testing.assert_allclose(raw.W.points * raw.scale, inst.W.points, atol=1e-12)


def test_compare_pipelines_smoke(small_pose_model):
    D, _, motions = small_pose_model
    inst = [ex.make_pose_instance(motions, 0, "easy")]
    per = []
    rows = ex.compare_pipelines(inst, ex.PIPELINES, D, timing=True, per_instance=per)
    assert [r.pipeline for r in rows] == list(ex.PIPELINES)
    for r in rows:
        assert r.instances == 1
        assert np.isfinite([r.mean_error_3d, r.mean_objective, r.mean_seconds]).all()
    assert len(per) == len(ex.PIPELINES)
    with pytest.raises(ValueError):
        ex.compare_pipelines(inst, ["convex", "magic"], D)
    with pytest.raises(ValueError):
        ex.compare_pipelines([], ["convex"], D)


def test_pipeline_rotation_fields(small_pose_model):
    D, _, motions = small_pose_model
    W = ex.make_pose_instance(motions, 2).W
    for name in ex.PIPELINES:
        res = ex.run_pipeline(name, W, D, cfg=SolverConfig(max_iter=50))
        assert (res.rotation is None) != (res.rotations is None), name
        assert (res.E is not None) == name.startswith("robust-"), name


def _mean_errors(pose_model, difficulty, base, n=20):
    D, _, motions = pose_model
    inst = [ex.make_pose_instance(motions, base + i, difficulty) for i in range(n)]
    return {r.pipeline: r.mean_error_3d for r in ex.compare_pipelines(inst, ["convex", "altern"], D)}


def test_easy_set_convex_and_altern_agree(pose_model):
    e = _mean_errors(pose_model, "easy", 8000)
    assert abs(e["convex"] - e["altern"]) <= 0.1 * max(e["convex"], e["altern"])


def test_hard_set_convex_beats_altern(pose_model):
    e = _mean_errors(pose_model, "hard", 8500)
    assert e["convex"] < e["altern"]


def test_noise_monotone_in_sigma(small_pose_model):
    # wide sweep; the fine-grained sweep is an acceptance criterion
    D, _, motions = small_pose_model
    inst = [ex.make_pose_instance(motions, 9100 + i, "easy") for i in range(20)]
    means = []
    for sigma in (0.0, 0.1, 0.2, 0.4):
        noisy = []
        for i, I in enumerate(inst):
            s = np.sqrt(np.mean(ex.centralize(I.W)[0].points ** 2))
            noisy.append(ex.PoseInstance(ex.add_gaussian_noise(I.W, sigma * s, 9100 + i), I.truth, I.rotation))
        means.append(ex.compare_pipelines(noisy, ["convex"], D)[0].mean_error_3d)
    assert all(b >= a for a, b in zip(means, means[1:])), means
