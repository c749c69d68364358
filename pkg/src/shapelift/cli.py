"""Command-line interface.

Exit codes: 0 success, 1 bad input (malformed file, size mismatch, bad
option), 2 solver did not converge (outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import plotting
from .admm import DivergenceError, SolverConfig
from .dictlearn import DictLearnConfig, build_training_set, learn_dictionary
from .io import (
    DictionaryFile,
    FileFormatError,
    ProblemFile,
    ResultFile,
    ShapeFile,
    ensure_dir,
    load_json,
    load_shape_dir,
)
from .shapes import ShapeDictionary, ShapeError, centralize, normalize_unit_variance

log = logging.getLogger("shapelift")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2

PLAIN_PIPELINES = ("convex", "convex-refine", "altern", "altern-stiefel", "direct")
ROBUST_PIPELINES = ("robust-convex", "robust-convex-refine", "robust-altern")

PHASE_COLUMNS = ("k", "p", "z", "trials", "successes", "frequency")
COMPARE_COLUMNS = ("pipeline", "instances", "mean_error_3d", "mean_objective", "converged_fraction")
INSTANCE_COLUMNS = ("pipeline", "instance", "file", "error_3d", "objective")


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors are bad input (exit 1); exit 2 is reserved for non-convergence."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def _png_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


# -- solve --------------------------------------------------------------------


def _load_pair(problem_path, dict_path):
    prob = ProblemFile.load(problem_path)
    dfile = DictionaryFile.load(dict_path)
    if dfile.dictionary.p != prob.p:
        raise InputError(f"{dict_path}: dictionary has p={dfile.dictionary.p}, problem has p={prob.p}")
    return prob, dfile.dictionary


def _solve(args, pipeline: str, robust: bool) -> int:
    prob, D = _load_pair(args.problem, args.dict)
    cfg = SolverConfig(alpha=args.alpha, tol=args.tol, max_iter=args.max_iter)
    meta = {"pipeline": pipeline, "alpha": args.alpha, "tol": args.tol, "max_iter": args.max_iter}
    if robust:
        meta["beta"] = args.beta
    W = prob.landmarks
    if args.normalize:
        norm = ex.prepare_problem(W, D, center=not robust)
        W, D = norm.W, norm.dictionary
        meta["normalization"] = {"scale": norm.scale, "offset": norm.offset, "basis_scales": norm.basis_scales}
    res = ex.run_pipeline(pipeline, W, D, args.alpha, getattr(args, "beta", 0.1), cfg, normalize=False)
    if prob.truth_shape is not None:
        meta["error_3d"] = ex.normalized_error(res.shape, prob.truth_shape)
    report = res.report.as_dict()
    report["objective"] = res.objective
    out = ResultFile(res.coefficients, res.shape, report, res.rotation, res.rotations, res.E, res.T, meta)
    out.save(args.out)
    if not report["converged"]:
        log.warning("solver did not converge; result written to %s", args.out)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_solve(args) -> int:
    return _solve(args, args.pipeline, robust=False)


def cmd_solve_robust(args) -> int:
    return _solve(args, args.pipeline, robust=True)


# -- dictionary learning ------------------------------------------------------


def cmd_learn_dict(args) -> int:
    shapes = load_shape_dir(args.train)
    cfg = DictLearnConfig(k=args.k, lam=args.lam, outer_iters=args.outer_iters,
                          inner_iters=args.inner_iters, seed=args.seed, nonneg=not args.signed)
    res = learn_dictionary(build_training_set(shapes), cfg)
    meta = {"lambda": args.lam, "seed": args.seed, "training_shapes": int(shapes.shape[0]),
            "final_cost": res.cost_trace[-1], "outer_iterations": len(res.cost_trace) - 1}
    DictionaryFile(res.dictionary, normalized=True, meta=meta).save(args.out)
    return EXIT_OK


# -- experiments --------------------------------------------------------------


def cmd_phase_grid(args) -> int:
    if args.k < 1 or min(args.p) < 1 or min(args.z) < 1:
        raise InputError("k, p and z values must be positive")
    res = ex.phase_grid(args.k, args.p, args.z, args.trials, args.seed)
    write_csv(args.out, PHASE_COLUMNS, list(res.rows()))
    if not args.no_plot:
        plotting.plot_phase_grid(res.p_values, res.z_values, res.frequency, _png_path(args.out), res.k)
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = ensure_dir(args.out)
    if args.n < 1 or args.train_size < 0:
        raise InputError("--n must be >= 1 and --train-size >= 0")
    if args.train_size > 0:
        train, motions = ex.skeleton_training_set(args.seed, args.train_size)
        tdir = ensure_dir(out / "train")
        for j, S in enumerate(train.shapes):
            ShapeFile(S, {"index": j}).save(tdir / f"shape_{j:04d}.json")
    else:
        motions = ex.skeleton_motions(args.seed)
    idir = ensure_dir(out / "instances")
    if args.mode == "orbit":
        rng = ex.derive_rng(args.seed, 1)
        seq = [motions.sample(rng) for _ in range(args.n)]
        views = ex.simulate_camera_orbit(seq, args.frames_per_rev)
        for t, (S, W) in enumerate(zip(seq, views)):
            R = ex.orbit_rotation(t, args.frames_per_rev)
            meta = {"mode": "orbit", "frame": t, "frames_per_rev": args.frames_per_rev, "seed": args.seed}
            ProblemFile(W, R @ S, meta).save(idir / f"frame_{t:04d}.json")
        return EXIT_OK
    for j in range(args.n):
        inst_seed = int(np.random.SeedSequence([args.seed, 2, j]).generate_state(1)[0])
        inst = ex.make_pose_instance(motions, inst_seed, args.difficulty)
        meta = {"mode": args.mode, "index": j, "seed": args.seed, "difficulty": args.difficulty}
        W = inst.W
        if args.mode == "noise":
            W = ex.add_gaussian_noise(W, args.sigma * _unit_scale(W), inst_seed + 1)
            meta["sigma"] = args.sigma
        else:
            W, mask = ex.add_outliers(W, args.fraction, inst_seed + 1)
            meta["fraction"] = args.fraction
            meta["outliers"] = [bool(b) for b in mask]
        ProblemFile(W, inst.truth, meta).save(idir / f"instance_{j:04d}.json")
    return EXIT_OK


def _unit_scale(W) -> float:
    # noise levels are given in normalised units of the clean observations
    return normalize_unit_variance(centralize(W)[0])[1]


def _load_instances(directory):
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise InputError(f"{directory}: no .json problem files found")
    insts = []
    for path in paths:
        pf = ProblemFile.load(path)
        if pf.truth_shape is None:
            raise InputError(f"{path}: truth_shape is required for comparison")
        insts.append(ex.PoseInstance(pf.landmarks, pf.truth_shape, np.eye(3)))
    return paths, insts


def cmd_compare(args) -> int:
    paths, insts = _load_instances(args.instances)
    D = DictionaryFile.load(args.dict).dictionary
    for path, inst in zip(paths, insts):
        if inst.W.p != D.p:
            raise InputError(f"{path}: problem has p={inst.W.p}, dictionary has p={D.p}")
    for name in args.pipelines:
        if name not in ex.PIPELINES:
            raise InputError(f"unknown pipeline {name!r}; choose from {', '.join(ex.PIPELINES)}")
    per = []
    rows = ex.compare_pipelines(insts, args.pipelines, D, args.alpha, args.beta, per_instance=per)
    write_csv(args.out, COMPARE_COLUMNS, [vars(r) for r in rows])
    if args.per_instance:
        for rec in per:
            rec["file"] = paths[rec["instance"]].name
        write_csv(args.per_instance, INSTANCE_COLUMNS, per)
    if not args.no_plot:
        plotting.plot_comparison([r.pipeline for r in rows], [r.mean_error_3d for r in rows],
                                 _png_path(args.out))
    return EXIT_OK


# -- normalisation ------------------------------------------------------------


def cmd_normalize(args) -> int:
    doc = load_json(args.input)
    if "bases" in doc:
        dfile = DictionaryFile.from_dict(doc, str(args.input))
        D = dfile.dictionary.centralized()
        scales = np.sqrt(np.mean(D.bases**2, axis=(1, 2)))
        scales = np.where(scales > 0, scales, 1.0)
        mean = D.mean_shape
        if mean is not None:
            mean, _ = normalize_unit_variance(centralize(mean)[0])
        meta = dict(dfile.meta)
        meta["normalization"] = {"basis_scales": scales}
        nd = ShapeDictionary(D.bases / scales[:, None, None], D.nonneg, mean)
        DictionaryFile(nd, normalized=False, meta=meta).save(args.output)
        return EXIT_OK
    prob = ProblemFile.from_dict(doc, str(args.input))
    Wc, offset = centralize(prob.landmarks)
    Wn, scale = normalize_unit_variance(Wc)
    meta = dict(prob.meta)
    norm = {"scale": scale, "offset": offset}
    truth = prob.truth_shape
    if truth is not None:
        truth, tscale = normalize_unit_variance(centralize(truth)[0])
        norm["truth_scale"] = tscale
    meta["normalization"] = norm
    ProblemFile(Wn, truth, meta).save(args.output)
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


def _solver_args(sp, pipelines, default):
    sp.add_argument("--problem", required=True, help="ProblemFile JSON")
    sp.add_argument("--dict", required=True, help="DictionaryFile JSON")
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.add_argument("--max-iter", type=int, default=500)
    sp.add_argument("--pipeline", choices=pipelines, default=default)
    sp.add_argument("--no-normalize", dest="normalize", action="store_false",
                    help="use the inputs as given instead of unit average variance")
    sp.add_argument("--out", required=True, help="ResultFile JSON to write")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="shapelift", description="3D shape estimation from 2D landmarks.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("solve", help="reconstruct one shape")
    _solver_args(sp, PLAIN_PIPELINES, "convex")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("solve-robust", help="reconstruct with outlier correction and translation")
    _solver_args(sp, ROBUST_PIPELINES, "robust-convex")
    sp.add_argument("--beta", type=float, default=0.1)
    sp.set_defaults(func=cmd_solve_robust)

    sp = sub.add_parser("learn-dict", help="learn a nonnegative sparse shape dictionary")
    sp.add_argument("--train", required=True, help="directory of shape JSON files")
    sp.add_argument("--k", type=int, default=128)
    sp.add_argument("--lambda", dest="lam", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--outer-iters", type=int, default=200)
    sp.add_argument("--inner-iters", type=int, default=500)
    sp.add_argument("--signed", action="store_true", help="drop the nonnegativity constraint on codes")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_learn_dict)

    sp = sub.add_parser("phase-grid", help="exact-recovery frequency over a (p, z) grid")
    sp.add_argument("--k", type=int, default=50)
    sp.add_argument("--p", type=_int_list, default=list(ex.DEFAULT_P_VALUES))
    sp.add_argument("--z", type=_int_list, default=list(ex.DEFAULT_Z_VALUES))
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-plot", action="store_true")
    sp.add_argument("--out", required=True, help="CSV path; the figure goes next to it as .png")
    sp.set_defaults(func=cmd_phase_grid)

    sp = sub.add_parser("simulate", help="generate synthetic training shapes and test problems")
    sp.add_argument("--mode", choices=("orbit", "noise", "outliers"), required=True)
    sp.add_argument("--n", type=int, default=20, help="instances (or frames for orbit)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--train-size", type=int, default=600)
    sp.add_argument("--frames-per-rev", type=int, default=20)
    sp.add_argument("--sigma", type=float, default=0.02, help="noise std in normalised units")
    sp.add_argument("--fraction", type=float, default=0.2, help="fraction of landmarks replaced")
    sp.add_argument("--difficulty", choices=("easy", "hard", "mixed"), default="mixed")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("compare", help="mean 3D error of several pipelines")
    sp.add_argument("--instances", required=True, help="directory of ProblemFiles with truth_shape")
    sp.add_argument("--dict", required=True)
    sp.add_argument("--pipelines", type=_str_list, default=["convex", "convex-refine", "altern"])
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--beta", type=float, default=0.1)
    sp.add_argument("--per-instance", help="optional CSV with one row per (pipeline, instance)")
    sp.add_argument("--no-plot", action="store_true")
    sp.add_argument("--out", required=True, help="CSV path; the figure goes next to it as .png")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("normalize", help="scale a problem or dictionary to unit average variance")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", dest="output", required=True)
    sp.set_defaults(func=cmd_normalize)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (FileFormatError, InputError, ShapeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
