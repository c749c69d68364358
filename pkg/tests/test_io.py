import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from shapelift.io import (
    DictionaryFile,
    FileFormatError,
    ProblemFile,
    ResultFile,
    ShapeFile,
    load_json,
    load_shape_dir,
)
from shapelift.shapes import Landmarks2D, ShapeDictionary

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


def report(**kw):
    rep = {"iterations": 12, "primal_residual": 1e-5, "dual_residual": 2e-5, "objective": 3.25, "converged": True}
    rep.update(kw)
    return rep


# -- round trips ---------------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(float, st.tuples(st.just(2), st.integers(1, 6)), elements=finite), st.data())
def test_problem_round_trip(tmp_path_factory, pts, data):
    p = pts.shape[1]
    vis = np.array(data.draw(st.lists(st.booleans(), min_size=p, max_size=p)))
    pts = pts.copy()
    pts[:, ~vis] = np.nan
    truth = data.draw(hnp.arrays(float, (3, p), elements=finite))
    path = tmp_path_factory.mktemp("io") / "problem.json"
    ProblemFile(Landmarks2D(pts, vis), truth, {"source": "test"}).save(path)
    back = ProblemFile.load(path)
    np.testing.assert_array_equal(back.landmarks.visibility, vis)
    np.testing.assert_array_equal(back.landmarks.points[:, vis], pts[:, vis])
    np.testing.assert_array_equal(back.truth_shape, truth)
    assert back.meta == {"source": "test"}


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(float, st.tuples(st.integers(1, 4), st.just(3), st.integers(1, 5)),
                  elements=st.floats(-1, 1, width=64)), st.booleans())
def test_dictionary_round_trip(tmp_path_factory, bases, nonneg):
    bases = bases / max(1.0, np.sqrt(np.sum(bases**2, axis=(1, 2))).max())
    path = tmp_path_factory.mktemp("io") / "dict.json"
    mean = np.arange(3.0 * bases.shape[2]).reshape(3, -1) / 7
    DictionaryFile(ShapeDictionary(bases, nonneg, mean), True).save(path)
    back = DictionaryFile.load(path)
    np.testing.assert_array_equal(back.dictionary.bases, bases)
    np.testing.assert_array_equal(back.dictionary.mean_shape, mean)
    assert back.dictionary.nonneg == nonneg and back.normalized


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.booleans(), st.data())
def test_result_round_trip(tmp_path_factory, k, p, single, data):
    arr = lambda shape: data.draw(hnp.arrays(float, shape, elements=finite))  # noqa: E731
    res = ResultFile(arr((k,)), arr((3, p)), report(objective=data.draw(finite)),
                     rotation=arr((3, 3)) if single else None,
                     rotations=None if single else arr((k, 3, 3)), E=arr((2, p)), T=arr((2,)))
    path = tmp_path_factory.mktemp("io") / "result.json"
    res.save(path)
    back = ResultFile.load(path)
    for name in ("coefficients", "shape", "rotation", "rotations", "E", "T"):
        a, b = getattr(res, name), getattr(back, name)
        assert (a is None) == (b is None)
        if a is not None:
            np.testing.assert_array_equal(a, b)
    assert back.report == res.report


def test_shape_round_trip_and_dir(tmp_path, rng):
    shapes = rng.normal(size=(3, 3, 4))
    for i, S in enumerate(shapes):
        ShapeFile(S).save(tmp_path / f"s{i:02d}.json")
    np.testing.assert_array_equal(load_shape_dir(tmp_path), shapes)
    ShapeFile(rng.normal(size=(3, 5))).save(tmp_path / "s99.json")
    with pytest.raises(FileFormatError, match="s99.json"):
        load_shape_dir(tmp_path)
    with pytest.raises(FileFormatError):
        load_shape_dir(tmp_path / "missing")


def test_nonfinite_report_values_become_null(tmp_path, rng):
    res = ResultFile(np.ones(2), rng.normal(size=(3, 4)), report(primal_residual=float("nan")),
                     rotation=np.eye(3))
    res.save(tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["report"]["primal_residual"] is None
    assert np.isnan(ResultFile.load(tmp_path / "r.json").report["primal_residual"])


# -- strict parsing ---------------------------------------------------------------------------


def _write(tmp_path, doc, name="f.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_problem_unknown_field_rejected(tmp_path):
    path = _write(tmp_path, {"p": 1, "landmarks": [[0], [1]], "extra": 3})
    with pytest.raises(FileFormatError, match="extra"):
        ProblemFile.load(path)
    ok = _write(tmp_path, {"p": 1, "landmarks": [[0], [1]], "meta": {"anything": [1, 2]}}, "ok.json")
    assert ProblemFile.load(ok).meta == {"anything": [1, 2]}


def test_problem_length_mismatch_reports_path(tmp_path):
    path = _write(tmp_path, {"p": 3, "landmarks": [[0, 1, 2], [0, 1]]})
    with pytest.raises(FileFormatError) as info:
        ProblemFile.load(path)
    assert "landmarks[1]" in str(info.value) and str(path) in str(info.value)


@pytest.mark.parametrize("doc", [
    {"landmarks": [[0], [1]]},
    {"p": 0, "landmarks": []},
    {"p": True, "landmarks": [[0], [1]]},
    {"p": 1, "landmarks": [["a"], [1]]},
    {"p": 1, "landmarks": [[0], [1]], "visibility": [1]},
    {"p": 1, "landmarks": [[0], [1]], "meta": 5},
])
def test_problem_malformed(tmp_path, doc):
    with pytest.raises(FileFormatError):
        ProblemFile.load(_write(tmp_path, doc))


def test_invalid_json_and_missing_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(FileFormatError, match="bad.json"):
        load_json(bad)
    with pytest.raises(FileFormatError, match="nope.json"):
        load_json(tmp_path / "nope.json")
    with pytest.raises(FileFormatError, match="object"):
        load_json(_write(tmp_path, [1, 2], "list.json"))


def test_normalized_dictionary_norm_checked(tmp_path):
    doc = {"k": 2, "p": 1, "bases": [[[0.5], [0], [0]], [[1.0], [0.1], [0]]], "nonneg": True, "normalized": True}
    with pytest.raises(FileFormatError, match=r"bases\[1\]"):
        DictionaryFile.load(_write(tmp_path, doc))
    doc["normalized"] = False
    assert DictionaryFile.load(_write(tmp_path, doc, "g.json")).dictionary.k == 2
    # within the 1e-9 tolerance is accepted
    doc.update(normalized=True, bases=[[[1.0 + 5e-10], [0], [0]], [[0.2], [0], [0]]])
    DictionaryFile.load(_write(tmp_path, doc, "h.json"))


def test_dictionary_shape_mismatch(tmp_path):
    doc = {"k": 2, "p": 2, "bases": [[[0, 0], [0, 0], [0, 0]]], "nonneg": False, "normalized": False}
    with pytest.raises(FileFormatError, match="bases"):
        DictionaryFile.load(_write(tmp_path, doc))


def test_result_rotation_exclusivity(tmp_path, rng):
    with pytest.raises(FileFormatError):
        ResultFile(np.ones(1), np.zeros((3, 2)), report())
    with pytest.raises(FileFormatError):
        ResultFile(np.ones(1), np.zeros((3, 2)), report(), rotation=np.eye(3), rotations=np.eye(3)[None])
    doc = ResultFile(np.ones(1), np.zeros((3, 2)), report(), rotation=np.eye(3)).to_dict()
    doc = json.loads(json.dumps({k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in doc.items()}))
    doc["rotations"] = [np.eye(3).tolist()]
    with pytest.raises(FileFormatError, match="exactly one"):
        ResultFile.load(_write(tmp_path, doc))


def test_result_report_keys_strict(tmp_path):
    doc = {"coefficients": [1.0], "rotation": np.eye(3).tolist(), "rotations": None,
           "shape": [[0.0], [0.0], [0.0]], "E": None, "T": None, "report": {"iterations": 1}}
    with pytest.raises(FileFormatError, match="report"):
        ResultFile.load(_write(tmp_path, doc))


def test_null_coordinate_only_for_invisible(tmp_path):
    doc = {"p": 2, "landmarks": [[0, None], [1, None]], "visibility": [True, False]}
    W = ProblemFile.load(_write(tmp_path, doc)).landmarks
    assert np.isnan(W.points[:, 1]).all() and not W.visibility[1]
    doc["visibility"] = [True, True]
    with pytest.raises(FileFormatError, match="visible landmark 1"):
        ProblemFile.load(_write(tmp_path, doc, "g.json"))
