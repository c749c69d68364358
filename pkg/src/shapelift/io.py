"""JSON file formats for problems, dictionaries, shapes and results.

All documents are parsed strictly: required keys must be present, array
shapes must agree with the declared sizes, and unknown keys are rejected
except under a free-form ``"meta"`` object. Floats are written with
Python's shortest round-trip representation, so a write/read cycle
reproduces every value exactly.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .shapes import Landmarks2D, ShapeDictionary

NORM_TOL = 1e-9


class FileFormatError(ValueError):
    """Malformed or inconsistent input document."""

    def __init__(self, where: str, msg: str):
        super().__init__(f"{where}: {msg}")
        self.where = where


# -- low-level helpers --------------------------------------------------------


def _to_json(obj):
    if isinstance(obj, np.ndarray):
        return _to_json(obj.tolist())
    if isinstance(obj, dict):
        return {k: _to_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_json(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dump_json(doc: dict, path) -> None:
    """Write ``doc`` as JSON; non-finite floats become ``null``."""
    text = json.dumps(_to_json(doc), indent=1, allow_nan=False)
    Path(path).write_text(text + "\n")


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FileFormatError(str(path), f"invalid JSON ({exc})") from None
    except OSError as exc:
        raise FileFormatError(str(path), exc.strerror or str(exc)) from None
    if not isinstance(doc, dict):
        raise FileFormatError(str(path), "top level must be an object")
    return doc


def _check_keys(doc: dict, required, optional, where: str):
    missing = [k for k in required if k not in doc]
    if missing:
        raise FileFormatError(where, f"missing field {missing[0]!r}")
    allowed = set(required) | set(optional) | {"meta"}
    extra = sorted(k for k in doc if k not in allowed)
    if extra:
        raise FileFormatError(where, f"unknown field {extra[0]!r}")
    if "meta" in doc and not isinstance(doc["meta"], dict):
        raise FileFormatError(where, "meta must be an object")


def _int(doc, key, where, minimum=1) -> int:
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise FileFormatError(f"{where}.{key}", f"expected an integer >= {minimum}")
    return v


def _bool(doc, key, where) -> bool:
    v = doc[key]
    if not isinstance(v, bool):
        raise FileFormatError(f"{where}.{key}", "expected true or false")
    return v


def _array(value, shape, where: str, allow_null: bool = False, null_entries: bool = False):
    """Nested-list number array with an exact expected shape.

    With ``null_entries`` individual ``null`` values are accepted and read as NaN.
    """
    if value is None:
        if allow_null:
            return None
        raise FileFormatError(where, "must not be null")

    def walk(v, dims, path):
        if not dims:
            if v is None and null_entries:
                return
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise FileFormatError(path, "expected a number")
            return
        if not isinstance(v, list) or len(v) != dims[0]:
            got = len(v) if isinstance(v, list) else type(v).__name__
            raise FileFormatError(path, f"expected {dims[0]} entries, got {got}")
        for i, item in enumerate(v):
            walk(item, dims[1:], f"{path}[{i}]")

    walk(value, tuple(shape), where)
    return np.array(value, dtype=float).reshape(shape)  # None -> nan


# -- problem files ------------------------------------------------------------


@dataclass
class ProblemFile:
    """2D observations, optional ground-truth shape, free-form metadata."""

    landmarks: Landmarks2D
    truth_shape: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.landmarks.p

    def to_dict(self) -> dict:
        doc = {
            "p": self.p,
            "landmarks": self.landmarks.points,
            "visibility": self.landmarks.visibility,
        }
        if self.truth_shape is not None:
            doc["truth_shape"] = self.truth_shape
        if self.meta:
            doc["meta"] = self.meta
        return doc

    @classmethod
    def from_dict(cls, doc: dict, where: str = "problem") -> "ProblemFile":
        _check_keys(doc, ("p", "landmarks"), ("visibility", "truth_shape"), where)
        p = _int(doc, "p", where)
        # invisible landmarks may be written as null
        pts = _array(doc["landmarks"], (2, p), f"{where}.landmarks", null_entries=True)
        vis = None
        if "visibility" in doc:
            v = doc["visibility"]
            if not isinstance(v, list) or len(v) != p or not all(isinstance(b, bool) for b in v):
                raise FileFormatError(f"{where}.visibility", f"expected {p} booleans")
            vis = np.array(v, dtype=bool)
        missing = np.nonzero(np.any(np.isnan(pts), axis=0) & (True if vis is None else vis))[0]
        if missing.size:
            raise FileFormatError(f"{where}.landmarks", f"visible landmark {int(missing[0])} has a null coordinate")
        truth = _array(doc.get("truth_shape"), (3, p), f"{where}.truth_shape", allow_null=True)
        return cls(Landmarks2D(pts, vis), truth, dict(doc.get("meta", {})))

    def save(self, path) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "ProblemFile":
        return cls.from_dict(load_json(path), str(path))


# -- dictionary files ---------------------------------------------------------


@dataclass
class DictionaryFile:
    """Basis shapes; ``normalized`` asserts every basis has Frobenius norm <= 1."""

    dictionary: ShapeDictionary
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        D = self.dictionary
        doc = {"k": D.k, "p": D.p, "bases": D.bases, "nonneg": D.nonneg, "normalized": self.normalized}
        meta = dict(self.meta)
        if D.mean_shape is not None:
            meta["mean_shape"] = D.mean_shape
        if meta:
            doc["meta"] = meta
        return doc

    @classmethod
    def from_dict(cls, doc: dict, where: str = "dictionary") -> "DictionaryFile":
        _check_keys(doc, ("k", "p", "bases", "nonneg", "normalized"), (), where)
        k, p = _int(doc, "k", where), _int(doc, "p", where)
        bases = _array(doc["bases"], (k, 3, p), f"{where}.bases")
        nonneg, normalized = _bool(doc, "nonneg", where), _bool(doc, "normalized", where)
        if normalized:
            norms = np.sqrt(np.sum(bases**2, axis=(1, 2)))
            bad = np.nonzero(norms > 1.0 + NORM_TOL)[0]
            if bad.size:
                i = int(bad[0])
                raise FileFormatError(f"{where}.bases[{i}]",
                                      f"Frobenius norm {norms[i]:.6g} exceeds 1 but normalized is true")
        meta = dict(doc.get("meta", {}))
        mean = None
        if "mean_shape" in meta:
            mean = _array(meta.pop("mean_shape"), (3, p), f"{where}.meta.mean_shape", allow_null=True)
        return cls(ShapeDictionary(bases, nonneg=nonneg, mean_shape=mean), normalized, meta)

    def save(self, path) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "DictionaryFile":
        return cls.from_dict(load_json(path), str(path))


# -- shape files (training data) ----------------------------------------------


@dataclass
class ShapeFile:
    shape: np.ndarray  # (3, p)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {"p": self.shape.shape[1], "shape": self.shape}
        if self.meta:
            doc["meta"] = self.meta
        return doc

    @classmethod
    def from_dict(cls, doc: dict, where: str = "shape") -> "ShapeFile":
        _check_keys(doc, ("p", "shape"), (), where)
        p = _int(doc, "p", where)
        return cls(_array(doc["shape"], (3, p), f"{where}.shape"), dict(doc.get("meta", {})))

    def save(self, path) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "ShapeFile":
        return cls.from_dict(load_json(path), str(path))


def load_shape_dir(directory) -> np.ndarray:
    """Stack every ``*.json`` shape file of a directory, in name order."""
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise FileFormatError(str(directory), "no .json shape files found")
    shapes = [ShapeFile.load(p).shape for p in paths]
    p0 = shapes[0].shape[1]
    for path, s in zip(paths, shapes):
        if s.shape[1] != p0:
            raise FileFormatError(str(path), f"landmark count {s.shape[1]} differs from {p0}")
    return np.stack(shapes)


# -- result files -------------------------------------------------------------

REPORT_KEYS = ("iterations", "primal_residual", "dual_residual", "objective", "converged")


@dataclass
class ResultFile:
    coefficients: np.ndarray
    shape: np.ndarray
    report: dict
    rotation: np.ndarray | None = None
    rotations: np.ndarray | None = None
    E: np.ndarray | None = None
    T: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.rotation is None) == (self.rotations is None):
            raise FileFormatError("result", "exactly one of rotation / rotations must be given")

    def to_dict(self) -> dict:
        doc = {
            "coefficients": self.coefficients,
            "rotation": self.rotation,
            "rotations": self.rotations,
            "shape": self.shape,
            "E": self.E,
            "T": self.T,
            "report": {k: self.report.get(k) for k in REPORT_KEYS},
        }
        if self.meta:
            doc["meta"] = self.meta
        return doc

    @classmethod
    def from_dict(cls, doc: dict, where: str = "result") -> "ResultFile":
        _check_keys(doc, ("coefficients", "rotation", "rotations", "shape", "E", "T", "report"), (), where)
        coef = doc["coefficients"]
        if not isinstance(coef, list):
            raise FileFormatError(f"{where}.coefficients", "expected a list")
        k = len(coef)
        c = _array(coef, (k,), f"{where}.coefficients")
        shp = doc["shape"]
        p = len(shp[0]) if isinstance(shp, list) and shp and isinstance(shp[0], list) else 0
        shape = _array(shp, (3, p), f"{where}.shape")
        rot = _array(doc["rotation"], (3, 3), f"{where}.rotation", allow_null=True)
        rots = _array(doc["rotations"], (k, 3, 3), f"{where}.rotations", allow_null=True)
        E = _array(doc["E"], (2, p), f"{where}.E", allow_null=True)
        T = _array(doc["T"], (2,), f"{where}.T", allow_null=True)
        rep = doc["report"]
        if not isinstance(rep, dict):
            raise FileFormatError(f"{where}.report", "expected an object")
        _check_keys(rep, REPORT_KEYS, (), f"{where}.report")
        report = {key: (np.nan if rep[key] is None and key != "converged" else rep[key]) for key in REPORT_KEYS}
        if (rot is None) == (rots is None):
            raise FileFormatError(where, "exactly one of rotation / rotations must be non-null")
        return cls(c, shape, report, rot, rots, E, T, dict(doc.get("meta", {})))

    def save(self, path) -> None:
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "ResultFile":
        return cls.from_dict(load_json(path), str(path))


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
