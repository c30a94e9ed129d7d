"""On-disk embedding bundle: manifest.json plus headerless binary matrices.

A bundle directory couples everything one training run needs for a single
user concept: raw vision features, an optional projection init, the
reference-word bases (token space, prompt text space, optional bare-word
text space), and any ground-truth label files keyed by clustering name.

Matrix payloads are row-major IEEE-754 binary32, little-endian, no header;
label payloads are little-endian uint32, one value per sample. The manifest
carries all dimensions, so a payload is well-formed exactly when its byte
length equals rows * cols * 4.

Matrix roles and shapes:

    raw_features     n x d_raw       frozen pre-projection vision features U
    projection_init  d_joint x d_raw optional vision projection W0
    ref_token        K x d_token     token embedding per reference word (Z)
    ref_prompt       K x d_joint     unit text embedding of the prompt with
                                     each reference word filled in (T)
    ref_word_text    K x d_joint     optional unit text embedding of the bare
                                     reference word (S)

Rows of ref_prompt and ref_word_text must be unit L2 within 1e-4; the loader
verifies and never re-normalizes. Optional per-clustering "class_prompts"
matrices (one unit row per ground-truth class) support label-prompt zero-shot
evaluation.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import BundleError, DegenerateRowError

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1
UNIT_ROW_TOL = 1e-4

_REQUIRED_MATRICES = ("raw_features", "ref_token", "ref_prompt")
_OPTIONAL_MATRICES = ("projection_init", "ref_word_text")


def write_f32(path, array) -> None:
    """Write a 2-D array as headerless little-endian float32."""
    a = np.asarray(array)
    if a.ndim != 2:
        raise BundleError(f"expected a 2-D matrix, got shape {a.shape}", path=path)
    if not np.all(np.isfinite(a)):
        raise BundleError("non-finite value in matrix payload", path=path)
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_f32(path, rows: int, cols: int) -> np.ndarray:
    expected = rows * cols * 4
    actual = os.path.getsize(path)
    if actual != expected:
        raise BundleError(
            f"byte length {actual} != rows*cols*4 = {expected}", path=path
        )
    data = np.fromfile(path, dtype="<f4").reshape(rows, cols)
    if not np.all(np.isfinite(data)):
        raise BundleError("non-finite value in matrix payload", path=path)
    return data


def write_u32(path, labels) -> None:
    a = np.asarray(labels)
    if a.ndim != 1:
        raise BundleError(f"expected a 1-D label vector, got shape {a.shape}", path=path)
    if a.size and (np.any(a < 0) or np.any(a != np.floor(a))):
        raise BundleError("labels must be non-negative integers", path=path)
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(a, dtype="<u4").tobytes())


def read_u32(path, n: int) -> np.ndarray:
    expected = n * 4
    actual = os.path.getsize(path)
    if actual != expected:
        raise BundleError(f"byte length {actual} != n*4 = {expected}", path=path)
    return np.fromfile(path, dtype="<u4")


def normalize_rows(m) -> np.ndarray:
    """Return a copy of ``m`` with unit-L2 rows (norms taken in float64).

    Rejects zero rows: a degenerate row has no direction to keep.
    """
    m = np.asarray(m)
    norms = np.linalg.norm(m.astype(np.float64, copy=False), axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateRowError("cannot normalize zero row", int(zero[0]))
    out = m.astype(np.float64, copy=False) / norms[:, None]
    return out.astype(m.dtype, copy=False)


def _check_unit_rows(m, name: str) -> None:
    norms = np.linalg.norm(m.astype(np.float64, copy=False), axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_ROW_TOL)
    if bad.size:
        raise BundleError(
            f"row {int(bad[0])} has norm {norms[bad[0]]:.6f}, expected unit",
            field=name,
        )


@dataclass
class MatrixRef:
    file: str
    rows: int
    cols: int


@dataclass
class Manifest:
    n: int
    d_raw: int
    d_joint: int
    d_token: int
    k: int
    concept: str
    prompt_template: str
    reference_words: list[str]
    matrices: dict[str, MatrixRef]
    ground_truth: dict[str, str] = field(default_factory=dict)
    class_prompts: dict[str, MatrixRef] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        doc = {
            "version": self.version,
            "n": self.n,
            "d_raw": self.d_raw,
            "d_joint": self.d_joint,
            "d_token": self.d_token,
            "k": self.k,
            "concept": self.concept,
            "prompt_template": self.prompt_template,
            "reference_words": list(self.reference_words),
            "matrices": {
                name: {"file": ref.file, "rows": ref.rows, "cols": ref.cols}
                for name, ref in self.matrices.items()
            },
        }
        if self.ground_truth:
            doc["ground_truth"] = dict(self.ground_truth)
        if self.class_prompts:
            doc["class_prompts"] = {
                name: {"file": ref.file, "rows": ref.rows, "cols": ref.cols}
                for name, ref in self.class_prompts.items()
            }
        return doc


@dataclass
class Bundle:
    """Loaded, validated view of a bundle directory (arrays stay float32)."""

    path: str
    manifest: Manifest
    raw: np.ndarray
    token_basis: np.ndarray
    prompt_basis: np.ndarray
    word_basis: np.ndarray | None
    projection_init: np.ndarray | None
    labels: dict[str, np.ndarray]
    class_prompts: dict[str, np.ndarray]

    @property
    def n(self) -> int:
        return self.manifest.n

    @property
    def k(self) -> int:
        return self.manifest.k


def _require(cond: bool, message: str, *, path=None, field=None) -> None:
    if not cond:
        raise BundleError(message, path=path, field=field)


def _parse_matrix_ref(obj, field_name: str) -> MatrixRef:
    _require(isinstance(obj, dict), "matrix entry must be an object", field=field_name)
    for key in ("file", "rows", "cols"):
        _require(key in obj, f"matrix entry missing '{key}'", field=field_name)
    _require(
        isinstance(obj["rows"], int) and isinstance(obj["cols"], int),
        "rows/cols must be integers",
        field=field_name,
    )
    return MatrixRef(file=str(obj["file"]), rows=obj["rows"], cols=obj["cols"])


def parse_manifest(doc: dict, *, path=None) -> Manifest:
    _require(isinstance(doc, dict), "manifest root must be an object", path=path)
    for key in (
        "version",
        "n",
        "d_raw",
        "d_joint",
        "d_token",
        "k",
        "concept",
        "prompt_template",
        "reference_words",
        "matrices",
    ):
        _require(key in doc, f"manifest missing '{key}'", path=path, field=key)
    _require(doc["version"] == FORMAT_VERSION, f"unsupported version {doc['version']}", field="version")
    for key in ("n", "d_raw", "d_joint", "d_token", "k"):
        _require(isinstance(doc[key], int) and doc[key] >= 1, f"'{key}' must be a positive integer", field=key)
    _require(doc["n"] >= 2, "need at least two samples", field="n")
    _require(doc["k"] >= 2, "need at least two reference words", field="k")
    template = doc["prompt_template"]
    _require(isinstance(template, str) and template.count("*") == 1,
             "prompt_template must contain exactly one '*'", field="prompt_template")
    words = doc["reference_words"]
    _require(isinstance(words, list) and len(words) == doc["k"],
             "reference_words length must equal k", field="reference_words")
    _require(all(isinstance(w, str) and w for w in words),
             "reference_words must be non-empty strings", field="reference_words")

    matrices = {
        name: _parse_matrix_ref(ref, f"matrices.{name}")
        for name, ref in doc["matrices"].items()
    }
    for name in _REQUIRED_MATRICES:
        _require(name in matrices, f"required matrix '{name}' missing", field="matrices")
    for name in matrices:
        _require(
            name in _REQUIRED_MATRICES or name in _OPTIONAL_MATRICES,
            f"unknown matrix role '{name}'",
            field="matrices",
        )

    expected_shapes = {
        "raw_features": (doc["n"], doc["d_raw"]),
        "projection_init": (doc["d_joint"], doc["d_raw"]),
        "ref_token": (doc["k"], doc["d_token"]),
        "ref_prompt": (doc["k"], doc["d_joint"]),
        "ref_word_text": (doc["k"], doc["d_joint"]),
    }
    for name, ref in matrices.items():
        rows, cols = expected_shapes[name]
        _require(
            (ref.rows, ref.cols) == (rows, cols),
            f"matrix '{name}' declares {ref.rows}x{ref.cols}, expected {rows}x{cols}",
            field=f"matrices.{name}",
        )

    ground_truth = doc.get("ground_truth", {})
    _require(isinstance(ground_truth, dict), "ground_truth must map name -> file", field="ground_truth")
    class_prompts = {
        name: _parse_matrix_ref(ref, f"class_prompts.{name}")
        for name, ref in doc.get("class_prompts", {}).items()
    }
    for name, ref in class_prompts.items():
        _require(ref.cols == doc["d_joint"],
                 f"class_prompts '{name}' cols {ref.cols} != d_joint {doc['d_joint']}",
                 field=f"class_prompts.{name}")
        _require(ref.rows >= 2, "class prompt matrix needs >= 2 rows", field=f"class_prompts.{name}")

    return Manifest(
        n=doc["n"],
        d_raw=doc["d_raw"],
        d_joint=doc["d_joint"],
        d_token=doc["d_token"],
        k=doc["k"],
        concept=str(doc["concept"]),
        prompt_template=template,
        reference_words=[str(w) for w in words],
        matrices=matrices,
        ground_truth={str(k_): str(v) for k_, v in ground_truth.items()},
        class_prompts=class_prompts,
    )


def load_bundle(path: str) -> Bundle:
    """Load and fully validate a bundle directory.

    Raises BundleError naming the offending file or manifest field on any
    format violation: missing files, byte-length mismatches, non-finite
    values, schema problems, or non-unit text-basis rows.
    """
    manifest_path = os.path.join(path, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise BundleError("manifest not found", path=manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise BundleError(f"manifest is not valid JSON: {exc}", path=manifest_path) from exc
    manifest = parse_manifest(doc, path=manifest_path)

    def _load_matrix(name: str) -> np.ndarray | None:
        ref = manifest.matrices.get(name)
        if ref is None:
            return None
        fpath = os.path.join(path, ref.file)
        if not os.path.isfile(fpath):
            raise BundleError("referenced matrix file missing", path=fpath, field=name)
        return read_f32(fpath, ref.rows, ref.cols)

    raw = _load_matrix("raw_features")
    token_basis = _load_matrix("ref_token")
    prompt_basis = _load_matrix("ref_prompt")
    word_basis = _load_matrix("ref_word_text")
    projection_init = _load_matrix("projection_init")

    _check_unit_rows(prompt_basis, "ref_prompt")
    if word_basis is not None:
        _check_unit_rows(word_basis, "ref_word_text")

    labels: dict[str, np.ndarray] = {}
    for name, fname in manifest.ground_truth.items():
        fpath = os.path.join(path, fname)
        if not os.path.isfile(fpath):
            raise BundleError("referenced label file missing", path=fpath, field=name)
        labels[name] = read_u32(fpath, manifest.n)

    class_prompts: dict[str, np.ndarray] = {}
    for name, ref in manifest.class_prompts.items():
        fpath = os.path.join(path, ref.file)
        if not os.path.isfile(fpath):
            raise BundleError("referenced class-prompt file missing", path=fpath, field=name)
        mat = read_f32(fpath, ref.rows, ref.cols)
        _check_unit_rows(mat, f"class_prompts.{name}")
        if name in labels and labels[name].size:
            top = int(labels[name].max())
            _require(ref.rows >= top + 1,
                     f"class_prompts '{name}' has {ref.rows} rows but labels reach {top}",
                     field=f"class_prompts.{name}")
        class_prompts[name] = mat

    return Bundle(
        path=path,
        manifest=manifest,
        raw=raw,
        token_basis=token_basis,
        prompt_basis=prompt_basis,
        word_basis=word_basis,
        projection_init=projection_init,
        labels=labels,
        class_prompts=class_prompts,
    )


def save_bundle(
    path: str,
    *,
    concept: str,
    prompt_template: str,
    reference_words: list[str],
    raw,
    token_basis,
    prompt_basis,
    word_basis=None,
    projection_init=None,
    labels: dict | None = None,
    class_prompts: dict | None = None,
) -> Manifest:
    """Validate arrays and write a complete bundle directory.

    Payloads are cast to float32 before writing, so save -> load -> save is a
    byte-exact round trip. Optional matrices that are None are simply absent
    from the manifest.
    """
    raw = np.asarray(raw)
    token_basis = np.asarray(token_basis)
    prompt_basis = np.asarray(prompt_basis)
    n, d_raw = raw.shape
    k, d_token = token_basis.shape
    k2, d_joint = prompt_basis.shape
    if k2 != k:
        raise BundleError(f"ref_prompt rows {k2} != ref_token rows {k}", field="ref_prompt")
    if n < 2 or k < 2:
        raise BundleError("need n >= 2 samples and k >= 2 reference words")
    if len(reference_words) != k:
        raise BundleError("reference_words length must equal k", field="reference_words")
    if prompt_template.count("*") != 1:
        raise BundleError("prompt_template must contain exactly one '*'", field="prompt_template")

    arrays: dict[str, np.ndarray] = {
        "raw_features": raw,
        "ref_token": token_basis,
        "ref_prompt": prompt_basis,
    }
    if word_basis is not None:
        word_basis = np.asarray(word_basis)
        if word_basis.shape != (k, d_joint):
            raise BundleError(
                f"ref_word_text shape {word_basis.shape}, expected {(k, d_joint)}",
                field="ref_word_text",
            )
        arrays["ref_word_text"] = word_basis
    if projection_init is not None:
        projection_init = np.asarray(projection_init)
        if projection_init.shape != (d_joint, d_raw):
            raise BundleError(
                f"projection_init shape {projection_init.shape}, expected {(d_joint, d_raw)}",
                field="projection_init",
            )
        arrays["projection_init"] = projection_init

    for name, a in arrays.items():
        if not np.all(np.isfinite(a)):
            raise BundleError("non-finite value", field=name)

    # float32 is the wire precision; validate unit rows on what will be read back
    f32 = {name: np.ascontiguousarray(a, dtype="<f4") for name, a in arrays.items()}
    _check_unit_rows(f32["ref_prompt"], "ref_prompt")
    if "ref_word_text" in f32:
        _check_unit_rows(f32["ref_word_text"], "ref_word_text")

    labels = labels or {}
    for name, lab in labels.items():
        lab = np.asarray(lab)
        if lab.shape != (n,):
            raise BundleError(f"label vector '{name}' has shape {lab.shape}, expected ({n},)", field=name)

    class_prompts = class_prompts or {}
    cp_f32: dict[str, np.ndarray] = {}
    for name, mat in class_prompts.items():
        mat = np.asarray(mat)
        if mat.ndim != 2 or mat.shape[1] != d_joint:
            raise BundleError(
                f"class_prompts '{name}' must be (C, {d_joint})", field=f"class_prompts.{name}"
            )
        if not np.all(np.isfinite(mat)):
            raise BundleError("non-finite value", field=f"class_prompts.{name}")
        cp = np.ascontiguousarray(mat, dtype="<f4")
        _check_unit_rows(cp, f"class_prompts.{name}")
        cp_f32[name] = cp

    os.makedirs(path, exist_ok=True)
    matrices = {}
    for name, a in f32.items():
        fname = f"{name}.f32"
        write_f32(os.path.join(path, fname), a)
        matrices[name] = MatrixRef(file=fname, rows=a.shape[0], cols=a.shape[1])

    ground_truth = {}
    for name, lab in labels.items():
        fname = f"labels_{name}.u32"
        write_u32(os.path.join(path, fname), lab)
        ground_truth[name] = fname

    cp_refs = {}
    for name, mat in cp_f32.items():
        fname = f"class_prompts_{name}.f32"
        write_f32(os.path.join(path, fname), mat)
        cp_refs[name] = MatrixRef(file=fname, rows=mat.shape[0], cols=mat.shape[1])

    manifest = Manifest(
        n=n,
        d_raw=d_raw,
        d_joint=d_joint,
        d_token=d_token,
        k=k,
        concept=concept,
        prompt_template=prompt_template,
        reference_words=list(reference_words),
        matrices=matrices,
        ground_truth=ground_truth,
        class_prompts=cp_refs,
    )
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
