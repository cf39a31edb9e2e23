"""Container format for model assets and trained artifacts.

A container is a directory holding `manifest.json` plus one raw little-endian
array file per tensor. The manifest records, per array, its file name, dtype
and shape; small structured data rides along inline under "tables".

Array files: float64 tensors end in `.f64`, int64 tensors in `.i64`, raw
row-major little-endian bytes with no header.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .geom import BodyModel, Mesh
from .puppet import PuppetModel, PuppetPart, StitchPair
from .stats import LandmarkRegressor, ShapeRegressor, ShapeSpace

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

_DTYPES = {"float64": ("<f8", ".f64"), "int64": ("<i8", ".i64")}


def save_container(path, arrays: dict, tables: dict, kind: str) -> None:
    """Write arrays + tables to a container directory (created if missing)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": FORMAT_VERSION, "kind": kind, "arrays": {}, "tables": tables}
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.dtype.kind in "iu":
            dtype = "int64"
            data = arr.astype("<i8")
        else:
            dtype = "float64"
            data = arr.astype("<f8")
        fname = name + _DTYPES[dtype][1]
        (root / fname).write_bytes(np.ascontiguousarray(data).tobytes())
        manifest["arrays"][name] = {
            "file": fname,
            "dtype": dtype,
            "shape": list(arr.shape),
        }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_container(path):
    """Returns (arrays, tables, kind)."""
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported container format version")
    arrays = {}
    for name, spec in manifest["arrays"].items():
        np_dtype = _DTYPES[spec["dtype"]][0]
        raw = (root / spec["file"]).read_bytes()
        arr = np.frombuffer(raw, dtype=np_dtype).reshape(spec["shape"])
        arrays[name] = arr.astype(np.int64 if spec["dtype"] == "int64" else np.float64)
    return arrays, manifest.get("tables", {}), manifest.get("kind", "")


# ---------------------------------------------------------------------------
# typed wrappers


def save_body_model(model: BodyModel, path) -> None:
    arrays = {
        "template_vertices": model.template.vertices,
        "template_faces": model.template.faces,
        "shape_basis": model.shape_basis,
        "joint_parents": model.joint_parents,
        "joint_regressor": model.joint_regressor,
        "skin_weights": model.skin_weights,
    }
    tables = {"markers": {k: np.asarray(v).tolist() for k, v in model.markers.items()}}
    save_container(path, arrays, tables, kind="body_model")


def load_body_model(path) -> BodyModel:
    arrays, tables, kind = load_container(path)
    if kind != "body_model":
        raise ValueError(f"{path}: container kind {kind!r} is not a body model")
    model = BodyModel(
        template=Mesh(arrays["template_vertices"], arrays["template_faces"]),
        shape_basis=arrays["shape_basis"],
        joint_parents=arrays["joint_parents"],
        joint_regressor=arrays["joint_regressor"],
        skin_weights=arrays["skin_weights"],
        markers={k: np.asarray(v, dtype=np.int64) for k, v in tables.get("markers", {}).items()},
    )
    model.validate()
    return model


def save_puppet_model(model: PuppetModel, path) -> None:
    arrays = {
        "template_vertices": model.template.vertices,
        "template_faces": model.template.faces,
        "shape_basis": model.shape_basis,
    }
    if model.landmarks_li is not None:
        arrays["landmarks_li"] = model.landmarks_li
    if model.landmarks_lb is not None:
        arrays["landmarks_lb"] = model.landmarks_lb
    tables = {
        "parts": [
            {"name": p.name, "vertex_ids": p.vertex_ids.tolist(), "centroid": p.centroid.tolist()}
            for p in model.parts
        ],
        "interfaces": [
            [s.part_a, s.vertex_a, s.part_b, s.vertex_b] for s in model.interfaces
        ],
        "symmetry_pairs": [list(sp) for sp in model.symmetry_pairs],
    }
    save_container(path, arrays, tables, kind="puppet_model")


def load_puppet_model(path) -> PuppetModel:
    arrays, tables, kind = load_container(path)
    if kind != "puppet_model":
        raise ValueError(f"{path}: container kind {kind!r} is not a puppet model")
    template = Mesh(arrays["template_vertices"], arrays["template_faces"])
    parts = [
        PuppetPart(
            name=p["name"],
            vertex_ids=np.asarray(p["vertex_ids"], dtype=np.int64),
            local_template=template.vertices[np.asarray(p["vertex_ids"], dtype=np.int64)],
            centroid=np.asarray(p["centroid"], dtype=np.float64),
        )
        for p in tables["parts"]
    ]
    model = PuppetModel(
        parts=parts,
        template=template,
        shape_basis=arrays["shape_basis"],
        interfaces=[StitchPair(*row) for row in tables.get("interfaces", [])],
        landmarks_li=arrays.get("landmarks_li"),
        landmarks_lb=arrays.get("landmarks_lb"),
        symmetry_pairs=[tuple(sp) for sp in tables.get("symmetry_pairs", [])],
    )
    model.validate()
    return model


def save_shape_space(space: ShapeSpace, path, metadata: dict | None = None) -> None:
    tables = {"n_train": space.n_train}
    tables.update(metadata or {})
    save_container(
        path,
        {"mean": space.mean, "basis": space.basis, "variances": space.variances},
        tables,
        kind="shape_space",
    )


def load_shape_space(path) -> ShapeSpace:
    arrays, tables, kind = load_container(path)
    if kind != "shape_space":
        raise ValueError(f"{path}: not a shape-space container")
    space = ShapeSpace(
        mean=arrays["mean"],
        basis=arrays["basis"],
        variances=arrays["variances"],
        n_train=int(tables.get("n_train", 0)),
    )
    space.validate()
    return space


def save_landmark_regressor(reg: LandmarkRegressor, path, metadata: dict | None = None) -> None:
    tables = {"n_train": reg.n_train}
    tables.update(metadata or {})
    save_container(path, {"weights": reg.weights}, tables, kind="landmark_regressor")


def load_landmark_regressor(path) -> LandmarkRegressor:
    arrays, tables, kind = load_container(path)
    if kind != "landmark_regressor":
        raise ValueError(f"{path}: not a landmark-regressor container")
    reg = LandmarkRegressor(weights=arrays["weights"], n_train=int(tables.get("n_train", 0)))
    reg.validate()
    return reg


def save_shape_regressor(reg: ShapeRegressor, path, metadata: dict | None = None) -> None:
    tables = {"n_train": reg.n_train, "ridge": reg.ridge}
    tables.update(metadata or {})
    save_container(
        path, {"matrix": reg.matrix, "intercept": reg.intercept}, tables, kind="shape_regressor"
    )


def load_shape_regressor(path) -> ShapeRegressor:
    arrays, tables, kind = load_container(path)
    if kind != "shape_regressor":
        raise ValueError(f"{path}: not a shape-regressor container")
    return ShapeRegressor(
        matrix=arrays["matrix"],
        intercept=arrays["intercept"],
        ridge=float(tables.get("ridge", 1e-6)),
        n_train=int(tables.get("n_train", 0)),
    )
