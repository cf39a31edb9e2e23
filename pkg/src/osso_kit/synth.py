"""Procedural synthetic assets: a desk-scale articulated body with a matching
part-based skeleton, plus a deterministic mask/landmark dataset generator.

The body is a union of capsules over a 24-joint tree lying supine along +y
(head up, +z toward the camera), roughly 0.55 m tall. Ten shape components
(global scale, segment lengths, girths) are exact linear displacement fields,
so joint locations, skeleton part scales and landmark positions are affine in
the shape coefficients; every downstream stage therefore has analytic ground
truth to verify against.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geom import (
    BodyModel,
    LbsForward,
    Mesh,
    OrthoCamera,
    PoseVector,
    project_ortho,
    rasterize_silhouette,
    rodrigues,
    rotation_log,
)
from .masks import BinaryMask, erode, occlude
from .puppet import (
    PuppetModel,
    PuppetPart,
    PuppetState,
    StitchPair,
    build_initial_shape_basis,
)
from .energy import PosePrior
from . import bundleio

log = logging.getLogger(__name__)

N_SHAPE = 10
RING_SEGMENTS = 12
BODY_STATION_SPACING = 22.0  # mm between shaft rings; keeps witnesses dense
IMAGE_WIDTH = 256
IMAGE_HEIGHT = 768
PIXELS_PER_MM = 1.0

# joint table: (name, parent, rest position mm)
_JOINTS = [
    ("pelvis", 0, (0.0, 0.0, 0.0)),
    ("hip_l", 0, (28.0, 0.0, 0.0)),
    ("hip_r", 0, (-28.0, 0.0, 0.0)),
    ("spine1", 0, (0.0, 40.0, 0.0)),
    ("knee_l", 1, (28.0, -143.0, 0.0)),
    ("knee_r", 2, (-28.0, -143.0, 0.0)),
    ("spine2", 3, (0.0, 80.0, 0.0)),
    ("ankle_l", 4, (28.0, -267.0, 0.0)),
    ("ankle_r", 5, (-28.0, -267.0, 0.0)),
    ("spine3", 6, (0.0, 113.0, 0.0)),
    ("foot_l", 7, (28.0, -293.0, 0.0)),
    ("foot_r", 8, (-28.0, -293.0, 0.0)),
    ("neck", 9, (0.0, 147.0, 0.0)),
    ("collar_l", 9, (13.0, 135.0, 0.0)),
    ("collar_r", 9, (-13.0, 135.0, 0.0)),
    ("head", 12, (0.0, 170.0, 0.0)),
    ("shoulder_l", 13, (70.0, 135.0, 0.0)),
    ("shoulder_r", 14, (-70.0, 135.0, 0.0)),
    ("elbow_l", 16, (70.0, 47.0, 0.0)),
    ("elbow_r", 17, (-70.0, 47.0, 0.0)),
    ("wrist_l", 18, (70.0, -30.0, 0.0)),
    ("wrist_r", 19, (-70.0, -30.0, 0.0)),
    ("hand_l", 20, (70.0, -57.0, 0.0)),
    ("hand_r", 21, (-70.0, -57.0, 0.0)),
]

JOINT_NAMES = [j[0] for j in _JOINTS]
JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}
JOINT_PARENTS = np.asarray([j[1] for j in _JOINTS], dtype=np.int64)
JOINTS0 = np.asarray([j[2] for j in _JOINTS], dtype=np.float64)
N_JOINTS = len(_JOINTS)

_ARM_GATE = 53.5  # |x| separating limb fields; no vertex ring straddles it


# ---------------------------------------------------------------------------
# shape displacement fields (each returns (M, 3) displacement per unit coeff)


def _clamp01(t):
    return np.clip(t, 0.0, 1.0)


def _shape_fields():
    def scale_global(p):
        return 0.04 * p

    def torso_length(p):
        # stretch the spine span, carry everything above (and the arms) rigidly
        d = np.zeros_like(p)
        f = _clamp01(p[:, 1] / 113.0)
        f = np.where(np.abs(p[:, 0]) > _ARM_GATE, 1.0, f)
        d[:, 1] = 6.0 * f
        return d

    def leg_length(p):
        # stretch the thigh span, carry the lower leg rigidly
        d = np.zeros_like(p)
        sel = np.abs(p[:, 0]) < _ARM_GATE
        d[sel, 1] = -5.0 * _clamp01(-p[sel, 1] / 143.0)
        return d

    def arm_length(p):
        # stretch the upper arm span, carry the forearm and hand rigidly
        d = np.zeros_like(p)
        sel = np.abs(p[:, 0]) > _ARM_GATE
        d[sel, 1] = -4.0 * _clamp01((135.0 - p[sel, 1]) / 88.0)
        return d

    def girth_torso(p):
        t = _clamp01((p[:, 1] + 50.0) / 30.0) * _clamp01((175.0 - p[:, 1]) / 20.0)
        t = np.where(np.abs(p[:, 0]) < _ARM_GATE, t, 0.0)
        d = np.zeros_like(p)
        d[:, 0] = 0.07 * p[:, 0] * t
        d[:, 2] = 0.07 * p[:, 2] * t
        return d

    def girth_legs(p):
        d = np.zeros_like(p)
        for sign in (1.0, -1.0):
            sel = (p[:, 1] < -55.0) & (sign * p[:, 0] > 3.0) & (np.abs(p[:, 0]) < _ARM_GATE)
            d[sel, 0] = 0.10 * (p[sel, 0] - sign * 28.0)
            d[sel, 2] = 0.10 * p[sel, 2]
        return d

    def girth_arms(p):
        d = np.zeros_like(p)
        for sign in (1.0, -1.0):
            sel = (p[:, 1] < 129.0) & (sign * p[:, 0] > _ARM_GATE)
            d[sel, 0] = 0.15 * (p[sel, 0] - sign * 70.0)
            d[sel, 2] = 0.15 * p[sel, 2]
        return d

    def head_size(p):
        d = np.zeros_like(p)
        sel = p[:, 1] > 152.0
        d[sel] = 0.11 * (p[sel] - np.array([0.0, 172.0, 0.0]))
        return d

    def shoulder_width(p):
        d = np.zeros_like(p)
        sel = (p[:, 1] > 100.0) | (np.abs(p[:, 0]) > _ARM_GATE)
        d[sel, 0] = 4.0 * np.sign(p[sel, 0]) * _clamp01((np.abs(p[sel, 0]) - 13.0) / 30.0)
        return d

    def belly(p):
        b = np.maximum(0.0, 1.0 - ((p[:, 1] - 55.0) / 50.0) ** 2)
        b = np.where(np.abs(p[:, 0]) < _ARM_GATE, b, 0.0)
        d = np.zeros_like(p)
        d[:, 0] = 0.08 * p[:, 0] * b
        d[:, 2] = 0.08 * p[:, 2] * b
        return d

    return [
        scale_global,
        torso_length,
        leg_length,
        arm_length,
        girth_torso,
        girth_legs,
        girth_arms,
        head_size,
        shoulder_width,
        belly,
    ]


def _field_basis(points: np.ndarray) -> np.ndarray:
    """(M, 3, 10) displacement basis of the shape fields at given points."""
    fields = _shape_fields()
    out = np.zeros((len(points), 3, N_SHAPE))
    for k, f in enumerate(fields):
        out[:, :, k] = f(np.asarray(points, dtype=float))
    return out


def _girth_weights(center: np.ndarray) -> np.ndarray:
    """Per-component transverse scaling rate at a skeleton part center,
    measured as the x-derivative of each displacement field."""
    c = np.asarray(center, dtype=float).reshape(1, 3)
    eps = 1e-4
    plus = _field_basis(c + [[eps, 0.0, 0.0]])[0, 0, :]
    minus = _field_basis(c - [[eps, 0.0, 0.0]])[0, 0, :]
    return (plus - minus) / (2.0 * eps)


# ---------------------------------------------------------------------------
# capsule mesh generation


def _axis_frame(e: np.ndarray):
    if abs(e[1]) > 0.9:
        u = np.array([1.0, 0.0, 0.0])
    else:
        u = np.array([0.0, 1.0, 0.0])
    w = np.cross(e, u)
    w /= np.linalg.norm(w)
    u = np.cross(w, e)
    return u, w


def _capsule(p0, p1, radius, *, rz=None, cap_len=None, stations=(), n_cap=2, m=RING_SEGMENTS):
    """Capsule from p0 to p1: shaft rings at requested stations plus rounded
    caps. Returns (verts, faces, info) with ring bookkeeping.

    stations: iterable of (label, t) with t in [0, 1] along the axis; t=0 and
    t=1 rings are always present (labels "p0"/"p1" unless overridden).
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    e = axis / length
    u, w = _axis_frame(e)
    ru = radius
    rw = radius if rz is None else rz
    cap = radius if cap_len is None else cap_len

    st = {0.0: "p0", 1.0: "p1"}
    for label, t in stations:
        st[float(t)] = label
    ts = sorted(st)

    rings = []  # (center, scale, label or None)
    rings.append((p0 - cap * e, 0.0, "pole0"))
    for k in range(1, n_cap + 1):
        phi = (k / (n_cap + 1)) * (np.pi / 2)
        rings.append((p0 - cap * np.cos(phi) * e, np.sin(phi), None))
    for t in ts:
        rings.append((p0 + t * length * e, 1.0, st[t]))
    for k in range(1, n_cap + 1):
        phi = ((n_cap + 1 - k) / (n_cap + 1)) * (np.pi / 2)
        rings.append((p1 + cap * np.cos(phi) * e, np.sin(phi), None))
    rings.append((p1 + cap * e, 0.0, "pole1"))

    theta = 2.0 * np.pi * np.arange(m) / m
    circ = np.outer(np.cos(theta), ru * u) + np.outer(np.sin(theta), rw * w)

    verts = []
    ring_ids = {}
    pole0 = pole1 = None
    ring_index = []  # list of (start_id, label) for rings with m verts
    for center, scale, label in rings:
        if scale == 0.0:
            vid = len(verts)
            verts.append(center)
            if label == "pole0":
                pole0 = vid
            else:
                pole1 = vid
        else:
            start = len(verts)
            verts.extend(center + scale * circ)
            ring_index.append(start)
            if label is not None:
                ring_ids[label] = list(range(start, start + m))
    faces = []
    for a, b in zip(ring_index[:-1], ring_index[1:]):
        for i in range(m):
            j = (i + 1) % m
            faces.append((a + i, b + j, b + i))
            faces.append((a + i, a + j, b + j))
    first, last = ring_index[0], ring_index[-1]
    for i in range(m):
        j = (i + 1) % m
        faces.append((pole0, first + j, first + i))
        faces.append((pole1, last + i, last + j))

    n_ring_cap = n_cap + 1  # cap rings plus the end station ring
    cap0_ids = list(range(0, 1 + (n_cap * m))) + ring_ids.get("p0", [])
    cap1_start = len(verts) - 1 - (n_cap * m)
    cap1_ids = list(range(cap1_start, len(verts))) + ring_ids.get("p1", [])
    info = {
        "rings": ring_ids,
        "pole0": pole0,
        "pole1": pole1,
        "cap0": cap0_ids,
        "cap1": cap1_ids,
    }
    return np.asarray(verts), np.asarray(faces, dtype=np.int64), info


def _mirror_piece(verts: np.ndarray, faces: np.ndarray):
    v = verts * np.array([-1.0, 1.0, 1.0])
    f = faces[:, [0, 2, 1]]
    return v, f


def _disc(center, normal, radius=5.0, m=8):
    """Small closed fan used as a duplicated stitching interface marker."""
    c = np.asarray(center, dtype=float)
    e = np.asarray(normal, dtype=float)
    e = e / np.linalg.norm(e)
    u, w = _axis_frame(e)
    theta = 2.0 * np.pi * np.arange(m) / m
    rim = c + radius * (np.outer(np.cos(theta), u) + np.outer(np.sin(theta), w))
    verts = np.vstack([c, rim])
    faces = np.asarray(
        [(0, 1 + i, 1 + (i + 1) % m) for i in range(m)], dtype=np.int64
    )
    return verts, faces


class _Accumulator:
    """Collects pieces into one mesh with global vertex bookkeeping."""

    def __init__(self):
        self.verts = []
        self.faces = []
        self.pieces = {}

    def add(self, name, verts, faces, info=None):
        off = len(self.verts)
        self.verts.extend(np.asarray(verts))
        self.faces.extend(np.asarray(faces, dtype=np.int64) + off)
        entry = {"offset": off, "n": len(verts), "ids": np.arange(off, off + len(verts))}
        if info:
            entry["rings"] = {k: np.asarray(v, dtype=np.int64) + off for k, v in info["rings"].items()}
            for key in ("pole0", "pole1"):
                if info.get(key) is not None:
                    entry[key] = info[key] + off
            for key in ("cap0", "cap1"):
                if key in info:
                    entry[key] = np.asarray(info[key], dtype=np.int64) + off
        self.pieces[name] = entry
        return entry

    def mesh(self) -> Mesh:
        return Mesh(np.asarray(self.verts), np.asarray(self.faces, dtype=np.int64))


# ---------------------------------------------------------------------------
# body construction


def _chain_weights(points, axis_p0, axis_dir, chain, blend=14.0):
    """Per-vertex skinning rows for a capsule controlled by a joint chain.

    chain: [(joint_id, s_end), ...] in increasing along-axis coordinate s;
    the last s_end may be inf. Transitions blend linearly over +-blend/2.
    """
    s = (np.asarray(points) - axis_p0) @ axis_dir
    n = len(points)
    rows = np.zeros((n, N_JOINTS))
    for i in range(n):
        si = s[i]
        prev_joint = chain[0][0]
        assigned = False
        for (joint, s_end) in chain:
            if si < s_end - blend / 2:
                rows[i, joint] = 1.0
                assigned = True
                break
            if si < s_end + blend / 2:
                nxt = chain[min(len(chain) - 1, chain.index((joint, s_end)) + 1)][0]
                a = (si - (s_end - blend / 2)) / blend
                rows[i, joint] = 1.0 - a
                rows[i, nxt] += a
                assigned = True
                break
            prev_joint = joint
        if not assigned:
            rows[i, chain[-1][0]] = 1.0
    return rows


def _build_body(rng) -> BodyModel:
    acc = _Accumulator()
    jitter = lambda: float(rng.uniform(0.97, 1.03))
    J = JOINT_INDEX

    specs = []  # (name, p0, p1, radius, kwargs, chain)

    torso_r = 45.0 * jitter()
    specs.append(
        (
            "torso",
            (0, -32, 0),
            (0, 147, 0),
            torso_r,
            {"cap_len": 18.0, "stations": [("pelvis", 32 / 179), ("spine1", 72 / 179), ("spine2", 112 / 179), ("spine3", 145 / 179)]},
            [(J["pelvis"], 72.0), (J["spine1"], 112.0), (J["spine2"], 145.0), (J["spine3"], math.inf)],
        )
    )
    head_r = 28.0 * jitter()
    specs.append(
        (
            "head",
            (0, 150, 0),
            (0, 203, 0),
            head_r,
            {"stations": [("head", 20 / 53)]},
            [(J["neck"], 20.0), (J["head"], math.inf)],
        )
    )
    side_specs = [
        ("connector", (13, 135, 0), (70, 135, 0), 16.0 * jitter(), {}, [("collar", math.inf)]),
        ("uparm", (70, 135, 0), (70, 47, 0), 15.0 * jitter(), {"stations": [("shoulder", 0.0)]}, [("shoulder", 88.0), ("elbow", math.inf)]),
        ("forearm", (70, 47, 0), (70, -30, 0), 12.0 * jitter(), {}, [("elbow", 77.0), ("wrist", math.inf)]),
        ("hand", (70, -30, 0), (70, -72, 0), 10.0 * jitter(), {"stations": [("hand", 27 / 42)]}, [("wrist", 27.0), ("hand", math.inf)]),
        ("thigh", (28, 0, 0), (28, -143, 0), 24.0 * jitter(), {"stations": [("hip", 0.0), ("thigh_mid", 0.5)]}, [("hip", 143.0), ("knee", math.inf)]),
        ("shin", (28, -143, 0), (28, -267, 0), 17.0 * jitter(), {}, [("knee", 124.0), ("ankle", math.inf)]),
        ("foot", (28, -267, 0), (28, -305, 0), 13.0 * jitter(), {"stations": [("foot", 26 / 38)]}, [("ankle", 26.0), ("foot", math.inf)]),
    ]

    weight_rows = {}

    def add_piece(name, p0, p1, r, kwargs, chain, mirror=False):
        length = float(np.linalg.norm(np.asarray(p1, float) - np.asarray(p0, float)))
        extra = []
        n_extra = int(length // BODY_STATION_SPACING)
        have = {round(t, 6) for _, t in kwargs.get("stations", [])} | {0.0, 1.0}
        for k in range(1, n_extra + 1):
            t = k / (n_extra + 1)
            if min(abs(t - h) for h in have) * length > 8.0:
                extra.append((None, t))
        kwargs = dict(kwargs)
        kwargs["stations"] = list(kwargs.get("stations", [])) + extra
        verts, faces, info = _capsule(np.asarray(p0, float), np.asarray(p1, float), r, **kwargs)
        if mirror:
            verts, faces = _mirror_piece(verts, faces)
            p0 = np.asarray(p0, float) * [-1, 1, 1]
            p1 = np.asarray(p1, float) * [-1, 1, 1]
        entry = acc.add(name, verts, faces, info)
        axis = np.asarray(p1, float) - np.asarray(p0, float)
        axis = axis / np.linalg.norm(axis)
        weight_rows[name] = _chain_weights(verts, np.asarray(p0, float), axis, chain)
        return entry

    for name, p0, p1, r, kwargs, chain in specs:
        add_piece(name, p0, p1, r, kwargs, chain)
    for base, p0, p1, r, kwargs, chain in side_specs:
        for side, mirror in (("l", False), ("r", True)):
            resolved = [(J[f"{jn}_{side}"], s) for jn, s in chain]
            add_piece(f"{base}_{side}", p0, p1, r, kwargs, resolved, mirror=mirror)

    mesh = acc.mesh()
    n = mesh.n_vertices

    skin = np.zeros((n, N_JOINTS))
    for name, entry in acc.pieces.items():
        skin[entry["ids"]] = weight_rows[name]

    # joint regressor rows: uniform over a vertex ring centered at each joint
    ring_source = {
        "pelvis": ("torso", "pelvis"),
        "spine1": ("torso", "spine1"),
        "spine2": ("torso", "spine2"),
        "spine3": ("torso", "spine3"),
        "neck": ("torso", "p1"),
        "head": ("head", "head"),
    }
    for side in ("l", "r"):
        ring_source[f"collar_{side}"] = (f"connector_{side}", "p0")
        ring_source[f"shoulder_{side}"] = (f"uparm_{side}", "shoulder")
        ring_source[f"elbow_{side}"] = (f"uparm_{side}", "p1")
        ring_source[f"wrist_{side}"] = (f"forearm_{side}", "p1")
        ring_source[f"hand_{side}"] = (f"hand_{side}", "hand")
        ring_source[f"hip_{side}"] = (f"thigh_{side}", "hip")
        ring_source[f"knee_{side}"] = (f"thigh_{side}", "p1")
        ring_source[f"ankle_{side}"] = (f"shin_{side}", "p1")
        ring_source[f"foot_{side}"] = (f"foot_{side}", "foot")

    jreg = np.zeros((N_JOINTS, n))
    for jname, (piece, ring) in ring_source.items():
        ids = acc.pieces[piece]["rings"][ring]
        jreg[JOINT_INDEX[jname], ids] = 1.0 / len(ids)
        center = mesh.vertices[ids].mean(axis=0)
        if np.abs(center - JOINTS0[JOINT_INDEX[jname]]).max() > 1e-9:
            raise AssertionError(f"ring for {jname} is not centered on the joint")

    markers = {
        "head_top": np.asarray([acc.pieces["head"]["pole1"]], dtype=np.int64),
        "hand_tip_l": np.asarray([acc.pieces["hand_l"]["pole1"]], dtype=np.int64),
        "hand_tip_r": np.asarray([acc.pieces["hand_r"]["pole1"]], dtype=np.int64),
        "foot_tip_l": np.asarray([acc.pieces["foot_l"]["pole1"]], dtype=np.int64),
        "foot_tip_r": np.asarray([acc.pieces["foot_r"]["pole1"]], dtype=np.int64),
        "thigh_mid_l": acc.pieces["thigh_l"]["rings"]["thigh_mid"],
        "thigh_mid_r": acc.pieces["thigh_r"]["rings"]["thigh_mid"],
    }

    basis = _field_basis(mesh.vertices)
    model = BodyModel(
        template=mesh,
        shape_basis=basis,
        joint_parents=JOINT_PARENTS.copy(),
        joint_regressor=jreg,
        skin_weights=skin,
        markers=markers,
    )
    model.validate()
    return model


# ---------------------------------------------------------------------------
# skeleton (puppet) construction


# part table: (name, attach joint, axis joints or None, p0, p1, radius, kwargs)
_PART_SPECS = [
    ("skull", "head", None, (0, 158, 0), (0, 190, 0), 17.0, {"cap_len": 8.0}),
    ("cervical", "neck", ("neck", "head"), (0, 136, -6), (0, 155, -6), 6.0, {}),
    ("thoracic", "spine2", ("spine2", "spine3"), (0, 82, -10), (0, 130, -10), 7.0, {}),
    ("lumbar", "spine1", ("spine1", "spine2"), (0, 22, -11), (0, 78, -11), 8.0, {"cap_len": 4.0}),
    ("sacrum", "pelvis", ("pelvis", "spine1"), (0, -14, -10), (0, 16, -10), 9.0, {}),
    ("pelvis_bone", "pelvis", ("hip_r", "hip_l"), (-30, 0, -2), (30, 0, -2), 10.0, {"rz": 8.0}),
    ("ribcage", "spine2", ("spine2", "spine3"), (0, 92, 4), (0, 118, 4), 28.0, {"rz": 13.0, "cap_len": 6.0}),
]
_SIDE_PART_SPECS = [
    ("clavicle", "collar", ("collar", "shoulder"), (13, 137, 6), (70, 137, 2), 4.0, {}),
    ("humerus", "shoulder", ("shoulder", "elbow"), (70, 133, 0), (70, 49, 0), 6.0, {}),
    ("forearm_bone", "elbow", ("elbow", "wrist"), (70, 45, -3), (70, -28, -3), 4.0, {}),
    ("hand_bone", "wrist", ("wrist", "hand"), (70, -32, 0), (70, -68, 0), 3.5, {}),
    ("femur", "hip", ("hip", "knee"), (28, -2, 0), (28, -141, 0), 7.0, {}),
    ("tibia", "knee", ("knee", "ankle"), (28, -145, 6), (28, -265, 6), 6.0, {}),
    ("foot_bone", "ankle", ("ankle", "foot"), (28, -269, 2), (28, -300, 2), 5.0, {}),
]

# stitch-tree edges: (parent part, child part, junction point); sided entries
# are written for the left side and mirrored automatically
_JUNCTIONS = [
    ("pelvis_bone", "sacrum", (0, 6, -7)),
    ("sacrum", "lumbar", (0, 19, -10.5)),
    ("lumbar", "thoracic", (0, 80, -10.5)),
    ("thoracic", "cervical", (0, 133, -8)),
    ("cervical", "skull", (0, 156, -4)),
    ("thoracic", "ribcage", (0, 107, -4)),
]
_SIDE_JUNCTIONS = [
    ("ribcage", "clavicle", (13, 133, 4)),
    ("clavicle", "humerus", (70, 135, 1)),
    ("humerus", "forearm_bone", (70, 47, -1)),
    ("forearm_bone", "hand_bone", (70, -30, -1)),
    ("pelvis_bone", "femur", (28, -1, -1)),
    ("femur", "tibia", (28, -143, 3)),
    ("tibia", "foot_bone", (28, -267, 4)),
]


@dataclass
class _PartInfo:
    name: str
    attach: int
    axis: tuple | None
    p0: np.ndarray
    p1: np.ndarray


def _build_puppet_geometry(rng):
    """Returns (accumulator, part infos in order, junction disc bookkeeping)."""
    acc = _Accumulator()
    jitter = lambda: float(rng.uniform(0.98, 1.02))
    infos = []

    def add_part(name, attach, axis, p0, p1, r, kwargs, mirror):
        verts, faces, info = _capsule(np.asarray(p0, float), np.asarray(p1, float), r * jitter(), m=8, **kwargs)
        if mirror:
            verts, faces = _mirror_piece(verts, faces)
        entry = acc.add(name, verts, faces, info)
        sgn = -1.0 if mirror else 1.0
        infos.append(
            _PartInfo(
                name=name,
                attach=attach,
                axis=axis,
                p0=np.asarray(p0, float) * [sgn, 1, 1],
                p1=np.asarray(p1, float) * [sgn, 1, 1],
            )
        )
        return entry

    for name, attach, axis, p0, p1, r, kwargs in _PART_SPECS:
        axis_ids = None if axis is None else (JOINT_INDEX[axis[0]], JOINT_INDEX[axis[1]])
        add_part(name, JOINT_INDEX[attach], axis_ids, p0, p1, r, kwargs, mirror=False)
    for base, attach, axis, p0, p1, r, kwargs in _SIDE_PART_SPECS:
        for side, mirror in (("l", False), ("r", True)):
            axis_ids = (JOINT_INDEX[f"{axis[0]}_{side}"], JOINT_INDEX[f"{axis[1]}_{side}"])
            add_part(
                f"{base}_{side}",
                JOINT_INDEX[f"{attach}_{side}"],
                axis_ids,
                p0,
                p1,
                r,
                kwargs,
                mirror=mirror,
            )

    part_names = [pi.name for pi in infos]
    part_idx = {n: i for i, n in enumerate(part_names)}

    # joint markers: a tiny fan whose center vertex sits exactly at a body
    # joint, owned by a part whose scaling maps it to the posed joint exactly;
    # these center vertices become the bias-free primary landmarks
    joint_marker_part = {
        "pelvis": "pelvis_bone",
        "hip_l": "femur_l",
        "hip_r": "femur_r",
        "spine1": "lumbar",
        "knee_l": "tibia_l",
        "knee_r": "tibia_r",
        "spine2": "thoracic",
        "ankle_l": "foot_bone_l",
        "ankle_r": "foot_bone_r",
        "spine3": "thoracic",
        "foot_l": "foot_bone_l",
        "foot_r": "foot_bone_r",
        "neck": "cervical",
        "collar_l": "clavicle_l",
        "collar_r": "clavicle_r",
        "head": "skull",
        "shoulder_l": "humerus_l",
        "shoulder_r": "humerus_r",
        "elbow_l": "forearm_bone_l",
        "elbow_r": "forearm_bone_r",
        "wrist_l": "hand_bone_l",
        "wrist_r": "hand_bone_r",
        "hand_l": "hand_bone_l",
        "hand_r": "hand_bone_r",
    }
    joint_marker_center = {}
    marker_ownership = []  # (part name, ids)
    for jname, pname in joint_marker_part.items():
        j = JOINT_INDEX[jname]
        dv, dfc = _disc(JOINTS0[j], np.array([0.0, 0.0, 1.0]), radius=1.2, m=3)
        entry = acc.add(f"jmark_{jname}", dv, dfc)
        joint_marker_center[j] = int(entry["ids"][0])
        marker_ownership.append((pname, entry["ids"]))

    # junction discs: a small fan duplicated into both adjoining parts
    junctions = []
    for pa, pb, pt in _JUNCTIONS:
        junctions.append((pa, pb, np.asarray(pt, float)))
    for pa, pb, pt in _SIDE_JUNCTIONS:
        for side, sgn in (("l", 1.0), ("r", -1.0)):
            a = pa if pa in part_idx else f"{pa}_{side}"
            b = pb if pb in part_idx else f"{pb}_{side}"
            junctions.append((a, b, np.asarray(pt, float) * [sgn, 1, 1]))

    disc_pairs = []  # (part_a, part_b, ids_a, ids_b)
    for pa, pb, pt in junctions:
        normal = infos[part_idx[pb]].p1 - infos[part_idx[pb]].p0
        dv, dfc = _disc(pt, normal)
        ea = acc.add(f"iface_{pa}__{pb}_a", dv, dfc)
        eb = acc.add(f"iface_{pa}__{pb}_b", dv.copy(), dfc.copy())
        disc_pairs.append((pa, pb, ea["ids"], eb["ids"]))

    return acc, infos, part_idx, disc_pairs, joint_marker_center, marker_ownership


def _assemble_puppet(acc, infos, part_idx, disc_pairs, marker_ownership):
    """Group accumulated pieces into PuppetPart objects plus stitch pairs."""
    mesh = acc.mesh()
    part_vertex_ids = {pi.name: list(acc.pieces[pi.name]["ids"]) for pi in infos}
    for pa, pb, ids_a, ids_b in disc_pairs:
        part_vertex_ids[pa].extend(ids_a)
        part_vertex_ids[pb].extend(ids_b)
    for pname, ids in marker_ownership:
        part_vertex_ids[pname].extend(ids)

    parts = []
    for pi in infos:
        ids = np.asarray(sorted(part_vertex_ids[pi.name]), dtype=np.int64)
        local = mesh.vertices[ids]
        parts.append(
            PuppetPart(name=pi.name, vertex_ids=ids, local_template=local, centroid=local.mean(axis=0))
        )

    interfaces = []
    for pa, pb, ids_a, ids_b in disc_pairs:
        for va, vb in zip(ids_a, ids_b):
            interfaces.append(
                StitchPair(part_a=part_idx[pa], vertex_a=int(va), part_b=part_idx[pb], vertex_b=int(vb))
            )

    symmetry_pairs = []
    for base, *_ in _SIDE_PART_SPECS:
        symmetry_pairs.append((part_idx[f"{base}_l"], part_idx[f"{base}_r"]))
    return mesh, parts, interfaces, symmetry_pairs


# ---------------------------------------------------------------------------
# ground-truth linkage


@dataclass
class Linkage:
    attach: np.ndarray  # (P,) joint index per part
    axis_joints: list  # per part: (j0, j1) or None
    girth: np.ndarray  # (P, N_SHAPE) transverse scaling weights
    axis_dir: np.ndarray  # (P, 3) unit template axis per part
    attach_pos0: np.ndarray  # (P, 3) template attach-joint positions


def _joints_at(beta: np.ndarray) -> np.ndarray:
    """Rest joint positions under the shape fields (exact, affine)."""
    jb = _field_basis(JOINTS0)
    return JOINTS0 + jb @ np.asarray(beta, dtype=float)


def _part_scale_matrix(link: Linkage, p: int, beta, joints_beta) -> np.ndarray:
    girth = 1.0 + float(link.girth[p] @ beta)
    axis = link.axis_dir[p]
    outer = np.outer(axis, axis)
    if link.axis_joints[p] is None:
        lam = girth
    else:
        # axial projection of the joint span: affine in the coefficients even
        # when a joint also moves transversely under some component
        j0, j1 = link.axis_joints[p]
        l0 = float(axis @ (JOINTS0[j1] - JOINTS0[j0]))
        lb = float(axis @ (joints_beta[j1] - joints_beta[j0]))
        lam = lb / l0
    return lam * outer + girth * (np.eye(3) - outer)


def ground_truth_canonical(bundle, beta) -> np.ndarray:
    """Skeleton vertices in the canonical pose: each part scaled about its
    attach joint (longitudinal from joint distances, transverse from girth)."""
    link = bundle.linkage
    puppet = bundle.puppet
    beta = np.asarray(beta, dtype=float)
    jb = _joints_at(beta)
    out = np.empty_like(puppet.template.vertices)
    for p, part in enumerate(puppet.parts):
        a = int(link.attach[p])
        m = _part_scale_matrix(link, p, beta, jb)
        local = part.local_template - link.attach_pos0[p]
        out[part.vertex_ids] = jb[a] + local @ m.T
    return out


def ground_truth_mesh(bundle, beta, pose: PoseVector) -> Mesh:
    """Posed ground-truth skeleton: canonical scaling then the attach joint's
    world transform from the body's kinematic chain."""
    fwd = LbsForward(bundle.body, beta, pose)
    canon = ground_truth_canonical(bundle, beta)
    link = bundle.linkage
    out = np.empty_like(canon)
    for p, part in enumerate(bundle.puppet.parts):
        a = int(link.attach[p])
        rw = fwd.rw[a]
        bvec = fwd.tw[a] - rw @ fwd.jnt[a] + pose.translation
        out[part.vertex_ids] = canon[part.vertex_ids] @ rw.T + bvec
    return Mesh(out, bundle.puppet.template.faces.copy())


def ground_truth_state(bundle, beta, pose: PoseVector) -> PuppetState:
    """Puppet state reproducing ground_truth_mesh exactly (shape in the
    puppet's construction basis, scaled by the +-2 sampling span)."""
    fwd = LbsForward(bundle.body, beta, pose)
    link = bundle.linkage
    P = bundle.puppet.n_parts
    t = np.empty((P, 3))
    r = np.empty((P, 3))
    for p, part in enumerate(bundle.puppet.parts):
        a = int(link.attach[p])
        rw = fwd.rw[a]
        bvec = fwd.tw[a] - rw @ fwd.jnt[a] + pose.translation
        c = part.centroid
        t[p] = bvec + rw @ c - c
        r[p] = rotation_log(rw)
    return PuppetState(shape=np.asarray(beta, dtype=float) / 4.0, t=t, r=r)


# ---------------------------------------------------------------------------
# bundle assembly


@dataclass
class ToyBundle:
    body: BodyModel
    puppet: PuppetModel
    linkage: Linkage
    offset_pairs: "OffsetPairs"
    canonical_pose: PoseVector
    canonical_part_rotations: np.ndarray  # (P, 3)
    pose_prior: PosePrior
    ball_joints: list  # (name, ids_a, ids_b) on the skeleton template
    ligaments: list  # (ia, ib) global skeleton vertex pairs
    contacts: list  # (skel_vid, skin_vid)
    proximity: list  # (skel_vid, [skin_vids])
    contact_offset_mm: float = 5.0
    li_anchor_offsets: np.ndarray | None = None  # (29, 3)
    sample_cfg: dict = field(default_factory=dict)
    image_cfg: dict = field(default_factory=dict)
    seed: int = 0

    def save(self, path) -> None:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        bundleio.save_body_model(self.body, root / "body")
        bundleio.save_puppet_model(self.puppet, root / "puppet")
        tables = {
            "seed": self.seed,
            "canonical_pose": {
                "rotations": self.canonical_pose.rotations.tolist(),
                "translation": self.canonical_pose.translation.tolist(),
            },
            "canonical_part_rotations": self.canonical_part_rotations.tolist(),
            "pose_prior_sigma": self.pose_prior.sigma,
            "offset_pairs": {
                "skin_ids": self.offset_pairs.skin_ids.tolist(),
                "skel_ids": self.offset_pairs.skel_ids.tolist(),
                "d0": self.offset_pairs.d0.tolist(),
            },
            "ball_joints": [
                {"name": n, "ids_a": list(map(int, a)), "ids_b": list(map(int, b))}
                for n, a, b in self.ball_joints
            ],
            "ligaments": [[int(a), int(b)] for a, b in self.ligaments],
            "contacts": [[int(a), int(b)] for a, b in self.contacts],
            "proximity": [[int(a), list(map(int, r))] for a, r in self.proximity],
            "contact_offset_mm": self.contact_offset_mm,
            "li_anchor_offsets": self.li_anchor_offsets.tolist()
            if self.li_anchor_offsets is not None
            else None,
            "linkage": {
                "attach": self.linkage.attach.tolist(),
                "axis_joints": [list(a) if a is not None else None for a in self.linkage.axis_joints],
                "girth": self.linkage.girth.tolist(),
                "axis_dir": self.linkage.axis_dir.tolist(),
                "attach_pos0": self.linkage.attach_pos0.tolist(),
            },
            "sample": self.sample_cfg,
            "image": self.image_cfg,
        }
        (root / "bundle.json").write_text(json.dumps(tables, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ToyBundle":
        from .fitters import OffsetPairs

        root = Path(path)
        body = bundleio.load_body_model(root / "body")
        puppet = bundleio.load_puppet_model(root / "puppet")
        t = json.loads((root / "bundle.json").read_text())
        link = t["linkage"]
        linkage = Linkage(
            attach=np.asarray(link["attach"], dtype=np.int64),
            axis_joints=[tuple(a) if a is not None else None for a in link["axis_joints"]],
            girth=np.asarray(link["girth"], dtype=np.float64),
            axis_dir=np.asarray(link["axis_dir"], dtype=np.float64),
            attach_pos0=np.asarray(link["attach_pos0"], dtype=np.float64),
        )
        pairs = OffsetPairs(
            skin_ids=np.asarray(t["offset_pairs"]["skin_ids"], dtype=np.int64),
            skel_ids=np.asarray(t["offset_pairs"]["skel_ids"], dtype=np.int64),
            d0=np.asarray(t["offset_pairs"]["d0"], dtype=np.float64),
        )
        return cls(
            body=body,
            puppet=puppet,
            linkage=linkage,
            offset_pairs=pairs,
            canonical_pose=PoseVector(
                np.asarray(t["canonical_pose"]["rotations"]),
                np.asarray(t["canonical_pose"]["translation"]),
            ),
            canonical_part_rotations=np.asarray(t["canonical_part_rotations"], dtype=np.float64),
            pose_prior=PosePrior(
                mean=np.asarray(t["canonical_pose"]["rotations"]), sigma=float(t["pose_prior_sigma"])
            ),
            ball_joints=[
                (
                    bj["name"],
                    np.asarray(bj["ids_a"], dtype=np.int64),
                    np.asarray(bj["ids_b"], dtype=np.int64),
                )
                for bj in t["ball_joints"]
            ],
            ligaments=[tuple(x) for x in t["ligaments"]],
            contacts=[tuple(x) for x in t["contacts"]],
            proximity=[(int(a), np.asarray(r, dtype=np.int64)) for a, r in t["proximity"]],
            contact_offset_mm=float(t["contact_offset_mm"]),
            li_anchor_offsets=np.asarray(t["li_anchor_offsets"], dtype=np.float64)
            if t.get("li_anchor_offsets") is not None
            else None,
            sample_cfg=t["sample"],
            image_cfg=t["image"],
            seed=int(t["seed"]),
        )


def make_toy_bundle(seed: int = 0) -> ToyBundle:
    """Deterministically construct the synthetic body + skeleton asset pair."""
    from .fitters import OffsetPairs, build_offset_pairs

    rng = np.random.default_rng(seed)
    body = _build_body(rng)
    acc, infos, part_idx, disc_pairs, jmark, marker_ownership = _build_puppet_geometry(rng)
    skel_mesh, parts, interfaces, symmetry_pairs = _assemble_puppet(acc, infos, part_idx, disc_pairs, marker_ownership)

    attach = np.asarray([pi.attach for pi in infos], dtype=np.int64)
    axis_joints = [pi.axis for pi in infos]
    axis_dir = np.empty((len(infos), 3))
    girth = np.empty((len(infos), N_SHAPE))
    attach_pos0 = np.empty((len(infos), 3))
    for p, pi in enumerate(infos):
        if pi.axis is not None:
            d = JOINTS0[pi.axis[1]] - JOINTS0[pi.axis[0]]
        else:
            d = pi.p1 - pi.p0
        axis_dir[p] = d / np.linalg.norm(d)
        center = (pi.p0 + pi.p1) / 2.0
        girth[p] = _girth_weights(center)
        attach_pos0[p] = JOINTS0[attach[p]]
    linkage = Linkage(
        attach=attach,
        axis_joints=axis_joints,
        girth=girth,
        axis_dir=axis_dir,
        attach_pos0=attach_pos0,
    )

    # landmark tables: exact joint markers, then the extremity bone tips
    li = [jmark[j] for j in range(N_JOINTS)]
    li.append(int(acc.pieces["skull"]["pole1"]))
    li.append(int(acc.pieces["hand_bone_l"]["pole1"]))
    li.append(int(acc.pieces["hand_bone_r"]["pole1"]))
    li.append(int(acc.pieces["foot_bone_l"]["pole1"]))
    li.append(int(acc.pieces["foot_bone_r"]["pole1"]))
    if len(set(li)) != 29:
        raise AssertionError("primary landmark indices collide")

    lb = []
    for p, part in enumerate(parts):
        local = skel_mesh.vertices[part.vertex_ids]
        along = local @ axis_dir[p]
        lb.append(int(part.vertex_ids[np.argmin(along)]))
        lb.append(int(part.vertex_ids[np.argmax(along)]))
        d2 = ((local - part.centroid) ** 2).sum(axis=1)
        lb.append(int(part.vertex_ids[np.argmin(d2)]))

    # template offsets from the surface-side landmark anchors (joints, then
    # skin tips) to the skeleton landmark vertices; the surface fit adds them
    # so its anchors target the right spots
    tip_ids = [int(body.markers[k][0]) for k in
               ("head_top", "hand_tip_l", "hand_tip_r", "foot_tip_l", "foot_tip_r")]
    anchors0 = np.vstack([JOINTS0, body.template.vertices[tip_ids]])
    li_anchor_offsets = skel_mesh.vertices[np.asarray(li, dtype=np.int64)] - anchors0

    puppet = PuppetModel(
        parts=parts,
        template=skel_mesh,
        shape_basis=np.zeros((3 * skel_mesh.n_vertices, N_SHAPE)),
        interfaces=interfaces,
        landmarks_li=np.asarray(li, dtype=np.int64),
        landmarks_lb=np.asarray(lb, dtype=np.int64),
        symmetry_pairs=symmetry_pairs,
    )

    bundle = ToyBundle(
        body=body,
        puppet=puppet,
        linkage=linkage,
        offset_pairs=OffsetPairs(
            skin_ids=np.zeros(0, dtype=np.int64),
            skel_ids=np.zeros(0, dtype=np.int64),
            d0=np.zeros((0, 3)),
        ),
        canonical_pose=PoseVector.zeros(N_JOINTS),
        canonical_part_rotations=np.zeros((len(parts), 3)),
        pose_prior=PosePrior(mean=np.zeros((N_JOINTS, 3)), sigma=0.2),
        ball_joints=[],
        ligaments=[],
        contacts=[],
        proximity=[],
        li_anchor_offsets=li_anchor_offsets,
        sample_cfg={"pose_delta": 0.1, "margin_lo": 20, "margin_hi": 60, "x_jitter": 8.0},
        image_cfg={"width": IMAGE_WIDTH, "height": IMAGE_HEIGHT, "pixels_per_mm": PIXELS_PER_MM},
        seed=seed,
    )

    # shape basis from registrations at +-2 units of each component
    reg_pairs = []
    for k in range(N_SHAPE):
        e = np.zeros(N_SHAPE)
        e[k] = 2.0
        plus = Mesh(ground_truth_canonical(bundle, e), skel_mesh.faces)
        minus = Mesh(ground_truth_canonical(bundle, -e), skel_mesh.faces)
        reg_pairs.append((plus, minus))
    puppet.shape_basis = build_initial_shape_basis(reg_pairs)
    puppet.validate()

    # articulation tables
    ball_joints = []
    for side in ("l", "r"):
        ball_joints.append(
            (
                f"shoulder_{side}",
                acc.pieces[f"clavicle_{side}"]["cap1"],
                acc.pieces[f"humerus_{side}"]["cap0"],
            )
        )
        ball_joints.append(
            (
                f"elbow_{side}",
                acc.pieces[f"humerus_{side}"]["cap1"],
                acc.pieces[f"forearm_bone_{side}"]["cap0"],
            )
        )
        ball_joints.append(
            (
                f"hip_{side}",
                acc.pieces["pelvis_bone"]["cap1" if side == "l" else "cap0"],
                acc.pieces[f"femur_{side}"]["cap0"],
            )
        )
    bundle.ball_joints = ball_joints

    ligaments = []
    for side in ("l", "r"):
        fem = acc.pieces[f"femur_{side}"]["rings"]["p1"]
        tib = acc.pieces[f"tibia_{side}"]["rings"]["p0"]
        for k in range(0, len(fem), max(1, len(fem) // 4)):
            ligaments.append((int(fem[k]), int(tib[k % len(tib)])))
    bundle.ligaments = ligaments

    # contact pairs (shin crest, posterior elbow region): choose the bone
    # crest vertex and skin vertex whose offset-along-normal residual is
    # smallest in the template configuration
    from .geom import vertex_normals as _vn

    body_v = body.template.vertices
    body_n = _vn(body.template)
    contacts = []
    for side in ("l", "r"):
        for bone_piece, sign in ((f"tibia_{side}", 1.0), (f"forearm_bone_{side}", -1.0)):
            ids = acc.pieces[bone_piece]["ids"]
            vv = skel_mesh.vertices[ids]
            crest = ids[sign * vv[:, 2] >= (sign * vv[:, 2]).max() - 1.5]
            crest_v = skel_mesh.vertices[crest]
            cands = np.flatnonzero(sign * body_n[:, 2] > 0.35)
            near = cands[
                np.min(
                    ((body_v[cands, None, :2] - crest_v[None, :, :2]) ** 2).sum(axis=2), axis=1
                )
                < 25.0 ** 2
            ]
            target = body_v[near] - bundle.contact_offset_mm * body_n[near]
            res = np.linalg.norm(crest_v[:, None, :] - target[None, :, :], axis=2)
            bi, si = np.unravel_index(np.argmin(res), res.shape)
            contacts.append((int(crest[bi]), int(near[si])))
    bundle.contacts = contacts

    proximity = []
    spine1_ring = np.flatnonzero(body.joint_regressor[JOINT_INDEX["spine1"]] > 0)
    spine2_ring = np.flatnonzero(body.joint_regressor[JOINT_INDEX["spine2"]] > 0)
    for bone_piece, ring in (("lumbar", spine1_ring), ("thoracic", spine2_ring)):
        ids = acc.pieces[bone_piece]["ids"]
        vv = skel_mesh.vertices[ids]
        pick = ids[np.argmax(vv[:, 2])]
        proximity.append((int(pick), ring))
    bundle.proximity = proximity

    bundle.offset_pairs = build_offset_pairs(body.template, skel_mesh)
    return bundle


# ---------------------------------------------------------------------------
# subject sampling, rendering, augmentation


@dataclass
class SubjectParams:
    beta: np.ndarray
    pose: PoseVector
    margin_top: int


@dataclass
class SyntheticSubject:
    subject_id: str
    beta: np.ndarray
    pose: PoseVector
    margin_top: int
    camera: OrthoCamera
    skin_mask: BinaryMask
    bones_mask: BinaryMask
    landmarks2d: np.ndarray  # (29, 2) pixels
    landmarks3d: np.ndarray  # (63, 3) mm, posed per-part landmarks
    split: str = "train"


@dataclass
class AugmentConfig:
    erode_max: int = 2
    max_rects: int = 3
    rect_frac: float = 0.18


def sample_subject(bundle: ToyBundle, seed: int) -> SubjectParams:
    """Shape uniform in [-2.5, 2.5]^10, pose jittered around the canonical
    lying pose, top margin sampled uniformly from the configured range."""
    rng = np.random.default_rng(seed)
    cfg = bundle.sample_cfg
    beta = rng.uniform(-2.5, 2.5, N_SHAPE)
    delta = float(cfg.get("pose_delta", 0.1))
    rot = bundle.canonical_pose.rotations + rng.uniform(-delta, delta, (N_JOINTS, 3))
    trans = np.array([rng.uniform(-cfg.get("x_jitter", 8.0), cfg.get("x_jitter", 8.0)), 0.0, 0.0])
    margin = int(rng.integers(int(cfg.get("margin_lo", 20)), int(cfg.get("margin_hi", 60)) + 1))
    return SubjectParams(beta=beta, pose=PoseVector(rot, trans), margin_top=margin)


def render_pair(bundle: ToyBundle, params: SubjectParams, cam: OrthoCamera | None = None) -> SyntheticSubject:
    """Render the skin and ground-truth skeleton masks plus landmark tables."""
    skin = LbsForward(bundle.body, params.beta, params.pose).mesh()
    if cam is None:
        img = bundle.image_cfg
        cam = OrthoCamera.frame(
            skin.vertices,
            int(img["width"]),
            int(img["height"]),
            params.margin_top,
            float(img["pixels_per_mm"]),
        )
    skel = ground_truth_mesh(bundle, params.beta, params.pose)
    skin_mask = rasterize_silhouette(skin, cam)
    bones_mask = rasterize_silhouette(skel, cam)
    lm2d = project_ortho(skel.vertices[bundle.puppet.landmarks_li], cam)
    lm3d = skel.vertices[bundle.puppet.landmarks_lb].copy()
    return SyntheticSubject(
        subject_id="",
        beta=params.beta.copy(),
        pose=params.pose,
        margin_top=params.margin_top,
        camera=cam,
        skin_mask=skin_mask,
        bones_mask=bones_mask,
        landmarks2d=lm2d,
        landmarks3d=lm3d,
    )


def augment(subject: SyntheticSubject, cfg: AugmentConfig, seed: int) -> SyntheticSubject:
    """Erode and partially occlude the skeleton mask; landmarks stay fixed."""
    rng = np.random.default_rng(seed)
    bones = subject.bones_mask
    radius = int(rng.integers(0, cfg.erode_max + 1))
    if radius > 0:
        bones = erode(bones, radius)
    n_rect = int(rng.integers(0, cfg.max_rects + 1))
    rects = []
    h, w = bones.pixels.shape
    for _ in range(n_rect):
        rh = int(rng.integers(1, max(2, int(cfg.rect_frac * h))))
        rw_ = int(rng.integers(1, max(2, int(cfg.rect_frac * w))))
        rects.append((int(rng.integers(0, h)), int(rng.integers(0, w)), rh, rw_))
    if rects:
        bones = occlude(bones, rects)
    return replace(subject, bones_mask=bones)


# ---------------------------------------------------------------------------
# dataset generation


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_landmarks_csv(path, names, arr):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name"] + (["u", "v"] if arr.shape[1] == 2 else ["x", "y", "z"]))
        for name, row in zip(names, arr):
            w.writerow([name] + [repr(float(x)) for x in row])


def _read_landmarks_csv(path):
    rows = list(csv.reader(open(path)))
    return np.asarray([[float(x) for x in r[1:]] for r in rows[1:]], dtype=float)


def save_subject(subject: SyntheticSubject, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    subject.skin_mask.save_pgm(out / "skin.pgm")
    subject.bones_mask.save_pgm(out / "bones.pgm")
    _write_landmarks_csv(out / "landmarks2d.csv", [f"li{i:02d}" for i in range(29)], subject.landmarks2d)
    _write_landmarks_csv(out / "landmarks3d.csv", [f"lb{i:02d}" for i in range(63)], subject.landmarks3d)
    cam = subject.camera
    params = {
        "id": subject.subject_id,
        "split": subject.split,
        "beta": subject.beta.tolist(),
        "rotations": subject.pose.rotations.tolist(),
        "translation": subject.pose.translation.tolist(),
        "margin_top": subject.margin_top,
        "camera": {
            "axes": list(cam.axes),
            "signs": list(cam.signs),
            "pixels_per_mm": cam.pixels_per_mm,
            "offset_px": list(cam.offset_px),
            "width": cam.width,
            "height": cam.height,
            "margin_top": cam.margin_top,
            "margin_bottom": cam.margin_bottom,
        },
    }
    (out / "params.json").write_text(json.dumps(params, indent=2, sort_keys=True) + "\n")
    files = {}
    for f in ("skin.pgm", "skin.meta.json", "bones.pgm", "bones.meta.json",
              "landmarks2d.csv", "landmarks3d.csv", "params.json"):
        files[f] = _sha256(out / f)
    return files


def load_subject(subject_dir) -> SyntheticSubject:
    d = Path(subject_dir)
    params = json.loads((d / "params.json").read_text())
    cam = OrthoCamera(
        axes=tuple(params["camera"]["axes"]),
        signs=tuple(params["camera"]["signs"]),
        pixels_per_mm=float(params["camera"]["pixels_per_mm"]),
        offset_px=tuple(params["camera"]["offset_px"]),
        width=int(params["camera"]["width"]),
        height=int(params["camera"]["height"]),
        margin_top=int(params["camera"]["margin_top"]),
        margin_bottom=int(params["camera"]["margin_bottom"]),
    )
    return SyntheticSubject(
        subject_id=params["id"],
        beta=np.asarray(params["beta"], dtype=float),
        pose=PoseVector(np.asarray(params["rotations"]), np.asarray(params["translation"])),
        margin_top=int(params["margin_top"]),
        camera=cam,
        skin_mask=BinaryMask.load_pgm(d / "skin.pgm"),
        bones_mask=BinaryMask.load_pgm(d / "bones.pgm"),
        landmarks2d=_read_landmarks_csv(d / "landmarks2d.csv"),
        landmarks3d=_read_landmarks_csv(d / "landmarks3d.csv"),
        split=params["split"],
    )


def generate_dataset(
    bundle: ToyBundle,
    n: int,
    seed: int,
    out_dir,
    augment_cfg: AugmentConfig | None = None,
    train_frac: float = 0.8,
) -> dict:
    """Write n subjects plus a manifest; deterministic for fixed inputs.

    Subjects i with i % round(1/(1-train_frac)) at the cycle end go to the
    test split (default 80/20).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cycle = max(2, int(round(1.0 / max(1e-9, 1.0 - train_frac))))
    entries = []
    for i in range(n):
        sub_seed = seed * 1000003 + i
        params = sample_subject(bundle, sub_seed)
        subject = render_pair(bundle, params)
        if augment_cfg is not None:
            subject = augment(subject, augment_cfg, sub_seed + 17)
        subject.subject_id = f"s{i:04d}"
        subject.split = "test" if (i % cycle) == cycle - 1 else "train"
        files = save_subject(subject, out / "subjects" / subject.subject_id)
        entries.append(
            {"id": subject.subject_id, "split": subject.split, "seed": sub_seed, "files": files}
        )
    manifest = {
        "format_version": 1,
        "kind": "synthetic_dataset",
        "n": n,
        "seed": seed,
        "augmented": augment_cfg is not None,
        "subjects": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_dataset_manifest(dataset_dir) -> dict:
    return json.loads((Path(dataset_dir) / "manifest.json").read_text())
