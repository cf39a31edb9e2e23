"""Triangle meshes, a linear-blend-skinned parametric surface model,
orthographic cameras and a deterministic software silhouette rasterizer.

Units: vertex coordinates and translations are millimetres, rotations are
axis-angle radians, image coordinates are pixels (pixel centers at +0.5).
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .masks import BinaryMask

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# rotations


def skew(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    )


def rodrigues(w) -> np.ndarray:
    """Axis-angle vector (3,) to rotation matrix."""
    w = np.asarray(w, dtype=float)
    th2 = float(w @ w)
    k = skew(w)
    if th2 < 1e-16:
        return np.eye(3) + k + 0.5 * (k @ k)
    th = np.sqrt(th2)
    a = np.sin(th) / th
    b = (1.0 - np.cos(th)) / th2
    return np.eye(3) + a * k + b * (k @ k)


def rodrigues_jacobian(w) -> np.ndarray:
    """d rodrigues(w) / d w_c, returned as (3, 3, 3) with axis 0 indexing c."""
    w = np.asarray(w, dtype=float)
    r = rodrigues(w)
    th2 = float(w @ w)
    out = np.empty((3, 3, 3))
    eye = np.eye(3)
    if th2 < 1e-16:
        for c in range(3):
            out[c] = skew(eye[c])
        return out
    for c in range(3):
        v = w[c] * w + np.cross(w, (eye - r) @ eye[:, c])
        out[c] = (skew(v) / th2) @ r
    return out


def rotation_log(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix, magnitude in [0, pi]."""
    r = np.asarray(r, dtype=float)
    cos_th = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    th = float(np.arccos(cos_th))
    vee = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if th < 1e-7:
        return vee
    if th > np.pi - 1e-5:
        a = (r + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(a)))
        axis = a[:, k]
        axis = axis / np.linalg.norm(axis)
        # fix the sign using the off-diagonal skew part when it is informative
        if np.linalg.norm(vee) > 1e-12 and np.dot(axis, vee) < 0:
            axis = -axis
        return th * axis
    return th / np.sin(th) * vee


def wrap_axis_angle(rotations: np.ndarray) -> np.ndarray:
    """Wrap per-row axis-angle vectors so the rotation magnitude lies in (-pi, pi]."""
    rot = np.array(rotations, dtype=float, copy=True)
    mag = np.linalg.norm(rot, axis=-1)
    over = mag > np.pi
    if np.any(over):
        wrapped = np.mod(mag[over], 2.0 * np.pi)
        wrapped = np.where(wrapped > np.pi, wrapped - 2.0 * np.pi, wrapped)
        rot[over] *= (wrapped / mag[over])[:, None]
    return rot


# ---------------------------------------------------------------------------
# meshes


@dataclass
class Mesh:
    """Triangle mesh: vertices (N, 3) float64 in mm, faces (F, 3) int64."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must have shape (N, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must have shape (F, 3)")
        if not np.isfinite(self.vertices).all():
            raise ValueError("vertex coordinates must be finite")
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise ValueError("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValueError("degenerate face: repeated vertex index")

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    def copy(self) -> "Mesh":
        return Mesh(self.vertices.copy(), self.faces.copy())

    def transformed(self, rotation=None, translation=None) -> "Mesh":
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=float).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=float)
        return Mesh(v, self.faces.copy())


def vertex_normals(mesh: Mesh) -> np.ndarray:
    """Unit vertex normals, area-weighted over incident faces.

    Raises if any vertex is unreferenced or accumulates a zero normal.
    """
    v, f = mesh.vertices, mesh.faces
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, f[:, k], fn)
    norms = np.linalg.norm(acc, axis=1)
    bad = norms < 1e-12
    if bad.any():
        raise ValueError(
            f"{int(bad.sum())} vertices have no usable normal "
            "(unreferenced or cancelling incident faces)"
        )
    return acc / norms[:, None]


# ---------------------------------------------------------------------------
# mesh I/O: ASCII OBJ (v/f) and binary little-endian PLY


def save_obj(mesh: Mesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path) -> Mesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:4]]
            faces.append(idx)
    return Mesh(np.asarray(verts, dtype=float), np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def save_ply(mesh: Mesh, path) -> None:
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {mesh.n_faces}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    ).encode("ascii")
    body = mesh.vertices.astype("<f8").tobytes()
    faces = mesh.faces.astype("<i4")
    chunks = [body]
    three = struct.pack("<B", 3)
    for row in faces:
        chunks.append(three + row.tobytes())
    Path(path).write_bytes(header + b"".join(chunks))


def load_ply(path) -> Mesh:
    raw = Path(path).read_bytes()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header[1]:
        raise ValueError(f"{path}: only binary little-endian PLY is supported")
    n_vert = n_face = 0
    vert_dtype = "<f8"
    current = None
    for line in header:
        t = line.split()
        if not t:
            continue
        if t[0] == "element":
            current = t[1]
            if t[1] == "vertex":
                n_vert = int(t[2])
            elif t[1] == "face":
                n_face = int(t[2])
        elif t[0] == "property" and current == "vertex" and t[1] in ("float", "float32"):
            vert_dtype = "<f4"
    pos = end
    itemsize = np.dtype(vert_dtype).itemsize
    verts = np.frombuffer(raw, dtype=vert_dtype, count=3 * n_vert, offset=pos)
    verts = verts.reshape(n_vert, 3).astype(np.float64)
    pos += 3 * n_vert * itemsize
    faces = np.empty((n_face, 3), dtype=np.int64)
    for i in range(n_face):
        (cnt,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        if cnt != 3:
            raise ValueError("only triangle faces are supported")
        faces[i] = struct.unpack_from("<3i", raw, pos)
        pos += 12
    return Mesh(verts, faces)


# ---------------------------------------------------------------------------
# pose vector and body model


@dataclass
class PoseVector:
    """Per-joint axis-angle rotations (J, 3) plus a global translation (3,) mm.

    Rotations are wrapped on construction so each magnitude lies in (-pi, pi].
    """

    rotations: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotations = wrap_axis_angle(np.asarray(self.rotations, dtype=float).reshape(-1, 3))
        self.translation = np.array(self.translation, dtype=float, copy=True).reshape(3)
        if not (np.isfinite(self.rotations).all() and np.isfinite(self.translation).all()):
            raise ValueError("pose entries must be finite")

    @property
    def n_joints(self) -> int:
        return int(self.rotations.shape[0])

    @classmethod
    def zeros(cls, n_joints: int) -> "PoseVector":
        return cls(np.zeros((n_joints, 3)), np.zeros(3))

    @classmethod
    def from_flat(cls, flat, n_joints: int) -> "PoseVector":
        flat = np.asarray(flat, dtype=float).reshape(3 * n_joints + 3)
        return cls(flat[: 3 * n_joints].reshape(n_joints, 3), flat[3 * n_joints :])

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.rotations.ravel(), self.translation])


@dataclass
class BodyModel:
    """Linear-blend-skinned surface model.

    template  : rest mesh with N vertices
    shape_basis: (N, 3, K) vertex displacement per unit shape coefficient (mm)
    joint_parents: (J,) parent index per joint, root points at itself
    joint_regressor: (J, N) non-negative rows summing to 1
    skin_weights: (N, J) non-negative rows summing to 1
    markers   : named vertex-index tables (tips, landmark regions)
    """

    template: Mesh
    shape_basis: np.ndarray
    joint_parents: np.ndarray
    joint_regressor: np.ndarray
    skin_weights: np.ndarray
    markers: dict = field(default_factory=dict)

    def __post_init__(self):
        self.shape_basis = np.ascontiguousarray(self.shape_basis, dtype=np.float64)
        self.joint_parents = np.ascontiguousarray(self.joint_parents, dtype=np.int64)
        self.joint_regressor = np.ascontiguousarray(self.joint_regressor, dtype=np.float64)
        self.skin_weights = np.ascontiguousarray(self.skin_weights, dtype=np.float64)

    @property
    def n_vertices(self) -> int:
        return self.template.n_vertices

    @property
    def n_joints(self) -> int:
        return int(self.joint_parents.shape[0])

    @property
    def n_shape(self) -> int:
        return int(self.shape_basis.shape[2])

    def validate(self) -> None:
        n, j, k = self.n_vertices, self.n_joints, self.n_shape
        if k < 1:
            raise ValueError("shape basis needs at least one component")
        if self.shape_basis.shape != (n, 3, k):
            raise ValueError("shape basis shape mismatch")
        if self.joint_regressor.shape != (j, n) or self.skin_weights.shape != (n, j):
            raise ValueError("weight matrix shape mismatch")
        roots = np.flatnonzero(self.joint_parents == np.arange(j))
        if len(roots) != 1:
            raise ValueError("joint tree must have exactly one root")
        for start in range(j):
            seen, cur = 0, start
            while self.joint_parents[cur] != cur:
                cur = int(self.joint_parents[cur])
                seen += 1
                if seen > j:
                    raise ValueError("joint tree contains a cycle")
        for mat, axis_name in ((self.joint_regressor, "joint regressor"), (self.skin_weights, "skin weights")):
            if mat.min() < 0:
                raise ValueError(f"{axis_name} has negative entries")
            if np.abs(mat.sum(axis=1) - 1.0).max() > 1e-9:
                raise ValueError(f"{axis_name} rows must sum to 1")

    def joint_order(self) -> np.ndarray:
        """Joint indices ordered parents-before-children."""
        order, placed = [], np.zeros(self.n_joints, dtype=bool)
        root = int(np.flatnonzero(self.joint_parents == np.arange(self.n_joints))[0])
        order.append(root)
        placed[root] = True
        while len(order) < self.n_joints:
            for jj in range(self.n_joints):
                if not placed[jj] and placed[self.joint_parents[jj]]:
                    order.append(jj)
                    placed[jj] = True
        return np.asarray(order, dtype=np.int64)


class LbsForward:
    """Posed LBS evaluation with reverse-mode parameter gradients."""

    def __init__(self, model: BodyModel, shape, pose: PoseVector):
        shape = np.asarray(shape, dtype=float).reshape(-1)
        if shape.shape[0] != model.n_shape:
            raise ValueError(
                f"shape coefficient length {shape.shape[0]} != basis size {model.n_shape}"
            )
        if pose.n_joints != model.n_joints:
            raise ValueError("pose joint count does not match the model")
        self.model = model
        self.shape = shape
        self.pose = pose
        nj = model.n_joints
        self.v0 = model.template.vertices + np.einsum("nik,k->ni", model.shape_basis, shape)
        self.jnt = model.joint_regressor @ self.v0
        self.r_local = np.stack([rodrigues(pose.rotations[j]) for j in range(nj)])
        self.order = model.joint_order()
        par = model.joint_parents
        rw = np.empty((nj, 3, 3))
        tw = np.empty((nj, 3))
        for j in self.order:
            p = int(par[j])
            if p == j:
                rw[j] = self.r_local[j]
                tw[j] = self.jnt[j]
            else:
                rw[j] = rw[p] @ self.r_local[j]
                tw[j] = tw[p] + rw[p] @ (self.jnt[j] - self.jnt[p])
        self.rw, self.tw = rw, tw
        self.b = tw - np.einsum("jab,jb->ja", rw, self.jnt)
        w = model.skin_weights
        self.wv = np.einsum("nj,jab->nab", w, rw)
        self.vertices = (
            np.einsum("nab,nb->na", self.wv, self.v0) + w @ self.b + pose.translation
        )
        self.joints_posed = tw + pose.translation

    def mesh(self) -> Mesh:
        return Mesh(self.vertices, self.model.template.faces.copy())

    def backprop(self, d_vertices=None, d_joints=None):
        """Chain vertex/joint cotangents into (d_shape, d_rotations (J,3),
        d_translation) by reverse accumulation over the kinematic chain."""
        model, nj = self.model, self.model.n_joints
        n = model.n_vertices
        g = np.zeros((n, 3)) if d_vertices is None else np.asarray(d_vertices, dtype=float)
        gj = np.zeros((nj, 3)) if d_joints is None else np.asarray(d_joints, dtype=float)
        w = model.skin_weights
        par = model.joint_parents
        # direct cotangents of the per-joint world transforms
        s = np.einsum("nj,na->ja", w, g)
        g_rw = np.einsum("nj,na,nb->jab", w, g, self.v0)  # via Rw v0
        g_rw -= np.einsum("ja,jb->jab", s, self.jnt)  # via b = tw - Rw jnt
        g_tw = s + gj
        g_jnt = -np.einsum("jba,jb->ja", self.rw, s)  # via b, local term

        d_rot = np.zeros((nj, 3))
        for j in self.order[::-1]:
            p = int(par[j])
            if p == j:
                d_local = g_rw[j]
                g_jnt[j] += g_tw[j]  # tw_root = jnt_root
            else:
                d_local = self.rw[p].T @ g_rw[j]
                delta = self.jnt[j] - self.jnt[p]
                g_rw[p] += g_rw[j] @ self.r_local[j].T + np.outer(g_tw[j], delta)
                g_tw[p] += g_tw[j]
                rtg = self.rw[p].T @ g_tw[j]
                g_jnt[j] += rtg
                g_jnt[p] -= rtg
            jac = rodrigues_jacobian(self.pose.rotations[j])
            for c in range(3):
                d_rot[j, c] = float(np.tensordot(jac[c], d_local))

        g_v0 = np.einsum("na,nab->nb", g, self.wv) + model.joint_regressor.T @ g_jnt
        d_shape = np.einsum("nb,nbk->k", g_v0, model.shape_basis)
        d_trans = g.sum(axis=0) + gj.sum(axis=0)
        return d_shape, d_rot, d_trans


def lbs_pose(model: BodyModel, shape, pose: PoseVector) -> Mesh:
    """Pose the model: shape coefficients then per-joint rigid blending.

    With a zero pose this returns template + shape_basis . shape exactly.
    """
    return LbsForward(model, shape, pose).mesh()


# ---------------------------------------------------------------------------
# orthographic camera


@dataclass
class OrthoCamera:
    """Axis-aligned orthographic camera.

    World axis `axes[0]` maps to image u (columns), `axes[1]` to image v
    (rows), `axes[2]` is the discarded depth. `signs` flips each mapping.
    u = offset_px[0] + pixels_per_mm * signs[0] * p[axes[0]], same for v.
    """

    axes: tuple = (0, 1, 2)
    signs: tuple = (1.0, -1.0, 1.0)
    pixels_per_mm: float = 1.0
    offset_px: tuple = (0.0, 0.0)
    width: int = 0
    height: int = 0
    margin_top: int = 0
    margin_bottom: int = 0

    def __post_init__(self):
        if sorted(self.axes) != [0, 1, 2]:
            raise ValueError("axes must be a permutation of (0, 1, 2)")
        if not self.pixels_per_mm > 0:
            raise ValueError("pixels_per_mm must be positive")
        if self.margin_top < 0 or self.margin_bottom < 0:
            raise ValueError("margins must be non-negative")
        if self.height > 0 and self.margin_top + self.margin_bottom >= self.height:
            raise ValueError("margins must sum to less than the image height")

    @property
    def mm_per_pixel(self) -> float:
        return 1.0 / self.pixels_per_mm

    @classmethod
    def centered(cls, width: int, height: int, pixels_per_mm: float = 1.0) -> "OrthoCamera":
        """World origin at the image center; +x right, +y up, +z toward the camera."""
        return cls(
            axes=(0, 1, 2),
            signs=(1.0, -1.0, 1.0),
            pixels_per_mm=pixels_per_mm,
            offset_px=(width / 2.0, height / 2.0),
            width=width,
            height=height,
        )

    @classmethod
    def frame(
        cls,
        points,
        width: int,
        height: int,
        margin_top: int,
        pixels_per_mm: float = 1.0,
    ) -> "OrthoCamera":
        """Frame `points` so their topmost y lands `margin_top` pixels from the
        top edge and x is centered; the bottom margin falls out of the extent."""
        pts = np.asarray(points, dtype=float)
        y_max, y_min = pts[:, 1].max(), pts[:, 1].min()
        x_mid = (pts[:, 0].max() + pts[:, 0].min()) / 2.0
        off_v = margin_top + pixels_per_mm * y_max
        off_u = width / 2.0 - pixels_per_mm * x_mid
        bottom = height - (margin_top + pixels_per_mm * (y_max - y_min))
        return cls(
            axes=(0, 1, 2),
            signs=(1.0, -1.0, 1.0),
            pixels_per_mm=pixels_per_mm,
            offset_px=(off_u, off_v),
            width=width,
            height=height,
            margin_top=int(margin_top),
            margin_bottom=max(int(bottom), 0),
        )

    def projection_matrix(self) -> np.ndarray:
        """The equivalent (2, 4) affine map applied to homogeneous (x, y, z, 1)."""
        m = np.zeros((2, 4))
        m[0, self.axes[0]] = self.pixels_per_mm * self.signs[0]
        m[1, self.axes[1]] = self.pixels_per_mm * self.signs[1]
        m[0, 3], m[1, 3] = self.offset_px
        return m

    def uv_jacobian(self) -> np.ndarray:
        """d(u, v)/d(x, y, z) as a constant (2, 3) matrix."""
        return self.projection_matrix()[:, :3]


def project_ortho(points, cam: OrthoCamera) -> np.ndarray:
    """Project 3D points (M, 3) to continuous pixel coordinates (M, 2) = (u, v)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    s = cam.pixels_per_mm
    u = cam.offset_px[0] + s * cam.signs[0] * pts[:, cam.axes[0]]
    v = cam.offset_px[1] + s * cam.signs[1] * pts[:, cam.axes[1]]
    return np.stack([u, v], axis=1)


# ---------------------------------------------------------------------------
# silhouette rasterization (pixel-center coverage, top-left tie break)


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def rasterize_silhouette(mesh: Mesh, cam: OrthoCamera) -> BinaryMask:
    """Binary coverage mask: a pixel is foreground iff its center lies inside
    the projection of at least one triangle. Ties on edges use the top-left rule."""
    if cam.width <= 0 or cam.height <= 0:
        raise ValueError("camera image area must be positive")
    if mesh.n_vertices == 0 or mesh.n_faces == 0:
        raise ValueError("cannot rasterize an empty mesh")
    h, w = cam.height, cam.width
    out = np.zeros(h * w, dtype=bool)
    uv = project_ortho(mesh.vertices, cam)
    tri = uv[mesh.faces]  # (F, 3, 2)
    area2 = _cross2(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = area2 < 0
    tri[flip] = tri[flip][:, ::-1, :]
    keep = np.abs(area2) > 0
    tri = tri[keep]
    if not len(tri):
        return BinaryMask(out.reshape(h, w), cam.mm_per_pixel)
    lo = np.ceil(tri.min(axis=1) - 0.5).astype(np.int64)
    hi = np.floor(tri.max(axis=1) - 0.5).astype(np.int64)
    np.clip(lo, 0, [w - 1, h - 1], out=lo)
    np.clip(hi, 0, [w - 1, h - 1], out=hi)
    span = hi - lo + 1
    valid = (tri.max(axis=1) >= 0.5).all(axis=1) & (span > 0).all(axis=1)
    valid &= (tri.min(axis=1) <= [w - 0.5, h - 0.5]).all(axis=1)
    tri, lo, span = tri[valid], lo[valid], span[valid]
    if not len(tri):
        return BinaryMask(out.reshape(h, w), cam.mm_per_pixel)
    counts = span[:, 0] * span[:, 1]
    offsets = np.concatenate([[0], np.cumsum(counts)])
    total = int(offsets[-1])
    fidx = np.repeat(np.arange(len(tri)), counts)
    local = np.arange(total) - offsets[fidx]
    px = lo[fidx, 0] + local % span[fidx, 0]
    py = lo[fidx, 1] + local // span[fidx, 0]
    ucoord = px + 0.5
    vcoord = py + 0.5
    inside = np.ones(total, dtype=bool)
    # per-face edge coefficients: e(p) = eu * u + ev * v + ec, inside where
    # e > 0 or (e == 0 on a top/left edge)
    for i0, i1 in ((1, 2), (2, 0), (0, 1)):
        v0, v1 = tri[:, i0], tri[:, i1]
        d = v1 - v0
        eu = -d[:, 1]
        ev = d[:, 0]
        ec = -(eu * v0[:, 0] + ev * v0[:, 1])
        tl = (d[:, 1] < 0) | ((d[:, 1] == 0) & (d[:, 0] > 0))
        e = eu[fidx] * ucoord + ev[fidx] * vcoord + ec[fidx]
        inside &= (e > 0) | ((e == 0) & tl[fidx])
    out[py[inside] * w + px[inside]] = True
    return BinaryMask(out.reshape(h, w), cam.mm_per_pixel)
