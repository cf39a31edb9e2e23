"""Part-based skeleton model: rigid parts sharing one shape space, stitched
together at duplicated interface vertices.

Each part owns a disjoint slice of the global template; posing rotates a part
about its template centroid and translates it, so parts move independently
and quadratic stitch penalties keep the assembly coherent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geom import Mesh, rodrigues, rodrigues_jacobian

log = logging.getLogger(__name__)


@dataclass
class PuppetPart:
    name: str
    vertex_ids: np.ndarray  # indices into the global template
    local_template: np.ndarray  # (n_p, 3) template coordinates, mm
    centroid: np.ndarray  # (3,) rotation center

    def __post_init__(self):
        self.vertex_ids = np.ascontiguousarray(self.vertex_ids, dtype=np.int64)
        self.local_template = np.ascontiguousarray(self.local_template, dtype=np.float64)
        self.centroid = np.ascontiguousarray(self.centroid, dtype=np.float64).reshape(3)


@dataclass
class StitchPair:
    part_a: int
    vertex_a: int  # global template index
    part_b: int
    vertex_b: int


@dataclass
class PuppetModel:
    """parts partition the global template; shape_basis is (3N, K) over the
    flattened template; landmarks are stored as global vertex indices."""

    parts: list
    template: Mesh
    shape_basis: np.ndarray
    interfaces: list = field(default_factory=list)
    landmarks_li: np.ndarray | None = None  # 29 indices
    landmarks_lb: np.ndarray | None = None  # 3 per part
    symmetry_pairs: list = field(default_factory=list)  # (left_part, right_part)

    def __post_init__(self):
        self.shape_basis = np.ascontiguousarray(self.shape_basis, dtype=np.float64)
        if self.landmarks_li is not None:
            self.landmarks_li = np.ascontiguousarray(self.landmarks_li, dtype=np.int64)
        if self.landmarks_lb is not None:
            self.landmarks_lb = np.ascontiguousarray(self.landmarks_lb, dtype=np.int64)

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    @property
    def n_vertices(self) -> int:
        return self.template.n_vertices

    @property
    def n_shape(self) -> int:
        return int(self.shape_basis.shape[1])

    def part_of_vertex(self) -> np.ndarray:
        owner = np.full(self.n_vertices, -1, dtype=np.int64)
        for p, part in enumerate(self.parts):
            owner[part.vertex_ids] = p
        return owner

    def validate(self) -> None:
        n = self.n_vertices
        seen = np.zeros(n, dtype=np.int64)
        for part in self.parts:
            if part.vertex_ids.min() < 0 or part.vertex_ids.max() >= n:
                raise ValueError(f"part {part.name}: vertex index out of range")
            np.add.at(seen, part.vertex_ids, 1)
            if part.local_template.shape != (len(part.vertex_ids), 3):
                raise ValueError(f"part {part.name}: local template shape mismatch")
            if np.abs(part.local_template - self.template.vertices[part.vertex_ids]).max() > 1e-9:
                raise ValueError(f"part {part.name}: local template disagrees with global")
        if not np.all(seen == 1):
            raise ValueError("parts must partition the template vertices exactly")
        if self.shape_basis.shape[0] != 3 * n:
            raise ValueError("shape basis row count must be 3 * n_vertices")
        owner = self.part_of_vertex()
        for s in self.interfaces:
            if owner[s.vertex_a] != s.part_a or owner[s.vertex_b] != s.part_b:
                raise ValueError("stitch pair references vertices outside its parts")
            if s.part_a == s.part_b:
                raise ValueError("stitch pairs must connect distinct parts")
        if self.landmarks_li is not None and len(self.landmarks_li) != 29:
            raise ValueError("expected 29 primary landmarks")
        if self.landmarks_lb is not None and len(self.landmarks_lb) != 3 * self.n_parts:
            raise ValueError("expected 3 per-part landmarks per part")


@dataclass
class PuppetState:
    """Shared shape coefficients plus one rigid transform per part."""

    shape: np.ndarray  # (K,)
    t: np.ndarray  # (P, 3) mm
    r: np.ndarray  # (P, 3) axis-angle

    def __post_init__(self):
        self.shape = np.ascontiguousarray(self.shape, dtype=np.float64).reshape(-1)
        self.t = np.ascontiguousarray(self.t, dtype=np.float64)
        self.r = np.ascontiguousarray(self.r, dtype=np.float64)
        if not (
            np.isfinite(self.shape).all()
            and np.isfinite(self.t).all()
            and np.isfinite(self.r).all()
        ):
            raise ValueError("puppet state must be finite")

    @classmethod
    def zeros(cls, model: PuppetModel) -> "PuppetState":
        return cls(
            np.zeros(model.n_shape),
            np.zeros((model.n_parts, 3)),
            np.zeros((model.n_parts, 3)),
        )

    def copy(self) -> "PuppetState":
        return PuppetState(self.shape.copy(), self.t.copy(), self.r.copy())


class PuppetForward:
    """Posed puppet vertices with reverse-mode gradients to (shape, t, r).

    `shape_offsets` overrides the model basis when the shape lives in a
    different space (e.g. a learned vertex-space decomposition); in that case
    shape gradients are not produced.
    """

    def __init__(self, model: PuppetModel, state: PuppetState, shape_offsets=None):
        if state.t.shape != (model.n_parts, 3) or state.r.shape != (model.n_parts, 3):
            raise ValueError("state dimensions do not match the model")
        self.model = model
        self.state = state
        self.uses_basis = shape_offsets is None
        if shape_offsets is None:
            if state.shape.shape[0] != model.n_shape:
                raise ValueError("shape coefficient length mismatch")
            offsets = (model.shape_basis @ state.shape).reshape(-1, 3)
        else:
            offsets = np.asarray(shape_offsets, dtype=float).reshape(-1, 3)
            if offsets.shape[0] != model.n_vertices:
                raise ValueError("shape offset vertex count mismatch")
        self.offsets = offsets
        self.shaped = model.template.vertices + offsets
        self.rot = [rodrigues(state.r[p]) for p in range(model.n_parts)]
        verts = np.empty_like(self.shaped)
        self.local = []
        for p, part in enumerate(model.parts):
            loc = self.shaped[part.vertex_ids] - part.centroid
            self.local.append(loc)
            verts[part.vertex_ids] = loc @ self.rot[p].T + part.centroid + state.t[p]
        self.vertices = verts

    def mesh(self) -> Mesh:
        return Mesh(self.vertices, self.model.template.faces.copy())

    def backprop(self, d_verts):
        g = np.asarray(d_verts, dtype=float).reshape(-1, 3)
        model = self.model
        d_t = np.empty((model.n_parts, 3))
        d_r = np.empty((model.n_parts, 3))
        d_shaped = np.empty_like(g)
        for p, part in enumerate(model.parts):
            gp = g[part.vertex_ids]
            d_t[p] = gp.sum(axis=0)
            outer = gp.T @ self.local[p]  # (3, 3): sum of outer(g, local)
            jac = rodrigues_jacobian(self.state.r[p])
            for c in range(3):
                d_r[p, c] = float(np.tensordot(jac[c], outer))
            d_shaped[part.vertex_ids] = gp @ self.rot[p]
        d_shape = None
        if self.uses_basis:
            d_shape = model.shape_basis.T @ d_shaped.reshape(-1)
        return d_shape, d_t, d_r


def puppet_pose(model: PuppetModel, state: PuppetState) -> Mesh:
    """Pose every part rigidly about its centroid after applying shape offsets."""
    return PuppetForward(model, state).mesh()


def pose_with_offsets(model: PuppetModel, shape_offsets, t, r) -> Mesh:
    state = PuppetState(np.zeros(model.n_shape), np.asarray(t, float), np.asarray(r, float))
    return PuppetForward(model, state, shape_offsets=shape_offsets).mesh()


def build_interfaces(model: PuppetModel, threshold: float):
    """All cross-part template vertex pairs closer than `threshold` mm.

    Pairs are deduplicated so part_a < part_b. Emits a warning when nothing
    stitches (disconnected assembly).
    """
    if not threshold > 0:
        raise ValueError("interface threshold must be positive")
    v = model.template.vertices
    owner = model.part_of_vertex()
    pairs = []
    n_parts = model.n_parts
    ids_by_part = [model.parts[p].vertex_ids for p in range(n_parts)]
    for pa in range(n_parts):
        va = v[ids_by_part[pa]]
        for pb in range(pa + 1, n_parts):
            vb = v[ids_by_part[pb]]
            d2 = ((va[:, None, :] - vb[None, :, :]) ** 2).sum(axis=2)
            ia, ib = np.nonzero(d2 < threshold * threshold)
            for k in range(len(ia)):
                pairs.append(
                    StitchPair(
                        part_a=pa,
                        vertex_a=int(ids_by_part[pa][ia[k]]),
                        part_b=pb,
                        vertex_b=int(ids_by_part[pb][ib[k]]),
                    )
                )
    if not pairs:
        log.warning("build_interfaces found no stitch pairs below %.3g mm", threshold)
    return pairs


def stitch_residuals(model: PuppetModel, state: PuppetState, posed_verts=None) -> np.ndarray:
    """One 3-vector per stitch pair: posed(vertex_a) - posed(vertex_b)."""
    if not model.interfaces:
        raise ValueError("model has no stitch interfaces")
    if posed_verts is None:
        posed_verts = PuppetForward(model, state).vertices
    ia = np.asarray([s.vertex_a for s in model.interfaces], dtype=np.int64)
    ib = np.asarray([s.vertex_b for s in model.interfaces], dtype=np.int64)
    return posed_verts[ia] - posed_verts[ib]


def stitch_energy(posed_verts, interfaces):
    """Quadratic stitching penalty: sum of squared pair residual norms.

    The quadratic form follows from Gaussian stitching potentials whose
    negative log is a sum of squares up to an additive constant.
    """
    v = np.asarray(posed_verts, dtype=float).reshape(-1, 3)
    ia = np.asarray([s.vertex_a for s in interfaces], dtype=np.int64)
    ib = np.asarray([s.vertex_b for s in interfaces], dtype=np.int64)
    res = v[ia] - v[ib]
    value = float((res ** 2).sum())
    grad = np.zeros_like(v)
    np.add.at(grad, ia, 2.0 * res)
    np.add.at(grad, ib, -2.0 * res)
    return value, grad


def extract_landmarks(model: PuppetModel, mesh: Mesh, which: str = "li") -> np.ndarray:
    """Mesh vertices at the stored landmark indices, in fixed order."""
    ids = model.landmarks_li if which == "li" else model.landmarks_lb
    if ids is None:
        raise ValueError(f"model has no '{which}' landmark table")
    if ids.max() >= mesh.n_vertices:
        raise ValueError("landmark index out of range for this mesh")
    return mesh.vertices[ids].copy()


def build_initial_shape_basis(registration_pairs, n_components: int | None = None) -> np.ndarray:
    """Column i is the flattened vertex difference of the i-th registration
    pair (taken at +2 and -2 units of one component); remaining columns zero.

    registration_pairs: list of (mesh_plus, mesh_minus) in vertex correspondence.
    """
    if not registration_pairs:
        raise ValueError("need at least one registration pair")
    n = registration_pairs[0][0].n_vertices
    k = n_components if n_components is not None else len(registration_pairs)
    if k < len(registration_pairs):
        raise ValueError("n_components smaller than the number of pairs")
    basis = np.zeros((3 * n, k))
    for i, (plus, minus) in enumerate(registration_pairs):
        if plus.n_vertices != n or minus.n_vertices != n:
            raise ValueError("registration pair vertex counts differ")
        basis[:, i] = (plus.vertices - minus.vertices).reshape(-1)
    return basis


def symmetry_operator(model: PuppetModel, mirror_axis: int = 0) -> np.ndarray:
    """Operator C with ||C beta||^2 comparing mirrored left-part displacement
    fields against right-part ones, for every symmetry pair.

    Paired parts must have identical vertex ordering under the mirror.
    """
    if not model.symmetry_pairs:
        return np.zeros((0, model.n_shape))
    basis = model.shape_basis.reshape(model.n_vertices, 3, model.n_shape)
    mirror = np.ones(3)
    mirror[mirror_axis] = -1.0
    blocks = []
    for pl, pr in model.symmetry_pairs:
        ids_l = model.parts[pl].vertex_ids
        ids_r = model.parts[pr].vertex_ids
        if len(ids_l) != len(ids_r):
            raise ValueError("symmetric parts must have matching vertex counts")
        bl = basis[ids_l] * mirror[None, :, None]
        br = basis[ids_r]
        blocks.append((bl - br).reshape(-1, model.n_shape))
    return np.vstack(blocks)
