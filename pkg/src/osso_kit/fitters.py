"""Pipeline stages: surface fit to a skin mask, skeleton fit to a bone mask,
pose normalization (unposing), skeleton inference from the surface, and
anatomically constrained reposing.

Every stage builds a scalar objective with analytic gradients over a packed,
scale-normalized parameter vector and runs the shared first-order solver.
Staged weight schedules are plain data so runs are reproducible from config.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .energy import (
    EnergyConfig,
    InsideWitness,
    PosePrior,
    SilhouetteTarget,
    SolverConfig,
    e_contact,
    e_inside,
    e_landmark_2d,
    e_landmark_3d,
    e_offset,
    e_proximity,
    e_sil_exact,
    e_sil_surrogate,
    silhouette_support,
    e_symmetry,
    ball_joint_distances,
    e_ball_joint,
    e_ligament,
    ligament_lengths,
    minimize,
)
from .evalmetrics import iou
from .geom import (
    BodyModel,
    LbsForward,
    Mesh,
    OrthoCamera,
    PoseVector,
    project_ortho,
    rasterize_silhouette,
    vertex_normals,
)
from .masks import BinaryMask
from .puppet import PuppetForward, PuppetModel, PuppetState, stitch_energy, symmetry_operator
from .stats import (
    LandmarkRegressor,
    ShapeRegressor,
    ShapeSpace,
    pca_reconstruct,
    predict_landmarks,
    predict_shape,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# skin-to-skeleton offset pairs


@dataclass
class OffsetPairs:
    """Paired surface/skeleton vertex indices with reference offsets (mm)."""

    skin_ids: np.ndarray
    skel_ids: np.ndarray
    d0: np.ndarray  # (P, 3) = skin - skeleton at the reference configuration

    def __post_init__(self):
        self.skin_ids = np.ascontiguousarray(self.skin_ids, dtype=np.int64)
        self.skel_ids = np.ascontiguousarray(self.skel_ids, dtype=np.int64)
        self.d0 = np.ascontiguousarray(self.d0, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return int(self.skin_ids.shape[0])

    def with_offsets(self, skin_verts, skel_verts) -> "OffsetPairs":
        sv = np.asarray(skin_verts, float)
        kv = np.asarray(skel_verts, float)
        return OffsetPairs(self.skin_ids, self.skel_ids, sv[self.skin_ids] - kv[self.skel_ids])


def build_offset_pairs(skin_mesh: Mesh, skel_mesh: Mesh, cap: int = 3113) -> OffsetPairs:
    """Nearest-neighbour pairing from every surface vertex to the skeleton,
    uniformly subsampled down to at most `cap` pairs."""
    sv, kv = skin_mesh.vertices, skel_mesh.vertices
    nearest = np.empty(len(sv), dtype=np.int64)
    chunk = 512
    for lo in range(0, len(sv), chunk):
        d2 = ((sv[lo : lo + chunk, None, :] - kv[None, :, :]) ** 2).sum(axis=2)
        nearest[lo : lo + chunk] = np.argmin(d2, axis=1)
    skin_ids = np.arange(len(sv), dtype=np.int64)
    if len(skin_ids) > cap:
        keep = np.unique(np.linspace(0, len(skin_ids) - 1, cap).astype(np.int64))
        skin_ids = skin_ids[keep]
    skel_ids = nearest[skin_ids]
    return OffsetPairs(skin_ids, skel_ids, sv[skin_ids] - kv[skel_ids])


# ---------------------------------------------------------------------------
# parameter packing


class ParamPack:
    """Named parameter blocks flattened into one scale-normalized vector."""

    def __init__(self):
        self.blocks = []  # (name, shape, scale)

    def add(self, name, shape, scale):
        self.blocks.append((name, tuple(shape), float(scale)))
        return self

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s, _ in self.blocks)

    def pack(self, values: dict) -> np.ndarray:
        out = []
        for name, shape, scale in self.blocks:
            out.append(np.asarray(values[name], dtype=float).reshape(-1) / scale)
        return np.concatenate(out)

    def unpack(self, z: np.ndarray) -> dict:
        out, pos = {}, 0
        for name, shape, scale in self.blocks:
            n = int(np.prod(shape))
            out[name] = z[pos : pos + n].reshape(shape) * scale
            pos += n
        return out

    def pack_grad(self, grads: dict) -> np.ndarray:
        out = []
        for name, shape, scale in self.blocks:
            g = grads.get(name)
            if g is None:
                out.append(np.zeros(int(np.prod(shape))))
            else:
                out.append(np.asarray(g, dtype=float).reshape(-1) * scale)
        return np.concatenate(out)


# ---------------------------------------------------------------------------
# stage schedules


@dataclass
class FitStage:
    name: str
    max_iter: int
    weights: dict = field(default_factory=dict)  # EnergyConfig field overrides
    blocks: int = 1  # silhouette stages refresh the frozen boundary support per block


DEFAULT_SKIN_STAGES = [
    FitStage(
        "landmarks",
        max_iter=300,
        weights={"lam_landmark2d": 1.0, "lam_beta": 1e-3, "lam_theta": 1.0, "lam_hands": 0.0, "_silhouette": 0.0},
    ),
    FitStage(
        "full",
        max_iter=45,
        blocks=6,
        weights={"lam_landmark2d": 0.03, "lam_beta": 2e-4, "lam_theta": 0.02, "lam_hands": 0.01, "_silhouette": 1.0},
    ),
    FitStage(
        "shape_polish",
        max_iter=60,
        blocks=2,
        weights={
            "lam_landmark2d": 0.03,
            "lam_beta": 2e-4,
            "lam_theta": 0.02,
            "lam_hands": 0.0,
            "_silhouette": 1.0,
            "_freeze_pose": 1.0,
            "_shape_probe": 1.0,
        },
    ),
    FitStage(
        "final",
        max_iter=45,
        blocks=2,
        weights={"lam_landmark2d": 0.03, "lam_beta": 2e-4, "lam_theta": 0.02, "lam_hands": 0.01, "_silhouette": 1.0},
    ),
]

DEFAULT_SKELETON_STAGES = [
    FitStage(
        "landmarks",
        max_iter=400,
        weights={
            "lam_landmark2d": 1.0,
            "lam_stitch": 0.05,
            "lam_pose": 1.0,
            "lam_shape": 0.0,
            "lam_symmetry": 0.0,
            "lam_inside": 0.0,
            "_silhouette": 0.0,
            "_freeze_shape": 1.0,
        },
    ),
    FitStage(
        "full",
        max_iter=40,
        blocks=5,
        weights={
            "lam_landmark2d": 0.2,
            "lam_stitch": 0.005,
            "lam_pose": 0.05,
            "lam_shape": 1e-3,
            "lam_symmetry": 1e-3,
            "lam_inside": 0.02,
            "_silhouette": 1.0,
        },
    ),
    FitStage(
        "shape_polish",
        max_iter=50,
        blocks=2,
        weights={
            "lam_landmark2d": 0.2,
            "lam_stitch": 0.005,
            "lam_pose": 0.05,
            "lam_shape": 1e-3,
            "lam_symmetry": 1e-3,
            "lam_inside": 0.02,
            "_silhouette": 1.0,
            "_freeze_rigid": 1.0,
            "_shape_probe": 1.0,
        },
    ),
    FitStage(
        "final",
        max_iter=40,
        blocks=1,
        weights={
            "lam_landmark2d": 0.2,
            "lam_stitch": 0.005,
            "lam_pose": 0.05,
            "lam_shape": 1e-3,
            "lam_symmetry": 1e-3,
            "lam_inside": 0.02,
            "_silhouette": 1.0,
        },
    ),
]


def _stage_weights(cfg: EnergyConfig, stage: FitStage):
    """EnergyConfig with stage overrides applied; returns (config, extras)."""
    extras = {k: v for k, v in stage.weights.items() if k.startswith("_")}
    fields = {k: v for k, v in stage.weights.items() if not k.startswith("_")}
    return replace(cfg, **fields), extras


def _warm_start_shift(cam: OrthoCamera, points3d, targets2d) -> np.ndarray:
    """World translation aligning the projected centroid with the targets."""
    tgt = np.asarray(targets2d, dtype=float)
    valid = np.isfinite(tgt).all(axis=1)
    if not valid.any():
        return np.zeros(3)
    duv = tgt[valid].mean(axis=0) - project_ortho(points3d, cam)[valid].mean(axis=0)
    shift = np.zeros(3)
    s = cam.pixels_per_mm
    shift[cam.axes[0]] = duv[0] / (s * cam.signs[0])
    shift[cam.axes[1]] = duv[1] / (s * cam.signs[1])
    return shift


# ---------------------------------------------------------------------------
# skin fit


@dataclass
class SkinFit:
    shape: np.ndarray
    pose: PoseVector
    mesh: Mesh
    energies: dict
    iou: float
    rejected: bool
    diagnostics: dict = field(default_factory=dict)


_TIP_MARKERS = ("head_top", "hand_tip_l", "hand_tip_r", "foot_tip_l", "foot_tip_r")


def _landmark_supports(model: BodyModel):
    """Model-side landmark anchors: all joints, then tip marker vertices."""
    tips = [int(model.markers[k][0]) for k in _TIP_MARKERS if k in model.markers]
    return model.n_joints, np.asarray(tips, dtype=np.int64)


def fit_skin(
    mask: BinaryMask,
    landmarks2d,
    model: BodyModel,
    prior: PosePrior,
    cfg: EnergyConfig | None = None,
    cam: OrthoCamera | None = None,
    stages=None,
    reject_iou: float = 0.85,
    init_shape=None,
    init_pose: PoseVector | None = None,
    landmark_offsets=None,
) -> SkinFit:
    """Fit shape and pose so the rendered surface matches the mask and the
    projected joints/tips match the 2D landmarks.

    Runs a landmarks-only warm start, then the full objective including the
    silhouette term. A fit whose final IoU falls below `reject_iou` is
    returned with the `rejected` flag set.
    """
    cfg = cfg or EnergyConfig()
    stages = stages if stages is not None else DEFAULT_SKIN_STAGES
    if cam is None:
        cam = OrthoCamera.centered(mask.width, mask.height, 1.0 / mask.mm_per_pixel)
    targets = np.asarray(landmarks2d, dtype=float)
    nj, tip_ids = _landmark_supports(model)
    if len(targets) != nj + len(tip_ids):
        raise ValueError(f"expected {nj + len(tip_ids)} landmark rows, got {len(targets)}")
    target_sil = SilhouetteTarget.from_mask(mask)
    faces = model.template.faces
    if landmark_offsets is None:
        landmark_offsets = np.zeros((len(targets), 3))
    else:
        landmark_offsets = np.asarray(landmark_offsets, dtype=float).reshape(len(targets), 3)

    hands = None
    if all(k in model.markers for k in ("hand_tip_l", "hand_tip_r", "thigh_mid_l", "thigh_mid_r")):
        hands = [
            (int(model.markers["hand_tip_l"][0]), np.asarray(model.markers["thigh_mid_l"], dtype=np.int64)),
            (int(model.markers["hand_tip_r"][0]), np.asarray(model.markers["thigh_mid_r"], dtype=np.int64)),
        ]

    pack = (
        ParamPack()
        .add("shape", (model.n_shape,), 1.0)
        .add("rot", (model.n_joints, 3), 0.25)
        .add("trans", (3,), 30.0)
    )
    shape0 = np.zeros(model.n_shape) if init_shape is None else np.asarray(init_shape, float)
    pose0 = init_pose or PoseVector(prior.mean.copy(), np.zeros(3))
    fwd0 = LbsForward(model, shape0, pose0)
    pts0 = np.vstack([fwd0.joints_posed, fwd0.vertices[tip_ids]]) if len(tip_ids) else fwd0.joints_posed
    trans0 = pose0.translation + _warm_start_shift(cam, pts0 + landmark_offsets, targets)
    values = {"shape": shape0, "rot": pose0.rotations.copy(), "trans": trans0}

    def make_objective(weights: EnergyConfig, sil_support, freeze_pose=False):
        def objective(z):
            p = pack.unpack(z)
            if freeze_pose:
                p["rot"], p["trans"] = values["rot"], values["trans"]
            pose = PoseVector(p["rot"], p["trans"])
            fwd = LbsForward(model, p["shape"], pose)
            verts = fwd.vertices
            value = 0.0
            g_verts = np.zeros_like(verts)
            g_joints = np.zeros((model.n_joints, 3))
            if sil_support is not None:
                vs, gs = e_sil_surrogate(Mesh(verts, faces), cam, target_sil, support=sil_support)
                value += vs
                g_verts += gs
            pts = np.vstack([fwd.joints_posed, verts[tip_ids]]) if len(tip_ids) else fwd.joints_posed
            vl, gl = e_landmark_2d(pts + landmark_offsets, cam, targets)
            value += weights.lam_landmark2d * vl
            g_joints += weights.lam_landmark2d * gl[:nj]
            for k, vid in enumerate(tip_ids):
                g_verts[vid] += weights.lam_landmark2d * gl[nj + k]
            if weights.lam_hands > 0 and hands:
                for hid, ring in hands:
                    diff = verts[hid, 2] - verts[ring, 2].mean()
                    value += weights.lam_hands * diff * diff
                    g_verts[hid, 2] += weights.lam_hands * 2.0 * diff
                    g_verts[ring, 2] -= weights.lam_hands * 2.0 * diff / len(ring)
            d_shape, d_rot, d_trans = fwd.backprop(g_verts, g_joints)
            value += weights.lam_beta * float(p["shape"] @ p["shape"])
            d_shape += weights.lam_beta * 2.0 * p["shape"]
            vp, gp = prior.energy(p["rot"])
            value += weights.lam_theta * vp
            d_rot += weights.lam_theta * gp
            if freeze_pose:
                d_rot = np.zeros_like(d_rot)
                d_trans = np.zeros_like(d_trans)
            return value, pack.pack_grad({"shape": d_shape, "rot": d_rot, "trans": d_trans})

        return objective

    def probe_shape(vals, deltas=(-1.6, -0.8, 0.8, 1.6)):
        # greedy coordinate escape for long flat valleys: accept any single
        # component change that improves the exact mask overlap
        pose_p = PoseVector(vals["rot"], vals["trans"])

        def score(shape):
            rend = rasterize_silhouette(LbsForward(model, shape, pose_p).mesh(), cam)
            return 1.0 - iou(rend, mask)

        best = score(vals["shape"])
        shape = vals["shape"].copy()
        for k in range(model.n_shape):
            for d in deltas:
                cand = shape.copy()
                cand[k] += d
                sc = score(cand)
                if sc < best - 1e-6:
                    best = sc
                    shape = cand
        vals["shape"] = shape
        return vals

    diagnostics = {"stages": []}
    for stage in stages:
        weights, extras = _stage_weights(cfg, stage)
        sil_on = extras.get("_silhouette", 1.0) > 0
        freeze_pose = extras.get("_freeze_pose", 0.0) > 0
        do_probe = extras.get("_shape_probe", 0.0) > 0
        solver = replace(cfg.solver, max_iter=stage.max_iter)
        for _ in range(stage.blocks if sil_on else 1):
            if do_probe:
                values = probe_shape(values)
            support = None
            if sil_on:
                pose_b = PoseVector(values["rot"], values["trans"])
                support = silhouette_support(LbsForward(model, values["shape"], pose_b).mesh(), cam)
            res = minimize(make_objective(weights, support, freeze_pose), pack.pack(values), solver)
            new_values = pack.unpack(res.x)
            if freeze_pose:
                new_values["rot"], new_values["trans"] = values["rot"], values["trans"]
            values = new_values
            diagnostics["stages"].append(
                {"name": stage.name, "iterations": res.n_iter, "value": res.value, "message": res.message}
            )

    pose = PoseVector(values["rot"], values["trans"])
    mesh = LbsForward(model, values["shape"], pose).mesh()
    rendered = rasterize_silhouette(mesh, cam)
    fit_iou = iou(rendered, mask)
    fwdf = LbsForward(model, values["shape"], pose)
    ptsf = np.vstack([fwdf.joints_posed, fwdf.vertices[tip_ids]]) if len(tip_ids) else fwdf.joints_posed
    energies = {
        "silhouette": e_sil_exact(rendered, mask),
        "landmarks2d": e_landmark_2d(ptsf + landmark_offsets, cam, targets)[0],
        "shape_reg": float(values["shape"] @ values["shape"]),
        "pose_prior": prior.energy(values["rot"])[0],
    }
    rejected = fit_iou < reject_iou
    if rejected:
        log.warning("skin fit rejected: IoU %.3f below threshold %.3f", fit_iou, reject_iou)
    return SkinFit(
        shape=values["shape"],
        pose=pose,
        mesh=mesh,
        energies=energies,
        iou=fit_iou,
        rejected=rejected,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# skeleton fit


@dataclass
class PuppetInstance:
    """A concrete skeleton: vertex shape offsets plus per-part rigid state."""

    shape_offsets: np.ndarray  # (N, 3)
    state: PuppetState

    def pose(self, puppet: PuppetModel) -> Mesh:
        return PuppetForward(puppet, self.state, shape_offsets=self.shape_offsets).mesh()


@dataclass
class SkeletonFit:
    state: PuppetState
    mesh: Mesh
    energies: dict
    diagnostics: dict = field(default_factory=dict)

    def instance(self, puppet: PuppetModel) -> PuppetInstance:
        offsets = (puppet.shape_basis @ self.state.shape).reshape(-1, 3)
        return PuppetInstance(shape_offsets=offsets, state=self.state.copy())


@dataclass
class SkeletonFitAssets:
    """Bundle-provided tables the skeleton fit needs besides the puppet."""

    canonical_part_rotations: np.ndarray  # (P, 3)
    contacts: list = field(default_factory=list)  # (skel_vid, skin_vid)
    proximity: list = field(default_factory=list)  # (skel_vid, region ids)
    contact_offset_mm: float = 5.0


def fit_skeleton(
    mask: BinaryMask,
    landmarks2d,
    skin_mesh: Mesh,
    puppet: PuppetModel,
    cfg: EnergyConfig | None = None,
    assets: SkeletonFitAssets | None = None,
    cam: OrthoCamera | None = None,
    stages=None,
) -> SkeletonFit:
    """Register the part-based skeleton to a bone mask, keeping it inside the
    fitted surface and coherent through stitching and symmetry priors."""
    cfg = cfg or EnergyConfig()
    assets = assets or SkeletonFitAssets(np.zeros((puppet.n_parts, 3)))
    stages = stages if stages is not None else DEFAULT_SKELETON_STAGES
    if cam is None:
        cam = OrthoCamera.centered(mask.width, mask.height, 1.0 / mask.mm_per_pixel)
    targets = np.asarray(landmarks2d, dtype=float)
    if puppet.landmarks_li is None or len(targets) != len(puppet.landmarks_li):
        raise ValueError("2D landmark count does not match the puppet landmark table")
    target_sil = SilhouetteTarget.from_mask(mask, max_boundary=640)
    li = puppet.landmarks_li
    faces = puppet.template.faces
    skin_normals = vertex_normals(skin_mesh)
    witness = InsideWitness.from_mesh(skin_mesh, skin_normals, stride=3)
    sym_op = symmetry_operator(puppet)
    r_canon = assets.canonical_part_rotations

    pack = (
        ParamPack()
        .add("shape", (puppet.n_shape,), 0.5)
        .add("t", (puppet.n_parts, 3), 20.0)
        .add("r", (puppet.n_parts, 3), 0.2)
    )
    values = {
        "shape": np.zeros(puppet.n_shape),
        "t": np.zeros((puppet.n_parts, 3)),
        "r": r_canon.copy(),
    }
    # rigid per-part warm start: translate each part so its own landmarks hit
    # their 2D targets; parts without landmarks get the global shift
    tmpl_li = puppet.template.vertices[li]
    global_shift = _warm_start_shift(cam, tmpl_li, targets)
    owner = puppet.part_of_vertex()
    li_owner = owner[li]
    for p in range(puppet.n_parts):
        sel = np.flatnonzero(li_owner == p)
        if sel.size:
            values["t"][p] += _warm_start_shift(cam, tmpl_li[sel], targets[sel])
        else:
            values["t"][p] += global_shift

    def make_objective(weights: EnergyConfig, extras, sil_support):
        freeze_shape = extras.get("_freeze_shape", 0.0) > 0
        freeze_rigid = extras.get("_freeze_rigid", 0.0) > 0

        def objective(z):
            p = pack.unpack(z)
            shape = values["shape"] if freeze_shape else p["shape"]
            if freeze_rigid:
                p["t"], p["r"] = values["t"], values["r"]
            state = PuppetState(shape, p["t"], p["r"])
            fwd = PuppetForward(puppet, state)
            verts = fwd.vertices
            value = 0.0
            g_verts = np.zeros_like(verts)
            if sil_support is not None:
                vs, gs = e_sil_surrogate(
                    Mesh(verts, faces), cam, target_sil, support=sil_support, oriented=True,
                    inset=0.35,
                )
                value += vs
                g_verts += gs
            vl, gl = e_landmark_2d(verts[li], cam, targets)
            value += weights.lam_landmark2d * vl
            np.add.at(g_verts, li, weights.lam_landmark2d * gl)
            if weights.lam_inside > 0:
                vi, gi = e_inside(verts, witness, smooth_beta=10.0)
                vpx, gpx = e_proximity(verts, assets.proximity, skin_mesh.vertices)
                vc, gc = e_contact(
                    verts, skin_mesh.vertices, skin_normals, assets.contacts, assets.contact_offset_mm
                )
                value += weights.lam_inside * (vi + vpx + vc)
                g_verts += weights.lam_inside * (gi + gpx + gc)
            if weights.lam_stitch > 0 and puppet.interfaces:
                vs2, gs2 = stitch_energy(verts, puppet.interfaces)
                value += weights.lam_stitch * vs2
                g_verts += weights.lam_stitch * gs2
            d_shape, d_t, d_r = fwd.backprop(g_verts)
            if weights.lam_symmetry > 0 and sym_op.size:
                vsym, gsym = e_symmetry(sym_op, shape)
                value += weights.lam_symmetry * vsym
                d_shape += weights.lam_symmetry * gsym
            value += weights.lam_shape * float(shape @ shape)
            d_shape += weights.lam_shape * 2.0 * shape
            dr_prior = p["r"] - r_canon
            value += weights.lam_pose * float((dr_prior ** 2).sum())
            d_r += weights.lam_pose * 2.0 * dr_prior
            if freeze_shape:
                d_shape = np.zeros_like(d_shape)
            if freeze_rigid:
                d_t = np.zeros_like(d_t)
                d_r = np.zeros_like(d_r)
            return value, pack.pack_grad({"shape": d_shape, "t": d_t, "r": d_r})

        return objective

    def probe_shape(vals, deltas=(-0.4, -0.2, 0.2, 0.4)):
        def score(shape):
            st = PuppetState(shape, vals["t"], vals["r"])
            rend = rasterize_silhouette(PuppetForward(puppet, st).mesh(), cam)
            return 1.0 - iou(rend, mask)

        best = score(vals["shape"])
        shape = vals["shape"].copy()
        for k in range(puppet.n_shape):
            for d in deltas:
                cand = shape.copy()
                cand[k] += d
                sc = score(cand)
                if sc < best - 1e-6:
                    best = sc
                    shape = cand
        vals["shape"] = shape
        return vals

    diagnostics = {"stages": []}
    prev_value = None
    for stage in stages:
        weights, extras = _stage_weights(cfg, stage)
        sil_on = extras.get("_silhouette", 1.0) > 0
        solver = replace(cfg.solver, max_iter=stage.max_iter)
        for _ in range(stage.blocks if sil_on else 1):
            if extras.get("_shape_probe", 0.0) > 0:
                values = probe_shape(values)
            support = None
            if sil_on:
                state_b = PuppetState(values["shape"], values["t"], values["r"])
                support = silhouette_support(PuppetForward(puppet, state_b).mesh(), cam)
            res = minimize(make_objective(weights, extras, support), pack.pack(values), solver)
            new_values = pack.unpack(res.x)
            if extras.get("_freeze_shape", 0.0) > 0:
                new_values["shape"] = values["shape"]
            if extras.get("_freeze_rigid", 0.0) > 0:
                new_values["t"], new_values["r"] = values["t"], values["r"]
            values = new_values
            diagnostics["stages"].append(
                {"name": stage.name, "iterations": res.n_iter, "value": res.value, "message": res.message}
            )
            prev_value = res.value

    state = PuppetState(values["shape"], values["t"], values["r"])
    mesh = PuppetForward(puppet, state).mesh()
    rendered = rasterize_silhouette(mesh, cam)
    energies = {
        "silhouette": e_sil_exact(rendered, mask),
        "landmarks2d": e_landmark_2d(mesh.vertices[li], cam, targets)[0],
        "stitch": stitch_energy(mesh.vertices, puppet.interfaces)[0] if puppet.interfaces else 0.0,
        "final_objective": prev_value,
    }
    return SkeletonFit(state=state, mesh=mesh, energies=energies, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# unposing


def _rigid_pack(puppet: PuppetModel) -> ParamPack:
    return ParamPack().add("t", (puppet.n_parts, 3), 20.0).add("r", (puppet.n_parts, 3), 0.2)


def _rigid_objective(puppet, shape_offsets, terms, pack):
    """terms: list of (weight, fn(verts) -> (value, grad_verts))."""

    def objective(z):
        p = pack.unpack(z)
        state = PuppetState(np.zeros(puppet.n_shape), p["t"], p["r"])
        fwd = PuppetForward(puppet, state, shape_offsets=shape_offsets)
        verts = fwd.vertices
        value = 0.0
        g_verts = np.zeros_like(verts)
        for w, fn in terms:
            if w <= 0:
                continue
            v, g = fn(verts)
            value += w * v
            g_verts += w * g
        _, d_t, d_r = fwd.backprop(g_verts)
        return value, pack.pack_grad({"t": d_t, "r": d_r})

    return objective


def unpose_skeleton(
    skin_unposed: Mesh,
    fitted_state: PuppetState,
    puppet: PuppetModel,
    pairs: OffsetPairs,
    cfg: EnergyConfig | None = None,
    max_iter: int = 300,
) -> PuppetInstance:
    """Solve for canonical-pose part placements that preserve the reference
    skin-to-skeleton offsets against the unposed surface.

    The shape stays fixed at the fitted coefficients; rotations start from
    zero (the canonical state) and only (t, r) are optimized under stitching
    plus offset-preservation springs.
    """
    cfg = cfg or EnergyConfig()
    offsets = (puppet.shape_basis @ fitted_state.shape).reshape(-1, 3)
    shaped = puppet.template.vertices + offsets
    skel_normals = vertex_normals(Mesh(shaped, puppet.template.faces))
    pack = _rigid_pack(puppet)
    terms = [
        (cfg.lam_stitch, lambda v: stitch_energy(v, puppet.interfaces)),
        (cfg.lam_offsets, lambda v: e_offset(skin_unposed.vertices, v, pairs, skel_normals)),
    ]
    solver = replace(cfg.solver, max_iter=max_iter)
    z0 = pack.pack({"t": np.zeros((puppet.n_parts, 3)), "r": np.zeros((puppet.n_parts, 3))})
    res = minimize(_rigid_objective(puppet, offsets, terms, pack), z0, solver)
    p = pack.unpack(res.x)
    state = PuppetState(fitted_state.shape.copy(), p["t"], p["r"])
    return PuppetInstance(shape_offsets=offsets, state=state)


# ---------------------------------------------------------------------------
# inference


@dataclass
class InferredSkeleton:
    instance: PuppetInstance
    mesh: Mesh
    beta_skeleton: np.ndarray
    predicted_landmarks: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def infer_skeleton(
    skin_lying: Mesh,
    beta_surface,
    shape_reg: ShapeRegressor,
    landmark_reg: LandmarkRegressor,
    space: ShapeSpace,
    puppet: PuppetModel,
    cfg: EnergyConfig | None = None,
    assets: SkeletonFitAssets | None = None,
    max_iter: int = 300,
) -> InferredSkeleton:
    """Predict the skeleton inside a surface posed in the canonical lying pose.

    The skeleton shape is decoded from regressed shape-space coefficients and
    held fixed; part placements minimize the predicted-landmark term plus the
    skin contact term.
    """
    cfg = cfg or EnergyConfig()
    assets = assets or SkeletonFitAssets(np.zeros((puppet.n_parts, 3)))
    beta_b = predict_shape(shape_reg, np.asarray(beta_surface, float))
    decoded = pca_reconstruct(space, beta_b).reshape(-1, 3)
    offsets = decoded - puppet.template.vertices
    pred_lb = predict_landmarks(landmark_reg, skin_lying.vertices)
    skin_normals = vertex_normals(skin_lying)
    lb = puppet.landmarks_lb
    if lb is None or len(pred_lb) != len(lb):
        raise ValueError("landmark regressor size does not match the puppet table")

    pack = _rigid_pack(puppet)
    terms = [
        (cfg.lam_landmark3d, lambda v: e_landmark_3d(v[lb], pred_lb)),
        (
            cfg.lam_contact,
            lambda v: e_contact(
                v, skin_lying.vertices, skin_normals, assets.contacts, assets.contact_offset_mm
            ),
        ),
        (cfg.lam_stitch, lambda v: stitch_energy(v, puppet.interfaces)),
    ]
    solver = replace(cfg.solver, max_iter=max_iter)
    z0 = pack.pack({"t": np.zeros((puppet.n_parts, 3)), "r": np.zeros((puppet.n_parts, 3))})
    res = minimize(_rigid_objective(puppet, offsets, terms, pack), z0, solver)
    p = pack.unpack(res.x)
    state = PuppetState(np.zeros(puppet.n_shape), p["t"], p["r"])
    inst = PuppetInstance(shape_offsets=offsets, state=state)
    mesh = PuppetForward(puppet, state, shape_offsets=offsets).mesh()
    return InferredSkeleton(
        instance=inst,
        mesh=mesh,
        beta_skeleton=beta_b,
        predicted_landmarks=pred_lb,
        diagnostics={"iterations": res.n_iter, "value": res.value},
    )


# ---------------------------------------------------------------------------
# reposing


@dataclass
class ReposeResult:
    instance: PuppetInstance
    mesh: Mesh
    ball_distances: np.ndarray
    ligament_lengths: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def repose_skeleton(
    sp0: PuppetInstance,
    st0: Mesh,
    st_posed: Mesh,
    puppet: PuppetModel,
    pairs: OffsetPairs,
    ball_joints,
    ligaments,
    cfg: EnergyConfig | None = None,
    max_iter: int = 300,
) -> ReposeResult:
    """Move the inferred skeleton from the canonical surface into a posed one.

    Stage one preserves the skin-to-skeleton offsets measured between sp0 and
    st0 against the posed surface; stage two adds ball-joint and ligament
    constraints (reference distances taken from sp0) and re-optimizes.
    """
    cfg = cfg or EnergyConfig()
    sp0_verts = PuppetForward(
        puppet, sp0.state, shape_offsets=sp0.shape_offsets
    ).vertices
    self_pairs = pairs.with_offsets(st0.vertices, sp0_verts)
    shaped = puppet.template.vertices + sp0.shape_offsets
    skel_normals = vertex_normals(Mesh(shaped, puppet.template.faces))
    joint_sets = [(a, b) for _, a, b in ball_joints]
    d_s0 = ball_joint_distances(sp0_verts, joint_sets)
    d_l0 = ligament_lengths(sp0_verts, ligaments)

    pack = _rigid_pack(puppet)
    base_terms = [
        (cfg.lam_stitch, lambda v: stitch_energy(v, puppet.interfaces)),
        (cfg.lam_offsets, lambda v: e_offset(st_posed.vertices, v, self_pairs, skel_normals)),
    ]
    solver = replace(cfg.solver, max_iter=max_iter)
    z0 = pack.pack({"t": sp0.state.t, "r": sp0.state.r})
    res1 = minimize(_rigid_objective(puppet, sp0.shape_offsets, base_terms, pack), z0, solver)

    anat_terms = base_terms + [
        (cfg.lam_balljoint, lambda v: e_ball_joint(v, joint_sets, d_s0)),
        (cfg.lam_ligament, lambda v: e_ligament(v, ligaments, d_l0)),
    ]
    res2 = minimize(_rigid_objective(puppet, sp0.shape_offsets, anat_terms, pack), res1.x, solver)
    p = pack.unpack(res2.x)
    state = PuppetState(sp0.state.shape.copy(), p["t"], p["r"])
    mesh = PuppetForward(puppet, state, shape_offsets=sp0.shape_offsets).mesh()
    return ReposeResult(
        instance=PuppetInstance(shape_offsets=sp0.shape_offsets, state=state),
        mesh=mesh,
        ball_distances=ball_joint_distances(mesh.vertices, joint_sets),
        ligament_lengths=ligament_lengths(mesh.vertices, ligaments),
        diagnostics={
            "stage1": {"iterations": res1.n_iter, "value": res1.value},
            "stage2": {"iterations": res2.n_iter, "value": res2.value},
        },
    )
