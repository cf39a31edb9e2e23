"""Differentiable energy terms for the registration and reposing stages,
sphere fitting, and a first-order minimizer with backtracking line search.

Every `e_*` function returns (value, gradient) where the gradient is taken
with respect to the first mesh/point argument; fixed geometry (target masks,
registered surfaces) carries no gradient. All terms are sums of squares and
vanish exactly on their stated zero sets.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .masks import BinaryMask, DistanceField, boundary_pixels, distance_transform
from .geom import Mesh, OrthoCamera, project_ortho, rasterize_silhouette

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when an optimization run cannot continue (non-finite state)."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SolverConfig:
    max_iter: int = 500
    gtol: float = 1e-6
    step_init: float = 1.0
    step_shrink: float = 0.5
    step_grow: float = 2.0
    armijo_c1: float = 1e-4
    alpha_min: float = 1e-11
    memory: int = 8  # curvature pairs kept for the quasi-Newton direction


@dataclass
class EnergyConfig:
    """Term weights plus solver settings.

    The defaults were tuned once against the bundled synthetic assets so the
    render-and-refit suite passes; they carry no external provenance.
    """

    lam_landmark2d: float = 0.05
    lam_beta: float = 1e-3
    lam_theta: float = 1.0
    lam_hands: float = 1e-2
    lam_shape: float = 1e-2
    lam_pose: float = 10.0
    lam_stitch: float = 1.0
    lam_symmetry: float = 1e-2
    lam_inside: float = 0.05
    lam_offsets: float = 1e-2
    lam_landmark3d: float = 1.0
    lam_contact: float = 0.1
    lam_balljoint: float = 10.0
    lam_ligament: float = 10.0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EnergyConfig":
        data = json.loads(text)
        solver_data = data.pop("solver", {})
        known = set(cls.__dataclass_fields__) - {"solver"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown energy config keys: {sorted(unknown)}")
        sk = set(SolverConfig.__dataclass_fields__)
        bad = set(solver_data) - sk
        if bad:
            raise ValueError(f"unknown solver config keys: {sorted(bad)}")
        return cls(solver=SolverConfig(**solver_data), **data)


# ---------------------------------------------------------------------------
# landmark terms


def e_landmark_2d(points3d, cam: OrthoCamera, targets2d):
    """Sum of squared pixel residuals between projected points and 2D targets.

    Target rows containing NaN are treated as missing and skipped.
    """
    pts = np.asarray(points3d, dtype=float).reshape(-1, 3)
    tgt = np.asarray(targets2d, dtype=float).reshape(-1, 2)
    if len(pts) != len(tgt):
        raise ValueError("point and target counts differ")
    uv = project_ortho(pts, cam)
    valid = np.isfinite(tgt).all(axis=1)
    res = np.where(valid[:, None], uv - tgt, 0.0)
    value = float((res ** 2).sum())
    grad = 2.0 * res @ cam.uv_jacobian()
    return value, grad


def e_landmark_3d(points3d, targets3d):
    """Sum of squared mm residuals; NaN target rows are skipped."""
    pts = np.asarray(points3d, dtype=float).reshape(-1, 3)
    tgt = np.asarray(targets3d, dtype=float).reshape(-1, 3)
    if len(pts) != len(tgt):
        raise ValueError("point and target counts differ")
    valid = np.isfinite(tgt).all(axis=1)
    res = np.where(valid[:, None], pts - tgt, 0.0)
    return float((res ** 2).sum()), 2.0 * res


# ---------------------------------------------------------------------------
# containment / proximity / contact against a fixed surface


@dataclass
class InsideWitness:
    """Front/back witness subsets of a fixed surface for depth containment.

    The surface is split by outward normal direction along the depth axis;
    each skeleton vertex is tested against the in-plane nearest witness on
    each side.
    """

    front_xy: np.ndarray
    front_z: np.ndarray
    back_xy: np.ndarray
    back_z: np.ndarray
    depth_axis: int = 2

    @classmethod
    def from_mesh(cls, skin: Mesh, normals: np.ndarray, depth_axis: int = 2, stride: int = 1):
        # only clearly front/back-facing vertices act as witnesses; axial and
        # side-facing ones sit at ambiguous depths on tube-like geometry
        nz = normals[:, depth_axis]
        plane = [a for a in range(3) if a != depth_axis]
        front = np.flatnonzero(nz > 0.35)[::stride]
        back = np.flatnonzero(nz < -0.35)[::stride]
        v = skin.vertices
        return cls(
            front_xy=v[np.ix_(front, plane)],
            front_z=v[front, depth_axis],
            back_xy=v[np.ix_(back, plane)],
            back_z=v[back, depth_axis],
            depth_axis=depth_axis,
        )


def _witness_depth(query_xy, pts_xy, pts_z, radius, side, min_count=4):
    """Surface depth against which containment is tested: the extreme z
    (max for the front side, min for the back) over witnesses within
    `radius` in the image plane, always including the `min_count` in-plane
    nearest so sparse or tilted regions still get a sane local bound."""
    d2 = ((query_xy[:, None, :] - pts_xy[None, :, :]) ** 2).sum(axis=2)
    mask = d2 <= radius * radius
    k = min(min_count, pts_xy.shape[0])
    if k:
        knn = np.argpartition(d2, k - 1, axis=1)[:, :k]
        rows = np.repeat(np.arange(len(query_xy)), k)
        mask[rows, knn.ravel()] = True
    fill = -np.inf if side > 0 else np.inf
    masked = np.where(mask, pts_z[None, :], fill)
    return masked.max(axis=1) if side > 0 else masked.min(axis=1)


def _hinge(excess, smooth_beta):
    """max(0, x) (optionally softplus-smoothed) and its derivative."""
    if smooth_beta is None:
        h = np.maximum(excess, 0.0)
        dh = (excess > 0).astype(float)
        return h, dh
    z = smooth_beta * excess
    # numerically stable softplus
    h = np.where(z > 30, excess, np.log1p(np.exp(np.clip(z, -500, 30))) / smooth_beta)
    dh = 1.0 / (1.0 + np.exp(np.clip(-z, -500, 500)))
    return h, dh


def e_inside(skel_verts, witness: InsideWitness, smooth_beta: float | None = None, radius: float = 18.0):
    """Squared depth excess of skeleton vertices sticking out past the local
    front/back surface witnesses, hinged at zero, both depth sides."""
    v = np.asarray(skel_verts, dtype=float).reshape(-1, 3)
    da = witness.depth_axis
    plane = [a for a in range(3) if a != da]
    q = v[:, plane]
    z = v[:, da]
    value = 0.0
    grad = np.zeros_like(v)
    if len(witness.front_z):
        z_hi = _witness_depth(q, witness.front_xy, witness.front_z, radius, side=+1)
        h, dh = _hinge(z - z_hi, smooth_beta)
        value += float((h ** 2).sum())
        grad[:, da] += 2.0 * h * dh
    if len(witness.back_z):
        z_lo = _witness_depth(q, witness.back_xy, witness.back_z, radius, side=-1)
        h, dh = _hinge(z_lo - z, smooth_beta)
        value += float((h ** 2).sum())
        grad[:, da] -= 2.0 * h * dh
    return value, grad


def e_inside_mesh(skel_mesh: Mesh, skin_mesh: Mesh, skin_normals, depth_axis: int = 2):
    """Convenience wrapper building the witness from the full skin mesh."""
    if skel_mesh.n_vertices == 0 or skin_mesh.n_vertices == 0:
        raise ValueError("meshes must be non-empty")
    wit = InsideWitness.from_mesh(skin_mesh, np.asarray(skin_normals, float), depth_axis)
    return e_inside(skel_mesh.vertices, wit)


def e_proximity(skel_verts, regions, skin_verts, depth_axis: int = 2):
    """Squared depth difference between designated skeleton vertices and the
    mean depth of their paired skin regions.

    regions: iterable of (skeleton_vertex_id, [skin_vertex_ids]).
    """
    v = np.asarray(skel_verts, dtype=float).reshape(-1, 3)
    s = np.asarray(skin_verts, dtype=float).reshape(-1, 3)
    value = 0.0
    grad = np.zeros_like(v)
    for sk_id, region in regions:
        ids = np.asarray(region, dtype=np.int64)
        if ids.size == 0:
            raise ValueError("proximity region lists must be non-empty")
        diff = v[sk_id, depth_axis] - float(s[ids, depth_axis].mean())
        value += diff * diff
        grad[sk_id, depth_axis] += 2.0 * diff
    return value, grad


def e_contact(skel_verts, skin_verts, skin_normals, pairs, offset_mm: float = 5.0):
    """Squared distance between skeleton vertices and skin vertices pushed a
    fixed small offset inward along the skin normal.

    pairs: iterable of (skeleton_vertex_id, skin_vertex_id).
    """
    v = np.asarray(skel_verts, dtype=float).reshape(-1, 3)
    s = np.asarray(skin_verts, dtype=float).reshape(-1, 3)
    n = np.asarray(skin_normals, dtype=float).reshape(-1, 3)
    value = 0.0
    grad = np.zeros_like(v)
    for sk_id, sn_id in pairs:
        res = v[sk_id] - (s[sn_id] - offset_mm * n[sn_id])
        value += float(res @ res)
        grad[sk_id] += 2.0 * res
    return value, grad


def e_offset(skin_verts, skel_verts, pairs, skel_normals):
    """Offset-preservation springs between paired skin and skeleton vertices.

    pairs carries (skin_ids, skel_ids, reference_offsets d0). The residual per
    pair is (skin - skel) - d0, weighted by the sign of the offset projected
    onto the skeleton normal (a unit factor almost everywhere; it flips the
    stored orientation convention, not the magnitude). Gradient is with
    respect to the skeleton vertices; the skin is fixed.
    """
    sv = np.asarray(skin_verts, dtype=float).reshape(-1, 3)
    kv = np.asarray(skel_verts, dtype=float).reshape(-1, 3)
    nrm = np.asarray(skel_normals, dtype=float).reshape(-1, 3)
    sn, sk, d0 = pairs.skin_ids, pairs.skel_ids, pairs.d0
    cur = sv[sn] - kv[sk]
    w = np.sign((cur * nrm[sk]).sum(axis=1))
    w = np.where(w == 0, 1.0, w)
    res = (cur - d0) * w[:, None]
    value = float((res ** 2).sum())
    grad = np.zeros_like(kv)
    np.add.at(grad, sk, -2.0 * res * w[:, None])
    return value, grad


# ---------------------------------------------------------------------------
# sphere fitting and articulated-joint constraints


@dataclass
class SphereFit:
    center: np.ndarray
    radius: float
    rms_residual: float


def _sphere_solve(points):
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(p) < 4:
        raise ValueError("sphere fit needs at least 4 points")
    m = np.column_stack([2.0 * p, np.ones(len(p))])
    y = (p ** 2).sum(axis=1)
    theta, _, rank, _ = np.linalg.lstsq(m, y, rcond=None)
    if rank < 4:
        raise ValueError("degenerate (coplanar) point set for sphere fitting")
    center = theta[:3]
    r2 = theta[3] + center @ center
    if r2 <= 0:
        raise ValueError("sphere fit collapsed to non-positive radius")
    return p, m, y, theta, center, math.sqrt(r2)


def fit_sphere(points) -> SphereFit:
    """Algebraic least-squares sphere through >= 4 non-coplanar points."""
    p, _, _, _, center, radius = _sphere_solve(points)
    rms = float(np.sqrt(np.mean((np.linalg.norm(p - center, axis=1) - radius) ** 2)))
    return SphereFit(center=center, radius=radius, rms_residual=rms)


def _sphere_center_backprop(points, d_center):
    """Gradient of (d_center . center) with respect to the fitted points."""
    p, m, y, theta, _, _ = _sphere_solve(points)
    rhs = np.concatenate([np.asarray(d_center, float), [0.0]])
    mtm = m.T @ m
    mu = np.linalg.solve(mtm, rhs)
    resid = y - m @ theta
    # d(center)/d(point i, axis a) contracted against d_center:
    # 2 * [mu_a * resid_i + (mu . m_i) * (p_ia - c_a)]
    mu_m = m @ mu
    grad = 2.0 * (resid[:, None] * mu[None, :3] + mu_m[:, None] * (p - theta[None, :3]))
    return grad


def e_ball_joint(verts, joints, ref_distances):
    """Squared deviation of socket-to-head sphere-center distances from their
    reference values.

    joints: iterable of (vertex_ids_a, vertex_ids_b); spheres are refit to the
    current vertex positions at every evaluation.
    """
    v = np.asarray(verts, dtype=float).reshape(-1, 3)
    value = 0.0
    grad = np.zeros_like(v)
    for (ids_a, ids_b), d0 in zip(joints, ref_distances):
        ids_a = np.asarray(ids_a, dtype=np.int64)
        ids_b = np.asarray(ids_b, dtype=np.int64)
        ca = fit_sphere(v[ids_a]).center
        cb = fit_sphere(v[ids_b]).center
        delta = ca - cb
        dist = float(np.linalg.norm(delta))
        res = dist - d0
        value += res * res
        if dist > 1e-12:
            u = delta / dist
            grad[ids_a] += _sphere_center_backprop(v[ids_a], 2.0 * res * u)
            grad[ids_b] += _sphere_center_backprop(v[ids_b], -2.0 * res * u)
    return value, grad


def ball_joint_distances(verts, joints):
    """Current socket-to-head sphere-center distance per joint definition."""
    v = np.asarray(verts, dtype=float).reshape(-1, 3)
    out = []
    for ids_a, ids_b in joints:
        ca = fit_sphere(v[np.asarray(ids_a, dtype=np.int64)]).center
        cb = fit_sphere(v[np.asarray(ids_b, dtype=np.int64)]).center
        out.append(float(np.linalg.norm(ca - cb)))
    return np.asarray(out)


def e_ligament(verts, pairs, ref_lengths):
    """Squared deviation of attachment-pair lengths from reference lengths."""
    v = np.asarray(verts, dtype=float).reshape(-1, 3)
    value = 0.0
    grad = np.zeros_like(v)
    for (ia, ib), d0 in zip(pairs, ref_lengths):
        delta = v[ia] - v[ib]
        dist = float(np.linalg.norm(delta))
        res = dist - d0
        value += res * res
        if dist > 1e-12:
            u = delta / dist
            grad[ia] += 2.0 * res * u
            grad[ib] -= 2.0 * res * u
    return value, grad


def ligament_lengths(verts, pairs):
    v = np.asarray(verts, dtype=float).reshape(-1, 3)
    return np.asarray([float(np.linalg.norm(v[ia] - v[ib])) for ia, ib in pairs])


def e_symmetry(mirror_operator, shape):
    """||C beta||^2 where C maps shape coefficients to the mismatch between
    mirrored left-part and right-part displacement fields."""
    c = np.asarray(mirror_operator, dtype=float)
    beta = np.asarray(shape, dtype=float).reshape(-1)
    res = c @ beta
    return float(res @ res), 2.0 * (c.T @ res)


# ---------------------------------------------------------------------------
# silhouette term


def _bilinear_sample(field: np.ndarray, uv: np.ndarray):
    """Bilinear sample of a (H, W) field at continuous pixel coords (u, v),
    clamped at the borders. Returns values and d(value)/d(u, v)."""
    h, w = field.shape
    x = np.clip(uv[:, 0] - 0.5, 0.0, w - 1.000001)
    y = np.clip(uv[:, 1] - 0.5, 0.0, h - 1.000001)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    f00 = field[y0, x0]
    f01 = field[y0, x0 + 1]
    f10 = field[y0 + 1, x0]
    f11 = field[y0 + 1, x0 + 1]
    top = f00 * (1 - fx) + f01 * fx
    bot = f10 * (1 - fx) + f11 * fx
    val = top * (1 - fy) + bot * fy
    dvdx = (f01 - f00) * (1 - fy) + (f11 - f10) * fy
    dvdy = bot - top
    return val, np.stack([dvdx, dvdy], axis=1)


@dataclass
class SilhouetteTarget:
    """Precomputed target-side quantities for the silhouette term.

    `dist` is the plain foreground distance field (used by the raster-exact
    value); `boundary_dist` vanishes exactly on the mask boundary and grows
    toward both the inside and the outside, giving the smooth surrogate a
    two-sided pull."""

    mask: BinaryMask
    dist: np.ndarray  # (H, W) distance to target foreground, pixels
    signed_dist: np.ndarray  # (H, W) positive outside, negative inside
    boundary_uv: np.ndarray  # (M, 2) boundary pixel centers (possibly subsampled)
    boundary_normals: np.ndarray = None  # (M, 2) outward directions at boundary_uv

    @classmethod
    def from_mask(cls, mask: BinaryMask, max_boundary: int = 900) -> "SilhouetteTarget":
        if mask.is_empty():
            raise ValueError("silhouette target mask is empty")
        dist = distance_transform(mask).values
        inv = distance_transform(BinaryMask(~mask.pixels, mask.mm_per_pixel)).values
        ys, xs = np.nonzero(boundary_pixels(mask))
        uv = np.stack([xs + 0.5, ys + 0.5], 1)
        if len(uv) > max_boundary:
            keep = np.unique(np.linspace(0, len(uv) - 1, max_boundary).astype(np.int64))
            uv = uv[keep]
        sdf = dist - inv
        _, grd = _bilinear_sample(sdf, uv)
        nrm = np.linalg.norm(grd, axis=1)
        normals = np.where(nrm[:, None] > 1e-9, grd / np.maximum(nrm, 1e-9)[:, None], 0.0)
        return cls(
            mask=mask, dist=dist, signed_dist=sdf, boundary_uv=uv, boundary_normals=normals
        )


def _boundary_vertex_ids(uv: np.ndarray, rendered: BinaryMask) -> np.ndarray:
    """Vertices whose projection falls on (or next to) the rendered boundary."""
    bnd = boundary_pixels(rendered)
    if bnd.any():
        p = np.pad(bnd, 1, constant_values=False)
        grown = np.zeros_like(bnd)
        for dy in (0, 1, 2):
            for dx in (0, 1, 2):
                grown |= p[dy : dy + bnd.shape[0], dx : dx + bnd.shape[1]]
        ix = np.floor(uv[:, 0]).astype(np.int64)
        iy = np.floor(uv[:, 1]).astype(np.int64)
        h, w = bnd.shape
        ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        sel = np.zeros(len(uv), dtype=bool)
        sel[ok] = grown[iy[ok], ix[ok]]
        if sel.any():
            return np.flatnonzero(sel)
    return np.arange(len(uv))


def silhouette_support(mesh: Mesh, cam: OrthoCamera) -> np.ndarray:
    """Indices of the mesh vertices currently generating the silhouette
    boundary; useful for freezing the surrogate support across iterations."""
    rendered = rasterize_silhouette(mesh, cam)
    return _boundary_vertex_ids(project_ortho(mesh.vertices, cam), rendered)


def e_sil_surrogate(
    mesh: Mesh,
    cam: OrthoCamera,
    target,
    rendered: BinaryMask | None = None,
    support: np.ndarray | None = None,
    oriented: bool = False,
    inset: float = 0.0,
):
    """Smooth silhouette surrogate: (a) projected boundary vertices sampled on
    the target distance field (bilinear), plus (b) target boundary pixels
    matched to their nearest projected boundary vertex. Gradients flow to the
    boundary-generating vertices only. The boundary-vertex support is
    recomputed per call unless `support` pins it; correspondences are held
    locally constant either way."""
    if isinstance(target, BinaryMask):
        target = SilhouetteTarget.from_mask(target)
    uv = project_ortho(mesh.vertices, cam)
    if support is not None:
        sel = np.asarray(support, dtype=np.int64)
    else:
        if rendered is None:
            rendered = rasterize_silhouette(mesh, cam)
        sel = _boundary_vertex_ids(uv, rendered)
    if len(sel) > 640:
        sel = sel[np.unique(np.linspace(0, len(sel) - 1, 640).astype(np.int64))]
    buv = uv[sel]
    grad_uv = np.zeros_like(uv)

    # soft absolute of the signed boundary distance: a single zero line with
    # a two-sided pull and no dead band; a positive inset biases the fitted
    # boundary outward by that many pixels (useful under coverage metrics)
    eps = 0.25
    vals, dgrid = _bilinear_sample(target.signed_dist, buv)
    vals = vals - inset
    soft = np.sqrt(vals * vals + eps * eps) - eps
    dsoft = vals / np.sqrt(vals * vals + eps * eps)
    value_a = float(soft.mean())
    grad_uv[sel] += dsoft[:, None] * dgrid / len(sel)

    # coverage half, downweighted: its floor reflects the support spacing;
    # matches are gated to like-oriented boundary points so opposite edges of
    # thin structures never attract each other
    chamfer_w = 0.25
    tb = target.boundary_uv
    d2 = ((tb[:, None, :] - buv[None, :, :]) ** 2).sum(axis=2)
    nn = np.argmin(d2, axis=1)
    if oriented and target.boundary_normals is not None:
        gn = np.linalg.norm(dgrid, axis=1)
        vdir = np.where(gn[:, None] > 1e-9, dgrid / np.maximum(gn, 1e-9)[:, None], 0.0)
        penalty = np.where((target.boundary_normals @ vdir.T) > 0.0, 0.0, 1e12)
        nn_gated = np.argmin(d2 + penalty, axis=1)
        ok = penalty[np.arange(len(tb)), nn_gated] == 0.0
        nn = np.where(ok, nn_gated, nn)
    delta = buv[nn] - tb
    dist = np.sqrt((delta ** 2).sum(axis=1))
    value_b = float(dist.mean())
    nz = dist > 1e-9
    contrib = np.zeros_like(delta)
    contrib[nz] = delta[nz] / dist[nz, None] / len(tb)
    np.add.at(grad_uv, sel[nn], chamfer_w * contrib)

    grad = grad_uv @ cam.uv_jacobian()
    return value_a + chamfer_w * value_b, grad


def e_sil_exact(rendered: BinaryMask, target: BinaryMask) -> float:
    """Raster-exact bidirectional boundary distance: mean target-field value
    over rendered boundary pixels plus mean rendered-field value over target
    boundary pixels. Zero iff the masks agree on their boundaries."""
    if target.is_empty():
        raise ValueError("silhouette target mask is empty")
    if rendered.is_empty():
        return float("inf")
    dt_target = distance_transform(target).values
    dt_rendered = distance_transform(rendered).values
    rb = boundary_pixels(rendered)
    tb = boundary_pixels(target)
    return float(dt_target[rb].mean() + dt_rendered[tb].mean())


def e_sil(mesh: Mesh, cam: OrthoCamera, target: BinaryMask):
    """Silhouette mismatch between the rasterized mesh and a target mask.

    Returns the raster-exact value together with the gradient of the smooth
    surrogate with respect to the mesh vertices (interior vertices get zero).
    """
    rendered = rasterize_silhouette(mesh, cam)
    _, grad = e_sil_surrogate(mesh, cam, target, rendered=rendered)
    return e_sil_exact(rendered, target), grad


# ---------------------------------------------------------------------------
# pose prior


@dataclass
class PosePrior:
    """Isotropic Gaussian over per-joint rotations around a canonical pose."""

    mean: np.ndarray  # (J, 3)
    sigma: float = 0.2

    def __post_init__(self):
        self.mean = np.ascontiguousarray(self.mean, dtype=np.float64).reshape(-1, 3)
        if not self.sigma > 0:
            raise ValueError("pose prior sigma must be positive")

    def energy(self, rotations):
        r = np.asarray(rotations, dtype=float).reshape(-1, 3)
        res = (r - self.mean) / self.sigma
        return float((res ** 2).sum()), 2.0 * res / self.sigma


# ---------------------------------------------------------------------------
# minimizer


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    grad_norm: float
    n_iter: int
    converged: bool
    message: str
    trace: list = field(default_factory=list)  # (iteration, value, grad_norm)


def _lbfgs_direction(g, s_list, y_list):
    """Two-loop recursion; returns a descent direction built from gradients."""
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_list), reversed(y_list)):
        rho = 1.0 / float(s @ y)
        a = rho * float(s @ q)
        q -= a * y
        alphas.append((a, rho, s, y))
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= float(s @ y) / float(y @ y)
    for a, rho, s, y in reversed(alphas):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def minimize(fun, x0, cfg: SolverConfig | None = None, trace_path=None) -> MinimizeResult:
    """First-order minimization: limited-memory quasi-Newton directions built
    from gradient differences, safeguarded by Armijo backtracking. The
    objective trace is monotone non-increasing by construction.

    fun(x) must return (value, gradient).
    """
    cfg = cfg or SolverConfig()
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun(x)
    if not (np.isfinite(f) and np.isfinite(g).all()):
        raise ValueError("objective must be finite at the initial point")
    trace = [(0, float(f), float(np.linalg.norm(g)))]
    s_list, y_list = [], []
    converged = False
    message = "max iterations reached"
    it = 0
    for it in range(1, cfg.max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= cfg.gtol:
            converged = True
            message = "gradient tolerance reached"
            break
        d = _lbfgs_direction(g, s_list, y_list) if s_list else -g
        slope = float(g @ d)
        if not np.isfinite(slope) or slope >= 0:
            d = -g
            slope = -gnorm * gnorm
        step = 1.0 if s_list else cfg.step_init / max(1.0, gnorm)
        accepted = False
        while step >= cfg.alpha_min:
            xn = x + step * d
            fn, gn = fun(xn)
            if np.isfinite(fn) and np.isfinite(gn).all():
                if fn <= f + cfg.armijo_c1 * step * slope:
                    accepted = True
                    break
            step *= cfg.step_shrink
        if not accepted and not np.array_equal(d, -g):
            # retry along steepest descent before giving up
            d = -g
            slope = -gnorm * gnorm
            step = cfg.step_init / max(1.0, gnorm)
            while step >= cfg.alpha_min:
                xn = x + step * d
                fn, gn = fun(xn)
                if np.isfinite(fn) and np.isfinite(gn).all():
                    if fn <= f + cfg.armijo_c1 * step * slope:
                        accepted = True
                        break
                step *= cfg.step_shrink
        if not accepted:
            message = "line search failed to find a descent step"
            break
        s = xn - x
        y = gn - g
        if float(s @ y) > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_list.append(s)
            y_list.append(y)
            if len(s_list) > cfg.memory:
                s_list.pop(0)
                y_list.pop(0)
        x, f, g = xn, fn, gn
        trace.append((it, float(f), float(np.linalg.norm(g))))
    else:
        it = cfg.max_iter
    if trace_path is not None:
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "grad_norm"])
            w.writerows(trace)
    return MinimizeResult(
        x=x,
        value=float(f),
        grad_norm=float(np.linalg.norm(g)),
        n_iter=it,
        converged=converged,
        message=message,
        trace=trace,
    )
