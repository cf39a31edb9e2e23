"""PCA shape space over unposed skeleton vertices, a non-negative least
squares active-set solver, and the two surface-to-skeleton regressors."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# PCA shape space


@dataclass
class ShapeSpace:
    """mean (D,), orthonormal basis (D, K) columnwise, variances (K,) descending."""

    mean: np.ndarray
    basis: np.ndarray
    variances: np.ndarray
    n_train: int = 0

    def __post_init__(self):
        self.mean = np.ascontiguousarray(self.mean, dtype=np.float64).reshape(-1)
        self.basis = np.ascontiguousarray(self.basis, dtype=np.float64)
        self.variances = np.ascontiguousarray(self.variances, dtype=np.float64)

    @property
    def n_components(self) -> int:
        return int(self.basis.shape[1])

    def validate(self) -> None:
        k = self.n_components
        gram = self.basis.T @ self.basis
        if np.abs(gram - np.eye(k)).max() > 1e-9:
            raise ValueError("basis columns are not orthonormal")
        if np.any(np.diff(self.variances) > 1e-12):
            raise ValueError("variances must be sorted in descending order")
        if self.variances.size and self.variances.min() < -1e-12:
            raise ValueError("variances must be non-negative")


def pca_fit(samples: np.ndarray) -> ShapeSpace:
    """Mean-centered SVD; keeps min(M-1, D) components.

    Sign convention: the largest-magnitude entry of each basis column is positive.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two sample vectors")
    m, d = x.shape
    mean = x.mean(axis=0)
    xc = x - mean
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    k = min(m - 1, d)
    basis = vt[:k].T
    variances = (s[:k] ** 2) / (m - 1)
    for i in range(k):
        j = int(np.argmax(np.abs(basis[:, i])))
        if basis[j, i] < 0:
            basis[:, i] = -basis[:, i]
    return ShapeSpace(mean=mean, basis=basis, variances=variances, n_train=m)


def pca_project(space: ShapeSpace, vector: np.ndarray, k: int | None = None) -> np.ndarray:
    """Coefficients of `vector` on the first k basis columns."""
    if k is None:
        k = space.n_components
    if not 0 <= k <= space.n_components:
        raise ValueError("component count out of range")
    v = np.asarray(vector, dtype=float).reshape(-1)
    return space.basis[:, :k].T @ (v - space.mean)


def pca_reconstruct(space: ShapeSpace, coefficients: np.ndarray) -> np.ndarray:
    c = np.asarray(coefficients, dtype=float).reshape(-1)
    if c.shape[0] > space.n_components:
        raise ValueError("too many coefficients for this space")
    return space.mean + space.basis[:, : c.shape[0]] @ c


# ---------------------------------------------------------------------------
# non-negative least squares (active-set iteration)


def nnls(a: np.ndarray, b: np.ndarray, max_iter: int | None = None, tol: float | None = None):
    """Minimize ||a x - b|| subject to x >= 0.

    Classic active-set iteration: grow the passive set by the most positive
    component of the negative gradient w = a^T (b - a x), and shrink it with
    interpolation steps whenever the unconstrained sub-solution goes negative.
    Raises RuntimeError when the iteration cap is exceeded.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError("incompatible system dimensions")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("nnls inputs must be finite")
    m, n = a.shape
    if max_iter is None:
        max_iter = 3 * n + 30
    if tol is None:
        tol = 1e-11 * max(1.0, float(np.abs(a).max()) * float(np.abs(b).max() if b.size else 1.0))
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    outer = 0
    while True:
        w = a.T @ (b - a @ x)
        active = ~passive
        if not active.any() or (w[active] <= tol).all():
            return x
        outer += 1
        if outer > max_iter:
            resid = float(np.linalg.norm(a @ x - b))
            raise RuntimeError(f"nnls failed to converge; residual {resid:.3e}")
        cand = np.flatnonzero(active)
        passive[cand[np.argmax(w[cand])]] = True
        while True:
            z = np.zeros(n)
            sol, *_ = np.linalg.lstsq(a[:, passive], b, rcond=None)
            z[passive] = sol
            if sol.size == 0 or sol.min() > 0:
                x = z
                break
            neg = passive & (z <= 0)
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > 0


# ---------------------------------------------------------------------------
# regressors


@dataclass
class LandmarkRegressor:
    """Per-landmark, per-axis convex combinations of surface vertex coordinates.

    weights has shape (L, 3, N): landmark l axis a is predicted as
    weights[l, a] . vertices[:, a]; every weight row is non-negative and sums
    to one, which makes predictions translation-equivariant.
    """

    weights: np.ndarray
    n_train: int = 0

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 3 or self.weights.shape[1] != 3:
            raise ValueError("weights must have shape (L, 3, N)")

    @property
    def n_landmarks(self) -> int:
        return int(self.weights.shape[0])

    @property
    def n_vertices(self) -> int:
        return int(self.weights.shape[2])

    def as_matrix(self) -> np.ndarray:
        """Expanded (3L, 3N) block matrix with zero cross-axis blocks."""
        l, _, n = self.weights.shape
        out = np.zeros((3 * l, 3 * n))
        for i in range(l):
            for a in range(3):
                out[3 * i + a, a::3] = self.weights[i, a]
        return out

    def validate(self) -> None:
        if self.weights.min() < 0:
            raise ValueError("regressor weights must be non-negative")
        sums = self.weights.sum(axis=2)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ValueError("regressor weight rows must sum to 1")


def train_landmark_regressor(
    skin_vertices: np.ndarray, landmarks: np.ndarray, sum_weight: float = 100.0
) -> LandmarkRegressor:
    """Fit one non-negative convex combination per landmark coordinate.

    skin_vertices: (M, N, 3) training surfaces in vertex correspondence.
    landmarks:     (M, L, 3) target points.
    The sum-to-one constraint is imposed with a weighted extra row and the
    solution renormalized, so rows come out exactly convex.
    """
    v = np.asarray(skin_vertices, dtype=float)
    y = np.asarray(landmarks, dtype=float)
    if v.ndim != 3 or y.ndim != 3 or v.shape[0] != y.shape[0]:
        raise ValueError("need matched (M, N, 3) surfaces and (M, L, 3) landmarks")
    m, n, _ = v.shape
    l = y.shape[1]
    weights = np.zeros((l, 3, n))
    for a in range(3):
        design = v[:, :, a]
        scale = max(1.0, float(np.abs(design).max()))
        row = np.full((1, n), sum_weight * scale)
        aug = np.vstack([design, row])
        for i in range(l):
            rhs = np.concatenate([y[:, i, a], [sum_weight * scale]])
            x = nnls(aug, rhs)
            s = x.sum()
            if s <= 0:
                log.warning("landmark %d axis %d: degenerate fit, using uniform weights", i, a)
                x = np.full(n, 1.0 / n)
                s = 1.0
            weights[i, a] = x / s
    return LandmarkRegressor(weights=weights, n_train=m)


def predict_landmarks(reg: LandmarkRegressor, skin_vertices: np.ndarray) -> np.ndarray:
    """Apply the regressor to one surface (N, 3), returning (L, 3) points."""
    v = np.asarray(skin_vertices, dtype=float)
    if v.ndim != 2 or v.shape[0] != reg.n_vertices:
        raise ValueError("surface vertex count does not match the regressor")
    out = np.empty((reg.n_landmarks, 3))
    for a in range(3):
        out[:, a] = reg.weights[:, a, :] @ v[:, a]
    return out


@dataclass
class ShapeRegressor:
    """Affine map from surface shape coefficients to skeleton shape coefficients."""

    matrix: np.ndarray  # (K_out, K_in)
    intercept: np.ndarray  # (K_out,)
    ridge: float = 1e-6
    n_train: int = 0

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        self.intercept = np.ascontiguousarray(self.intercept, dtype=np.float64).reshape(-1)
        if not (np.isfinite(self.matrix).all() and np.isfinite(self.intercept).all()):
            raise ValueError("regressor parameters must be finite")


def train_shape_regressor(
    inputs: np.ndarray, outputs: np.ndarray, ridge: float = 1e-6
) -> ShapeRegressor:
    """Ridge-regularized least squares with intercept.

    inputs (M, K_in), outputs (M, K_out).
    """
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(outputs, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("need matched input/output sample matrices")
    xm, ym = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - xm, y - ym
    k = x.shape[1]
    mat = np.linalg.solve(xc.T @ xc + ridge * np.eye(k), xc.T @ yc).T
    intercept = ym - mat @ xm
    return ShapeRegressor(matrix=mat, intercept=intercept, ridge=ridge, n_train=x.shape[0])


def predict_shape(reg: ShapeRegressor, coefficients: np.ndarray) -> np.ndarray:
    c = np.asarray(coefficients, dtype=float).reshape(-1)
    if c.shape[0] != reg.matrix.shape[1]:
        raise ValueError("coefficient length does not match the regressor")
    return reg.matrix @ c + reg.intercept
