"""Binary raster masks, grayscale segmentation heuristics, morphology and
exact Euclidean distance transforms.

Conventions: all rasters are row-major numpy arrays indexed [row, col];
pixel (i, j) covers the unit square [j, j+1) x [i, i+1) so its center sits
at continuous image coordinates (u, v) = (j + 0.5, i + 0.5).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

_INF = float("inf")


# ---------------------------------------------------------------------------
# raster types


@dataclass
class BinaryMask:
    """2D silhouette: (H, W) bool pixels plus physical pixel size in mm."""

    pixels: np.ndarray
    mm_per_pixel: float = 1.0

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=bool)
        if self.pixels.ndim != 2:
            raise ValueError("mask pixels must be a 2D array")
        if not (self.mm_per_pixel > 0 and math.isfinite(self.mm_per_pixel)):
            raise ValueError("mm_per_pixel must be a positive finite number")

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def count(self) -> int:
        """Number of foreground pixels."""
        return int(self.pixels.sum())

    def is_empty(self) -> bool:
        return not self.pixels.any()

    def copy(self) -> "BinaryMask":
        return BinaryMask(self.pixels.copy(), self.mm_per_pixel)

    def save_pgm(self, path) -> None:
        """Write binary P5 (maxval 255, foreground=255) plus a `.meta.json` sidecar."""
        data = np.where(self.pixels, 255, 0).astype(np.uint8)
        _write_pgm(path, data, 255)
        sidecar = _meta_path(path)
        sidecar.write_text(json.dumps({"mm_per_pixel": self.mm_per_pixel}) + "\n")

    @classmethod
    def load_pgm(cls, path) -> "BinaryMask":
        data, maxval = _read_pgm(path)
        mm = 1.0
        sidecar = _meta_path(path)
        if sidecar.exists():
            mm = float(json.loads(sidecar.read_text())["mm_per_pixel"])
        return cls(data >= (maxval + 1) // 2, mm)


@dataclass
class GrayImage:
    """16-bit grayscale image, (H, W) uint16."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint16)
        if self.pixels.ndim != 2 or min(self.pixels.shape) == 0:
            raise ValueError("gray image must be 2D with positive dimensions")

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    def save_pgm(self, path) -> None:
        _write_pgm(path, self.pixels, 65535)

    @classmethod
    def load_pgm(cls, path) -> "GrayImage":
        data, _ = _read_pgm(path)
        return cls(data.astype(np.uint16))


@dataclass
class DistanceField:
    """Per-pixel Euclidean distance (in pixels) to the nearest foreground pixel.

    Zero exactly on foreground; +inf everywhere when the source mask is empty.
    """

    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("distance field must be a 2D array")

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])


# ---------------------------------------------------------------------------
# PGM I/O (P5 only; 16-bit data is big-endian per the format)


def _meta_path(path):
    from pathlib import Path

    p = Path(path)
    return p.with_name(p.stem + ".meta.json")


def _write_pgm(path, data: np.ndarray, maxval: int) -> None:
    from pathlib import Path

    h, w = data.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    if maxval > 255:
        body = data.astype(">u2").tobytes()
    else:
        body = data.astype(np.uint8).tobytes()
    Path(path).write_bytes(header + body)


def _read_pgm(path):
    from pathlib import Path

    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header tokens: magic, width, height, maxval; '#' comments allowed
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = int(tokens[0]), int(tokens[1]), int(tokens[2])
    if maxval > 255:
        data = np.frombuffer(raw, dtype=">u2", count=w * h, offset=pos)
        data = data.astype(np.uint16)
    else:
        data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).copy(), maxval


# ---------------------------------------------------------------------------
# exact Euclidean distance transform (row sweep + per-column parabola envelope)


def _envelope_1d(f: list, out: np.ndarray) -> None:
    """Exact 1D squared-distance transform of sampled function `f` (inf allowed)."""
    n = len(f)
    v = [0] * n
    z = [0.0] * (n + 1)
    k = -1
    for q in range(n):
        fq = f[q]
        if fq == _INF:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -_INF
            z[1] = _INF
            continue
        while True:
            p = v[k]
            s = (fq + q * q - f[p] - p * p) / (2.0 * (q - p))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = _INF
    if k < 0:
        out[:] = _INF
        return
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        out[q] = (q - p) * (q - p) + f[p]


def _edt_squared(fg: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance (pixels^2) from each pixel to the nearest True pixel."""
    h, w = fg.shape
    col = np.arange(w, dtype=np.int64)
    left = np.where(fg, col, -1)
    np.maximum.accumulate(left, axis=1, out=left)
    right = np.where(fg, col, 2 * w)
    right = np.flip(right, 1)
    np.minimum.accumulate(right, axis=1, out=right)
    right = np.flip(right, 1)
    d_left = np.where(left >= 0, (col - left).astype(np.float64), _INF)
    d_right = np.where(right < w, (right - col).astype(np.float64), _INF)
    g = np.minimum(d_left, d_right)
    g = g * g
    gt = np.ascontiguousarray(g.T)
    ot = np.empty_like(gt)
    for c in range(w):
        _envelope_1d(gt[c].tolist(), ot[c])
    return np.ascontiguousarray(ot.T)


def distance_transform(mask: BinaryMask) -> DistanceField:
    """Exact Euclidean distance in pixels to the nearest foreground pixel."""
    return DistanceField(np.sqrt(_edt_squared(mask.pixels)))


# ---------------------------------------------------------------------------
# connected components (8-connectivity, labels in first-pixel raster order)


@dataclass
class Components:
    labels: np.ndarray  # (H, W) int32; 0 = background, components are 1..n
    areas: np.ndarray  # (n,) int64; areas[i] = pixel count of label i+1

    @property
    def n(self) -> int:
        return int(self.areas.shape[0])


def connected_components(mask: BinaryMask) -> Components:
    """Label 8-connected foreground regions.

    Labels are assigned in raster order of each component's first pixel.
    """
    fg = mask.pixels
    h, w = fg.shape
    labels = [[0] * w for _ in range(h)]
    rows = fg.tolist()
    parent = [0]  # union-find over provisional labels, 1-based

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    nxt = 0
    for i in range(h):
        row = rows[i]
        lab_row = labels[i]
        lab_up = labels[i - 1] if i > 0 else None
        for j in range(w):
            if not row[j]:
                continue
            cands = []
            if j > 0 and lab_row[j - 1]:
                cands.append(lab_row[j - 1])
            if lab_up is not None:
                if lab_up[j]:
                    cands.append(lab_up[j])
                if j > 0 and lab_up[j - 1]:
                    cands.append(lab_up[j - 1])
                if j + 1 < w and lab_up[j + 1]:
                    cands.append(lab_up[j + 1])
            if not cands:
                nxt += 1
                parent.append(nxt)
                lab_row[j] = nxt
            else:
                roots = [find(c) for c in cands]
                m = min(roots)
                lab_row[j] = m
                for r in roots:
                    if r != m:
                        parent[r] = m
    lab = np.asarray(labels, dtype=np.int64)
    if nxt == 0:
        return Components(lab.astype(np.int32), np.zeros(0, dtype=np.int64))
    roots = np.asarray([0] + [find(a) for a in range(1, nxt + 1)], dtype=np.int64)
    lab = roots[lab]
    # remap so component labels follow the raster order of their first pixel
    flat = lab.ravel()
    nz = flat[flat > 0]
    _, first = np.unique(nz, return_index=True)
    order = np.argsort(first)
    remap = np.zeros(nxt + 1, dtype=np.int32)
    uniq = np.unique(nz)
    remap[uniq[order]] = np.arange(1, len(uniq) + 1, dtype=np.int32)
    final = remap[lab]
    areas = np.bincount(final.ravel(), minlength=len(uniq) + 1)[1:].astype(np.int64)
    return Components(final.astype(np.int32), areas)


# ---------------------------------------------------------------------------
# morphology


def erode(mask: BinaryMask, radius: float) -> BinaryMask:
    """Erode by a Euclidean disc: keep p iff no background pixel lies within
    `radius` of it. Pixels outside the image count as background."""
    if radius < 0:
        raise ValueError("erosion radius must be >= 0")
    if radius == 0:
        return mask.copy()
    h, w = mask.pixels.shape
    bg = np.ones((h + 2, w + 2), dtype=bool)
    bg[1:-1, 1:-1] = ~mask.pixels
    d2 = _edt_squared(bg)[1:-1, 1:-1]
    return BinaryMask(mask.pixels & (d2 > radius * radius), mask.mm_per_pixel)


def occlude(mask: BinaryMask, rectangles) -> BinaryMask:
    """Zero out axis-aligned rectangles given as (row, col, n_rows, n_cols).

    Rectangles reaching outside the image are clipped.
    """
    out = mask.pixels.copy()
    h, w = out.shape
    for (r, c, nr, nc) in rectangles:
        r0, c0 = max(int(r), 0), max(int(c), 0)
        r1, c1 = min(int(r) + int(nr), h), min(int(c) + int(nc), w)
        if r1 > r0 and c1 > c0:
            out[r0:r1, c0:c1] = False
    return BinaryMask(out, mask.mm_per_pixel)


def boundary_pixels(mask: BinaryMask) -> np.ndarray:
    """Foreground pixels with a 4-neighbour background pixel (or on the border)."""
    fg = mask.pixels
    p = np.pad(fg, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return fg & ~interior


# ---------------------------------------------------------------------------
# segmentation heuristics


def segment_skin(
    img: GrayImage, threshold: int, hole_max: int = 200, mm_per_pixel: float = 1.0
) -> BinaryMask:
    """Threshold a soft-tissue image, then fill enclosed background regions
    smaller than `hole_max` pixels (lung-like artifacts)."""
    if not (0 <= threshold <= 65535):
        raise ValueError("threshold outside the 16-bit intensity range")
    fg = img.pixels >= threshold
    comp = connected_components(BinaryMask(~fg, mm_per_pixel))
    if comp.n:
        lab = comp.labels
        border = np.unique(
            np.concatenate([lab[0, :], lab[-1, :], lab[:, 0], lab[:, -1]])
        )
        border_set = set(int(b) for b in border if b > 0)
        for idx in range(comp.n):
            label = idx + 1
            if label in border_set:
                continue
            if comp.areas[idx] < hole_max:
                fg[lab == label] = True
    if not fg.any():
        log.warning("segment_skin produced an all-background mask")
    return BinaryMask(fg, mm_per_pixel)


def segment_bones(
    img: GrayImage, percentile: float, min_area: int = 50, mm_per_pixel: float = 1.0
) -> BinaryMask:
    """Mark the brightest `percentile` fraction of pixels as bone, then drop
    8-connected components smaller than `min_area` pixels.

    Ties at the threshold intensity are broken by raster order.
    """
    if not 0 < percentile < 1:
        raise ValueError("percentile must lie strictly between 0 and 1")
    flat = img.pixels.ravel()
    n_keep = int(math.ceil(percentile * flat.size))
    order = np.lexsort((np.arange(flat.size), -flat.astype(np.int64)))
    fg = np.zeros(flat.size, dtype=bool)
    fg[order[:n_keep]] = True
    mask = BinaryMask(fg.reshape(img.pixels.shape), mm_per_pixel)
    comp = connected_components(mask)
    if comp.n:
        small = np.flatnonzero(comp.areas < min_area) + 1
        if small.size:
            mask.pixels[np.isin(comp.labels, small)] = False
    return mask
