"""Mask overlap metrics and landmark error tables.

The coverage metrics are asymmetric on purpose: `intersection_ratio` measures
how much of the target is covered by the prediction, `directed_hausdorff`
measures the worst target pixel against the prediction.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .masks import BinaryMask, _edt_squared


@dataclass
class MaskMetrics:
    iou: float
    intersection_ratio: float  # percent of target covered by prediction
    directed_hausdorff: float  # pixels, from target into prediction

    def to_dict(self) -> dict:
        return {
            "iou": self.iou,
            "intersection_ratio": self.intersection_ratio,
            "directed_hausdorff": self.directed_hausdorff,
        }


def _check_dims(a: BinaryMask, b: BinaryMask) -> None:
    if a.pixels.shape != b.pixels.shape:
        raise ValueError("masks must have identical dimensions")


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union; two empty masks compare as identical (1.0)."""
    _check_dims(a, b)
    union = np.logical_or(a.pixels, b.pixels).sum()
    if union == 0:
        return 1.0
    inter = np.logical_and(a.pixels, b.pixels).sum()
    return float(inter) / float(union)


def intersection_ratio(pred: BinaryMask, target: BinaryMask) -> float:
    """100 * |pred AND target| / |target|."""
    _check_dims(pred, target)
    t = target.count
    if t == 0:
        raise ValueError("intersection_ratio needs a non-empty target mask")
    inter = np.logical_and(pred.pixels, target.pixels).sum()
    return 100.0 * float(inter) / float(t)


def directed_hausdorff(from_mask: BinaryMask, to_mask: BinaryMask) -> float:
    """Max over foreground pixels of `from_mask` of the Euclidean distance (px)
    to the nearest foreground pixel of `to_mask`."""
    _check_dims(from_mask, to_mask)
    if from_mask.is_empty() or to_mask.is_empty():
        raise ValueError("directed_hausdorff needs two non-empty masks")
    d2 = _edt_squared(to_mask.pixels)
    return float(math.sqrt(d2[from_mask.pixels].max()))


def compute_mask_metrics(pred: BinaryMask, target: BinaryMask) -> MaskMetrics:
    return MaskMetrics(
        iou=iou(pred, target),
        intersection_ratio=intersection_ratio(pred, target),
        directed_hausdorff=directed_hausdorff(target, pred),
    )


@dataclass
class LandmarkErrorTable:
    names: list
    mean_mm: np.ndarray  # (L,)
    std_mm: np.ndarray  # (L,)
    overall_mean_mm: float

    def to_dict(self) -> dict:
        return {
            "per_landmark": [
                {"name": n, "mean_mm": float(m), "std_mm": float(s)}
                for n, m, s in zip(self.names, self.mean_mm, self.std_mm)
            ],
            "overall_mean_mm": self.overall_mean_mm,
        }


def landmark_error_table(pred_sets, gt_sets, names=None) -> LandmarkErrorTable:
    """Per-landmark mean and std of 3D error (mm) over a set of subjects.

    pred_sets, gt_sets: arrays (S, L, 3).
    """
    pred = np.asarray(pred_sets, dtype=float)
    gt = np.asarray(gt_sets, dtype=float)
    if pred.shape != gt.shape or pred.ndim != 3:
        raise ValueError("prediction and ground-truth sets must both be (S, L, 3)")
    d = np.linalg.norm(pred - gt, axis=2)  # (S, L)
    if names is None:
        names = [f"L{i}" for i in range(pred.shape[1])]
    return LandmarkErrorTable(
        names=list(names),
        mean_mm=d.mean(axis=0),
        std_mm=d.std(axis=0),
        overall_mean_mm=float(d.mean()),
    )


def write_metrics_json(path, metrics: MaskMetrics) -> None:
    Path(path).write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n")


def write_metrics_table(path, rows, groups=("male", "female")) -> None:
    """CSV with one row per method: coverage percentage per group, then
    Hausdorff mean and std per group.

    rows: list of dicts {method, ir: {group: mean}, hd: {group: (mean, std)}}.
    """
    header = ["method"]
    header += [f"ir_pct_{g}" for g in groups]
    for g in groups:
        header += [f"hd_px_mean_{g}", f"hd_px_std_{g}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            line = [row["method"]]
            line += [f"{row['ir'][g]:.2f}" for g in groups]
            for g in groups:
                m, s = row["hd"][g]
                line += [f"{m:.2f}", f"{s:.2f}"]
            w.writerow(line)
