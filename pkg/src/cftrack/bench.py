"""Sequence ingestion (frames directory plus ground-truth rectangles) and
one-pass-evaluation metrics: precision curve, success curve, AUC."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, LengthMismatch, MissingFrames

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp")

PRECISION_THRESHOLDS = np.arange(51, dtype=np.float64)
SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)


@dataclass
class Sequence:
    name: str
    frame_paths: list
    boxes: np.ndarray  # (n, 4) float64, zero-based x, y, w, h

    def __len__(self) -> int:
        return len(self.frame_paths)


def load_sequence(directory) -> Sequence:
    """Read an OTB-style sequence: img/ frame files plus groundtruth_rect.txt
    with one one-based "x,y,w,h" record per frame (comma, tab, or space
    delimited). Coordinates are converted to zero-based."""
    root = Path(directory)
    img_dir = root / "img"
    if not img_dir.is_dir():
        raise FormatError(f"{root}: missing img/ directory")
    frames = sorted(
        p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
    )
    gt_path = root / "groundtruth_rect.txt"
    if not gt_path.exists():
        raise FormatError(f"{root}: missing groundtruth_rect.txt")
    boxes = []
    for lineno, line in enumerate(gt_path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = re.split(r"[,\s]+", line)
        if len(parts) != 4:
            raise FormatError(f"{gt_path}:{lineno}: expected 4 fields, got {parts}")
        try:
            x, y, w, h = (float(p) for p in parts)
        except ValueError as exc:
            raise FormatError(f"{gt_path}:{lineno}: non-numeric field") from exc
        boxes.append((x - 1.0, y - 1.0, w, h))
    if len(frames) != len(boxes):
        raise MissingFrames(
            f"{root}: {len(frames)} frames but {len(boxes)} ground-truth rows"
        )
    if len(frames) < 2:
        raise MissingFrames(f"{root}: need at least 2 frames")
    return Sequence(name=root.name, frame_paths=frames, boxes=np.asarray(boxes))


def _centers(boxes: np.ndarray) -> np.ndarray:
    return boxes[:, :2] + boxes[:, 2:] / 2.0


def precision_curve(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Fraction of frames whose center error is within each pixel threshold
    0..50."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 4:
        raise LengthMismatch(f"boxes {pred.shape} vs {gt.shape}")
    dist = np.linalg.norm(_centers(pred) - _centers(gt), axis=1)
    return (dist[None, :] <= PRECISION_THRESHOLDS[:, None]).mean(axis=1)


def iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise intersection over union of (n, 4) box arrays."""
    ax1, ay1 = a[:, 0], a[:, 1]
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.maximum(0.0, np.minimum(ax2, bx2) - np.maximum(ax1, bx1))
    ih = np.maximum(0.0, np.minimum(ay2, by2) - np.maximum(ay1, by1))
    inter = iw * ih
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def success_curve(pred: np.ndarray, gt: np.ndarray):
    """Fraction of frames with IoU strictly above each overlap threshold
    0, 0.05, ..., 1, plus the mean of those 21 values (AUC)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 4:
        raise LengthMismatch(f"boxes {pred.shape} vs {gt.shape}")
    overlaps = iou(pred, gt)
    curve = (overlaps[None, :] > SUCCESS_THRESHOLDS[:, None]).mean(axis=1)
    return curve, float(curve.mean())


@dataclass
class EvalCurves:
    precision: np.ndarray  # (51,)
    success: np.ndarray  # (21,)
    auc: float

    @property
    def precision_at_20(self) -> float:
        return float(self.precision[20])


def evaluate(pred: np.ndarray, gt: np.ndarray) -> EvalCurves:
    prec = precision_curve(pred, gt)
    succ, auc = success_curve(pred, gt)
    return EvalCurves(precision=prec, success=succ, auc=auc)
