"""Evaluation metrics: per-class Dice, HD95, AP@IoU, and mask-to-box
conversion baselines.

Boxes everywhere in this module are continuous corner rectangles
(x_min, y_min, x_max, y_max): a pixel at row r, column c occupies the unit
cell [c, c+1) x [r, r+1). Conversions from inclusive integer pixel corners
add 1 to the max side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ShapeError

STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
STRUCT_8 = np.ones((3, 3), dtype=bool)


def _as_bool(mask) -> np.ndarray:
    m = np.asarray(mask)
    return m.astype(bool)


def dice_score(pred, gt) -> float:
    pred = _as_bool(pred)
    gt = _as_bool(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    p, g = pred.sum(), gt.sum()
    if p == 0 and g == 0:
        return 1.0
    inter = np.logical_and(pred, gt).sum()
    return 2.0 * inter / (p + g)


def boundary_pixels(mask) -> np.ndarray:
    """(K, 2) row/col coordinates of foreground pixels with at least one
    4-neighbor outside the foreground (image border counts as background)."""
    mask = _as_bool(mask)
    if mask.ndim != 2:
        raise ShapeError("mask must be 2-D")
    eroded = ndimage.binary_erosion(mask, structure=STRUCT_4, border_value=0)
    return np.argwhere(mask & ~eroded)


def hd95(pred, gt, spacing=1.0) -> float:
    """95th percentile of the symmetric surface distances between two masks.

    Both empty -> 0.0. Exactly one empty -> the image diagonal (in spacing
    units), a documented sentinel rather than a claim about the literature.
    """
    pred = _as_bool(pred)
    gt = _as_bool(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    sp = np.broadcast_to(np.asarray(spacing, dtype=float), (2,)).astype(float)

    p_empty, g_empty = pred.sum() == 0, gt.sum() == 0
    if p_empty and g_empty:
        return 0.0
    if p_empty or g_empty:
        h, w = pred.shape
        return float(np.hypot(h * sp[0], w * sp[1]))

    a = boundary_pixels(pred) * sp
    b = boundary_pixels(gt) * sp
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return float(np.percentile(np.concatenate([d_ab, d_ba]), 95))


# ---------------------------------------------------------------------------
# detection


def box_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def map_at(preds, gts, iou_thr: float = 0.1) -> float:
    """Average precision for one class over a set of images.

    preds: per image, a list of (box, score); gts: per image, a list of boxes.
    Predictions are sorted by descending score and greedily matched to the
    highest-IoU unmatched ground truth of their image (IoU >= iou_thr).
    AP is the area under the all-point interpolated precision envelope.
    Zero ground truths -> 0.0 by convention.
    """
    if len(preds) != len(gts):
        raise ShapeError("preds and gts must cover the same images")
    total_gt = sum(len(g) for g in gts)
    if total_gt == 0:
        return 0.0

    flat = []
    for img, img_preds in enumerate(preds):
        for box, score in img_preds:
            flat.append((float(score), img, tuple(float(v) for v in box)))
    if not flat:
        return 0.0
    # stable sort: score desc, then image index / insertion order for ties
    order = sorted(range(len(flat)), key=lambda i: (-flat[i][0], i))

    matched = [set() for _ in gts]
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        _, img, box = flat[i]
        best_iou, best_n = 0.0, -1
        for n, gt_box in enumerate(gts[img]):
            if n in matched[img]:
                continue
            iou = box_iou(box, gt_box)
            if iou > best_iou:
                best_iou, best_n = iou, n
        if best_n >= 0 and best_iou >= iou_thr:
            matched[img].add(best_n)
            tp[rank] = 1.0

    cum_tp = np.cumsum(tp)
    precision = cum_tp / (np.arange(len(order)) + 1)
    recall = cum_tp / total_gt

    # all-point interpolation: precision envelope from the right
    p_env = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recall, p_env):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def mask_to_boxes(prob, mask_thr: float = 0.5, mode: str = "area", connectivity: int = 4):
    """Convert a probability mask to scored boxes via connected components.

    mode "area": confidence = component area / total foreground area.
    mode "maxprob": confidence = max probability inside the component.
    Returns a list of (box, score) with continuous pixel-corner boxes.
    """
    if mode not in ("area", "maxprob"):
        raise ShapeError(f"unknown mode {mode!r}")
    prob = np.asarray(prob, dtype=float)
    fg = prob >= mask_thr
    if not fg.any():
        return []
    structure = STRUCT_4 if connectivity == 4 else STRUCT_8
    labels, count = ndimage.label(fg, structure=structure)
    total = fg.sum()
    out = []
    for comp in range(1, count + 1):
        where = labels == comp
        rows, cols = np.nonzero(where)
        box = (float(cols.min()), float(rows.min()), float(cols.max() + 1), float(rows.max() + 1))
        if mode == "area":
            score = float(where.sum() / total)
        else:
            score = float(prob[where].max())
        out.append((box, score))
    return out


# ---------------------------------------------------------------------------
# reporting


@dataclass
class EvalReport:
    per_class_dice: dict = field(default_factory=dict)
    per_class_hd95: dict = field(default_factory=dict)
    per_class_map: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @staticmethod
    def _mean(values: dict):
        return float(np.mean(list(values.values()))) if values else None

    @property
    def mean_dice(self):
        return self._mean(self.per_class_dice)

    @property
    def mean_hd95(self):
        return self._mean(self.per_class_hd95)

    @property
    def mean_map(self):
        return self._mean(self.per_class_map)

    def to_json(self) -> dict:
        return {
            "per_class_dice": self.per_class_dice,
            "mean_dice": self.mean_dice,
            "per_class_hd95": self.per_class_hd95,
            "mean_hd95": self.mean_hd95,
            "per_class_map": self.per_class_map,
            "mean_map": self.mean_map,
            "meta": dict(
                {"empty_hd95_sentinel": "image diagonal", "empty_dice": 1.0},
                **self.meta,
            ),
        }

    def save_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1)

    def to_table(self) -> str:
        """Fixed-width text table: one row per metric, organ columns + Mean."""
        organs = sorted(
            set(self.per_class_dice) | set(self.per_class_hd95) | set(self.per_class_map)
        )
        rows = []
        width = max([len(o) for o in organs] + [8]) + 2
        header = "metric".ljust(10) + "".join(o.rjust(width) for o in organs) + "Mean".rjust(width)
        rows.append(header)
        for name, values, mean in (
            ("dice", self.per_class_dice, self.mean_dice),
            ("hd95", self.per_class_hd95, self.mean_hd95),
            ("map", self.per_class_map, self.mean_map),
        ):
            if not values:
                continue
            cells = "".join(
                (f"{values[o]:.2f}" if o in values else "-").rjust(width) for o in organs
            )
            rows.append(name.ljust(10) + cells + f"{mean:.2f}".rjust(width))
        return "\n".join(rows) + "\n"
