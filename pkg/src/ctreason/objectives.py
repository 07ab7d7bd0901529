"""Training losses: token cross-entropy, BCE+Dice segmentation loss,
Hungarian-matched detection loss, and the weighted total.

All functions are pure and operate on double-precision torch tensors so the
same code path serves training (autograd) and the finite-difference checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

from .errors import NumericError, ShapeError

DICE_EPS = 1e-6


@dataclass
class LossWeights:
    lambda_seg: float = 1.0
    lambda_det: float = 1.0
    w_bce: float = 1.0
    w_dice: float = 1.0
    w_l1: float = 1.0
    w_giou: float = 1.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not math.isfinite(v) or v < 0:
                raise ShapeError(f"loss weight {name}={v} must be finite and nonnegative")


@dataclass
class MatchResult:
    """Partial injection of ground-truth indices into prediction indices."""

    pairs: list  # [(gt_index, pred_index)] sorted by gt_index
    unmatched_preds: list  # prediction indices left unmatched, sorted

    def total(self, cost) -> float:
        cost = np.asarray(cost, dtype=float)
        if not self.pairs:
            return 0.0
        rows = np.array([n for n, _ in self.pairs])
        cols = np.array([k for _, k in self.pairs])
        return float(cost[rows, cols].sum())


def _as_t(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.double() if x.dtype != torch.float64 else x
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


# ---------------------------------------------------------------------------
# language


def language_loss(gt_rounds, predicted_logits_rounds) -> torch.Tensor:
    """Mean-per-token cross-entropy, summed over objects and rounds,
    normalized by the number of objects.

    gt_rounds: list over objects of lists over rounds of 1-D target-id arrays
    (answer positions only). predicted_logits_rounds mirrors the nesting with
    (T, V) logit tensors aligned to the same positions.
    """
    if len(gt_rounds) != len(predicted_logits_rounds):
        raise ShapeError("object count mismatch between targets and logits")
    if not gt_rounds:
        raise ShapeError("empty batch")
    total = None
    for obj_targets, obj_logits in zip(gt_rounds, predicted_logits_rounds):
        if len(obj_targets) != len(obj_logits):
            raise ShapeError("round count mismatch within an object")
        for targets, logits in zip(obj_targets, obj_logits):
            logits = _as_t(logits)
            targets = torch.as_tensor(np.asarray(targets), dtype=torch.long)
            if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
                raise ShapeError(
                    f"logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}"
                )
            term = F.cross_entropy(logits, targets, reduction="mean")
            total = term if total is None else total + term
    return total / len(gt_rounds)


# ---------------------------------------------------------------------------
# segmentation


def dice_loss(prob, gt) -> torch.Tensor:
    prob = _as_t(prob)
    gt = _as_t(gt)
    if prob.shape != gt.shape:
        raise ShapeError(f"prob {tuple(prob.shape)} vs gt {tuple(gt.shape)}")
    inter = (prob * gt).sum()
    denom = prob.sum() + gt.sum()
    return 1.0 - (2.0 * inter + DICE_EPS) / (denom + DICE_EPS)


def _seg_term(prob, gt, weights: LossWeights) -> torch.Tensor:
    prob = _as_t(prob)
    gt = _as_t(gt)
    if prob.shape != gt.shape:
        raise ShapeError(f"prob {tuple(prob.shape)} vs gt {tuple(gt.shape)}")
    bce = F.binary_cross_entropy(prob, gt, reduction="mean")
    return weights.w_bce * bce + weights.w_dice * dice_loss(prob, gt)


def seg_loss(prob, gt, weights: LossWeights | None = None) -> torch.Tensor:
    """BCE+Dice segmentation loss.

    Single (H, W) pair: returns w_bce*BCE + w_dice*Dice for that pair.
    Batched form: `prob` and `gt` are lists over objects of lists over rounds;
    term sum is normalized by 2 * n_objects regardless of how many rounds each
    object actually carries.
    """
    weights = weights or LossWeights()
    if isinstance(prob, (list, tuple)):
        if len(prob) != len(gt):
            raise ShapeError("object count mismatch")
        if not prob:
            raise ShapeError("empty batch")
        total = None
        for obj_p, obj_g in zip(prob, gt):
            if len(obj_p) != len(obj_g):
                raise ShapeError("round count mismatch within an object")
            for p, g in zip(obj_p, obj_g):
                term = _seg_term(p, g, weights)
                total = term if total is None else total + term
        return total / (2.0 * len(prob))
    return _seg_term(prob, gt, weights)


# ---------------------------------------------------------------------------
# boxes


def _check_corners(boxes: torch.Tensor):
    if boxes.ndim != 2 or boxes.shape[-1] != 4:
        raise ShapeError(f"expected (*, 4) corner boxes, got {tuple(boxes.shape)}")
    if bool((boxes[:, 2] < boxes[:, 0]).any()) or bool((boxes[:, 3] < boxes[:, 1]).any()):
        raise ShapeError("corner ordering violated (x_min>x_max or y_min>y_max)")


def pairwise_giou(a, b) -> torch.Tensor:
    """GIoU for every pair of an (N, 4) and an (M, 4) corner-box array -> (N, M).

    Degenerate zero-area boxes are treated as points: IoU is 0 unless the
    boxes coincide exactly, in which case it is 1.
    """
    a = _as_t(a).reshape(-1, 4)
    b = _as_t(b).reshape(-1, 4)
    _check_corners(a)
    _check_corners(b)
    ax0, ay0, ax1, ay1 = a[:, 0:1], a[:, 1:2], a[:, 2:3], a[:, 3:4]
    bx0, by0, bx1, by1 = b[None, :, 0], b[None, :, 1], b[None, :, 2], b[None, :, 3]

    iw = (torch.minimum(ax1, bx1) - torch.maximum(ax0, bx0)).clamp(min=0)
    ih = (torch.minimum(ay1, by1) - torch.maximum(ay0, by0)).clamp(min=0)
    inter = iw * ih
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    union = area_a + area_b - inter

    identical = (
        (ax0 == bx0) & (ay0 == by0) & (ax1 == bx1) & (ay1 == by1)
    ).double()
    iou = torch.where(union > 0, inter / torch.where(union > 0, union, torch.ones_like(union)), identical)

    hw = torch.maximum(ax1, bx1) - torch.minimum(ax0, bx0)
    hh = torch.maximum(ay1, by1) - torch.minimum(ay0, by0)
    hull = hw * hh
    penalty = torch.where(
        hull > 0, (hull - union) / torch.where(hull > 0, hull, torch.ones_like(hull)), torch.zeros_like(hull)
    )
    return iou - penalty


def giou(a, b) -> torch.Tensor:
    """Generalized IoU of two corner boxes, in [-1, 1]."""
    return pairwise_giou(_as_t(a).reshape(1, 4), _as_t(b).reshape(1, 4))[0, 0]


def pairwise_l1(a, b) -> torch.Tensor:
    """Sum of absolute coordinate differences for every (N, 4) x (M, 4) pair."""
    a = _as_t(a).reshape(-1, 4)
    b = _as_t(b).reshape(-1, 4)
    return (a[:, None, :] - b[None, :, :]).abs().sum(-1)


# ---------------------------------------------------------------------------
# matching


def hungarian_match(cost) -> MatchResult:
    """Minimum-cost injection of N ground-truth rows into Q prediction columns.

    Among cost-optimal assignments, returns the lexicographically smallest
    pair list (ties resolved toward lower prediction indices, row by row).
    """
    cost_np = np.asarray(
        cost.detach().cpu().numpy() if isinstance(cost, torch.Tensor) else cost,
        dtype=float,
    )
    if cost_np.ndim != 2:
        raise ShapeError(f"cost must be 2-D, got {cost_np.ndim}-D")
    n, q = cost_np.shape
    if n > q:
        raise ShapeError(f"N={n} ground truths exceed Q={q} predictions")
    if not np.isfinite(cost_np).all():
        raise NumericError("cost matrix contains non-finite values")
    if n == 0:
        return MatchResult(pairs=[], unmatched_preds=list(range(q)))

    rows, cols = linear_sum_assignment(cost_np)
    best = float(cost_np[rows, cols].sum())
    tol = 1e-9 * max(1.0, abs(best))

    # Lexicographic refinement: greedily fix the smallest feasible column for
    # each row, checking feasibility by re-solving the reduced problem.
    pairs = []
    remaining = list(range(q))
    fixed = 0.0
    for row in range(n):
        rest_rows = np.arange(row + 1, n)
        for col in remaining:
            others = [c for c in remaining if c != col]
            if len(rest_rows) == 0:
                sub_total = 0.0
            else:
                sub = cost_np[np.ix_(rest_rows, others)]
                r2, c2 = linear_sum_assignment(sub)
                sub_total = float(sub[r2, c2].sum())
            if fixed + cost_np[row, col] + sub_total <= best + tol:
                pairs.append((row, col))
                fixed += cost_np[row, col]
                remaining.remove(col)
                break
        else:  # pragma: no cover - unreachable if lsa is correct
            raise NumericError("lexicographic refinement failed to find a column")
    matched_cols = {k for _, k in pairs}
    return MatchResult(pairs=pairs, unmatched_preds=sorted(set(range(q)) - matched_cols))


# ---------------------------------------------------------------------------
# detection


def _pred_tensors(preds):
    """Accept a (boxes, scores) pair, an object with .boxes/.scores tensors,
    or an iterable of hypotheses carrying .box and .score."""
    if isinstance(preds, tuple) and len(preds) == 2:
        return _as_t(preds[0]).reshape(-1, 4), _as_t(preds[1]).reshape(-1)
    if hasattr(preds, "boxes") and hasattr(preds, "scores"):
        return _as_t(preds.boxes).reshape(-1, 4), _as_t(preds.scores).reshape(-1)
    boxes = _as_t([list(h.box) for h in preds])
    scores = _as_t([h.score for h in preds])
    return boxes, scores


def detection_loss(gt_boxes, preds, weights: LossWeights | None = None):
    """Hungarian-matched box regression plus objectness BCE.

    Returns (loss, MatchResult). Matched pairs contribute
    w_l1*L1 + w_giou*(1 - GIoU), averaged over pairs; objectness BCE targets
    are 1 for matched and 0 for unmatched predictions, averaged over all Q.
    """
    weights = weights or LossWeights()
    boxes, scores = _pred_tensors(preds)
    gt = _as_t(gt_boxes).reshape(-1, 4)
    n, q = gt.shape[0], boxes.shape[0]
    if n > q:
        raise ShapeError(f"N={n} ground truths exceed Q={q} predictions")

    if n == 0:
        match = MatchResult(pairs=[], unmatched_preds=list(range(q)))
        targets = torch.zeros(q, dtype=torch.float64)
        return F.binary_cross_entropy(scores, targets, reduction="mean"), match

    l1 = pairwise_l1(gt, boxes)
    g = pairwise_giou(gt, boxes)
    cost = weights.w_l1 * l1 + weights.w_giou * (1.0 - g)
    match = hungarian_match(cost.detach().cpu().numpy())

    rows = torch.as_tensor([p[0] for p in match.pairs])
    cols = torch.as_tensor([p[1] for p in match.pairs])
    l_box = cost[rows, cols].mean()

    targets = torch.zeros(q, dtype=torch.float64)
    targets[cols] = 1.0
    l_obj = F.binary_cross_entropy(scores, targets, reduction="mean")
    return l_box + l_obj, match


# ---------------------------------------------------------------------------
# total


def total_loss(parts, weights: LossWeights | None = None):
    """L_language + lambda_seg * L_seg + lambda_det * L_det.

    `parts` maps {"language", "seg", "det"} to scalars; missing entries
    contribute zero.
    """
    weights = weights or LossWeights()
    lang = parts.get("language", 0.0)
    seg = parts.get("seg", 0.0)
    det = parts.get("det", 0.0)
    return lang + weights.lambda_seg * seg + weights.lambda_det * det
