"""Free-running evaluation: drives `infer` over a sample set and aggregates
per-class Dice / HD95 / AP, including the paired round-1 vs round-2 numbers
for the closer-look ablation and the mask-to-box detection baselines."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .data import norm_box_to_pixel, pixel_box_to_norm
from .engine import ModelBundle, infer
from .metrics import EvalReport, dice_score, hd95, map_at, mask_to_boxes


def _gt_cell_boxes(obj, shape):
    return [norm_box_to_pixel(pixel_box_to_norm(b, shape), shape) for b in obj.boxes]


def evaluate(models: ModelBundle, samples, task: str = "both", closer: bool = False,
             mask_threshold: float = 0.5, margin_frac: float = 0.1,
             maskbox_baselines: bool = False, max_new: int = 24):
    """Returns a dict of EvalReports: always "round1"; "round2" when closer;
    "maskbox_area"/"maskbox_maxprob" AP-only reports when requested."""
    dice1 = defaultdict(list)
    dice2 = defaultdict(list)
    hd1 = defaultdict(list)
    hd2 = defaultdict(list)
    det_preds = defaultdict(list)
    det_gts = defaultdict(list)
    mb_area = defaultdict(list)
    mb_maxp = defaultdict(list)
    routing_hits, routing_total = 0, 0

    for sample in samples:
        shape = sample.image.shape
        for obj in sample.objects:
            if obj.task == "seg" and task in ("seg", "both"):
                res = infer(sample.image, obj.query, models, obj_threshold=0.0,
                            closer=closer, mask_threshold=mask_threshold,
                            margin_frac=margin_frac, max_new=max_new)
                routing_total += 1
                routing_hits += int(res.mask is not None)
                pred1 = res.mask.binary(mask_threshold) if res.mask is not None \
                    else np.zeros(shape, dtype=bool)
                dice1[obj.organ].append(dice_score(pred1, obj.mask))
                hd1[obj.organ].append(hd95(pred1, obj.mask))
                if closer:
                    pred2 = res.round2["mask"] if res.round2 else pred1
                    dice2[obj.organ].append(dice_score(pred2, obj.mask))
                    hd2[obj.organ].append(hd95(pred2, obj.mask))
                if maskbox_baselines and res.mask is not None:
                    prob = res.mask.numpy()
                    gt_boxes = _gt_cell_boxes(obj, shape)
                    mb_area[obj.organ].append(
                        (mask_to_boxes(prob, mask_threshold, "area"), gt_boxes))
                    mb_maxp[obj.organ].append(
                        (mask_to_boxes(prob, mask_threshold, "maxprob"), gt_boxes))
            elif obj.task == "det" and task in ("det", "both"):
                res = infer(sample.image, obj.query, models, obj_threshold=0.0,
                            max_new=max_new)
                routing_total += 1
                routing_hits += int(res.boxes is not None)
                hyps = res.boxes or []
                boxes = [(norm_box_to_pixel(h.box, shape), h.score) for h in hyps]
                det_preds[obj.organ].append(boxes)
                det_gts[obj.organ].append(_gt_cell_boxes(obj, shape))

    def seg_report(dices, hds):
        return EvalReport(
            per_class_dice={o: float(np.mean(v)) for o, v in dices.items()},
            per_class_hd95={o: float(np.mean(v)) for o, v in hds.items()},
            per_class_map={o: map_at(det_preds[o], det_gts[o]) for o in det_preds},
            meta={"routing_accuracy": routing_hits / routing_total if routing_total else None},
        )

    out = {"round1": seg_report(dice1, hd1)}
    if closer:
        out["round2"] = seg_report(dice2, hd2)
    if maskbox_baselines:
        for name, store in (("maskbox_area", mb_area), ("maskbox_maxprob", mb_maxp)):
            out[name] = EvalReport(
                per_class_map={
                    o: map_at([p for p, _ in items], [g for _, g in items])
                    for o, items in store.items()
                },
                meta={"source": "mask_to_boxes"},
            )
    return out
