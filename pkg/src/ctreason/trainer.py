"""End-to-end training: teacher forcing on ground-truth answers, routing
embeddings taken at ground-truth routing positions, one backward pass over
the weighted total loss."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import objectives
from .checkpoint import save_checkpoint
from .data import MultimodalSample, pixel_box_to_norm
from .engine import ModelBundle, make_round2_sample
from .errors import NumericError
from .objectives import LossWeights
from .reasoner import patchify


def teacher_forced_pass(models: ModelBundle, image, query: str, answer: str):
    """Forward on [bos] + query + answer; returns logit rows predicting the
    answer tokens plus EOS, their targets, and the hidden state of the first
    routing token of each kind found in the ground-truth answer."""
    vocab = models.vocab
    q_ids = [vocab.special["BOS"]] + vocab.encode(query)
    a_ids = vocab.encode(answer)
    feats = patchify(image, models.patch_size)
    logits, hidden = models.reasoner(feats, q_ids + a_ids)
    lq = len(q_ids)
    rows = logits[lq - 1 : lq + len(a_ids)]
    targets = torch.as_tensor(a_ids + [vocab.special["EOS"]], dtype=torch.long)
    routing_hidden = {}
    for pos, kind in vocab.find_routing_positions(a_ids):
        routing_hidden.setdefault(kind, hidden[lq + pos])
    return rows, targets, routing_hidden


def train_step(batch, models: ModelBundle, weights: LossWeights, optimizer,
               margin_frac: float = 0.1, round2: bool = True) -> dict:
    """One optimization step over a list of MultimodalSamples.

    Language terms cover every (object, round); segmentation supervision runs
    in both rounds for [seg] objects (normalized by 2 * n_seg); detection
    supervision runs in round 1 only for [det] objects (normalized by n_det).
    All forwards are batched: one reasoner pass over every (object, round)
    entry, one encoder pass over every distinct image, one pass per head.
    """
    models.reasoner.train()
    models.perceiver.train()
    vocab = models.vocab
    res = models.perceiver.cfg.resolution
    bos, eos, pad = vocab.special["BOS"], vocab.special["EOS"], vocab.special["PAD"]

    images = []  # full slices then ROI crops, encoded in one batch
    entries = []  # per (object, round): token layout + supervision pointers

    def add_entry(image_idx, query, answer, obj_index, kind, gt_mask=None, gt_boxes=None,
                  shape=None):
        q_ids = [bos] + vocab.encode(query)
        a_ids = vocab.encode(answer)
        routing = {}
        for pos, k in vocab.find_routing_positions(a_ids):
            routing.setdefault(k, len(q_ids) + pos)
        entries.append({
            "image": image_idx,
            "ids": q_ids + a_ids,
            "lq": len(q_ids),
            "targets": torch.as_tensor(a_ids + [eos], dtype=torch.long),
            "obj": obj_index,
            "kind": kind,
            "hidden_pos": routing.get(kind),
            "gt_mask": gt_mask,
            "gt_boxes": gt_boxes,
            "shape": shape,
        })

    obj_counter = 0
    for sample in batch:
        full_idx = len(images)
        images.append(sample.image)
        for idx, obj in enumerate(sample.objects):
            if obj.task == "seg":
                add_entry(full_idx, obj.query, obj.answer, obj_counter, "SEG",
                          gt_mask=obj.mask)
                if round2:
                    r2 = make_round2_sample(sample, idx, margin_frac, res)
                    crop_idx = len(images)
                    images.append(r2.image)
                    add_entry(crop_idx, r2.query, r2.answer, obj_counter, "CLOSER",
                              gt_mask=r2.mask)
            else:
                add_entry(full_idx, obj.query, obj.answer, obj_counter, "DET",
                          gt_boxes=obj.boxes, shape=sample.image.shape)
            obj_counter += 1

    feats = np.stack([patchify(images[e["image"]], models.patch_size).numpy() for e in entries])
    logits, hidden, _ = models.reasoner.forward_batch(feats, [e["ids"] for e in entries], pad)
    z_all = models.perceiver.encode_batch(np.stack(images))

    # language terms grouped per object
    lang_targets = [[] for _ in range(obj_counter)]
    lang_logits = [[] for _ in range(obj_counter)]
    for i, e in enumerate(entries):
        rows = logits[i, e["lq"] - 1 : e["lq"] + len(e["targets"]) - 1]
        lang_targets[e["obj"]].append(e["targets"])
        lang_logits[e["obj"]].append(rows)

    # routing embeddings for every perception entry, projected in one call
    seg_entries = [(i, e) for i, e in enumerate(entries) if e["kind"] in ("SEG", "CLOSER")]
    det_entries = [(i, e) for i, e in enumerate(entries) if e["kind"] == "DET"]

    seg_probs_by_obj, seg_gts_by_obj = {}, {}
    if seg_entries:
        h_rows = torch.stack([hidden[i, e["hidden_pos"]] for i, e in seg_entries])
        e_vecs = models.perceiver.projector(h_rows)
        z_seg = z_all[[e["image"] for _, e in seg_entries]]
        probs = models.perceiver.segment_probs_batch(z_seg, e_vecs)
        for row, (_, e) in enumerate(seg_entries):
            seg_probs_by_obj.setdefault(e["obj"], []).append(probs[row])
            seg_gts_by_obj.setdefault(e["obj"], []).append(
                torch.as_tensor(np.asarray(e["gt_mask"], dtype=np.float64)))

    det_terms = []
    if det_entries:
        h_rows = torch.stack([hidden[i, e["hidden_pos"]] for i, e in det_entries])
        e_vecs = models.perceiver.projector(h_rows)
        z_det = z_all[[e["image"] for _, e in det_entries]]
        boxes_b, scores_b = models.perceiver.detect_batch(z_det, e_vecs)
        for row, (_, e) in enumerate(det_entries):
            gt = np.array([pixel_box_to_norm(b, e["shape"]) for b in e["gt_boxes"]])
            loss, _ = objectives.detection_loss(gt, (boxes_b[row], scores_b[row]), weights)
            det_terms.append(loss)

    zero = torch.zeros((), dtype=torch.float64)
    l_lang = objectives.language_loss(lang_targets, lang_logits) if entries else zero
    if seg_probs_by_obj:
        keys = sorted(seg_probs_by_obj)
        l_seg = objectives.seg_loss([seg_probs_by_obj[k] for k in keys],
                                    [seg_gts_by_obj[k] for k in keys], weights)
    else:
        l_seg = zero
    l_det = sum(det_terms) / len(det_terms) if det_terms else zero
    total = objectives.total_loss({"language": l_lang, "seg": l_seg, "det": l_det}, weights)

    if not torch.isfinite(total):
        raise NumericError(
            f"non-finite loss: language={float(l_lang)} seg={float(l_seg)} det={float(l_det)}"
        )
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return {
        "language": float(l_lang.detach()),
        "seg": float(l_seg.detach()),
        "det": float(l_det.detach()),
        "total": float(total.detach()),
    }


def make_optimizer(models: ModelBundle, lr: float = 3e-4, betas=(0.9, 0.95),
                   weight_decay: float = 0.0):
    params = [p for p in models.reasoner.parameters() if p.requires_grad]
    params += [p for p in models.perceiver.parameters() if p.requires_grad]
    return torch.optim.AdamW(params, lr=lr, betas=betas, weight_decay=weight_decay)


def quick_val_dice(models: ModelBundle, samples, mask_threshold: float = 0.5) -> float:
    """Mean teacher-forced round-1 Dice over [seg] objects; cheap checkpoint
    selection signal, not the evaluation metric."""
    from .metrics import dice_score

    models.eval()
    scores = []
    with torch.no_grad():
        for sample in samples:
            z = None
            for obj in sample.objects:
                if obj.task != "seg":
                    continue
                _, _, rhid = teacher_forced_pass(models, sample.image, obj.query, obj.answer)
                if z is None:
                    z = models.perceiver.encode_image(sample.image)
                e = models.perceiver.project_embedding(rhid["SEG"])
                pred = models.perceiver.segment(z, e)
                scores.append(dice_score(pred.binary(mask_threshold), obj.mask))
    models.reasoner.train()
    models.perceiver.train()
    return float(np.mean(scores)) if scores else 0.0


def fit(models: ModelBundle, train_samples, steps: int, batch_size: int,
        weights: LossWeights, lr: float = 3e-4, betas=(0.9, 0.95),
        weight_decay: float = 0.0, margin_frac: float = 0.1, round2: bool = True,
        seed: int = 0, val_samples=None, out_dir=None, eval_every: int = 0,
        log_every: int = 10):
    """Step-budgeted training loop with JSONL logging and best-by-val-Dice
    checkpointing. Returns the per-step loss breakdown history."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    optimizer = make_optimizer(models, lr=lr, betas=betas, weight_decay=weight_decay)

    out_dir = Path(out_dir) if out_dir else None
    log_f = open(out_dir / "train_log.jsonl", "w") if out_dir else None
    eval_every = eval_every or max(25, steps // 10)
    best_dice, history = -1.0, []
    order = []

    batch_size = min(batch_size, len(train_samples))
    for step in range(steps):
        if len(order) < batch_size:
            order = list(rng.permutation(len(train_samples)))
        batch = [train_samples[order.pop()] for _ in range(batch_size)]
        breakdown = train_step(batch, models, weights, optimizer,
                               margin_frac=margin_frac, round2=round2)
        history.append(breakdown)
        if log_f and (step % log_every == 0 or step == steps - 1):
            log_f.write(json.dumps({"step": step, **breakdown}) + "\n")
            log_f.flush()
        if out_dir and val_samples and ((step + 1) % eval_every == 0 or step == steps - 1):
            dice = quick_val_dice(models, val_samples)
            if dice > best_dice:
                best_dice = dice
                save_checkpoint(out_dir / "best.ckpt", models.reasoner, models.perceiver,
                                models.vocab, extra={"step": step, "val_dice": dice})
    if log_f:
        log_f.close()
    if out_dir:
        save_checkpoint(out_dir / "last.ckpt", models.reasoner, models.perceiver,
                        models.vocab, extra={"step": steps - 1, "val_dice": best_dice})
    return history
