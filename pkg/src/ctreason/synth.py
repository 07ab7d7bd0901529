"""Procedural synthetic CT-like dataset: organ blobs with characteristic
intensities placed on a noisy body background, with masks, per-component
boxes, and templated two-task QA pairs carrying routing tokens.

Profiles tune the anatomy for specific studies: "mixed" (general), "small"
(tiny compact organs for closer-look evaluation), "fragmented" (multi-part
organs for the detection-vs-mask-to-box comparison).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .curation.prompts import derive_visual_prompts
from .data import MultimodalSample, SampleObject, save_sample, write_split
from .engine import ROUND2_ANSWER, ROUND2_QUERIES
from .errors import ConfigError
from .metrics import STRUCT_4
from .tokenizer import Vocabulary

ORGANS = {
    "spleen": {"intensity": 0.80, "style": "blob", "radius": (6, 10)},
    "liver": {"intensity": 0.55, "style": "blob", "radius": (9, 13)},
    "kidney": {"intensity": 0.90, "style": "blob", "radius": (4, 7)},
    "pancreas": {"intensity": 0.40, "style": "elong", "radius": (3, 5)},
    "gallbladder": {"intensity": 0.95, "style": "small", "radius": (2, 4)},
    "vessel": {"intensity": 0.70, "style": "frag", "radius": (2, 4)},
}

PROFILES = {
    "mixed": ["spleen", "liver", "kidney", "pancreas"],
    "small": ["gallbladder", "kidney"],
    "fragmented": ["vessel"],
}

SEG_QUERIES = (
    "please segment the {organ} in this slice",
    "where is the {organ} ? segment it",
    "outline the {organ} region",
)
DET_QUERIES = (
    "mark the {organ} with bounding boxes",
    "detect the {organ} in this slice",
    "locate every part of the {organ}",
)
SEG_ANSWER = "the {organ} appears as a {size} {shape} region [seg]"
DET_ANSWER = "found {count} {organ} region(s) here [det]"
COUNT_WORDS = ("zero", "one", "two", "three", "four", "five")


@dataclass
class SynthConfig:
    resolution: int = 64
    profile: str = "mixed"
    n_subjects: int = 12
    slices_per_subject: int = 3
    organs_per_slice: int = 2
    seed: int = 0
    split_fracs: tuple = (0.7, 0.15, 0.15)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if abs(sum(self.split_fracs) - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")


def _disc(res, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:res, 0:res]
    return ((yy - cy) / max(ry, 1e-6)) ** 2 + ((xx - cx) / max(rx, 1e-6)) ** 2 <= 1.0


def _place_organ(rng, res, style, radius, occupied):
    """Random organ mask avoiding already-occupied pixels; returns None when
    no free spot is found."""
    lo, hi = radius
    for _ in range(40):
        r = rng.uniform(lo, hi)
        if style == "elong":
            ry, rx = r * 0.6, r * 1.9
        elif style == "small":
            ry = rx = rng.uniform(lo, min(hi, lo + 1.5))
        else:
            ry, rx = r * rng.uniform(0.7, 1.0), r * rng.uniform(0.7, 1.0)
        pad = int(max(ry, rx)) + 2
        cy = rng.integers(pad, res - pad)
        cx = rng.integers(pad, res - pad)
        mask = _disc(res, cy, cx, ry, rx)
        if style == "frag":
            # exactly two nearby fragments with a small gap; the fragmentation
            # is the point, so reject placements where the parts touch
            r = rng.uniform(max(2.0, lo), max(2.5, min(hi, lo + 2)))
            gap = rng.uniform(2.0, 3.5)
            ang = rng.uniform(0, 2 * np.pi)
            dist = 2 * r + gap
            py = int(np.clip(cy + dist * np.sin(ang), pad, res - pad))
            px = int(np.clip(cx + dist * np.cos(ang), pad, res - pad))
            m1 = _disc(res, cy, cx, r, r)
            m2 = _disc(res, py, px, r, r)
            mask = m1 | m2
            if ndimage.label(mask, structure=STRUCT_4)[1] != 2:
                continue
        if mask.any() and not (mask & occupied).any():
            return mask
    return None


def _describe(mask, res):
    frac = mask.sum() / (res * res)
    size = "small" if frac < 0.01 else ("medium" if frac < 0.05 else "large")
    n_comp = ndimage.label(mask, structure=STRUCT_4)[1]
    if n_comp > 1:
        shape = "fragmented"
    else:
        rows, cols = np.nonzero(mask)
        h = rows.max() - rows.min() + 1
        w = cols.max() - cols.min() + 1
        shape = "elongated" if max(h, w) / min(h, w) > 1.8 else "round"
    return size, shape


def _component_boxes(mask):
    labels, count = ndimage.label(mask, structure=STRUCT_4)
    boxes = []
    for comp in range(1, count + 1):
        vp = derive_visual_prompts(labels == comp)
        boxes.append(vp.bbox[0] + vp.bbox[1])
    return boxes


def _render_image(rng, res, organ_masks):
    yy, xx = np.mgrid[0:res, 0:res]
    body = ((yy - res / 2) / (res * 0.48)) ** 2 + ((xx - res / 2) / (res * 0.48)) ** 2 <= 1.0
    img = np.where(body, 0.22, 0.04) + rng.normal(0, 0.015, (res, res))
    img += ndimage.gaussian_filter(rng.normal(0, 0.25, (res, res)), sigma=6)
    for organ, mask in organ_masks:
        img = np.where(mask, ORGANS[organ]["intensity"] + rng.normal(0, 0.02, (res, res)), img)
    return np.clip(img, 0.0, 1.0)


def _organ_plan(rng, cfg, organs):
    """Per-subject schedule: each organ spans a slice range with its area
    ramping up to a peak and back down, so volumes carry onset/peak/offset
    structure for the curation filter."""
    plan = {}
    for organ in organs:
        if cfg.slices_per_subject <= 2:
            start, end = 0, cfg.slices_per_subject - 1
        else:
            span = int(rng.integers(2, cfg.slices_per_subject + 1))
            start = int(rng.integers(0, cfg.slices_per_subject - span + 1))
            end = start + span - 1
        plan[organ] = (start, end)
    return plan


def _scale_for_slice(k, start, end):
    if end == start:
        return 1.0
    mid = (start + end) / 2
    half = (end - start) / 2 + 0.5
    return float(np.sqrt(max(0.05, 1.0 - ((k - mid) / half) ** 2)))


def make_sample(rng, cfg: SynthConfig, subject: str, slice_idx: int, plan) -> MultimodalSample:
    res = cfg.resolution
    occupied = np.zeros((res, res), dtype=bool)
    organ_masks = []
    for organ, (start, end) in plan.items():
        if not start <= slice_idx <= end:
            continue
        if len(organ_masks) >= cfg.organs_per_slice:
            break
        spec = ORGANS[organ]
        scale = _scale_for_slice(slice_idx, start, end)
        lo, hi = spec["radius"]
        mask = _place_organ(rng, res, spec["style"],
                            (max(1.5, lo * scale), max(2.0, hi * scale)), occupied)
        if mask is None:
            continue
        occupied |= ndimage.binary_dilation(mask, iterations=2)
        organ_masks.append((organ, mask))

    image = _render_image(rng, res, organ_masks)
    objects = []
    for organ, mask in organ_masks:
        boxes = _component_boxes(mask)
        size, shape = _describe(mask, res)
        seg_q = SEG_QUERIES[rng.integers(0, len(SEG_QUERIES))].format(organ=organ)
        det_q = DET_QUERIES[rng.integers(0, len(DET_QUERIES))].format(organ=organ)
        objects.append(SampleObject(
            organ=organ, query=seg_q,
            answer=SEG_ANSWER.format(organ=organ, size=size, shape=shape),
            mask=mask, boxes=boxes,
        ))
        objects.append(SampleObject(
            organ=organ, query=det_q,
            answer=DET_ANSWER.format(organ=organ, count=COUNT_WORDS[min(len(boxes), 5)]),
            mask=mask, boxes=boxes,
        ))
    return MultimodalSample(
        subject=subject, slice_id=f"s{slice_idx:03d}", image=image, objects=objects
    ).validate()


def build_vocab(cfg: SynthConfig) -> Vocabulary:
    """Closed corpus over every template instantiation; independent of the
    sampled dataset so any run with the same profile shares ids."""
    corpus = []
    for organ in ORGANS:
        for t in SEG_QUERIES + DET_QUERIES:
            corpus.append(t.format(organ=organ))
        for size in ("small", "medium", "large"):
            for shape in ("round", "elongated", "fragmented"):
                corpus.append(SEG_ANSWER.format(organ=organ, size=size, shape=shape))
        for count in COUNT_WORDS:
            corpus.append(DET_ANSWER.format(organ=organ, count=count))
        corpus.append(ROUND2_ANSWER.format(organ=organ))
    corpus.extend(ROUND2_QUERIES)
    return Vocabulary.build(corpus)


def generate_dataset(out_dir, cfg: SynthConfig):
    """Write a full synthetic dataset with subject-level splits; deterministic
    for a given config. Returns the number of slices written."""
    rng = np.random.default_rng(cfg.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    organs = PROFILES[cfg.profile]

    subjects = [f"subj{idx:03d}" for idx in range(cfg.n_subjects)]
    written = 0
    for subject in subjects:
        plan = _organ_plan(rng, cfg, organs)
        for k in range(cfg.slices_per_subject):
            sample = make_sample(rng, cfg, subject, k, plan)
            save_sample(out, sample)
            written += 1

    order = list(rng.permutation(cfg.n_subjects))
    n_train = max(1, round(cfg.split_fracs[0] * cfg.n_subjects))
    n_val = max(1, round(cfg.split_fracs[1] * cfg.n_subjects)) if cfg.n_subjects > 2 else 0
    train = sorted(subjects[i] for i in order[:n_train])
    val = sorted(subjects[i] for i in order[n_train : n_train + n_val])
    test = sorted(subjects[i] for i in order[n_train + n_val :])
    write_split(out, "train", train)
    write_split(out, "val", val)
    write_split(out, "test", test)
    build_vocab(cfg).save(out / "vocab.json")
    return written
