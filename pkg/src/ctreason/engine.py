"""Two-round orchestration: closer-look ROI construction, round-2 sample
assembly, routing-dispatched inference, and mapping refined masks back to
source coordinates.

ROI regions are inclusive integer pixel corners (x_min, y_min, x_max, y_max)
in source coordinates. Training builds ROIs from ground-truth masks; inference
builds them from the predicted round-1 mask. Both paths record their source in
a `roi_source` flag so tests can tell them apart.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .data import MultimodalSample
from .errors import EmptyMaskError, ShapeError
from .perceiver import MaskPrediction, Perceiver
from .reasoner import Reasoner, extract_routing_embedding, patchify
from .tokenizer import SPECIAL_STRINGS, Vocabulary

ROUND2_QUERIES = (
    "can you have a closer look ?",
    "please take a closer look .",
    "zoom in for a finer view .",
)
ROUND2_ANSWER = "zooming in on the {organ} for a finer mask [closer]"


@dataclass
class ModelBundle:
    reasoner: Reasoner
    perceiver: Perceiver
    vocab: Vocabulary

    def eval(self):
        self.reasoner.eval()
        self.perceiver.eval()
        return self

    @property
    def patch_size(self) -> int:
        return int(math.isqrt(self.reasoner.cfg.patch_dim))


def build_bundle(vocab: Vocabulary, resolution: int = 64, hidden_dim: int = 128,
                 layers: int = 2, heads: int = 4, max_seq_len: int = 160,
                 patch_size: int = 16, channels: int = 32, num_queries: int = 8,
                 seed: int = 0) -> ModelBundle:
    from .perceiver import PerceiverConfig
    from .reasoner import ReasonerConfig

    torch.manual_seed(seed)
    r_cfg = ReasonerConfig(
        vocab_size=len(vocab),
        hidden_dim=hidden_dim,
        layers=layers,
        heads=heads,
        max_seq_len=max_seq_len,
        image_token_count=(resolution // patch_size) ** 2,
        patch_dim=patch_size * patch_size,
    )
    p_cfg = PerceiverConfig(
        resolution=resolution,
        channels=channels,
        reasoner_dim=hidden_dim,
        num_queries=num_queries,
    )
    return ModelBundle(reasoner=Reasoner(r_cfg), perceiver=Perceiver(p_cfg), vocab=vocab)


@dataclass
class RoiCrop:
    region: tuple  # (x_min, y_min, x_max, y_max) inclusive, source coords
    image: np.ndarray  # resized to canonical resolution
    query: str
    answer: str
    mask: np.ndarray | None  # resized GT mask; training only
    roi_source: str = "ground_truth"


@dataclass
class InferenceResult:
    text: str
    mask: MaskPrediction | None = None
    boxes: list | None = None  # filtered BoxHypothesis list
    round2: dict | None = None  # {"region", "mask", "roi_source", "crop_mask"}
    notes: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# geometry


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_roi(mask, margin_frac: float) -> tuple:
    """Tight foreground rectangle, expanded by margin_frac of each side,
    clipped, then square-ified by growing the short side (clipped again).

    Margin pixels per side are floor(margin_frac * side_length + 0.5).
    """
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2:
        raise ShapeError("mask must be 2-D")
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise EmptyMaskError("cannot build an ROI from an empty mask")
    h, w = mask.shape
    x0, x1 = int(cols.min()), int(cols.max())
    y0, y1 = int(rows.min()), int(rows.max())

    mx = _round_half_up(margin_frac * (x1 - x0 + 1))
    my = _round_half_up(margin_frac * (y1 - y0 + 1))
    x0, x1 = max(0, x0 - mx), min(w - 1, x1 + mx)
    y0, y1 = max(0, y0 - my), min(h - 1, y1 + my)

    def widen(lo, hi, extra, bound):
        lo -= extra // 2
        hi += extra - extra // 2
        if lo < 0:
            hi += -lo
            lo = 0
        if hi > bound:
            lo -= hi - bound
            hi = bound
        return max(0, lo), hi

    bw, bh = x1 - x0 + 1, y1 - y0 + 1
    if bw < bh:
        x0, x1 = widen(x0, x1, bh - bw, w - 1)
    elif bh < bw:
        y0, y1 = widen(y0, y1, bw - bh, h - 1)
    return (x0, y0, x1, y1)


def resize_bilinear(arr, size: int) -> np.ndarray:
    t = torch.as_tensor(np.asarray(arr, dtype=np.float64))[None, None]
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return out[0, 0].numpy()


def resize_nearest(arr, size) -> np.ndarray:
    a = np.asarray(arr)
    t = torch.as_tensor(a.astype(np.float64))[None, None]
    size = (size, size) if np.isscalar(size) else tuple(size)
    out = F.interpolate(t, size=size, mode="nearest-exact")[0, 0].numpy()
    return out > 0.5 if a.dtype == bool else out


def crop_region(arr, region):
    x0, y0, x1, y1 = region
    h, w = np.asarray(arr).shape
    if not (0 <= x0 <= x1 < w and 0 <= y0 <= y1 < h):
        raise ShapeError(f"region {region} outside source {arr.shape}")
    return np.asarray(arr)[y0 : y1 + 1, x0 : x1 + 1]


def paste_back(round2_mask, roi_region, source_shape) -> np.ndarray:
    """Nearest-neighbor un-resize of a canonical-resolution mask into its
    source region; zeros elsewhere."""
    x0, y0, x1, y1 = roi_region
    h, w = source_shape
    if not (0 <= x0 <= x1 < w and 0 <= y0 <= y1 < h):
        raise ShapeError(f"region {roi_region} outside source {source_shape}")
    mask = np.asarray(round2_mask)
    if mask.ndim != 2:
        raise ShapeError("round-2 mask must be 2-D")
    local = resize_nearest(mask.astype(bool), (y1 - y0 + 1, x1 - x0 + 1))
    out = np.zeros(source_shape, dtype=bool)
    out[y0 : y1 + 1, x0 : x1 + 1] = local
    return out


# ---------------------------------------------------------------------------
# round 2


def _stable_choice(options, *key_parts) -> str:
    key = "|".join(str(p) for p in key_parts)
    return options[zlib.crc32(key.encode()) % len(options)]


def make_round2_sample(sample: MultimodalSample, object_index: int, margin: float,
                       resolution: int) -> RoiCrop:
    """Training-side closer-look: ROI from the ground-truth mask, bilinear
    image resize, nearest mask resize, seeded templated follow-up query."""
    obj = sample.objects[object_index]
    if not np.asarray(obj.mask).any():
        raise EmptyMaskError(f"{obj.organ}: empty ground-truth mask")
    region = build_roi(obj.mask, margin)
    image = resize_bilinear(crop_region(sample.image, region), resolution)
    mask = resize_nearest(crop_region(np.asarray(obj.mask, dtype=bool), region), resolution)
    query = _stable_choice(ROUND2_QUERIES, sample.subject, sample.slice_id, obj.organ, object_index)
    return RoiCrop(
        region=region,
        image=image,
        query=query,
        answer=ROUND2_ANSWER.format(organ=obj.organ),
        mask=mask,
        roi_source="ground_truth",
    )


# ---------------------------------------------------------------------------
# inference


def _run_head(models: ModelBundle, image, result, kind):
    e = models.perceiver.project_embedding(extract_routing_embedding(result, kind))
    z = models.perceiver.encode_image(image)
    return z, e


def infer(slice_image, query: str, models: ModelBundle, obj_threshold: float = 0.5,
          closer: bool = False, mask_threshold: float = 0.5, margin_frac: float = 0.1,
          max_new: int = 24) -> InferenceResult:
    """Generate an answer, dispatch on emitted routing tokens, and optionally
    re-enter on a predicted-mask ROI for a refined round-2 mask."""
    models.eval()
    vocab = models.vocab
    image = np.asarray(slice_image, dtype=np.float64)
    feats = patchify(image, models.patch_size)
    query_ids = [vocab.special["BOS"]] + vocab.encode(query)

    with torch.no_grad():
        gen = models.reasoner.generate(feats, query_ids, max_new, vocab)
        out = InferenceResult(text=vocab.decode(gen.answer) if gen.answer else "")
        kinds = {k for _, k in gen.routing}

        if "SEG" in kinds:
            z, e = _run_head(models, image, gen, "SEG")
            out.mask = models.perceiver.segment(z, e)
        if "DET" in kinds:
            z, e = _run_head(models, image, gen, "DET")
            hyps = models.perceiver.detect(z, e).hypotheses()
            out.boxes = [h for h in hyps if h.score >= obj_threshold]

        if not closer:
            return out

        if out.mask is None:
            out.notes.append("closer-look skipped: no [seg] mask in round 1")
            return out
        binary = out.mask.binary(mask_threshold)
        if not binary.any():
            out.notes.append("closer-look refused: empty round-1 mask")
            return out

        region = build_roi(binary, margin_frac)
        crop = resize_bilinear(crop_region(image, region), models.perceiver.cfg.resolution)
        q2 = _stable_choice(ROUND2_QUERIES, "infer", query)
        q2_ids = [vocab.special["BOS"]] + vocab.encode(q2)
        gen2 = models.reasoner.generate(patchify(crop, models.patch_size), q2_ids, max_new, vocab)
        if not any(k == "CLOSER" for _, k in gen2.routing):
            out.notes.append("closer-look refused: round 2 emitted no [closer] token")
            return out
        z2, e2 = _run_head(models, crop, gen2, "CLOSER")
        crop_mask = models.perceiver.segment(z2, e2)
        full = paste_back(crop_mask.binary(mask_threshold), region, image.shape)
        out.round2 = {
            "region": region,
            "mask": full,
            "crop_mask": crop_mask,
            "roi_source": "predicted",
        }
    return out


def routing_token_for(task: str) -> str:
    return {"seg": SPECIAL_STRINGS["SEG"], "det": SPECIAL_STRINGS["DET"]}[task]
