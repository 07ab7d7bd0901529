"""Dataset types and disk IO.

On-disk layout (one directory per subject, one per slice):

    root/train.txt, val.txt, test.txt     subject ids, one per line
    root/vocab.json
    root/<subject>/<slice_id>/slice.png   16-bit grayscale
    root/<subject>/<slice_id>/mask_<organ>.png   8-bit binary label
    root/<subject>/<slice_id>/sample.json

Box conventions: sample.json stores inclusive integer pixel corners
(x_min, y_min, x_max, y_max); training and metrics use continuous
"pixel cell" corners (max side + 1), normalized to [0, 1] for the heads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ShapeError
from .tokenizer import SPECIAL_STRINGS


# ---------------------------------------------------------------------------
# types


@dataclass
class SampleObject:
    organ: str
    query: str
    answer: str
    mask: np.ndarray
    boxes: list  # inclusive integer pixel corners
    mask_file: str = ""

    @property
    def task(self) -> str:
        if SPECIAL_STRINGS["SEG"] in self.answer.split():
            return "seg"
        if SPECIAL_STRINGS["DET"] in self.answer.split():
            return "det"
        return "text"


@dataclass
class MultimodalSample:
    subject: str
    slice_id: str
    image: np.ndarray  # float64 in [0, 1]
    objects: list = field(default_factory=list)

    def validate(self):
        for obj in self.objects:
            if obj.mask.shape != self.image.shape:
                raise ShapeError(
                    f"{self.subject}/{self.slice_id}/{obj.organ}: mask {obj.mask.shape} "
                    f"vs slice {self.image.shape}"
                )
            if obj.task == "text":
                raise ShapeError(
                    f"{self.subject}/{self.slice_id}/{obj.organ}: answer carries no routing token"
                )
            if obj.task == "det" and len(obj.boxes) < 1:
                raise ShapeError(
                    f"{self.subject}/{self.slice_id}/{obj.organ}: [det] answer without boxes"
                )
        return self


# ---------------------------------------------------------------------------
# windowing and boxes


def apply_window(raw, lo=None, hi=None) -> np.ndarray:
    """Linear intensity window to [0, 1]; defaults to per-slice min-max."""
    raw = np.asarray(raw, dtype=np.float64)
    if lo is None or hi is None:
        lo, hi = float(raw.min()), float(raw.max())
    if hi <= lo:
        return np.zeros_like(raw)
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def pixel_box_to_norm(box, shape):
    h, w = shape
    x0, y0, x1, y1 = box
    return (x0 / w, y0 / h, (x1 + 1) / w, (y1 + 1) / h)


def norm_box_to_pixel(box, shape):
    """Normalized corners -> continuous pixel-cell corners."""
    h, w = shape
    x0, y0, x1, y1 = box
    return (x0 * w, y0 * h, x1 * w, y1 * h)


# ---------------------------------------------------------------------------
# PNG IO


def save_png16(path, image01):
    arr = np.clip(np.asarray(image01, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 65535.0).astype(np.uint16)).save(path)


def load_png16(path) -> np.ndarray:
    raw = np.asarray(Image.open(path), dtype=np.float64)
    return apply_window(raw)


def save_mask_png(path, mask):
    Image.fromarray((np.asarray(mask, dtype=bool) * 255).astype(np.uint8)).save(path)


def load_mask_png(path) -> np.ndarray:
    return np.asarray(Image.open(path)) > 127


# ---------------------------------------------------------------------------
# sample IO


def save_sample(root, sample: MultimodalSample):
    sdir = Path(root) / sample.subject / sample.slice_id
    sdir.mkdir(parents=True, exist_ok=True)
    save_png16(sdir / "slice.png", sample.image)
    objects = []
    for obj in sample.objects:
        mask_file = obj.mask_file or f"mask_{obj.organ}.png"
        save_mask_png(sdir / mask_file, obj.mask)
        objects.append(
            {
                "organ": obj.organ,
                "query": obj.query,
                "answer": obj.answer,
                "boxes": [[int(v) for v in b] for b in obj.boxes],
                "mask_file": mask_file,
            }
        )
    with open(sdir / "sample.json", "w") as f:
        json.dump({"objects": objects}, f, indent=1)


def load_sample(slice_dir) -> MultimodalSample:
    sdir = Path(slice_dir)
    image = load_png16(sdir / "slice.png")
    with open(sdir / "sample.json") as f:
        payload = json.load(f)
    objects = [
        SampleObject(
            organ=o["organ"],
            query=o["query"],
            answer=o["answer"],
            mask=load_mask_png(sdir / o["mask_file"]),
            boxes=[tuple(b) for b in o["boxes"]],
            mask_file=o["mask_file"],
        )
        for o in payload["objects"]
    ]
    return MultimodalSample(
        subject=sdir.parent.name, slice_id=sdir.name, image=image, objects=objects
    ).validate()


def write_split(root, name, subjects):
    with open(Path(root) / f"{name}.txt", "w") as f:
        f.write("\n".join(subjects) + ("\n" if subjects else ""))


def read_split(root, name):
    path = Path(root) / f"{name}.txt"
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def load_split_samples(root, name):
    """All slices of every subject listed in the split manifest, in a stable
    (subject, slice) order."""
    samples = []
    for subject in read_split(root, name):
        subj_dir = Path(root) / subject
        for slice_dir in sorted(p for p in subj_dir.iterdir() if p.is_dir()):
            samples.append(load_sample(slice_dir))
    return samples
