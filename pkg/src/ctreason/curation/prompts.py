"""Visual prompt derivation (tight box + center point) and the structured
prompt templates that instruct the external model to return schema-conformant
JSON."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, EmptyMaskError, ShapeError

_SCHEMA_PATH = Path(__file__).parent / "appearance.schema.json"


@dataclass
class VisualPromptSet:
    bbox: tuple  # ((x_min, y_min), (x_max, y_max)) inclusive pixel coords
    center: tuple  # (x_center, y_center), rounded half-up to nearest pixel

    def __post_init__(self):
        (x0, y0), (x1, y1) = self.bbox
        cx, cy = self.center
        if not (x0 <= cx <= x1 and y0 <= cy <= y1):
            raise ShapeError(f"center {self.center} outside bbox {self.bbox}")


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def derive_visual_prompts(mask) -> VisualPromptSet:
    """Tight axis-aligned box over the foreground plus its midpoint."""
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2:
        raise ShapeError("mask must be 2-D")
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise EmptyMaskError("cannot derive visual prompts from an empty mask")
    x0, x1 = int(cols.min()), int(cols.max())
    y0, y1 = int(rows.min()), int(rows.max())
    return VisualPromptSet(
        bbox=((x0, y0), (x1, y1)),
        center=(_half_up((x0 + x1) / 2), _half_up((y0 + y1) / 2)),
    )


PROMPT_TEMPLATES = {
    "appearance-v1": """You are describing one anatomical structure on a single CT slice.

Organ: {organ}
Image: {width} x {height} pixels, {image_ref}
Bounding box: x_min={x_min} y_min={y_min} x_max={x_max} y_max={y_max}
Center point: ({center_x}, {center_y})

Look only inside the marked region. Describe, in order:
- shape (geometric form of the structure)
- size (relative to the slice)
- location (position within the image)
- texture (internal intensity pattern)
- boundary (edge clarity against surroundings)
- adjacency (neighboring structures, as a list)
- free_summary (one or two sentences)

Return a single JSON object and nothing else, exactly matching this schema:
{schema}
""",
}


def load_schema() -> dict:
    with open(_SCHEMA_PATH) as f:
        return json.load(f)


def build_prompt(template_id: str, organ: str, prompts: VisualPromptSet, image_meta: dict) -> str:
    """Deterministic template fill; includes coordinates as decimal integers
    and the JSON output schema verbatim."""
    template = PROMPT_TEMPLATES.get(template_id)
    if template is None:
        raise ConfigError(f"unknown prompt template {template_id!r}")
    (x0, y0), (x1, y1) = prompts.bbox
    return template.format(
        organ=organ,
        width=image_meta.get("width", "?"),
        height=image_meta.get("height", "?"),
        image_ref=image_meta.get("image_ref", "attached image"),
        x_min=x0,
        y_min=y0,
        x_max=x1,
        y_max=y1,
        center_x=prompts.center[0],
        center_y=prompts.center[1],
        schema=json.dumps(load_schema(), indent=1),
    )
