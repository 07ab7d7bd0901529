"""Deterministic PNG overlay rendering for the review UI: base slice with
optional mask contour, bounding box, and center-point markers."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

MASK_COLOR = (235, 80, 80)
BBOX_COLOR = (80, 220, 120)
CENTER_COLOR = (90, 140, 255)


def render_overlay(image01, mask=None, show_mask=False, show_bbox=False,
                   show_center=False, scale: int = 4) -> bytes:
    """PNG bytes; identical inputs and toggles give identical bytes."""
    base = (np.clip(np.asarray(image01, dtype=float), 0, 1) * 255).astype(np.uint8)
    img = Image.fromarray(base).convert("RGB")
    img = img.resize((img.width * scale, img.height * scale), Image.NEAREST)

    if mask is not None and mask.any() and show_mask:
        eroded = ndimage.binary_erosion(mask, border_value=0)
        contour = np.asarray(mask, bool) & ~eroded
        px = img.load()
        for r, c in np.argwhere(contour):
            for dy in range(scale):
                for dx in range(scale):
                    px[c * scale + dx, r * scale + dy] = MASK_COLOR

    draw = ImageDraw.Draw(img)
    if mask is not None and mask.any() and (show_bbox or show_center):
        rows, cols = np.nonzero(np.asarray(mask, bool))
        x0, x1 = int(cols.min()), int(cols.max())
        y0, y1 = int(rows.min()), int(rows.max())
        if show_bbox:
            draw.rectangle(
                [x0 * scale, y0 * scale, (x1 + 1) * scale - 1, (y1 + 1) * scale - 1],
                outline=BBOX_COLOR, width=max(1, scale // 2))
        if show_center:
            cx = ((x0 + x1) / 2 + 0.5) * scale
            cy = ((y0 + y1) / 2 + 0.5) * scale
            arm = 3 * scale
            draw.line([cx - arm, cy, cx + arm, cy], fill=CENTER_COLOR, width=max(1, scale // 2))
            draw.line([cx, cy - arm, cx, cy + arm], fill=CENTER_COLOR, width=max(1, scale // 2))

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()
