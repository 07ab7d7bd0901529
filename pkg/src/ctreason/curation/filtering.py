"""Volume-wise slice filtering: keep each organ's onset, peak, and offset
slices, drop background-only slices, and drop slices whose foreground is
near-identical (IoU and area) to the most recently retained neighbor.
Small organs are exempt from dropping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


@dataclass
class VolumeMaskSeries:
    """Per-organ ordered binary masks over the slice index of one volume."""

    masks: dict  # organ -> list of (H, W) bool arrays, one per slice

    def __post_init__(self):
        shapes = set()
        lengths = set()
        for organ, series in self.masks.items():
            lengths.add(len(series))
            for m in series:
                shapes.add(np.asarray(m).shape)
        if len(lengths) > 1:
            raise ShapeError(f"organ series lengths differ: {sorted(lengths)}")
        if len(shapes) > 1:
            raise ShapeError(f"mask shapes differ across slices: {sorted(shapes)}")

    @property
    def n_slices(self) -> int:
        return next(iter(map(len, self.masks.values())), 0)

    def areas(self, organ) -> list:
        return [int(np.asarray(m).astype(bool).sum()) for m in self.masks[organ]]


def mask_iou(a, b) -> float:
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def filter_slices(series: VolumeMaskSeries, iou_thr: float = 0.75,
                  area_eps: float = 0.05, small_area_frac: float = 0.01) -> set:
    """Retained slice indices for the whole volume (union over organs).

    Per organ, scanning present slices in index order: onset starts retained;
    a later slice is dropped only when, against the most recently retained
    slice, foreground IoU >= iou_thr AND |area change| / previous area
    <= area_eps. Peak (first maximum area) and offset are always retained.
    Organs whose peak area is below small_area_frac of the slice area are
    never dropped at all.
    """
    retained = set()
    for organ, masks in series.masks.items():
        areas = series.areas(organ)
        present = [k for k, a in enumerate(areas) if a > 0]
        if not present:
            continue
        onset, offset = present[0], present[-1]
        peak = max(present, key=lambda k: (areas[k], -k))
        slice_pixels = np.asarray(masks[onset]).size

        if areas[peak] < small_area_frac * slice_pixels:
            retained.update(present)
            continue

        retained.add(onset)
        last = onset
        for k in present[1:]:
            forced = k in (peak, offset)
            iou = mask_iou(masks[k], masks[last])
            rel_change = abs(areas[k] - areas[last]) / areas[last]
            similar = iou >= iou_thr and rel_change <= area_eps
            if forced or not similar:
                retained.add(k)
                last = k
    return retained
