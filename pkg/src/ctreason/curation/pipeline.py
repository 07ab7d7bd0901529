"""Curation pipeline stages over an on-disk dataset: volume filtering,
visual-prompt derivation, and description generation feeding the review
store."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..data import load_mask_png, load_png16
from .filtering import VolumeMaskSeries, filter_slices
from .generate import GenerationClient, generate_description
from .prompts import build_prompt, derive_visual_prompts


def _subject_dirs(dataset_root):
    root = Path(dataset_root)
    return sorted(p for p in root.iterdir() if p.is_dir())


def _slice_dirs(subject_dir):
    return sorted(p for p in Path(subject_dir).iterdir() if p.is_dir())


def _slice_organs(slice_dir):
    with open(Path(slice_dir) / "sample.json") as f:
        payload = json.load(f)
    organs = {}
    for obj in payload["objects"]:
        organs.setdefault(obj["organ"], obj["mask_file"])
    return organs


def load_volume_series(subject_dir) -> tuple:
    """(VolumeMaskSeries, ordered slice ids) for one subject directory."""
    slice_dirs = _slice_dirs(subject_dir)
    slice_ids = [p.name for p in slice_dirs]
    all_organs = {}
    shapes = None
    per_slice = []
    for sdir in slice_dirs:
        organs = _slice_organs(sdir)
        masks = {o: load_mask_png(sdir / mf) for o, mf in organs.items()}
        per_slice.append(masks)
        for o, m in masks.items():
            all_organs[o] = m.shape
            shapes = m.shape
    series = {}
    for organ, shape in all_organs.items():
        series[organ] = [
            masks.get(organ, np.zeros(shape, dtype=bool)) for masks in per_slice
        ]
    return VolumeMaskSeries(masks=series), slice_ids


def run_filter(dataset_root, out_path, iou_thr=0.75, area_eps=0.05, small_area_frac=0.01) -> dict:
    """Writes {subject: [retained slice ids]} and returns it."""
    retention = {}
    for subject_dir in _subject_dirs(dataset_root):
        series, slice_ids = load_volume_series(subject_dir)
        kept = filter_slices(series, iou_thr=iou_thr, area_eps=area_eps,
                             small_area_frac=small_area_frac)
        retention[subject_dir.name] = [slice_ids[k] for k in sorted(kept)]
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as f:
        json.dump(retention, f, indent=1, sort_keys=True)
    return retention


def run_prompts(dataset_root, out_path) -> dict:
    """Visual prompts for every (subject, slice, organ); written as one JSON."""
    prompts = {}
    for subject_dir in _subject_dirs(dataset_root):
        subject = subject_dir.name
        prompts[subject] = {}
        for sdir in _slice_dirs(subject_dir):
            entry = {}
            for organ, mask_file in _slice_organs(sdir).items():
                mask = load_mask_png(sdir / mask_file)
                if not mask.any():
                    continue
                vp = derive_visual_prompts(mask)
                entry[organ] = {"bbox": [list(vp.bbox[0]), list(vp.bbox[1])],
                                "center": list(vp.center)}
            prompts[subject][sdir.name] = entry
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as f:
        json.dump(prompts, f, indent=1, sort_keys=True)
    return prompts


def build_item_prompt(dataset_root, subject, slice_id, organ, template_id="appearance-v1") -> tuple:
    """(prompt, image_ref) for one item, rebuilt from the stored mask."""
    sdir = Path(dataset_root) / subject / slice_id
    mask = load_mask_png(sdir / _slice_organs(sdir)[organ])
    image = load_png16(sdir / "slice.png")
    vp = derive_visual_prompts(mask)
    image_ref = f"{subject}/{slice_id}/slice.png"
    prompt = build_prompt(template_id, organ, vp, {
        "width": image.shape[1], "height": image.shape[0], "image_ref": image_ref,
    })
    return prompt, image_ref


def run_generate(dataset_root, out_dir, client: GenerationClient, store=None,
                 retention=None, template_id="appearance-v1", max_retries=2,
                 concurrency=1) -> list:
    """Generate descriptions for every (retained) slice/organ, write them under
    descriptions/, log events to status.jsonl, and seed the review store.

    Returns the list of outcome records.
    """
    out_dir = Path(out_dir)
    (out_dir / "descriptions").mkdir(parents=True, exist_ok=True)
    items = []
    for subject_dir in _subject_dirs(dataset_root):
        subject = subject_dir.name
        keep = None if retention is None else set(retention.get(subject, []))
        for sdir in _slice_dirs(subject_dir):
            if keep is not None and sdir.name not in keep:
                continue
            for organ, mask_file in sorted(_slice_organs(sdir).items()):
                if load_mask_png(sdir / mask_file).any():
                    items.append((subject, sdir.name, organ))

    def work(key):
        subject, slice_id, organ = key
        prompt, image_ref = build_item_prompt(dataset_root, subject, slice_id, organ,
                                              template_id)
        outcome = generate_description(client, prompt, image_ref, max_retries=max_retries)
        return key, outcome

    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(k) for k in items]

    records = []
    with open(out_dir / "status.jsonl", "a") as log:
        for (subject, slice_id, organ), outcome in results:
            desc_dir = out_dir / "descriptions" / subject / slice_id
            desc_dir.mkdir(parents=True, exist_ok=True)
            payload = outcome.description.to_json() if outcome.description else None
            with open(desc_dir / f"{organ}.json", "w") as f:
                json.dump({
                    "description": payload,
                    "raw_output": outcome.raw_output,
                    "attempts": outcome.attempts,
                    "violations": outcome.violations,
                }, f, indent=1)
            event = {
                "ts": time.time(),
                "subject": subject,
                "slice": slice_id,
                "organ": organ,
                "attempts": outcome.attempts,
                "status": "review_required" if outcome.review_required else "generated",
            }
            log.write(json.dumps(event) + "\n")
            if store is not None:
                store.add_item(subject, slice_id, organ, description=payload,
                               raw_output=outcome.raw_output, attempts=outcome.attempts)
            records.append({**event, "description": payload})
    return records


def process_regenerations(store, dataset_root, client: GenerationClient,
                          template_id="appearance-v1", max_retries=2) -> int:
    """Drain the store's regeneration queue; each completed job puts the item
    back into the pending state with a fresh description."""
    done = 0
    for item in store.pending_regenerations():
        prompt, image_ref = build_item_prompt(
            dataset_root, item["subject"], item["slice_id"], item["organ"], template_id)
        outcome = generate_description(client, prompt, image_ref, max_retries=max_retries)
        store.complete_regeneration(
            item["id"],
            description=outcome.description.to_json() if outcome.description else None,
            raw_output=outcome.raw_output,
            attempts=outcome.attempts,
        )
        done += 1
    return done
