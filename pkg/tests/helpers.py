"""Shared test utilities: finite differences, brute-force oracles, blob masks."""

import itertools

import numpy as np
import torch


def fd_grad(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f at flat numpy vector x."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        hi = h * max(1.0, abs(x.flat[i]))
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += hi
        xm.flat[i] -= hi
        g.flat[i] = (f(xp) - f(xm)) / (2 * hi)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def analytic_grad(loss_fn, x):
    """Autograd gradient of scalar loss_fn at flat numpy vector x."""
    t = torch.tensor(np.asarray(x, dtype=float), requires_grad=True)
    loss = loss_fn(t)
    loss.backward()
    return t.grad.detach().numpy()


def brute_force_assignment_min(cost):
    """Exhaustive minimum injection cost of N rows into Q columns."""
    cost = np.asarray(cost, dtype=float)
    n, q = cost.shape
    perms = np.array(list(itertools.permutations(range(q), n)), dtype=int)
    totals = cost[np.arange(n)[None, :], perms].sum(axis=1)
    return float(totals.min()), perms[int(totals.argmin())]


def random_box(rng, lo=0.0, hi=1.0, min_side=0.05):
    """Valid corner box with positive area inside [lo, hi]^2."""
    span = hi - lo
    x0 = lo + rng.random() * span * 0.6
    y0 = lo + rng.random() * span * 0.6
    w = min_side + rng.random() * (hi - x0 - min_side) * 0.9
    h = min_side + rng.random() * (hi - y0 - min_side) * 0.9
    return (x0, y0, x0 + w, y0 + h)


def random_blob(rng, shape=(32, 32), n_seeds=3, radius=(2, 6)):
    """Random union of discs; may touch the border but is never empty."""
    h, w = shape
    mask = np.zeros(shape, dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_seeds):
        cy = rng.integers(0, h)
        cx = rng.integers(0, w)
        r = rng.integers(radius[0], radius[1] + 1)
        mask |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
    return mask


def naive_boundary(mask):
    """Reference boundary extraction: foreground with a 4-neighbor background
    (image border counts as background). Returns (K, 2) row/col coords."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    pts = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            on_border = r == 0 or c == 0 or r == h - 1 or c == w - 1
            if on_border:
                pts.append((r, c))
                continue
            if not (mask[r - 1, c] and mask[r + 1, c] and mask[r, c - 1] and mask[r, c + 1]):
                pts.append((r, c))
    return np.array(pts, dtype=float).reshape(-1, 2)


def oracle_filter(series, iou_thr=0.75, area_eps=0.05, small_area_frac=0.01):
    """Literal re-application of the slice-retention rule; reference for the
    curation filter."""
    retained = set()
    for organ, masks in series.masks.items():
        areas = [np.asarray(m).astype(bool).sum() for m in masks]
        present = [k for k, a in enumerate(areas) if a > 0]
        if not present:
            continue
        onset, offset = present[0], present[-1]
        peak = present[int(np.argmax([areas[k] for k in present]))]
        if areas[peak] < small_area_frac * np.asarray(masks[0]).size:
            retained.update(present)
            continue
        kept = {onset}
        last = onset
        for k in present[1:]:
            inter = np.logical_and(masks[k], masks[last]).sum()
            union = np.logical_or(masks[k], masks[last]).sum()
            iou = inter / union if union else 1.0
            drop = iou >= iou_thr and abs(areas[k] - areas[last]) / areas[last] <= area_eps
            if k in (peak, offset) or not drop:
                kept.add(k)
                last = k
        retained |= kept
    return retained


def brute_force_hd95(pred, gt, spacing=1.0):
    """All-pairs boundary-distance HD95 reference."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    sp = np.broadcast_to(np.asarray(spacing, dtype=float), (2,)).astype(float)
    if not pred.any() and not gt.any():
        return 0.0
    if not pred.any() or not gt.any():
        h, w = pred.shape
        return float(np.hypot(h * sp[0], w * sp[1]))
    a = naive_boundary(pred) * sp
    b = naive_boundary(gt) * sp
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    sds = np.concatenate([d.min(axis=1), d.min(axis=0)])
    return float(np.percentile(sds, 95))
