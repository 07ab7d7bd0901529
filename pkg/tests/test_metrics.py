import numpy as np
import pytest

from ctreason.errors import ShapeError
from ctreason.metrics import (
    EvalReport,
    box_iou,
    dice_score,
    hd95,
    map_at,
    mask_to_boxes,
)

from helpers import brute_force_hd95, random_blob


# ---------------------------------------------------------------------------
# dice


def test_dice_identical_nonempty():
    m = random_blob(np.random.default_rng(0))
    assert dice_score(m, m) == 1.0


def test_dice_disjoint():
    p = np.zeros((8, 8), bool)
    g = np.zeros((8, 8), bool)
    p[0, 0] = True
    g[7, 7] = True
    assert dice_score(p, g) == 0.0


def test_dice_closed_form():
    # |p|=3, |g|=5, overlap 2 -> 4/8
    p = np.zeros((4, 4), bool)
    g = np.zeros((4, 4), bool)
    p[0, 0:3] = True
    g[0, 1:3] = True
    g[1, 0:3] = True
    assert dice_score(p, g) == pytest.approx(0.5)


def test_dice_both_empty_convention():
    z = np.zeros((5, 5), bool)
    assert dice_score(z, z) == 1.0


def test_dice_symmetric():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = random_blob(rng)
        b = random_blob(rng)
        assert dice_score(a, b) == pytest.approx(dice_score(b, a))


def test_dice_shape_mismatch():
    with pytest.raises(ShapeError):
        dice_score(np.zeros((3, 3)), np.zeros((4, 4)))


# ---------------------------------------------------------------------------
# hd95


def test_hd95_identical():
    m = random_blob(np.random.default_rng(2))
    assert hd95(m, m) == 0.0


def test_hd95_two_pixels_five_apart():
    p = np.zeros((16, 16), bool)
    g = np.zeros((16, 16), bool)
    p[4, 3] = True
    g[4, 8] = True
    assert hd95(p, g) == pytest.approx(5.0)


def test_hd95_vs_bruteforce_blobs():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = random_blob(rng, shape=(24, 24))
        b = random_blob(rng, shape=(24, 24))
        assert abs(hd95(a, b) - brute_force_hd95(a, b)) <= 1e-9


def test_hd95_symmetric():
    rng = np.random.default_rng(4)
    for _ in range(10):
        a = random_blob(rng)
        b = random_blob(rng)
        assert hd95(a, b) == pytest.approx(hd95(b, a))


def test_hd95_spacing_scales_exactly():
    rng = np.random.default_rng(5)
    a = random_blob(rng)
    b = random_blob(rng)
    base = hd95(a, b, spacing=1.0)
    assert hd95(a, b, spacing=2.5) == pytest.approx(2.5 * base, rel=1e-12)


def test_hd95_empty_conventions():
    z = np.zeros((10, 20), bool)
    m = np.zeros((10, 20), bool)
    m[4, 4] = True
    assert hd95(z, z) == 0.0
    assert hd95(m, z) == pytest.approx(np.hypot(10, 20))
    assert hd95(m, z, spacing=3.0) == pytest.approx(3.0 * np.hypot(10, 20))


# ---------------------------------------------------------------------------
# map


def test_map_perfect_predictions():
    gts = [[(0, 0, 4, 4)], [(2, 2, 6, 6), (8, 8, 9, 9)]]
    preds = [[(b, 1.0) for b in img] for img in gts]
    assert map_at(preds, gts) == 1.0


def test_map_no_predictions():
    assert map_at([[], []], [[(0, 0, 1, 1)], []]) == 0.0


def test_map_hand_computed_pr_curve():
    # 2 GT boxes, 3 preds: hit (0.9), false positive (0.5), hit (0.3)
    gts = [[(0.0, 0.0, 2.0, 2.0), (5.0, 5.0, 7.0, 7.0)]]
    preds = [[
        ((0.0, 0.0, 2.0, 2.0), 0.9),
        ((10.0, 10.0, 12.0, 12.0), 0.5),
        ((5.0, 5.0, 7.0, 7.0), 0.3),
    ]]
    # ranked: TP, FP, TP -> precision (1, 1/2, 2/3), recall (1/2, 1/2, 1)
    # envelope: (1, 2/3, 2/3); AP = 1/2 * 1 + 1/2 * 2/3
    expected = 0.5 * 1.0 + 0.5 * (2.0 / 3.0)
    assert map_at(preds, gts) == pytest.approx(expected)


def test_map_exhaustive_greedy_cross_check():
    # each prediction must claim the highest-IoU unmatched GT of its image
    gts = [[(0, 0, 4, 4), (3, 3, 8, 8)]]
    preds = [[((2, 2, 6, 6), 0.8), ((0, 0, 4.5, 4.5), 0.6)]]
    first = max(range(2), key=lambda n: box_iou(preds[0][0][0], gts[0][n]))
    assert first == 1  # (2,2,6,6) overlaps (3,3,8,8) more
    assert map_at(preds, gts) == 1.0  # second pred then claims GT 0


def test_map_invariant_to_monotone_score_transform():
    rng = np.random.default_rng(6)
    gts = []
    preds = []
    for _ in range(5):
        img_gts = [tuple(np.sort(rng.uniform(0, 10, 2)).tolist() + [0, 0]) for _ in range(2)]
        img_gts = [(b[0], b[2], b[1] + 1, b[3] + 2) for b in img_gts]
        gts.append(img_gts)
        img_preds = []
        for b in img_gts:
            jitter = rng.normal(0, 0.4, 4)
            cand = (b[0] + jitter[0], b[1] + jitter[1], b[2] + abs(jitter[2]), b[3] + abs(jitter[3]))
            img_preds.append((cand, float(rng.uniform(0.1, 0.9))))
        img_preds.append(((0, 0, 0.5, 0.5), float(rng.uniform(0.1, 0.9))))
        preds.append(img_preds)
    base = map_at(preds, gts)
    squashed = [[(b, s**3 / 2) for b, s in img] for img in preds]
    assert map_at(squashed, gts) == pytest.approx(base, abs=1e-12)


def test_map_zero_gt_convention():
    assert map_at([[((0, 0, 1, 1), 0.9)]], [[]]) == 0.0


# ---------------------------------------------------------------------------
# mask_to_boxes


def test_mask_to_boxes_single_blob():
    m = np.zeros((10, 10))
    m[2:5, 3:7] = 0.8
    out = mask_to_boxes(m, 0.5, mode="area")
    assert len(out) == 1
    box, score = out[0]
    assert box == (3.0, 2.0, 7.0, 5.0)
    assert score == 1.0


def test_mask_to_boxes_area_confidences():
    m = np.zeros((20, 20))
    m[0:5, 0:6] = 0.9  # 30 px
    m[10:15, 10:12] = 0.9  # 10 px
    out = sorted(mask_to_boxes(m, 0.5, mode="area"), key=lambda t: -t[1])
    assert [round(s, 6) for _, s in out] == [0.75, 0.25]


def test_mask_to_boxes_maxprob_confidences():
    m = np.zeros((20, 20))
    m[0:3, 0:3] = 0.9
    m[10:13, 10:13] = 0.6
    out = sorted(mask_to_boxes(m, 0.5, mode="maxprob"), key=lambda t: -t[1])
    assert [s for _, s in out] == [pytest.approx(0.9), pytest.approx(0.6)]


def test_mask_to_boxes_empty():
    assert mask_to_boxes(np.zeros((8, 8)), 0.5) == []


def test_mask_to_boxes_area_scores_sum_to_one():
    rng = np.random.default_rng(7)
    for _ in range(20):
        m = random_blob(rng, shape=(24, 24), n_seeds=4).astype(float)
        out = mask_to_boxes(m, 0.5, mode="area")
        assert sum(s for _, s in out) == pytest.approx(1.0)


def test_mask_to_boxes_connectivity_toggle():
    # two pixels touching only diagonally
    m = np.zeros((6, 6))
    m[2, 2] = 1.0
    m[3, 3] = 1.0
    assert len(mask_to_boxes(m, 0.5, connectivity=4)) == 2
    assert len(mask_to_boxes(m, 0.5, connectivity=8)) == 1


def test_mask_to_boxes_matches_exhaustive_box_scan():
    rng = np.random.default_rng(8)
    m = random_blob(rng, shape=(30, 30), n_seeds=3).astype(float)
    for box, _ in mask_to_boxes(m, 0.5):
        x0, y0, x1, y1 = (int(v) for v in box)
        sub = m[y0:y1, x0:x1]
        assert sub.any()
        assert sub[0, :].any() and sub[-1, :].any()
        assert sub[:, 0].any() and sub[:, -1].any()


# ---------------------------------------------------------------------------
# report


def test_eval_report_means_and_serialization(tmp_path):
    rep = EvalReport(
        per_class_dice={"spleen": 0.9, "liver": 0.7},
        per_class_hd95={"spleen": 2.0, "liver": 4.0},
        per_class_map={"spleen": 1.0},
    )
    assert rep.mean_dice == pytest.approx(0.8)
    assert rep.mean_hd95 == pytest.approx(3.0)
    assert rep.mean_map == pytest.approx(1.0)
    path = tmp_path / "report.json"
    rep.save_json(path)
    table = rep.to_table()
    assert "Mean" in table and "spleen" in table
    import json

    loaded = json.loads(path.read_text())
    assert loaded["mean_dice"] == pytest.approx(0.8)
    assert "empty_hd95_sentinel" in loaded["meta"]
