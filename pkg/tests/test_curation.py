import json

import numpy as np
import pytest

from ctreason.curation.filtering import VolumeMaskSeries, filter_slices, mask_iou
from ctreason.curation.generate import (
    MockGenerationClient,
    ScriptedClient,
    generate_description,
    load_schema,
    parse_description,
    validate_description,
)
from ctreason.curation.prompts import build_prompt, derive_visual_prompts
from ctreason.errors import ConfigError, EmptyMaskError

from helpers import oracle_filter, random_blob


def disc_mask(shape, cy, cx, r):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def ramp_volume(n=20, shape=(48, 48)):
    """organ grows then shrinks; several identical consecutive masks in the
    middle exercise the IoU/area drop rule."""
    masks = []
    for k in range(n):
        r = [0, 3, 5, 7, 9, 10, 10, 10, 10, 10, 10, 10, 10, 9, 7, 5, 3, 2, 0, 0][k]
        masks.append(disc_mask(shape, 24, 24, r) if r else np.zeros(shape, bool))
    return VolumeMaskSeries(masks={"organ": masks})


def test_filter_singleton_slice():
    shape = (32, 32)
    masks = [np.zeros(shape, bool) for _ in range(12)]
    masks[7] = disc_mask(shape, 16, 16, 6)
    series = VolumeMaskSeries(masks={"spleen": masks})
    assert filter_slices(series) == {7}


def test_filter_all_background():
    series = VolumeMaskSeries(masks={"liver": [np.zeros((16, 16), bool)] * 5})
    assert filter_slices(series) == set()


def test_filter_ramp_matches_oracle():
    series = ramp_volume()
    got = filter_slices(series)
    assert got == oracle_filter(series)
    # identical consecutive plateau slices must be dropped
    plateau = set(range(6, 12))
    assert plateau - got


def test_filter_random_volumes_match_oracle():
    rng = np.random.default_rng(9)
    for _ in range(10):
        n = int(rng.integers(4, 14))
        organs = {}
        for organ in ("a", "b"):
            masks = []
            cy, cx = rng.integers(10, 38, size=2)
            for k in range(n):
                if rng.random() < 0.25:
                    masks.append(np.zeros((48, 48), bool))
                else:
                    r = int(rng.integers(2, 12))
                    jitter = int(rng.integers(0, 2))
                    masks.append(disc_mask((48, 48), cy + jitter, cx, r))
            organs[organ] = masks
        series = VolumeMaskSeries(masks=organs)
        assert filter_slices(series) == oracle_filter(series)


def test_filter_retains_onset_peak_offset():
    rng = np.random.default_rng(11)
    for _ in range(10):
        masks = []
        for k in range(12):
            r = int(rng.integers(0, 10))
            masks.append(disc_mask((48, 48), 24, 24, r) if r else np.zeros((48, 48), bool))
        series = VolumeMaskSeries(masks={"o": masks})
        areas = series.areas("o")
        present = [k for k, a in enumerate(areas) if a > 0]
        if not present:
            continue
        got = filter_slices(series)
        peak = present[int(np.argmax([areas[k] for k in present]))]
        assert {present[0], peak, present[-1]} <= got


def test_filter_small_organ_never_dropped():
    shape = (64, 64)
    masks = [disc_mask(shape, 20, 20, 2) for _ in range(8)]  # identical, tiny
    series = VolumeMaskSeries(masks={"gland": masks})
    assert filter_slices(series) == set(range(8))


def test_mask_iou_basics():
    a = disc_mask((32, 32), 16, 16, 5)
    assert mask_iou(a, a) == 1.0
    assert mask_iou(a, np.zeros((32, 32), bool)) == 0.0


# ---------------------------------------------------------------------------
# visual prompts


def test_prompts_single_pixel():
    mask = np.zeros((64, 64), bool)
    mask[20, 10] = True  # x=10, y=20
    vp = derive_visual_prompts(mask)
    assert vp.bbox == ((10, 20), (10, 20))
    assert vp.center == (10, 20)


def test_prompts_rectangle_round_half_up():
    # 4 wide x 6 tall at the origin -> bbox ((0,0),(3,5)), center (2,3)
    mask = np.zeros((16, 16), bool)
    mask[0:6, 0:4] = True
    vp = derive_visual_prompts(mask)
    assert vp.bbox == ((0, 0), (3, 5))
    assert vp.center == (2, 3)


def test_prompts_center_inside_bbox_property():
    rng = np.random.default_rng(13)
    for _ in range(500):
        mask = random_blob(rng, shape=(40, 40))
        vp = derive_visual_prompts(mask)
        (x0, y0), (x1, y1) = vp.bbox
        assert x0 <= vp.center[0] <= x1
        assert y0 <= vp.center[1] <= y1


def test_prompts_bbox_equals_exhaustive_scan():
    rng = np.random.default_rng(17)
    for _ in range(50):
        mask = random_blob(rng, shape=(32, 32))
        vp = derive_visual_prompts(mask)
        xs = [c for r in range(32) for c in range(32) if mask[r, c]]
        ys = [r for r in range(32) for c in range(32) if mask[r, c]]
        assert vp.bbox == ((min(xs), min(ys)), (max(xs), max(ys)))


def test_prompts_empty_mask():
    with pytest.raises(EmptyMaskError):
        derive_visual_prompts(np.zeros((8, 8), bool))


# ---------------------------------------------------------------------------
# prompt building


@pytest.fixture()
def vp():
    mask = np.zeros((64, 64), bool)
    mask[10:20, 30:44] = True
    return derive_visual_prompts(mask)


def test_build_prompt_deterministic(vp):
    meta = {"width": 64, "height": 64, "image_ref": "subj/s000/slice.png"}
    a = build_prompt("appearance-v1", "spleen", vp, meta)
    b = build_prompt("appearance-v1", "spleen", vp, meta)
    assert a == b


def test_build_prompt_contains_integer_coordinates(vp):
    text = build_prompt("appearance-v1", "spleen", vp, {"width": 64, "height": 64})
    assert "x_min=30" in text and "x_max=43" in text
    assert "y_min=10" in text and "y_max=19" in text
    assert "(37, 15)" in text  # center, rounded half-up


def test_build_prompt_embeds_schema_verbatim(vp):
    text = build_prompt("appearance-v1", "liver", vp, {"width": 64, "height": 64})
    assert json.dumps(load_schema(), indent=1) in text


def test_build_prompt_unknown_template(vp):
    with pytest.raises(ConfigError):
        build_prompt("nope", "spleen", vp, {})


def test_build_prompt_golden_snapshot(vp, tmp_path):
    import pathlib

    golden = pathlib.Path(__file__).parent / "golden" / "prompt_spleen.txt"
    text = build_prompt("appearance-v1", "spleen", vp, {"width": 64, "height": 64,
                                                        "image_ref": "subj/s000/slice.png"})
    if not golden.exists():
        golden.parent.mkdir(exist_ok=True)
        golden.write_text(text)
    assert text == golden.read_text()


# ---------------------------------------------------------------------------
# validation


def valid_payload(**overrides):
    payload = {
        "organ": "spleen",
        "shape": "oval",
        "size": "moderate",
        "location": "left upper quadrant",
        "texture": "homogeneous",
        "boundary": "sharp",
        "adjacency": ["stomach", "kidney"],
        "free_summary": "A moderate oval structure with sharp margins.",
    }
    payload.update(overrides)
    return payload


def test_validate_golden_payload_ok():
    assert validate_description(json.dumps(valid_payload())) == []


def test_validate_missing_field_named():
    payload = valid_payload()
    del payload["texture"]
    violations = validate_description(json.dumps(payload))
    assert len(violations) == 1
    assert "texture" in violations[0]


def test_validate_not_json():
    assert validate_description("{nope") != []


def test_validate_mutations_match_reference_checker():
    import jsonschema

    schema = load_schema()

    def reference_ok(payload):
        try:
            jsonschema.validate(payload, schema)
            return True
        except jsonschema.ValidationError:
            return False

    rng = np.random.default_rng(23)
    mutations = []
    fields = list(valid_payload())
    for i in range(20):
        p = valid_payload()
        kind = i % 5
        f = fields[int(rng.integers(0, len(fields)))]
        if kind == 0:
            del p[f]
        elif kind == 1:
            p[f] = "" if f != "adjacency" else []
        elif kind == 2:
            p["extra_" + f] = "x"
        elif kind == 3:
            p[f] = 42
        else:
            pass  # unchanged: must stay valid
        mutations.append(p)
    for p in mutations:
        ours_ok = validate_description(json.dumps(p)) == []
        # empty adjacency list is allowed by the schema (minLength applies to items)
        assert ours_ok == reference_ok(p), f"disagreement on {p}"


# ---------------------------------------------------------------------------
# generation with retries


def test_mock_client_output_validates():
    client = MockGenerationClient()
    for organ in ("spleen", "liver", "kidney"):
        raw = client.generate(f"Organ: {organ}\nCenter point: (10, 20)", "ref")
        assert validate_description(raw) == []
        assert parse_description(raw).organ == organ


def test_mock_client_deterministic():
    client = MockGenerationClient()
    prompt = "Organ: spleen\nCenter point: (3, 4)"
    assert client.generate(prompt, "a") == client.generate(prompt, "a")


def test_generate_description_retries_then_succeeds():
    good = json.dumps(valid_payload())
    client = ScriptedClient(["{broken", json.dumps({"organ": "x"}), good])
    outcome = generate_description(client, "prompt", "ref", max_retries=2)
    assert outcome.description is not None
    assert outcome.attempts == 3
    assert not outcome.review_required


def test_generate_description_error_annotated_retry_prompt():
    captured = []

    class Spy(ScriptedClient):
        def generate(self, prompt, image_ref):
            captured.append(prompt)
            return super().generate(prompt, image_ref)

    client = Spy(["{broken", json.dumps(valid_payload())])
    generate_description(client, "base prompt", "ref", max_retries=2)
    assert captured[0] == "base prompt"
    assert "rejected" in captured[1] and "base prompt" in captured[1]


def test_generate_description_final_failure_flagged_not_raised():
    client = ScriptedClient(["{broken"])
    outcome = generate_description(client, "prompt", "ref", max_retries=2)
    assert outcome.review_required
    assert outcome.description is None
    assert outcome.attempts == 3
    assert outcome.raw_output == "{broken"
    assert outcome.violations
