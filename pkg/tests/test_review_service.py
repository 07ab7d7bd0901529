import json
import random

import numpy as np
import pytest
from fastapi.testclient import TestClient

from ctreason.curation.generate import MockGenerationClient, ScriptedClient
from ctreason.curation.pipeline import process_regenerations, run_generate
from ctreason.review.service import create_app
from ctreason.review.store import STATES, IllegalTransition, ReviewStore
from ctreason.synth import SynthConfig, generate_dataset


def valid_payload(**overrides):
    payload = {
        "organ": "spleen",
        "shape": "oval",
        "size": "moderate",
        "location": "left upper quadrant",
        "texture": "homogeneous",
        "boundary": "sharp",
        "adjacency": ["stomach"],
        "free_summary": "A moderate oval structure.",
    }
    payload.update(overrides)
    return payload


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("reviewds")
    generate_dataset(root, SynthConfig(n_subjects=3, slices_per_subject=2,
                                       profile="small", resolution=32, seed=21,
                                       organs_per_slice=1))
    return root


@pytest.fixture()
def seeded(tmp_path, dataset):
    """Fresh store seeded through the real curation pipeline + its app."""
    store = ReviewStore(tmp_path / "review.db")
    run_generate(dataset, tmp_path / "curation", MockGenerationClient(), store=store)
    app = create_app(tmp_path / "review.db", dataset_root=dataset,
                     client=MockGenerationClient())
    return store, TestClient(app)


def first_pending(client):
    r = client.get("/api/items", params={"state": "pending", "page_size": 200})
    return r.json()["data"]["items"][0]


# ---------------------------------------------------------------------------
# listing


def test_empty_store_lists_empty(tmp_path):
    app = create_app(tmp_path / "empty.db")
    client = TestClient(app)
    body = client.get("/api/items").json()
    assert body["error"] is None
    assert body["data"]["items"] == []
    assert body["data"]["total"] == 0


def test_pagination_pages_of_ten(tmp_path):
    store = ReviewStore(tmp_path / "p.db")
    for i in range(25):
        store.add_item("s", f"sl{i:03d}", "organ", description=valid_payload())
    client = TestClient(create_app(tmp_path / "p.db"))
    sizes = []
    for page in (1, 2, 3):
        data = client.get("/api/items", params={"page": page, "page_size": 10}).json()["data"]
        sizes.append(len(data["items"]))
        assert data["total"] == 25
    assert sizes == [10, 10, 5]


def test_list_ordering_stable(seeded):
    _, client = seeded
    items = client.get("/api/items", params={"page_size": 200}).json()["data"]["items"]
    keys = [(i["subject"], i["slice_id"], i["organ"]) for i in items]
    assert keys == sorted(keys)


def test_bad_state_filter_400(seeded):
    _, client = seeded
    r = client.get("/api/items", params={"state": "bogus"})
    assert r.status_code == 400
    assert r.json()["error"]["code"] == "bad_filter"


def test_filter_approved_after_approvals(seeded):
    _, client = seeded
    ids = []
    for _ in range(3):
        item = first_pending(client)
        client.post(f"/api/items/{item['id']}/transition", json={"action": "approve"})
        ids.append(item["id"])
    data = client.get("/api/items", params={"state": "approved", "page_size": 50}).json()["data"]
    assert sorted(i["id"] for i in data["items"]) == sorted(ids)
    assert data["total"] == 3


# ---------------------------------------------------------------------------
# transitions


def test_approve_pending(seeded):
    _, client = seeded
    item = first_pending(client)
    r = client.post(f"/api/items/{item['id']}/transition", json={"action": "approve"})
    assert r.status_code == 200
    body = r.json()["data"]
    assert body["state"] == "approved"
    assert body["version"] == item["version"] + 1


def test_approve_twice_409(seeded):
    _, client = seeded
    item = first_pending(client)
    client.post(f"/api/items/{item['id']}/transition", json={"action": "approve"})
    r = client.post(f"/api/items/{item['id']}/transition", json={"action": "approve"})
    assert r.status_code == 409
    assert r.json()["error"]["code"] == "illegal_transition"


def test_revise_with_valid_payload(seeded):
    _, client = seeded
    item = first_pending(client)
    payload = valid_payload(shape="crescent-shaped")
    r = client.post(f"/api/items/{item['id']}/transition",
                    json={"action": "revise", "payload": payload})
    assert r.status_code == 200
    assert r.json()["data"]["state"] == "revised"
    assert r.json()["data"]["description"]["shape"] == "crescent-shaped"


def test_revise_invalid_payload_422_with_violations(seeded):
    _, client = seeded
    item = first_pending(client)
    bad = valid_payload()
    del bad["shape"]
    r = client.post(f"/api/items/{item['id']}/transition",
                    json={"action": "revise", "payload": bad})
    assert r.status_code == 422
    assert any("shape" in v for v in r.json()["error"]["details"])


def test_unknown_item_404(seeded):
    _, client = seeded
    r = client.post("/api/items/nope/transition", json={"action": "approve"})
    assert r.status_code == 404


def test_stale_version_409(seeded):
    _, client = seeded
    item = first_pending(client)
    r = client.post(f"/api/items/{item['id']}/transition",
                    json={"action": "approve", "version": item["version"] + 5})
    assert r.status_code == 409
    assert r.json()["error"]["code"] == "stale_version"


def test_regenerate_end_to_end(seeded):
    _, client = seeded
    item = first_pending(client)
    before_hist = len(client.get(f"/api/items/{item['id']}").json()["data"]["history"])
    r = client.post(f"/api/items/{item['id']}/transition", json={"action": "regenerate"})
    assert r.json()["data"]["state"] == "regen_requested"
    # TestClient runs background tasks before returning; the worker has finished
    after = client.get(f"/api/items/{item['id']}").json()["data"]
    assert after["state"] == "pending"
    assert after["description"] is not None
    assert len(after["history"]) == before_hist + 2
    actions = [h["action"] for h in after["history"]]
    assert actions[-2:] == ["regenerate", "regenerated"]


def test_history_append_only_and_actor_header(seeded):
    _, client = seeded
    item = first_pending(client)
    client.post(f"/api/items/{item['id']}/transition",
                json={"action": "approve"}, headers={"X-Actor": "annotator-2"})
    hist = client.get(f"/api/items/{item['id']}").json()["data"]["history"]
    assert hist[-1]["actor"] == "annotator-2"
    assert hist[-1]["action"] == "approve"


# ---------------------------------------------------------------------------
# idempotency


def test_idempotent_replay_returns_stored_result(seeded):
    _, client = seeded
    item = first_pending(client)
    body = {"action": "approve", "idempotency_key": "k-123"}
    first = client.post(f"/api/items/{item['id']}/transition", json=body)
    replay = client.post(f"/api/items/{item['id']}/transition", json=body)
    assert replay.status_code == 200
    assert replay.json()["data"] == first.json()["data"]
    hist = client.get(f"/api/items/{item['id']}").json()["data"]["history"]
    assert [h["action"] for h in hist].count("approve") == 1


# ---------------------------------------------------------------------------
# overlay


def test_overlay_toggles_off_is_base_render(seeded):
    _, client = seeded
    item = first_pending(client)
    r = client.get(f"/api/items/{item['id']}/overlay")
    assert r.status_code == 200
    assert r.headers["content-type"] == "image/png"
    again = client.get(f"/api/items/{item['id']}/overlay")
    assert r.content == again.content


def test_overlay_bbox_changes_pixels(seeded):
    _, client = seeded
    item = first_pending(client)
    base = client.get(f"/api/items/{item['id']}/overlay").content
    boxed = client.get(f"/api/items/{item['id']}/overlay", params={"bbox": True}).content
    masked = client.get(f"/api/items/{item['id']}/overlay",
                        params={"mask": True, "center": True}).content
    assert boxed != base
    assert masked != base and masked != boxed


def test_overlay_unknown_item_404(seeded):
    _, client = seeded
    assert client.get("/api/items/nope/overlay").status_code == 404


# ---------------------------------------------------------------------------
# export


def test_export_exactly_approved_union_revised(seeded):
    _, client = seeded
    items = client.get("/api/items", params={"page_size": 200}).json()["data"]["items"]
    assert len(items) >= 4
    client.post(f"/api/items/{items[0]['id']}/transition", json={"action": "approve"})
    client.post(f"/api/items/{items[1]['id']}/transition",
                json={"action": "revise", "payload": valid_payload()})
    client.post(f"/api/items/{items[2]['id']}/transition", json={"action": "regenerate"})
    lines = [json.loads(l) for l in client.get("/api/export").text.splitlines()]
    exported = {l["id"] for l in lines}
    assert exported == {items[0]["id"], items[1]["id"]}
    assert all(l["state"] in ("approved", "revised") for l in lines)


# ---------------------------------------------------------------------------
# state machine property test


def test_state_machine_random_actions_never_illegal(tmp_path, dataset):
    store = ReviewStore(tmp_path / "sm.db")
    run_generate(dataset, tmp_path / "sm-curation", MockGenerationClient(), store=store)
    items, _ = store.list_items(page_size=200)
    ids = [i["id"] for i in items]
    rng = random.Random(42)
    legal = {
        "pending": {"approve", "revise", "regenerate"},
        "approved": set(),
        "revised": set(),
        "regen_requested": set(),
    }
    histories = {i: 1 for i in ids}  # "created" events

    for _ in range(500):
        item_id = rng.choice(ids)
        action = rng.choice(["approve", "revise", "regenerate", "complete_regen"])
        state = store.get(item_id, with_history=False)["state"]
        assert state in STATES
        if action == "complete_regen":
            queued = {x["id"] for x in store.pending_regenerations()}
            if item_id in queued:
                store.complete_regeneration(item_id, description=valid_payload())
                histories[item_id] += 1
            else:
                with pytest.raises(IllegalTransition):
                    store.complete_regeneration(item_id, description=valid_payload())
            continue
        payload = valid_payload() if action == "revise" else None
        if action in legal[state]:
            store.transition(item_id, action, payload=payload)
            histories[item_id] += 1
        else:
            with pytest.raises(IllegalTransition):
                store.transition(item_id, action, payload=payload)

    for item_id in ids:
        item = store.get(item_id)
        assert item["state"] in STATES
        assert len(item["history"]) == histories[item_id]


def test_regen_worker_function_direct(tmp_path, dataset):
    store = ReviewStore(tmp_path / "w.db")
    run_generate(dataset, tmp_path / "w-curation", MockGenerationClient(), store=store)
    items, _ = store.list_items(page_size=10)
    store.transition(items[0]["id"], "regenerate")
    assert len(store.pending_regenerations()) == 1
    done = process_regenerations(store, dataset, MockGenerationClient())
    assert done == 1
    assert store.get(items[0]["id"])["state"] == "pending"
    assert store.pending_regenerations() == []


def test_events_log_append_only(tmp_path, dataset):
    store = ReviewStore(tmp_path / "e.db")
    run_generate(dataset, tmp_path / "e-curation", MockGenerationClient(), store=store)
    items, _ = store.list_items(page_size=5)
    n0 = len(store.events_path.read_text().splitlines())
    store.transition(items[0]["id"], "approve")
    n1 = len(store.events_path.read_text().splitlines())
    assert n1 == n0 + 1


def test_mock_generated_descriptions_all_validate(tmp_path, dataset):
    from ctreason.curation.generate import validate_description

    store = ReviewStore(tmp_path / "v.db")
    records = run_generate(dataset, tmp_path / "v-curation", MockGenerationClient(),
                           store=store)
    assert records
    for r in records:
        assert r["status"] == "generated"
        assert validate_description(json.dumps(r["description"])) == []
