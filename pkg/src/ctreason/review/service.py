"""HTTP backend for human-in-the-loop review: paged queues, state
transitions with idempotency keys and optimistic versioning, image overlays,
and export of the approved/revised items.

Every JSON response uses the {data, error} envelope; errors carry
{code, message, details}.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from fastapi import BackgroundTasks, FastAPI, Header, Query, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from ..curation.generate import GenerationClient, MockGenerationClient
from ..curation.pipeline import process_regenerations
from ..data import load_mask_png, load_png16
from .overlay import render_overlay
from .store import (
    STATES,
    IllegalTransition,
    InvalidRevision,
    ItemNotFound,
    ReviewStore,
    StaleVersion,
)


class TransitionRequest(BaseModel):
    action: str
    payload: Optional[dict] = None
    idempotency_key: Optional[str] = None
    version: Optional[int] = None


def ok(data, status_code: int = 200) -> JSONResponse:
    return JSONResponse({"data": data, "error": None}, status_code=status_code)


def fail(status_code: int, code: str, message: str, details=None) -> JSONResponse:
    return JSONResponse(
        {"data": None, "error": {"code": code, "message": message, "details": details}},
        status_code=status_code,
    )


def create_app(store_path, dataset_root=None, client: GenerationClient | None = None,
               auto_regenerate: bool = True) -> FastAPI:
    """App factory. `client` powers regeneration jobs (mock by default);
    `dataset_root` locates slice/mask assets for overlays."""
    store = ReviewStore(store_path)
    client = client or MockGenerationClient()
    app = FastAPI(title="ctreason review service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.store = store
    app.state.dataset_root = Path(dataset_root) if dataset_root else None

    @app.exception_handler(ItemNotFound)
    async def _nf(_, exc):
        return fail(404, "not_found", str(exc))

    @app.exception_handler(IllegalTransition)
    async def _it(_, exc):
        return fail(409, "illegal_transition", str(exc))

    @app.exception_handler(StaleVersion)
    async def _sv(_, exc):
        return fail(409, "stale_version", str(exc))

    @app.exception_handler(InvalidRevision)
    async def _ir(_, exc):
        return fail(422, "invalid_revision", "revision payload rejected", exc.violations)

    @app.get("/api/health")
    def health():
        return ok({"status": "ok", "counts": store.counts()})

    @app.get("/api/items")
    def list_items(state: Optional[str] = Query(default=None),
                   page: int = Query(default=1, ge=1),
                   page_size: int = Query(default=20, ge=1, le=200)):
        if state is not None and state not in STATES:
            return fail(400, "bad_filter", f"unknown state {state!r}; valid: {list(STATES)}")
        items, total = store.list_items(state=state, page=page, page_size=page_size)
        return ok({"items": items, "total": total, "page": page, "page_size": page_size})

    @app.get("/api/items/{item_id}")
    def get_item(item_id: str):
        return ok(store.get(item_id))

    @app.post("/api/items/{item_id}/transition")
    def transition(item_id: str, req: TransitionRequest, background: BackgroundTasks,
                   x_actor: Optional[str] = Header(default="anonymous")):
        updated = store.transition(
            item_id, req.action, actor=x_actor or "anonymous", payload=req.payload,
            idempotency_key=req.idempotency_key, expected_version=req.version,
        )
        if req.action == "regenerate" and auto_regenerate and app.state.dataset_root:
            background.add_task(process_regenerations, store, app.state.dataset_root, client)
        return ok(updated)

    @app.get("/api/items/{item_id}/overlay")
    def overlay(item_id: str, mask: bool = False, bbox: bool = False, center: bool = False):
        item = store.get(item_id, with_history=False)
        root = app.state.dataset_root
        if root is None:
            return fail(404, "no_assets", "service started without a dataset root")
        sdir = root / item["subject"] / item["slice_id"]
        slice_path = sdir / "slice.png"
        mask_path = sdir / f"mask_{item['organ']}.png"
        if not slice_path.exists() or not mask_path.exists():
            return fail(404, "missing_asset", f"no image assets under {sdir}")
        png = render_overlay(
            load_png16(slice_path), load_mask_png(mask_path),
            show_mask=mask, show_bbox=bbox, show_center=center,
        )
        return Response(content=png, media_type="image/png")

    @app.get("/api/export")
    def export():
        lines = [json.dumps(item) for item in store.export_included()]
        return Response(content="\n".join(lines) + ("\n" if lines else ""),
                        media_type="application/x-ndjson")

    return app
