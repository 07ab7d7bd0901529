"""Review state persistence: a single sqlite file plus an append-only JSONL
event log. Transitions are atomic read-modify-writes guarded by a process
lock and per-item version numbers.

State machine: pending -> approved | revised | regen_requested;
regen_requested -> pending (when the regeneration worker completes).
History is append-only.
"""

from __future__ import annotations

import json
import sqlite3
import threading
import time
from pathlib import Path

from ..curation.generate import validate_description
from ..errors import CtReasonError

STATES = ("pending", "approved", "revised", "regen_requested")
ACTIONS = ("approve", "revise", "regenerate")

_LEGAL = {
    ("pending", "approve"): "approved",
    ("pending", "revise"): "revised",
    ("pending", "regenerate"): "regen_requested",
}


class ItemNotFound(CtReasonError):
    pass


class IllegalTransition(CtReasonError):
    pass


class StaleVersion(CtReasonError):
    pass


class InvalidRevision(CtReasonError):
    def __init__(self, violations):
        super().__init__("revision payload violates the description schema")
        self.violations = violations


class ReviewStore:
    def __init__(self, path):
        self.path = str(path)
        self.events_path = Path(path).with_suffix(".events.jsonl")
        self._lock = threading.Lock()
        with self._connect() as conn:
            conn.executescript(
                """
                CREATE TABLE IF NOT EXISTS items (
                    id TEXT PRIMARY KEY,
                    subject TEXT NOT NULL,
                    slice_id TEXT NOT NULL,
                    organ TEXT NOT NULL,
                    state TEXT NOT NULL,
                    version INTEGER NOT NULL,
                    description TEXT,
                    raw_output TEXT,
                    attempts INTEGER,
                    created_at REAL,
                    updated_at REAL
                );
                CREATE TABLE IF NOT EXISTS history (
                    seq INTEGER PRIMARY KEY AUTOINCREMENT,
                    item_id TEXT NOT NULL,
                    ts REAL NOT NULL,
                    actor TEXT NOT NULL,
                    action TEXT NOT NULL,
                    payload TEXT
                );
                CREATE TABLE IF NOT EXISTS idempotency (
                    item_id TEXT NOT NULL,
                    key TEXT NOT NULL,
                    response TEXT NOT NULL,
                    PRIMARY KEY (item_id, key)
                );
                CREATE TABLE IF NOT EXISTS regen_queue (
                    item_id TEXT PRIMARY KEY,
                    enqueued_at REAL
                );
                """
            )

    def _connect(self):
        conn = sqlite3.connect(self.path)
        conn.row_factory = sqlite3.Row
        return conn

    # -- events --------------------------------------------------------------

    def _append_event(self, conn, item_id, actor, action, payload=None):
        ts = time.time()
        conn.execute(
            "INSERT INTO history (item_id, ts, actor, action, payload) VALUES (?,?,?,?,?)",
            (item_id, ts, actor, action, json.dumps(payload) if payload is not None else None),
        )
        with open(self.events_path, "a") as f:
            f.write(json.dumps({"item": item_id, "ts": ts, "actor": actor,
                                "action": action, "payload": payload}) + "\n")

    # -- shaping ---------------------------------------------------------------

    def _row_to_item(self, conn, row, with_history=True):
        item = {
            "id": row["id"],
            "subject": row["subject"],
            "slice_id": row["slice_id"],
            "organ": row["organ"],
            "state": row["state"],
            "version": row["version"],
            "description": json.loads(row["description"]) if row["description"] else None,
            "raw_output": row["raw_output"],
            "attempts": row["attempts"],
            "created_at": row["created_at"],
            "updated_at": row["updated_at"],
        }
        if with_history:
            rows = conn.execute(
                "SELECT ts, actor, action, payload FROM history WHERE item_id=? ORDER BY seq",
                (row["id"],),
            ).fetchall()
            item["history"] = [
                {"ts": r["ts"], "actor": r["actor"], "action": r["action"],
                 "payload": json.loads(r["payload"]) if r["payload"] else None}
                for r in rows
            ]
        return item

    # -- API -------------------------------------------------------------------

    def add_item(self, subject, slice_id, organ, description=None, raw_output="",
                 attempts=1, actor="pipeline"):
        item_id = f"{subject}-{slice_id}-{organ}"
        now = time.time()
        with self._lock, self._connect() as conn:
            conn.execute(
                "INSERT OR REPLACE INTO items (id, subject, slice_id, organ, state, version,"
                " description, raw_output, attempts, created_at, updated_at)"
                " VALUES (?,?,?,?,?,?,?,?,?,?,?)",
                (item_id, subject, slice_id, organ, "pending", 1,
                 json.dumps(description) if description else None,
                 raw_output, attempts, now, now),
            )
            self._append_event(conn, item_id, actor, "created",
                               {"review_required": description is None})
            row = conn.execute("SELECT * FROM items WHERE id=?", (item_id,)).fetchone()
            return self._row_to_item(conn, row)

    def get(self, item_id, with_history=True):
        with self._connect() as conn:
            row = conn.execute("SELECT * FROM items WHERE id=?", (item_id,)).fetchone()
            if row is None:
                raise ItemNotFound(item_id)
            return self._row_to_item(conn, row, with_history)

    def list_items(self, state=None, page=1, page_size=20):
        """Stable (subject, slice, organ) ordering; returns (summaries, total)."""
        where, args = "", []
        if state is not None:
            where = "WHERE state=?"
            args.append(state)
        with self._connect() as conn:
            total = conn.execute(f"SELECT COUNT(*) FROM items {where}", args).fetchone()[0]
            rows = conn.execute(
                f"SELECT * FROM items {where} ORDER BY subject, slice_id, organ"
                " LIMIT ? OFFSET ?",
                args + [page_size, (page - 1) * page_size],
            ).fetchall()
            items = [self._row_to_item(conn, r, with_history=False) for r in rows]
        return items, total

    def counts(self):
        with self._connect() as conn:
            rows = conn.execute("SELECT state, COUNT(*) AS n FROM items GROUP BY state")
            return {r["state"]: r["n"] for r in rows}

    def transition(self, item_id, action, actor="anonymous", payload=None,
                   idempotency_key=None, expected_version=None):
        if action not in ACTIONS:
            raise IllegalTransition(f"unknown action {action!r}")
        with self._lock, self._connect() as conn:
            if idempotency_key:
                hit = conn.execute(
                    "SELECT response FROM idempotency WHERE item_id=? AND key=?",
                    (item_id, idempotency_key),
                ).fetchone()
                if hit:
                    return json.loads(hit["response"])

            row = conn.execute("SELECT * FROM items WHERE id=?", (item_id,)).fetchone()
            if row is None:
                raise ItemNotFound(item_id)
            if expected_version is not None and expected_version != row["version"]:
                raise StaleVersion(
                    f"expected version {expected_version}, item is at {row['version']}")

            new_state = _LEGAL.get((row["state"], action))
            if new_state is None:
                raise IllegalTransition(f"{action} is not legal from state {row['state']!r}")

            description = row["description"]
            if action == "approve" and description is None:
                raise IllegalTransition("cannot approve an item without a valid description")
            if action == "revise":
                violations = validate_description(json.dumps(payload))
                if violations:
                    raise InvalidRevision(violations)
                description = json.dumps(payload)

            conn.execute(
                "UPDATE items SET state=?, version=version+1, description=?, updated_at=?"
                " WHERE id=?",
                (new_state, description, time.time(), item_id),
            )
            if action == "regenerate":
                conn.execute(
                    "INSERT OR REPLACE INTO regen_queue (item_id, enqueued_at) VALUES (?,?)",
                    (item_id, time.time()),
                )
            self._append_event(conn, item_id, actor, action,
                               payload if action == "revise" else None)
            updated = self._row_to_item(
                conn, conn.execute("SELECT * FROM items WHERE id=?", (item_id,)).fetchone())
            if idempotency_key:
                conn.execute(
                    "INSERT INTO idempotency (item_id, key, response) VALUES (?,?,?)",
                    (item_id, idempotency_key, json.dumps(updated)),
                )
            return updated

    # -- regeneration ----------------------------------------------------------

    def pending_regenerations(self):
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT items.* FROM regen_queue JOIN items ON items.id = regen_queue.item_id"
                " ORDER BY regen_queue.enqueued_at"
            ).fetchall()
            return [self._row_to_item(conn, r, with_history=False) for r in rows]

    def complete_regeneration(self, item_id, description=None, raw_output="", attempts=1,
                              actor="worker"):
        with self._lock, self._connect() as conn:
            row = conn.execute("SELECT * FROM items WHERE id=?", (item_id,)).fetchone()
            if row is None:
                raise ItemNotFound(item_id)
            if row["state"] != "regen_requested":
                raise IllegalTransition(
                    f"regeneration completed but item is in state {row['state']!r}")
            conn.execute(
                "UPDATE items SET state='pending', version=version+1, description=?,"
                " raw_output=?, attempts=?, updated_at=? WHERE id=?",
                (json.dumps(description) if description else None, raw_output,
                 attempts, time.time(), item_id),
            )
            conn.execute("DELETE FROM regen_queue WHERE item_id=?", (item_id,))
            self._append_event(conn, item_id, actor, "regenerated",
                               {"review_required": description is None})
            return self._row_to_item(
                conn, conn.execute("SELECT * FROM items WHERE id=?", (item_id,)).fetchone())

    # -- export ------------------------------------------------------------------

    def export_included(self):
        """Items that made it into the dataset: approved or revised only."""
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT * FROM items WHERE state IN ('approved', 'revised')"
                " ORDER BY subject, slice_id, organ"
            ).fetchall()
            return [self._row_to_item(conn, r, with_history=False) for r in rows]
