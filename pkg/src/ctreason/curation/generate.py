"""Structured appearance-description generation through a pluggable client,
with schema validation and bounded retries on invalid output."""

from __future__ import annotations

import json
import os
import re
import zlib
from dataclasses import dataclass, field

import httpx

from ..errors import ClientError
from .prompts import load_schema


@dataclass
class AppearanceDescription:
    organ: str
    shape: str
    size: str
    location: str
    texture: str
    boundary: str
    adjacency: list
    free_summary: str

    def to_json(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# validation


def validate_description(raw: str) -> list:
    """Schema-subset check of a raw model output. Returns a list of violation
    strings; empty means the payload is valid."""
    schema = load_schema()
    violations = []
    try:
        payload = json.loads(raw)
    except (json.JSONDecodeError, TypeError) as exc:
        return [f"not valid JSON: {exc}"]
    if not isinstance(payload, dict):
        return ["top-level value is not a JSON object"]

    props = schema["properties"]
    for name in schema["required"]:
        if name not in payload:
            violations.append(f"missing required field {name!r}")
    for name in payload:
        if name not in props:
            violations.append(f"unexpected field {name!r}")
    for name, value in payload.items():
        spec = props.get(name)
        if spec is None:
            continue
        if spec["type"] == "string":
            if not isinstance(value, str):
                violations.append(f"field {name!r} must be a string")
            elif len(value) < spec.get("minLength", 0):
                violations.append(f"field {name!r} must be nonempty")
        elif spec["type"] == "array":
            if not isinstance(value, list):
                violations.append(f"field {name!r} must be an array")
            else:
                item_spec = spec.get("items", {})
                for i, item in enumerate(value):
                    if not isinstance(item, str):
                        violations.append(f"field {name!r}[{i}] must be a string")
                    elif len(item) < item_spec.get("minLength", 0):
                        violations.append(f"field {name!r}[{i}] must be nonempty")
    return violations


def parse_description(raw: str) -> AppearanceDescription:
    return AppearanceDescription(**json.loads(raw))


# ---------------------------------------------------------------------------
# clients


class GenerationClient:
    """Anything with generate(prompt, image_ref) -> raw string output."""

    def generate(self, prompt: str, image_ref: str) -> str:  # pragma: no cover
        raise NotImplementedError


@dataclass
class ClientConfig:
    endpoint: str = ""
    auth_env: str = "CTREASON_LVLM_TOKEN"
    timeout_s: float = 30.0
    concurrency: int = 2


class HttpGenerationClient(GenerationClient):
    """POSTs {"prompt", "image_ref"} as JSON and expects {"output": "..."}."""

    def __init__(self, config: ClientConfig):
        self.config = config

    def generate(self, prompt: str, image_ref: str) -> str:
        headers = {}
        token = os.environ.get(self.config.auth_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            resp = httpx.post(
                self.config.endpoint,
                json={"prompt": prompt, "image_ref": image_ref},
                headers=headers,
                timeout=self.config.timeout_s,
            )
        except httpx.HTTPError as exc:
            raise ClientError(f"transport failure: {exc}") from exc
        if resp.status_code != 200:
            raise ClientError(f"endpoint returned {resp.status_code}")
        return resp.json()["output"]


_SHAPES = ("round", "oval", "elongated", "crescent-shaped", "lobulated")
_SIZES = ("small", "moderate", "large")
_TEXTURES = ("homogeneous", "mildly heterogeneous", "finely granular")
_BOUNDARIES = ("sharp", "well defined", "slightly blurred")
_NEIGHBORS = ("stomach", "liver", "spleen", "kidney", "bowel loops", "aorta")


class MockGenerationClient(GenerationClient):
    """Deterministic stand-in for the external model: emits schema-valid JSON
    derived from the prompt content alone."""

    def generate(self, prompt: str, image_ref: str) -> str:
        seed = zlib.crc32(prompt.encode())
        organ_m = re.search(r"Organ: (\S+)", prompt)
        center_m = re.search(r"Center point: \((-?\d+), (-?\d+)\)", prompt)
        organ = organ_m.group(1) if organ_m else "structure"
        cx, cy = (center_m.group(1), center_m.group(2)) if center_m else ("?", "?")
        pick = lambda options, salt: options[(seed + salt) % len(options)]
        shape = pick(_SHAPES, 1)
        size = pick(_SIZES, 2)
        payload = {
            "organ": organ,
            "shape": shape,
            "size": size,
            "location": f"centered near pixel ({cx}, {cy})",
            "texture": pick(_TEXTURES, 3),
            "boundary": pick(_BOUNDARIES, 4),
            "adjacency": [pick(_NEIGHBORS, 5), pick(_NEIGHBORS, 11)],
            "free_summary": f"The {organ} is a {size}, {shape} structure with "
                            f"{pick(_BOUNDARIES, 4)} margins on this slice.",
        }
        return json.dumps(payload)


class ScriptedClient(GenerationClient):
    """Replays a fixed sequence of raw outputs; for tests."""

    def __init__(self, outputs):
        self.outputs = list(outputs)
        self.calls = 0

    def generate(self, prompt: str, image_ref: str) -> str:
        out = self.outputs[min(self.calls, len(self.outputs) - 1)]
        self.calls += 1
        return out


# ---------------------------------------------------------------------------
# generation with retries


@dataclass
class GenerationOutcome:
    description: AppearanceDescription | None
    raw_output: str
    attempts: int
    violations: list = field(default_factory=list)

    @property
    def review_required(self) -> bool:
        return self.description is None


def generate_description(client: GenerationClient, prompt: str, image_ref: str,
                         max_retries: int = 2) -> GenerationOutcome:
    """Call the client, validate, and retry with an error-annotated prompt up
    to max_retries times. A still-invalid final output comes back flagged
    review_required instead of raising."""
    attempt_prompt = prompt
    raw = ""
    violations = []
    for attempt in range(1 + max_retries):
        raw = client.generate(attempt_prompt, image_ref)
        violations = validate_description(raw)
        if not violations:
            return GenerationOutcome(
                description=parse_description(raw), raw_output=raw, attempts=attempt + 1
            )
        attempt_prompt = (
            prompt
            + "\nYour previous output was rejected: "
            + "; ".join(violations)
            + "\nReturn only one valid JSON object."
        )
    return GenerationOutcome(
        description=None, raw_output=raw, attempts=1 + max_retries, violations=violations
    )
