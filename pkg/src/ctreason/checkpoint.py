"""Versioned checkpoint archive: a zip holding a JSON manifest (configs,
vocabulary, metadata) plus one .npy entry per named parameter, grouped as
reasoner / encoder / seg_head / det_head / projector / box_queries."""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np
import torch

from .errors import ConfigError
from .perceiver import Perceiver, PerceiverConfig
from .reasoner import AdapterConfig, Reasoner, ReasonerConfig
from .tokenizer import Vocabulary

FORMAT = "ctreason-ckpt-v1"

PERCEIVER_GROUPS = ("encoder", "seg_head", "det_head", "projector", "box_queries")


def _perceiver_group(key: str) -> str:
    head = key.split(".", 1)[0]
    if head not in PERCEIVER_GROUPS:
        raise ConfigError(f"unexpected perceiver parameter {key!r}")
    return head


def save_checkpoint(path, reasoner: Reasoner, perceiver: Perceiver, vocab: Vocabulary,
                    adapter: AdapterConfig | None = None, extra: dict | None = None):
    groups = {"reasoner": {}}
    for g in PERCEIVER_GROUPS:
        groups[g] = {}
    for key, tensor in reasoner.state_dict().items():
        groups["reasoner"][key] = tensor
    for key, tensor in perceiver.state_dict().items():
        groups[_perceiver_group(key)][key] = tensor

    manifest = {
        "format": FORMAT,
        "reasoner_config": reasoner.cfg.to_json(),
        "perceiver_config": perceiver.cfg.to_json(),
        "adapter_config": adapter.__dict__ if adapter else None,
        "vocab": vocab.to_json(),
        "extra": extra or {},
        "groups": {g: sorted(params) for g, params in groups.items()},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=1))
        for group, params in groups.items():
            for name, tensor in params.items():
                buf = io.BytesIO()
                np.save(buf, tensor.detach().cpu().numpy())
                zf.writestr(f"arrays/{group}/{name}.npy", buf.getvalue())


def load_checkpoint(path):
    """Returns (reasoner, perceiver, vocab, manifest). Models come back in
    eval mode with the archived weights."""
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != FORMAT:
            raise ConfigError(f"unsupported checkpoint format {manifest.get('format')!r}")

        vocab = Vocabulary.from_json(manifest["vocab"])
        reasoner = Reasoner(ReasonerConfig(**manifest["reasoner_config"]))
        if manifest.get("adapter_config"):
            reasoner.attach_adapters(AdapterConfig(**manifest["adapter_config"]))
        perceiver = Perceiver(PerceiverConfig(**manifest["perceiver_config"]))

        def read_group(group, params):
            state = {}
            for name in params:
                arr = np.load(io.BytesIO(zf.read(f"arrays/{group}/{name}.npy")))
                state[name] = torch.as_tensor(arr)
            return state

        reasoner.load_state_dict(read_group("reasoner", manifest["groups"]["reasoner"]))
        p_state = {}
        for g in PERCEIVER_GROUPS:
            p_state.update(read_group(g, manifest["groups"][g]))
        perceiver.load_state_dict(p_state)

    reasoner.eval()
    perceiver.eval()
    return reasoner, perceiver, vocab, manifest
