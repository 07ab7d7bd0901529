"""Toy autoregressive multimodal language model.

Image features enter as prefix tokens (projected patches) ahead of the text
stream; a causal mask over the whole sequence then gives every text position
access to the full image and to earlier text only. The last-layer hidden
states of generated routing tokens are what condition the perception heads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, LengthError, MissingRoutingTokenError, ShapeError
from .tokenizer import Vocabulary


@dataclass
class ReasonerConfig:
    vocab_size: int
    hidden_dim: int = 128
    layers: int = 2
    heads: int = 4
    max_seq_len: int = 160
    image_token_count: int = 16  # flattened patch grid
    patch_dim: int = 256  # pixels per patch after flattening

    def __post_init__(self):
        if self.hidden_dim % self.heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}"
            )
        if min(self.vocab_size, self.layers, self.max_seq_len, self.image_token_count) < 1:
            raise ConfigError("all reasoner sizes must be positive")

    def to_json(self):
        return dict(self.__dict__)


@dataclass
class AdapterConfig:
    rank: int = 8
    alpha: float = 16.0
    dropout: float = 0.05

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError(f"adapter rank must be >= 1, got {self.rank}")
        if self.alpha <= 0:
            raise ConfigError(f"adapter alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"adapter dropout must be in [0, 1), got {self.dropout}")


@dataclass
class GenerationResult:
    answer: list  # token ids, trailing EOS stripped
    hidden: torch.Tensor  # (len(answer), d) last-layer states at answer positions
    routing: list = field(default_factory=list)  # [(position, kind)]


def patchify(image, patch_size: int) -> torch.Tensor:
    """Split an H x W grid into flattened non-overlapping patches -> (N, patch^2)."""
    img = torch.as_tensor(np.asarray(image), dtype=torch.float64)
    if img.ndim != 2 or img.shape[0] % patch_size or img.shape[1] % patch_size:
        raise ShapeError(f"image {tuple(img.shape)} not divisible into {patch_size}-patches")
    h, w = img.shape
    patches = img.reshape(h // patch_size, patch_size, w // patch_size, patch_size)
    return patches.permute(0, 2, 1, 3).reshape(-1, patch_size * patch_size)


class LoRALinear(nn.Module):
    """Linear layer with an additive low-rank term (alpha/r) * B @ A.

    B starts at zero so attaching adapters leaves the forward pass unchanged.
    """

    def __init__(self, base: nn.Linear, cfg: AdapterConfig):
        super().__init__()
        fan_out, fan_in = base.weight.shape
        if cfg.rank > min(fan_in, fan_out):
            raise ConfigError(
                f"adapter rank {cfg.rank} exceeds min(fan_in, fan_out) = {min(fan_in, fan_out)}"
            )
        self.base = base
        self.lora_A = nn.Parameter(
            torch.randn(cfg.rank, fan_in, dtype=base.weight.dtype) / math.sqrt(fan_in)
        )
        self.lora_B = nn.Parameter(torch.zeros(fan_out, cfg.rank, dtype=base.weight.dtype))
        self.scaling = cfg.alpha / cfg.rank
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x):
        return self.base(x) + self.scaling * F.linear(F.linear(self.dropout(x), self.lora_A), self.lora_B)


class CausalSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.o_proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, t, d = x.shape
        hd = d // self.heads
        q = self.q_proj(x).view(b, t, self.heads, hd).transpose(1, 2)
        k = self.k_proj(x).view(b, t, self.heads, hd).transpose(1, 2)
        v = self.v_proj(x).view(b, t, self.heads, hd).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
        mask = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
        att = att.masked_fill(mask, float("-inf"))
        att = att.softmax(dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, t, d)
        return self.o_proj(out)


class Block(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim)
        )

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        x = x + self.mlp(self.ln2(x))
        return x


class Reasoner(nn.Module):
    def __init__(self, cfg: ReasonerConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden_dim
        self.token_emb = nn.Embedding(cfg.vocab_size, d)
        self.pos_emb = nn.Embedding(cfg.image_token_count + cfg.max_seq_len, d)
        self.img_proj = nn.Linear(cfg.patch_dim, d)
        self.blocks = nn.ModuleList(Block(d, cfg.heads) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(d)
        self.lm_head = nn.Linear(d, cfg.vocab_size)
        self.double()

    # -- forward -----------------------------------------------------------

    def _embed(self, image_features, ids):
        feats = torch.as_tensor(np.asarray(image_features), dtype=torch.float64)
        if feats.ndim != 2 or feats.shape != (self.cfg.image_token_count, self.cfg.patch_dim):
            raise ShapeError(
                f"image features {tuple(feats.shape)}, expected "
                f"({self.cfg.image_token_count}, {self.cfg.patch_dim})"
            )
        ids_t = torch.as_tensor(list(ids), dtype=torch.long)
        if ids_t.ndim != 1 or ids_t.numel() < 1:
            raise ShapeError("ids must be a nonempty 1-D sequence")
        if ids_t.numel() > self.cfg.max_seq_len:
            raise LengthError(
                f"sequence length {ids_t.numel()} exceeds max_seq_len {self.cfg.max_seq_len}"
            )
        tok = self.token_emb(ids_t)
        return feats, tok

    def forward(self, image_features, ids):
        """Returns (logits (T, V), hidden (T, d)) over the text positions."""
        feats, tok = self._embed(image_features, ids)
        logits, hidden = self._run(feats[None], tok[None])
        return logits[0], hidden[0]

    def forward_batch(self, image_features, ids_list, pad_id: int):
        """Padded batch forward. image_features: (B, N, patch_dim); ids_list:
        ragged id sequences, right-padded with pad_id internally. Returns
        (logits (B, Tmax, V), hidden (B, Tmax, d), lengths). Right padding
        cannot influence earlier positions under the causal mask."""
        feats = torch.as_tensor(np.asarray(image_features), dtype=torch.float64)
        lengths = [len(ids) for ids in ids_list]
        tmax = max(lengths)
        if tmax > self.cfg.max_seq_len:
            raise LengthError(f"sequence length {tmax} exceeds max_seq_len {self.cfg.max_seq_len}")
        padded = torch.full((len(ids_list), tmax), pad_id, dtype=torch.long)
        for i, ids in enumerate(ids_list):
            padded[i, : len(ids)] = torch.as_tensor(list(ids), dtype=torch.long)
        logits, hidden = self._run(feats, self.token_emb(padded))
        return logits, hidden, lengths

    def _run(self, feats, tok):
        n = feats.shape[1]
        x = torch.cat([self.img_proj(feats), tok], dim=1)
        x = x + self.pos_emb(torch.arange(x.shape[1]))[None]
        for block in self.blocks:
            x = block(x)
        h = self.norm(x[:, n:])
        return self.lm_head(h), h

    # -- generation --------------------------------------------------------

    @torch.no_grad()
    def generate(self, image_features, query_ids, max_new: int, vocab: Vocabulary) -> GenerationResult:
        if self.training:
            raise ConfigError("generate requires eval mode")
        eos = vocab.special["EOS"]
        seq = list(query_ids)
        answer = []
        for _ in range(max_new):
            logits, _ = self.forward(image_features, seq)
            row = logits[-1]
            next_id = int(torch.nonzero(row == row.max())[0].item())  # lowest id on ties
            if next_id == eos:
                break
            answer.append(next_id)
            seq.append(next_id)
        if answer:
            _, hidden = self.forward(image_features, list(query_ids) + answer)
            hidden = hidden[len(query_ids):]
        else:
            hidden = torch.zeros(0, self.cfg.hidden_dim, dtype=torch.float64)
        return GenerationResult(
            answer=answer, hidden=hidden, routing=vocab.find_routing_positions(answer)
        )

    # -- adapters ----------------------------------------------------------

    def attach_adapters(self, cfg: AdapterConfig) -> "Reasoner":
        """Wrap every attention projection in a LoRA layer and freeze the base.

        Only adapter matrices stay trainable afterward; joint-trained modules
        (projector, heads) live in the perceiver and are unaffected.
        """
        for p in self.parameters():
            p.requires_grad_(False)
        for block in self.blocks:
            attn = block.attn
            for name in ("q_proj", "k_proj", "v_proj", "o_proj"):
                layer = getattr(attn, name)
                if isinstance(layer, LoRALinear):
                    raise ConfigError("adapters already attached")
                setattr(attn, name, LoRALinear(layer, cfg))
        return self

    def adapter_parameter_count(self) -> int:
        return sum(
            p.numel() for n, p in self.named_parameters() if "lora_" in n and p.requires_grad
        )


def extract_routing_embedding(result: GenerationResult, kind: str) -> torch.Tensor:
    """Hidden row of the first routing token of the given kind."""
    for pos, k in result.routing:
        if k == kind:
            return result.hidden[pos]
    raise MissingRoutingTokenError(f"no [{kind.lower()}] token in generated answer")
