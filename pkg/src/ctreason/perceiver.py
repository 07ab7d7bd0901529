"""Visual perception model: shared conv encoder, prompt-conditioned mask
decoder, and a query-based detection head.

The routing-token hidden state is projected into the encoder's channel space
and conditions both heads: added to every box query for detection, and
injected as an extra context token for the mask decoder's cross-attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ShapeError


@dataclass
class PerceiverConfig:
    resolution: int = 64
    channels: int = 32  # encoder embedding dim c
    reasoner_dim: int = 128  # projector input dim d
    num_queries: int = 8  # Q box slots
    mask_threshold: float = 0.5

    def __post_init__(self):
        if self.resolution % 8 != 0:
            raise ConfigError("resolution must be divisible by the encoder stride 8")
        if self.channels % 4 != 0:
            raise ConfigError("channels must be divisible by 4 (attention heads)")

    @property
    def stride(self) -> int:
        return 8

    @property
    def grid(self) -> int:
        return self.resolution // self.stride

    def to_json(self):
        return dict(self.__dict__)


@dataclass
class BoxHypothesis:
    box: tuple  # (x_min, y_min, x_max, y_max), normalized to [0, 1]
    score: float

    def __post_init__(self):
        x0, y0, x1, y1 = self.box
        if not (0.0 <= x0 <= x1 <= 1.0 and 0.0 <= y0 <= y1 <= 1.0):
            raise ShapeError(f"invalid box {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ShapeError(f"invalid score {self.score}")


class MaskPrediction:
    """Full-resolution probability grid with thresholding to a binary mask."""

    def __init__(self, prob: torch.Tensor):
        self.prob = prob

    def binary(self, threshold: float = 0.5) -> np.ndarray:
        return (self.prob.detach().cpu().numpy() >= threshold)

    def numpy(self) -> np.ndarray:
        return self.prob.detach().cpu().numpy()


class DetectionOutput:
    """Q box/score pairs as tensors (gradient-capable), with a plain view."""

    def __init__(self, boxes: torch.Tensor, scores: torch.Tensor):
        self.boxes = boxes  # (Q, 4) corner format in [0, 1]
        self.scores = scores  # (Q,) in [0, 1]

    def hypotheses(self):
        return [
            BoxHypothesis(box=tuple(float(v) for v in b), score=float(s))
            for b, s in zip(self.boxes.detach(), self.scores.detach())
        ]


def _conv_block(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size=3, stride=2, padding=1),
        nn.GroupNorm(4, cout),
        nn.GELU(),
    )


class Encoder(nn.Module):
    """Three stride-2 conv stages: (B,) H x W -> (B,) (H/8) x (W/8) x c."""

    def __init__(self, cfg: PerceiverConfig):
        super().__init__()
        c = cfg.channels
        self.stages = nn.Sequential(_conv_block(1, c // 2), _conv_block(c // 2, c), _conv_block(c, c))

    def forward(self, imgs: torch.Tensor) -> torch.Tensor:
        z = self.stages(imgs[:, None, :, :])  # (B, c, h, w)
        return z.permute(0, 2, 3, 1)  # (B, h, w, c)


class Projector(nn.Module):
    """Two-layer GELU MLP from reasoner hidden space to encoder channels."""

    def __init__(self, cfg: PerceiverConfig):
        super().__init__()
        d, c = cfg.reasoner_dim, cfg.channels
        self.fc1 = nn.Linear(d, d)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(d, c)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(hidden)))


class CrossBlock(nn.Module):
    def __init__(self, dim: int, heads: int = 4):
        super().__init__()
        self.ln_q = nn.LayerNorm(dim)
        self.ln_kv = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    def forward(self, q, kv):
        out, _ = self.attn(self.ln_q(q), self.ln_kv(kv), self.ln_kv(kv), need_weights=False)
        q = q + out
        return q + self.mlp(self.ln2(q))


class SegHead(nn.Module):
    """Mask decoder: a learned mask token cross-attends over the prompt token
    plus the feature-map tokens, then forms a per-pixel dynamic filter."""

    def __init__(self, cfg: PerceiverConfig):
        super().__init__()
        c, g = cfg.channels, cfg.grid
        self.pos = nn.Parameter(torch.zeros(g * g, c))
        self.prompt_type = nn.Parameter(torch.zeros(1, c))
        self.mask_token = nn.Parameter(torch.zeros(1, c))
        self.blocks = nn.ModuleList(CrossBlock(c) for _ in range(2))
        self.upsample = nn.Sequential(
            nn.ConvTranspose2d(c, c // 2, kernel_size=2, stride=2),
            nn.GELU(),
            nn.ConvTranspose2d(c // 2, c // 4, kernel_size=2, stride=2),
            nn.GELU(),
            nn.ConvTranspose2d(c // 4, c // 4, kernel_size=2, stride=2),
        )
        self.filter_head = nn.Linear(c, c // 4)
        self.bias_head = nn.Linear(c, 1)
        nn.init.normal_(self.pos, std=0.02)
        nn.init.normal_(self.mask_token, std=0.02)

    def forward(self, z: torch.Tensor, prompt: torch.Tensor) -> torch.Tensor:
        b, h, w, c = z.shape
        tokens = z.reshape(b, h * w, c) + self.pos[None]
        ctx = torch.cat([prompt[:, None, :] + self.prompt_type[None], tokens], dim=1)
        m = self.mask_token[None].expand(b, -1, -1)
        for block in self.blocks:
            m = block(m, ctx)
        m = m[:, 0]  # (B, c)
        up = self.upsample(z.permute(0, 3, 1, 2))  # (B, c/4, H, W)
        logits = torch.einsum("bkij,bk->bij", up, self.filter_head(m)) + self.bias_head(m)[:, :, None]
        return logits


class DetHead(nn.Module):
    """Box queries (plus the prompt embedding) attend over the feature map;
    two fully-connected nets decode each query into a box and a score."""

    def __init__(self, cfg: PerceiverConfig):
        super().__init__()
        c, g = cfg.channels, cfg.grid
        self.pos = nn.Parameter(torch.zeros(g * g, c))
        self.self_blocks = nn.ModuleList(CrossBlock(c) for _ in range(2))
        self.cross_blocks = nn.ModuleList(CrossBlock(c) for _ in range(2))
        self.box_net = nn.Sequential(nn.Linear(c, c), nn.GELU(), nn.Linear(c, 4))
        self.score_net = nn.Sequential(nn.Linear(c, c), nn.GELU(), nn.Linear(c, 1))
        nn.init.normal_(self.pos, std=0.02)

    def forward(self, z: torch.Tensor, prompt: torch.Tensor, queries: torch.Tensor):
        b, h, w, c = z.shape
        tokens = z.reshape(b, h * w, c) + self.pos[None]
        q = queries[None] + prompt[:, None, :]
        for sb, cb in zip(self.self_blocks, self.cross_blocks):
            q = sb(q, q)
            q = cb(q, tokens)
        raw = self.box_net(q)
        cx = torch.sigmoid(raw[..., 0])
        cy = torch.sigmoid(raw[..., 1])
        # width/height squashed into what fits around the center, so corner
        # boxes land in [0, 1] by construction
        bw = torch.sigmoid(raw[..., 2]) * 2.0 * torch.minimum(cx, 1.0 - cx)
        bh = torch.sigmoid(raw[..., 3]) * 2.0 * torch.minimum(cy, 1.0 - cy)
        boxes = torch.stack([cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2], dim=-1)
        scores = torch.sigmoid(self.score_net(q)[..., 0])
        return boxes, scores


class Perceiver(nn.Module):
    def __init__(self, cfg: PerceiverConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.projector = Projector(cfg)
        self.seg_head = SegHead(cfg)
        self.det_head = DetHead(cfg)
        self.box_queries = nn.Parameter(torch.randn(cfg.num_queries, cfg.channels) * 0.02)
        self.double()

    # -- operations ----------------------------------------------------------

    def encode_image(self, img) -> torch.Tensor:
        t = torch.as_tensor(np.asarray(img), dtype=torch.float64)
        r = self.cfg.resolution
        if t.shape != (r, r):
            raise ShapeError(f"image {tuple(t.shape)}, expected ({r}, {r})")
        if not torch.isfinite(t).all():
            raise ShapeError("image contains non-finite values")
        return self.encoder(t[None])[0]

    def encode_batch(self, imgs) -> torch.Tensor:
        t = torch.as_tensor(np.asarray(imgs), dtype=torch.float64)
        r = self.cfg.resolution
        if t.ndim != 3 or t.shape[1:] != (r, r):
            raise ShapeError(f"batch {tuple(t.shape)}, expected (B, {r}, {r})")
        return self.encoder(t)

    def project_embedding(self, hidden) -> torch.Tensor:
        t = torch.as_tensor(np.asarray(hidden) if not isinstance(hidden, torch.Tensor) else hidden,
                            dtype=torch.float64)
        if t.shape != (self.cfg.reasoner_dim,):
            raise ShapeError(f"hidden {tuple(t.shape)}, expected ({self.cfg.reasoner_dim},)")
        return self.projector(t)

    def _check_dims(self, z, e):
        g, c = self.cfg.grid, self.cfg.channels
        if z.shape != (g, g, c):
            raise ShapeError(f"feature map {tuple(z.shape)}, expected ({g}, {g}, {c})")
        if e.shape != (c,):
            raise ShapeError(f"prompt embedding {tuple(e.shape)}, expected ({c},)")

    def segment(self, z: torch.Tensor, e: torch.Tensor) -> MaskPrediction:
        self._check_dims(z, e)
        logits = self.seg_head(z[None], e[None])[0]
        return MaskPrediction(torch.sigmoid(logits))

    def segment_logits(self, z: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        self._check_dims(z, e)
        return self.seg_head(z[None], e[None])[0]

    def segment_probs_batch(self, z: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.seg_head(z, e))

    def detect(self, z: torch.Tensor, e: torch.Tensor, queries: torch.Tensor | None = None) -> DetectionOutput:
        self._check_dims(z, e)
        queries = self.box_queries if queries is None else queries
        if queries.shape[-1] != self.cfg.channels:
            raise ShapeError("box query dim mismatch")
        boxes, scores = self.det_head(z[None], e[None], queries)
        return DetectionOutput(boxes[0], scores[0])

    def detect_batch(self, z: torch.Tensor, e: torch.Tensor):
        return self.det_head(z, e, self.box_queries)
