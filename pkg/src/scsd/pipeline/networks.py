"""Backbone, pixel decoder and query-based mask decoder."""

from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

SCALES = (2, 3, 4, 5)


class StubBackbone(nn.Module):
    """Frozen, randomly initialised conv stack emitting strides 4, 8, 16, 32.

    Weights are drawn from a private generator seeded with ``seed``, so the
    features do not depend on the global RNG state. Any module returning the
    same ``{2: F2, ..., 5: F5}`` dictionary can replace it.
    """

    def __init__(self, channels: Sequence[int] = (32, 64, 128, 256), seed: int = 0):
        super().__init__()
        if len(channels) != 4:
            raise ValueError("backbone needs exactly four stage widths")
        self.channels = tuple(channels)
        stem = channels[0] // 2
        self.stem = nn.Conv2d(3, stem, 3, stride=2, padding=1)
        stages, c_in = [], stem
        # The stem and a max-pool bring the input to stride 4; stage 0 keeps it.
        for i, c in enumerate(channels):
            stages.append(
                nn.Sequential(
                    nn.Conv2d(c_in, c, 3, stride=1 if i == 0 else 2, padding=1),
                    nn.ReLU(),
                    nn.Conv2d(c, c, 3, padding=1),
                    nn.ReLU(),
                )
            )
            c_in = c
        self.stages = nn.ModuleList(stages)
        gen = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                with torch.no_grad():
                    m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * math.sqrt(2.0 / fan_in))
                    m.bias.zero_()
        self.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # Frozen: always in eval mode.
        return super().train(False)

    @torch.no_grad()
    def forward(self, image: torch.Tensor) -> dict[int, torch.Tensor]:
        x = F.relu(self.stem((image - 0.5) / 0.25))
        x = F.max_pool2d(x, 2)
        feats = {}
        for scale, stage in zip(SCALES, self.stages):
            x = stage(x)
            feats[scale] = x
        return feats


def stub_backbone(image: torch.Tensor, backbone: StubBackbone) -> dict[int, torch.Tensor]:
    if image.dim() == 3:
        return {k: v[0] for k, v in backbone(image.unsqueeze(0)).items()}
    return backbone(image)


class PixelDecoder(nn.Module):
    """FPN-style: lateral 1x1 projections summed top-down.

    Returns the fused maps at strides 8/16/32 (decoder memory) and the
    per-pixel embeddings at stride 4.
    """

    def __init__(self, channels: Sequence[int], d_model: int):
        super().__init__()
        self.lateral = nn.ModuleDict({str(s): nn.Conv2d(c, d_model, 1) for s, c in zip(SCALES, channels)})
        self.output = nn.ModuleDict(
            {
                str(s): nn.Sequential(nn.Conv2d(d_model, d_model, 3, padding=1), nn.GroupNorm(8, d_model), nn.ReLU())
                for s in SCALES
            }
        )
        self.mask_proj = nn.Conv2d(d_model, d_model, 1)

    def forward(self, feats: dict[int, torch.Tensor]) -> tuple[dict[int, torch.Tensor], torch.Tensor]:
        out: dict[int, torch.Tensor] = {}
        prev = None
        for s in reversed(SCALES):
            x = self.lateral[str(s)](feats[s])
            if prev is not None:
                x = x + F.interpolate(prev, size=x.shape[-2:], mode="nearest")
            prev = self.output[str(s)](x)
            out[s] = prev
        mask_features = self.mask_proj(out.pop(2))
        return out, mask_features


def sine_position(h: int, w: int, dim: int, device=None, dtype=torch.float32) -> torch.Tensor:
    """2-D sine/cosine positional encoding, (h * w, dim)."""
    n = dim // 4
    freq = 1.0 / (10000 ** (torch.arange(n, device=device, dtype=dtype) / n))
    ys = (torch.arange(h, device=device, dtype=dtype) + 0.5) / h * 2 * math.pi
    xs = (torch.arange(w, device=device, dtype=dtype) + 0.5) / w * 2 * math.pi
    py = ys[:, None] * freq[None]
    px = xs[:, None] * freq[None]
    pos = torch.cat(
        [
            py.sin()[:, None].expand(h, w, n),
            py.cos()[:, None].expand(h, w, n),
            px.sin()[None].expand(h, w, n),
            px.cos()[None].expand(h, w, n),
        ],
        dim=-1,
    )
    return pos.reshape(h * w, -1)


class DecoderLayer(nn.Module):
    def __init__(self, d_model: int, num_heads: int, ffn_dim: int):
        super().__init__()
        self.cross = nn.MultiheadAttention(d_model, num_heads, batch_first=True)
        self.self_attn = nn.MultiheadAttention(d_model, num_heads, batch_first=True)
        self.ffn = nn.Sequential(nn.Linear(d_model, ffn_dim), nn.ReLU(), nn.Linear(ffn_dim, d_model))
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.norm3 = nn.LayerNorm(d_model)

    def forward(self, q, q_pos, memory, mem_pos):
        q = self.norm1(q + self.cross(q + q_pos, memory + mem_pos, memory, need_weights=False)[0])
        qk = q + q_pos
        q = self.norm2(q + self.self_attn(qk, qk, q, need_weights=False)[0])
        return self.norm3(q + self.ffn(q))


class MaskDecoder(nn.Module):
    """Transformer decoder emitting class and mask predictions after every layer.

    Layer ``i`` cross-attends to scale ``order[i % len(order)]``, coarse to
    fine, so six layers visit strides 32, 16, 8 twice.
    """

    def __init__(
        self,
        d_model: int,
        n_classes: int,
        num_layers: int = 6,
        num_heads: int = 4,
        ffn_dim: int | None = None,
        order: Sequence[int] = (5, 4, 3),
    ):
        super().__init__()
        self.order = tuple(order)
        self.layers = nn.ModuleList(DecoderLayer(d_model, num_heads, ffn_dim or 2 * d_model) for _ in range(num_layers))
        self.level_embed = nn.Parameter(torch.zeros(len(self.order), d_model))
        self.out_norm = nn.LayerNorm(d_model)
        self.class_head = nn.Linear(d_model, n_classes + 1)
        self.mask_head = nn.Sequential(
            nn.Linear(d_model, d_model), nn.ReLU(), nn.Linear(d_model, d_model), nn.ReLU(), nn.Linear(d_model, d_model)
        )

    def predict(self, q: torch.Tensor, pixel_embeddings: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x = self.out_norm(q)
        class_logits = self.class_head(x)
        mask_logits = torch.einsum("bnd,bdhw->bnhw", self.mask_head(x), pixel_embeddings)
        return class_logits, mask_logits

    def forward(
        self,
        queries: torch.Tensor,
        query_pos: torch.Tensor,
        features: dict[int, torch.Tensor],
        pixel_embeddings: torch.Tensor,
    ) -> dict[str, list[torch.Tensor]]:
        b = pixel_embeddings.shape[0]
        if queries.dim() == 2:
            queries = queries.unsqueeze(0).expand(b, -1, -1)
        q_pos = query_pos.unsqueeze(0).expand(b, -1, -1)
        memories = []
        for i, s in enumerate(self.order):
            f = features[s]
            h, w = f.shape[-2:]
            mem = f.flatten(2).transpose(1, 2) + self.level_embed[i]
            memories.append((mem, sine_position(h, w, f.shape[1], f.device, f.dtype).unsqueeze(0)))
        class_out, mask_out = [], []
        q = queries
        for i, layer in enumerate(self.layers):
            mem, pos = memories[i % len(memories)]
            q = layer(q, q_pos, mem, pos)
            cls, msk = self.predict(q, pixel_embeddings)
            class_out.append(cls)
            mask_out.append(msk)
        return {"class_logits": class_out, "mask_logits": mask_out}
