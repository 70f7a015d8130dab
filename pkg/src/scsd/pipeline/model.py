"""End-to-end segmentation model with optional SQB, TDST and SSO."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from ..prompts import DEFAULT_CONDITIONS, DEFAULT_TEMPLATES, DomainEmbeddingCache, StubTextEncoder
from ..sqb import SemanticQueryBooster
from ..sso import DomainBank, SpecificStyleHead, StyleProjector, init_domain_bank, style_aggregation_loss, style_contrastive_loss
from ..tdst import StyleControl, TDSTConfig, TextDrivenStyleTransform
from .data import CLASS_NAMES, IGNORE_INDEX
from .networks import MaskDecoder, PixelDecoder, StubBackbone


@dataclass
class ModelConfig:
    class_names: Sequence[str] = CLASS_NAMES
    conditions: Sequence[str] = DEFAULT_CONDITIONS
    templates: Sequence[str] = DEFAULT_TEMPLATES
    n_queries: int = 20
    d_model: int = 128
    d_emb: int = 64
    d_style: int = 64
    channels: Sequence[int] = (32, 64, 128, 256)
    num_heads: int = 4
    decoder_layers: int = 6
    alpha: float = 0.15
    betas: Sequence[float] = (1.0, 2.0, 4.0)
    styled_layers: Sequence[int] = (3, 4, 5)
    layer_weights: Sequence[float] = (0.2, 0.5, 1.0)
    tau: float = 0.07
    tdst_strategy: str = "lowfreq"
    tdst_tanh: bool = True
    sqb_on: bool = True
    tdst_on: bool = True
    sso_on: bool = True
    backbone_seed: int = 0
    text_seed: int = 0
    ignore_index: int = IGNORE_INDEX

    def __post_init__(self):
        for name in ("class_names", "conditions", "templates", "channels", "betas", "styled_layers", "layer_weights"):
            setattr(self, name, list(getattr(self, name)))
        if len(self.layer_weights) != len(self.styled_layers):
            raise ValueError("layer_weights needs one entry per styled layer")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def to_dict(self) -> dict:
        return asdict(self)


class SCSDModel(nn.Module):
    """Frozen backbone, pixel decoder and mask decoder, with the three
    text-driven components switchable through ``config``.

    Style transform and style losses run only in training mode and only when
    ``labels`` and ``conditions`` are supplied.
    """

    def __init__(self, config: ModelConfig | None = None, encoder=None):
        super().__init__()
        cfg = self.config = config or ModelConfig()
        encoder = encoder or StubTextEncoder(cfg.d_emb, cfg.text_seed)
        if encoder.dim != cfg.d_emb:
            raise ValueError(f"encoder width {encoder.dim} != d_emb {cfg.d_emb}")
        cache = DomainEmbeddingCache(cfg.class_names, cfg.conditions, cfg.templates, encoder)
        self.register_buffer("text_general", torch.as_tensor(cache.general, dtype=torch.float32))
        self.register_buffer("text_specific", torch.as_tensor(cache.specific, dtype=torch.float32))

        channels = dict(zip((2, 3, 4, 5), cfg.channels))
        styled = {layer: channels[layer] for layer in cfg.styled_layers}
        self.backbone = StubBackbone(cfg.channels, cfg.backbone_seed)
        self.pixel_decoder = PixelDecoder(cfg.channels, cfg.d_model)
        self.queries = nn.Parameter(torch.randn(cfg.n_queries, cfg.d_model) * 0.02)
        self.query_pos = nn.Parameter(torch.randn(cfg.n_queries, cfg.d_model) * 0.02)
        self.decoder = MaskDecoder(cfg.d_model, cfg.n_classes, cfg.decoder_layers, cfg.num_heads)
        self.sqb = (
            SemanticQueryBooster(channels[5], cfg.d_emb, cfg.n_classes, cfg.d_model, cfg.num_heads) if cfg.sqb_on else None
        )
        control = StyleControl(cfg.alpha, cfg.betas, cfg.styled_layers)
        self.tdst = (
            TextDrivenStyleTransform(cfg.d_emb, channels, TDSTConfig(control, cfg.tdst_strategy, cfg.tdst_tanh))
            if cfg.tdst_on
            else None
        )
        if cfg.sso_on:
            self.style_projector = StyleProjector(styled, cfg.d_style)
            proj = None
            if cfg.d_style != cfg.d_emb:
                gen = torch.Generator().manual_seed(cfg.text_seed)
                w = torch.randn(cfg.d_emb, cfg.d_style, generator=gen) / np.sqrt(cfg.d_emb)
                proj = lambda e: e @ w  # noqa: E731
            self.bank: DomainBank | None = init_domain_bank(cfg.conditions, encoder, proj)
            self.specific_head = SpecificStyleHead(cfg.d_emb, styled)
        else:
            self.style_projector = None
            self.bank = None
            self.specific_head = None

    @property
    def n_conditions(self) -> int:
        return len(self.config.conditions)

    def domain_embeddings(self, labels: torch.Tensor, conditions: torch.Tensor):
        """Per-pixel (specific, general) text embeddings, (B, H, W, D_emb) each."""
        valid = labels != self.config.ignore_index
        lab = torch.where(valid, labels, torch.zeros_like(labels)).long()
        general = self.text_general[lab]
        specific = self.text_specific[conditions.long()[:, None, None], lab]
        v = valid[..., None].to(general.dtype)
        return specific * v, general * v

    def forward(
        self,
        images: torch.Tensor,
        labels: torch.Tensor | None = None,
        conditions: torch.Tensor | None = None,
    ) -> dict:
        feats = self.backbone(images)
        out: dict = {}
        styling = self.training and labels is not None and conditions is not None
        if styling:
            specific, general = self.domain_embeddings(labels, conditions)
            out["specific"] = specific
            if self.tdst is not None:
                feats = self.tdst(feats, specific - general)
            out["styled"] = {layer: feats[layer] for layer in self.config.styled_layers}
        memory, pixel_emb = self.pixel_decoder(feats)
        queries = self.queries
        if self.sqb is not None:
            boosted = self.sqb(queries, feats[5], self.text_general)
            queries = boosted["queries"]
            out["similarity"] = boosted["similarity"]
        out.update(self.decoder(queries, self.query_pos, memory, pixel_emb))
        return out

    def style_losses(self, out: dict, conditions: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(L_sc, L_sa) from a training-mode forward output."""
        if self.bank is None:
            raise RuntimeError("style losses need sso_on=True")
        styled = out["styled"]
        l_sc = style_contrastive_loss(styled, self.bank, conditions, self.config.tau, self.style_projector)
        f_s = {
            layer: self.specific_head(out["specific"], layer, tuple(v.shape[-2:])) for layer, v in styled.items()
        }
        l_sa = style_aggregation_loss(styled, f_s, dict(zip(self.config.styled_layers, self.config.layer_weights)))
        return l_sc, l_sa

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]
