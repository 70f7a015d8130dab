"""Style synergy optimisation: a learnable domain bank, the style contrastive
and style aggregation losses, and the cross-weighting rule that scales each
loss by the other's recent trend."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .prompts import NULL_CONDITION, TextEncoder


def condition_prompt(condition: str) -> str:
    """Text encoded to seed a bank row; the null condition maps to "a photo"."""
    return f"a photo {condition}" if condition != NULL_CONDITION else "a photo"


class DomainBank(nn.Module):
    def __init__(self, vectors: torch.Tensor, condition_names: Sequence[str]):
        super().__init__()
        if vectors.shape[0] != len(condition_names):
            raise ValueError("one bank row per condition is required")
        if not torch.isfinite(vectors).all():
            raise ValueError("bank vectors must be finite")
        self.vectors = nn.Parameter(vectors.clone())
        self.condition_names = list(condition_names)

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @torch.no_grad()
    def renormalize_(self) -> None:
        self.vectors.copy_(F.normalize(self.vectors, dim=-1))


def init_domain_bank(
    conditions: Sequence[str],
    encoder: TextEncoder,
    projector: Callable[[torch.Tensor], torch.Tensor] | None = None,
) -> DomainBank:
    """Bank rows from the encoded conditional prompts, projected and normalised.

    ``projector`` maps (K, D_emb) to (K, D_style); the identity is used when
    it is omitted.
    """
    if len(conditions) < 2:
        raise ValueError("the domain bank needs at least two conditions")
    if len(set(conditions)) != len(conditions):
        raise ValueError(f"duplicate conditions in {list(conditions)}")
    emb = torch.as_tensor(np.stack([encoder.encode(condition_prompt(c)) for c in conditions]), dtype=torch.float32)
    with torch.no_grad():
        if projector is not None:
            emb = projector(emb)
        emb = F.normalize(emb, dim=-1)
    return DomainBank(emb, conditions)


class StyleProjector(nn.Module):
    """Per-layer linear heads from pooled feature width D_l to D_style."""

    def __init__(self, layer_channels: Mapping[int, int], style_dim: int = 64):
        super().__init__()
        self.heads = nn.ModuleDict({str(layer): nn.Linear(ch, style_dim) for layer, ch in layer_channels.items()})

    def forward(self, pooled: torch.Tensor, layer: int) -> torch.Tensor:
        return self.heads[str(layer)](pooled)


class SpecificStyleHead(nn.Module):
    """Projects specific-domain text embeddings into each styled layer's feature space."""

    def __init__(self, emb_dim: int, layer_channels: Mapping[int, int]):
        super().__init__()
        self.convs = nn.ModuleDict({str(layer): nn.Conv2d(emb_dim, ch, 1) for layer, ch in layer_channels.items()})

    def forward(self, specific: torch.Tensor, layer: int, size: tuple[int, int]) -> torch.Tensor:
        """(B, H, W, D_emb) -> (B, D_l, *size)."""
        x = specific.permute(0, 3, 1, 2)
        if tuple(x.shape[-2:]) != tuple(size):
            x = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
        return self.convs[str(layer)](x)


def style_contrastive_loss(
    styled: Mapping[int, torch.Tensor],
    bank: DomainBank | torch.Tensor,
    positive_index: torch.Tensor | int,
    tau: float = 0.07,
    projector: StyleProjector | None = None,
) -> torch.Tensor:
    """Layer-averaged InfoNCE between pooled styled features and the bank.

    Parameters
    ----------
    styled : mapping layer -> tensor
        Styled features, (B, D_l, H, W) or already pooled (B, D_l).
    bank : DomainBank or tensor (K, D_style)
        Row ``positive_index`` is the positive, every other row a negative.
    positive_index : int or tensor (B,)
        Condition index per image.
    tau : float
        Temperature.
    projector : StyleProjector, optional
        Maps pooled features into the bank space; identity when omitted.
    """
    vectors = bank.vectors if isinstance(bank, DomainBank) else bank
    k = vectors.shape[0]
    if k < 2:
        raise ValueError("style contrastive loss needs at least one negative (K >= 2)")
    if not styled:
        raise ValueError("at least one styled layer is required")
    losses = []
    for layer, v in styled.items():
        pooled = v.mean(dim=(-2, -1)) if v.dim() == 4 else v
        if projector is not None:
            pooled = projector(pooled, layer)
        pooled = F.normalize(pooled, dim=-1)
        logits = pooled @ vectors.to(pooled.dtype).T / tau
        target = torch.as_tensor(positive_index, device=logits.device).reshape(-1).expand(logits.shape[0])
        losses.append(F.cross_entropy(logits, target))
    return torch.stack(losses).mean()


def style_aggregation_loss(
    styled: Mapping[int, torch.Tensor],
    specific_style: Mapping[int, torch.Tensor],
    layer_weights: Mapping[int, float] | Sequence[float],
) -> torch.Tensor:
    """Weighted mean squared distance between normalised V and F_s.

    Both inputs are (B, D_l, H, W) per layer and are normalised along the
    channel axis; the per-layer pixel mean is weighted and averaged over
    layers.
    """
    layers = list(styled)
    if not isinstance(layer_weights, Mapping):
        if len(layer_weights) != len(layers):
            raise ValueError("need one weight per styled layer")
        layer_weights = dict(zip(layers, layer_weights))
    terms = []
    for layer in layers:
        v, f_s = styled[layer], specific_style[layer]
        if v.shape != f_s.shape:
            raise ValueError(f"layer {layer}: V {tuple(v.shape)} and F_s {tuple(f_s.shape)} are misaligned")
        dist = (F.normalize(v, dim=1) - F.normalize(f_s, dim=1)).pow(2).sum(dim=1)
        terms.append(layer_weights[layer] * dist.mean())
    return torch.stack(terms).sum() / len(layers)


def synergy_weight(
    delta_loss: float,
    w_init: float = 1.0,
    lam: float = 0.3,
    w_min: float = 0.1,
    w_max: float = 2.0,
) -> float:
    """Shrink the weight when the loss rose, grow it when it fell; then clamp."""
    if delta_loss > 0:
        w = w_init * (1 - lam * delta_loss)
    else:
        w = w_init * (1 + lam * abs(delta_loss))
    return float(min(max(w, w_min), w_max))


@dataclass(frozen=True)
class SynergyState:
    """Running loss levels used to compute the synergy weights.

    ``prev_sc``/``prev_sa`` are exponential moving averages of the raw losses
    (``ema_decay=0`` keeps just the previous step). ``None`` means no step
    has been seen yet.
    """

    prev_sc: float | None = None
    prev_sa: float | None = None
    w_init: float = 1.0
    lam: float = 0.3
    w_min: float = 0.1
    w_max: float = 2.0
    ema_decay: float = 0.9
    w_sc: float = 1.0
    w_sa: float = 1.0

    def __post_init__(self):
        if not self.w_min <= self.w_init <= self.w_max:
            raise ValueError(f"need w_min <= w_init <= w_max, got {self.w_min}, {self.w_init}, {self.w_max}")
        if not 0 <= self.ema_decay < 1:
            raise ValueError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")

    def _ema(self, prev: float | None, value: float) -> float:
        return value if prev is None else self.ema_decay * prev + (1 - self.ema_decay) * value


def total_style_loss(
    l_sc: torch.Tensor, l_sa: torch.Tensor, state: SynergyState
) -> tuple[torch.Tensor, SynergyState]:
    """``L_s = w_sa * L_sc + w_sc * L_sa`` with stop-gradient weights.

    ``w_sc`` is driven by the change of ``L_sc`` and scales ``L_sa``, and
    vice versa.
    """
    raw_sc, raw_sa = float(l_sc.detach()), float(l_sa.detach())
    d_sc = 0.0 if state.prev_sc is None else raw_sc - state.prev_sc
    d_sa = 0.0 if state.prev_sa is None else raw_sa - state.prev_sa
    kw = dict(w_init=state.w_init, lam=state.lam, w_min=state.w_min, w_max=state.w_max)
    w_sc = synergy_weight(d_sc, **kw)
    w_sa = synergy_weight(d_sa, **kw)
    l_s = w_sa * l_sc + w_sc * l_sa
    new_state = dataclasses.replace(
        state,
        prev_sc=state._ema(state.prev_sc, raw_sc),
        prev_sa=state._ema(state.prev_sa, raw_sa),
        w_sc=w_sc,
        w_sa=w_sa,
    )
    return l_s, new_state
