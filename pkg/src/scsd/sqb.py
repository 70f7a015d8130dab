"""Semantic query boosting: text-image similarity, argmax aggregation over
class embeddings, and two-stage cross-attention that turns learnable object
queries into semantic queries."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class AttentionPool(nn.Module):
    """Scale-preserving attention pooling of the coarsest feature map.

    Every spatial token attends to every other token; the result is
    projected to the text-embedding width and L2-normalised per location.
    """

    def __init__(self, in_dim: int, emb_dim: int, num_heads: int = 4):
        super().__init__()
        self.attn = nn.MultiheadAttention(in_dim, num_heads, batch_first=True)
        self.proj = nn.Linear(in_dim, emb_dim)

    def forward(self, f5: torch.Tensor) -> torch.Tensor:
        """(B, D, H', W') -> (B, H', W', D_emb)."""
        if not torch.isfinite(f5).all():
            raise ValueError("attention_pool received non-finite features")
        b, d, h, w = f5.shape
        tokens = f5.flatten(2).transpose(1, 2)
        pooled, _ = self.attn(tokens, tokens, tokens, need_weights=False)
        out = F.normalize(self.proj(pooled), dim=-1)
        return out.reshape(b, h, w, -1)


def attention_pool(f5: torch.Tensor, module: AttentionPool) -> torch.Tensor:
    """Functional form accepting a single (D, H', W') map or a batch."""
    if f5.dim() == 3:
        return module(f5.unsqueeze(0))[0]
    return module(f5)


def similarity_map(f_v: torch.Tensor, e_t: torch.Tensor) -> torch.Tensor:
    """Cosine map ``S[..., h, w, c] = <F_v[..., h, w], E_t[c]>``."""
    if f_v.shape[-1] != e_t.shape[-1]:
        raise ValueError(
            f"embedding width mismatch: features {f_v.shape[-1]} vs text {e_t.shape[-1]}"
        )
    return torch.einsum("...d,cd->...c", f_v, e_t.to(f_v.dtype))


def aggregate_semantics(s: torch.Tensor, e_t: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-pixel argmax class index and the gathered class embedding.

    Ties go to the lowest class index.
    """
    if s.shape[-1] != e_t.shape[0]:
        raise ValueError(f"S has {s.shape[-1]} channels but E_t has {e_t.shape[0]} rows")
    # torch.argmax returns the first maximal index.
    indices = torch.argmax(s, dim=-1)
    return indices, e_t[indices]


class _MLP(nn.Module):
    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class SemanticQueryBooster(nn.Module):
    """Boost object queries with a similarity map and a semantic aggregation map.

    Parameters
    ----------
    feat_dim : int
        Channel count of the coarsest backbone scale.
    emb_dim : int
        Text-embedding width.
    n_classes : int
        Number of classes (channels of the similarity map).
    d_model : int
        Query width.
    num_heads : int
        Heads for both the pooling and the cross-attention blocks.
    """

    def __init__(self, feat_dim: int, emb_dim: int, n_classes: int, d_model: int, num_heads: int = 4):
        super().__init__()
        self.pool = AttentionPool(feat_dim, emb_dim, num_heads)
        self.sim_mlp = _MLP(n_classes, d_model, d_model)
        self.agg_mlp = _MLP(emb_dim, d_model, d_model)
        self.sim_attn = nn.MultiheadAttention(d_model, num_heads, batch_first=True)
        self.agg_attn = nn.MultiheadAttention(d_model, num_heads, batch_first=True)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)

    def boost(self, q: torch.Tensor, s: torch.Tensor, s_a: torch.Tensor) -> torch.Tensor:
        """Cross-attend ``q`` (B, N, D_q) to projected S, then to projected S_a."""
        if s.shape[:-1] != s_a.shape[:-1]:
            raise ValueError("S and S_a must be spatially aligned")
        b = s.shape[0]
        if q.dim() == 2:
            q = q.unsqueeze(0).expand(b, -1, -1)
        sim_tokens = self.sim_mlp(s.flatten(1, 2))
        agg_tokens = self.agg_mlp(s_a.flatten(1, 2))
        q = self.norm1(q + self.sim_attn(q, sim_tokens, sim_tokens, need_weights=False)[0])
        q = self.norm2(q + self.agg_attn(q, agg_tokens, agg_tokens, need_weights=False)[0])
        return q

    def forward(self, q: torch.Tensor, f5: torch.Tensor, e_t: torch.Tensor) -> dict[str, torch.Tensor]:
        f_v = self.pool(f5)
        s = similarity_map(f_v, e_t)
        g, s_a = aggregate_semantics(s, e_t.to(s.dtype))
        return {"queries": self.boost(q, s, s_a), "similarity": s, "indices": g}


def boost_queries(
    q: torch.Tensor, s: torch.Tensor, s_a: torch.Tensor, module: SemanticQueryBooster
) -> torch.Tensor:
    """Functional form: unbatched S (H', W', C) / S_a (H', W', D_emb) are promoted."""
    unbatched = s.dim() == 3
    if unbatched:
        s, s_a = s.unsqueeze(0), s_a.unsqueeze(0)
    out = module.boost(q, s, s_a)
    return out[0] if unbatched else out
