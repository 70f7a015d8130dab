"""Bipartite query-to-segment matching and deep-supervised segmentation losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

from .data import IGNORE_INDEX


@dataclass
class Target:
    """Ground-truth segments of one image: one binary mask per present class."""

    classes: torch.Tensor  # (T,) long
    masks: torch.Tensor  # (T, H, W) float in {0, 1}
    valid: torch.Tensor  # (H, W) bool, False on ignore pixels

    def resized(self, size: tuple[int, int]) -> "Target":
        """Area-downsampled soft masks; a pixel is valid if any source pixel was."""
        if tuple(self.valid.shape) == tuple(size):
            return self
        masks = F.adaptive_avg_pool2d(self.masks[None], size)[0] if len(self.classes) else self.masks.new_zeros(0, *size)
        valid = F.adaptive_max_pool2d(self.valid[None, None].float(), size)[0, 0] > 0
        return Target(self.classes, masks, valid)


def targets_from_label(label: torch.Tensor, n_classes: int, ignore_index: int = IGNORE_INDEX) -> Target:
    valid = label != ignore_index
    present = [c for c in torch.unique(label[valid]).tolist() if 0 <= c < n_classes]
    classes = torch.tensor(present, dtype=torch.long)
    masks = torch.stack([(label == c) for c in present]).float() if present else torch.zeros(0, *label.shape)
    return Target(classes, masks, valid)


def linear_assignment(cost: np.ndarray | torch.Tensor) -> list[tuple[int, int]]:
    """Minimum-cost matching of rows (queries) to columns (targets).

    Returns ``(query, target)`` pairs sorted by target index.
    """
    cost = np.asarray(cost.detach().cpu() if isinstance(cost, torch.Tensor) else cost, dtype=np.float64)
    n_queries, n_targets = cost.shape
    if n_targets > n_queries:
        raise ValueError(f"{n_targets} targets cannot be matched to {n_queries} queries")
    if not np.isfinite(cost).all():
        # keep matching well defined; the non-finite loss is reported downstream
        cost = np.nan_to_num(cost, nan=1e12, posinf=1e12, neginf=-1e12)
    rows, cols = linear_sum_assignment(cost)
    return sorted(zip(rows.tolist(), cols.tolist()), key=lambda rc: rc[1])


def matching_cost(
    class_logits: torch.Tensor,
    mask_logits: torch.Tensor,
    target: Target,
    weights: tuple[float, float, float] = (2.0, 5.0, 5.0),
) -> torch.Tensor:
    """(N, T) matching cost: class probability, pixel-mean BCE and Dice.

    ``mask_logits`` must already be at the label resolution.
    """
    w_cls, w_bce, w_dice = weights
    prob = class_logits.softmax(-1)
    cost_cls = -prob[:, target.classes]
    valid = target.valid.flatten()
    x = mask_logits.flatten(1)[:, valid]
    t = target.masks.flatten(1)[:, valid].to(x.dtype)
    n_pix = max(int(valid.sum()), 1)
    pos = F.binary_cross_entropy_with_logits(x, torch.ones_like(x), reduction="none")
    neg = F.binary_cross_entropy_with_logits(x, torch.zeros_like(x), reduction="none")
    cost_bce = (pos @ t.T + neg @ (1 - t).T) / n_pix
    sig = x.sigmoid()
    cost_dice = 1 - (2 * sig @ t.T + 1) / (sig.sum(-1)[:, None] + t.sum(-1)[None, :] + 1)
    return w_cls * cost_cls + w_bce * cost_bce + w_dice * cost_dice


@torch.no_grad()
def hungarian_match(
    class_logits: torch.Tensor,
    mask_logits: torch.Tensor,
    target: Target,
    weights: tuple[float, float, float] = (2.0, 5.0, 5.0),
) -> list[tuple[int, int]]:
    """Assignment for one image and one decoder layer; unmatched queries are no-object."""
    if len(target.classes) > class_logits.shape[0]:
        raise ValueError(f"{len(target.classes)} targets cannot be matched to {class_logits.shape[0]} queries")
    if len(target.classes) == 0:
        return []
    return linear_assignment(matching_cost(class_logits, mask_logits, target, weights))


def dice_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean over masks of ``1 - (2 |p t| + 1) / (|p| + |t| + 1)``; inputs (M, P)."""
    p = logits.sigmoid()
    num = 2 * (p * targets).sum(-1) + 1
    den = p.sum(-1) + targets.sum(-1) + 1
    return (1 - num / den).mean()


def sigmoid_bce_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, targets, reduction="none").mean(-1).mean()


def upsample_masks(mask_logits: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    if tuple(mask_logits.shape[-2:]) == tuple(size):
        return mask_logits
    return F.interpolate(mask_logits, size=size, mode="bilinear", align_corners=False)


def segmentation_losses(
    class_logits: list[torch.Tensor],
    mask_logits: list[torch.Tensor],
    targets: list[Target],
    assignments: list[list[list[tuple[int, int]]]] | None = None,
    weights: tuple[float, float, float] = (2.0, 5.0, 5.0),
    no_object_weight: float = 0.1,
) -> dict[str, torch.Tensor]:
    """Sum over decoder layers of weighted CE, BCE and Dice.

    Matching runs at the mask-logit resolution against area-downsampled
    targets; BCE and Dice are computed on the matched masks upsampled to the
    label resolution.

    Parameters
    ----------
    class_logits, mask_logits : list over layers
        (B, N, C + 1) and (B, N, h, w) per layer.
    targets : list over images
    assignments : list over layers of list over images, optional
        Computed with :func:`hungarian_match` when omitted.

    Returns
    -------
    dict with ``L_cls``, ``L_seg`` and ``total``.
    """
    n_classes = class_logits[0].shape[-1] - 1
    size = tuple(targets[0].valid.shape)
    class_weight = torch.ones(n_classes + 1, dtype=class_logits[0].dtype)
    class_weight[-1] = no_object_weight
    w_cls, w_bce, w_dice = weights
    if assignments is None:
        low = [t.resized(tuple(mask_logits[0].shape[-2:])) for t in targets]
    all_valid = all(bool(t.valid.all()) for t in targets)
    l_cls = class_logits[0].new_zeros(())
    l_seg = class_logits[0].new_zeros(())
    for layer, (cls, msk) in enumerate(zip(class_logits, mask_logits)):
        if assignments is None:
            layer_assign = [hungarian_match(cls[b], msk[b], t, weights) for b, t in enumerate(low)]
        else:
            layer_assign = assignments[layer]
        b_idx = [b for b, pairs in enumerate(layer_assign) for _ in pairs]
        q_idx = [q for pairs in layer_assign for q, _ in pairs]
        target_classes = torch.full(cls.shape[:2], n_classes, dtype=torch.long)
        if b_idx:
            target_classes[b_idx, q_idx] = torch.cat(
                [targets[b].classes[[j for _, j in pairs]] for b, pairs in enumerate(layer_assign) if pairs]
            )
        l_cls = l_cls + w_cls * F.cross_entropy(cls.flatten(0, 1), target_classes.flatten(), weight=class_weight)
        if not b_idx:
            continue
        p = upsample_masks(msk[b_idx, q_idx][None], size)[0].flatten(1)
        t = torch.cat([targets[b].masks[[j for _, j in pairs]] for b, pairs in enumerate(layer_assign) if pairs])
        t = t.flatten(1).to(cls.dtype)
        if all_valid:
            bce, dice = sigmoid_bce_loss(p, t), dice_loss(p, t)
        else:
            v = torch.stack([targets[b].valid.flatten() for b in b_idx])
            bce = torch.stack([sigmoid_bce_loss(pi[vi][None], ti[vi][None]) for pi, ti, vi in zip(p, t, v)]).mean()
            dice = torch.stack([dice_loss(pi[vi][None], ti[vi][None]) for pi, ti, vi in zip(p, t, v)]).mean()
        l_seg = l_seg + w_bce * bce + w_dice * dice
    return {"L_cls": l_cls, "L_seg": l_seg, "total": l_cls + l_seg}
