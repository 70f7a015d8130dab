"""One optimisation step of the full objective ``L_cls + L_seg + L_s``."""

from __future__ import annotations

import math

import torch

from ..sso import SynergyState, total_style_loss
from .losses import segmentation_losses, targets_from_label
from .model import SCSDModel


class NonFiniteLossError(RuntimeError):
    pass


def sample_conditions(n: int, k: int, generator: torch.Generator) -> torch.Tensor:
    return torch.randint(k, (n,), generator=generator)


def compute_loss(
    model: SCSDModel,
    images: torch.Tensor,
    labels: torch.Tensor,
    conditions: torch.Tensor,
    sso_state: SynergyState | None = None,
) -> tuple[torch.Tensor, dict[str, float], SynergyState | None]:
    """Forward pass and total loss; ``sso_state`` is advanced when SSO is on."""
    out = model(images, labels, conditions)
    targets = [targets_from_label(y, model.config.n_classes, model.config.ignore_index) for y in labels]
    seg = segmentation_losses(out["class_logits"], out["mask_logits"], targets)
    loss = seg["total"]
    metrics = {"L_cls": float(seg["L_cls"].detach()), "L_seg": float(seg["L_seg"].detach())}
    if model.training and model.bank is not None:
        l_sc, l_sa = model.style_losses(out, conditions)
        l_s, sso_state = total_style_loss(l_sc, l_sa, sso_state or SynergyState())
        loss = loss + l_s
        metrics.update(L_sc=float(l_sc.detach()), L_sa=float(l_sa.detach()), w_sc=sso_state.w_sc, w_sa=sso_state.w_sa)
    metrics["loss"] = float(loss.detach())
    return loss, metrics, sso_state


def train_step(
    model: SCSDModel,
    optimizer: torch.optim.Optimizer,
    images: torch.Tensor,
    labels: torch.Tensor,
    sso_state: SynergyState | None,
    generator: torch.Generator,
) -> tuple[dict[str, float], SynergyState | None]:
    """Sample one condition per image, step the optimiser, return loss scalars.

    Raises
    ------
    NonFiniteLossError
        If the total loss is NaN or infinite; parameters are left untouched.
    """
    model.train()
    conditions = sample_conditions(images.shape[0], model.n_conditions, generator)
    loss, metrics, new_state = compute_loss(model, images, labels, conditions, sso_state)
    if not math.isfinite(metrics["loss"]):
        raise NonFiniteLossError(f"non-finite loss: {metrics}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    if model.bank is not None:
        model.bank.renormalize_()
    return metrics, new_state
