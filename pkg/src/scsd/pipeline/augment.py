"""Training-time augmentation: horizontal flip and photometric distortion.

Each distortion fires independently with probability 0.5 per image:
brightness shift of up to 32/255, contrast and saturation factors in
[0.5, 1.5] and a hue rotation of up to 18 degrees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class PhotometricConfig:
    brightness: float = 32 / 255
    contrast: tuple[float, float] = (0.5, 1.5)
    saturation: tuple[float, float] = (0.5, 1.5)
    hue_degrees: float = 18.0
    p: float = 0.5


def hue_rotation(degrees: float) -> np.ndarray:
    """3x3 rotation about the grey axis."""
    t = np.deg2rad(degrees)
    k = np.ones(3) / np.sqrt(3)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(t) * kx + (1 - np.cos(t)) * kx @ kx


def augment_batch(
    images: torch.Tensor,
    labels: torch.Tensor,
    rng: np.random.Generator,
    config: PhotometricConfig = PhotometricConfig(),
) -> tuple[torch.Tensor, torch.Tensor]:
    """Augment (B, 3, H, W) images in [0, 1] and their (B, H, W) labels."""
    images, labels = images.clone(), labels.clone()
    cfg = config
    for b in range(images.shape[0]):
        if rng.random() < 0.5:
            images[b] = images[b].flip(-1)
            labels[b] = labels[b].flip(-1)
        img = images[b]
        if rng.random() < cfg.p:
            img = img + float(rng.uniform(-cfg.brightness, cfg.brightness))
        if rng.random() < cfg.p:
            mean = img.mean()
            img = mean + float(rng.uniform(*cfg.contrast)) * (img - mean)
        if rng.random() < cfg.p:
            gray = img.mean(0, keepdim=True)
            img = gray + float(rng.uniform(*cfg.saturation)) * (img - gray)
        if rng.random() < cfg.p:
            rot = torch.as_tensor(hue_rotation(rng.uniform(-cfg.hue_degrees, cfg.hue_degrees)), dtype=img.dtype)
            img = torch.einsum("ij,jhw->ihw", rot, img)
        images[b] = img.clamp(0, 1)
    return images, labels
