"""Text-driven style transform of feature maps in the Fourier domain.

The low-frequency part of each channel's centred amplitude spectrum is
rescaled by ``1 + beta * tanh(F_d)``, where ``F_d`` comes from a pointwise
adapter over the text domain-difference embeddings. Phase is kept, so the
spatial layout of the features is untouched. Active in training only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class SpectralDecomposition:
    amplitude: torch.Tensor  # (..., H, W), zero frequency at (H // 2, W // 2)
    phase: torch.Tensor


@dataclass
class LowFreqMask:
    mask: torch.Tensor  # (H, W) of {0., 1.}
    alpha: float
    rows: tuple[int, int]  # inclusive bounds
    cols: tuple[int, int]


@dataclass
class StyleControl:
    alpha: float = 0.15
    betas: Sequence[float] = (1.0, 2.0, 4.0)
    styled_layers: Sequence[int] = (3, 4, 5)

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.styled_layers = tuple(int(layer) for layer in self.styled_layers)
        if len(self.betas) != len(self.styled_layers):
            raise ValueError("betas and styled_layers must have the same length")
        if any(b <= 0 for b in self.betas):
            raise ValueError(f"all betas must be > 0, got {self.betas}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")

    def beta(self, layer: int) -> float:
        return self.betas[self.styled_layers.index(layer)]


def fft_decompose(f: torch.Tensor) -> SpectralDecomposition:
    """Per-channel 2-D DFT over the last two axes, centred, in polar form."""
    spectrum = torch.fft.fftshift(torch.fft.fft2(f), dim=(-2, -1))
    return SpectralDecomposition(amplitude=spectrum.abs(), phase=spectrum.angle())


def ifft_compose(amplitude: torch.Tensor, phase: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`fft_decompose`; the imaginary residue is dropped."""
    if amplitude.shape != phase.shape:
        raise ValueError(f"amplitude {tuple(amplitude.shape)} and phase {tuple(phase.shape)} differ")
    spectrum = torch.polar(amplitude, phase.to(amplitude.dtype))
    return torch.fft.ifft2(torch.fft.ifftshift(spectrum, dim=(-2, -1))).real


def _band(n: int, alpha: float) -> tuple[int, int]:
    # Bounds are centred on the DC bin, n // 2, which keeps the band symmetric
    # under frequency negation for odd n as well.
    center, half = n // 2, n / 2 * alpha
    lo = math.ceil(round(center - half, 9))
    hi = math.floor(round(center + half, 9))
    return max(lo, 0), min(hi, n - 1)


def low_freq_mask(h: int, w: int, alpha: float, dtype=torch.float32) -> LowFreqMask:
    """Centred rectangle of ones covering the ``alpha`` fraction of the spectrum.

    Rows ``ceil(c_h - h*alpha/2) .. floor(c_h + h*alpha/2)`` inclusive with
    ``c_h = h // 2``; columns likewise.
    """
    if h < 1 or w < 1:
        raise ValueError(f"mask size must be positive, got {h}x{w}")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    rows, cols = _band(h, alpha), _band(w, alpha)
    mask = torch.zeros(h, w, dtype=dtype)
    mask[rows[0] : rows[1] + 1, cols[0] : cols[1] + 1] = 1
    return LowFreqMask(mask=mask, alpha=alpha, rows=rows, cols=cols)


def modulate_amplitude(
    amplitude: torch.Tensor,
    mask: torch.Tensor,
    f_d: torch.Tensor,
    beta: float,
    use_tanh: bool = True,
) -> torch.Tensor:
    """Composite amplitude ``(1 - M) A + M A (1 + beta * tanh(F_d))``.

    ``f_d`` is resampled (nearest) onto the frequency grid when its spatial
    size differs. The modulation factor is clamped at zero so it never flips
    the sign of a bin.
    """
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    if f_d.shape[-2:] != amplitude.shape[-2:]:
        lead = f_d.shape[:-2]
        f_d = F.interpolate(f_d.reshape(-1, 1, *f_d.shape[-2:]), size=amplitude.shape[-2:], mode="nearest")
        f_d = f_d.reshape(*lead, *amplitude.shape[-2:])
    activation = torch.tanh(f_d) if use_tanh else f_d
    factor = torch.clamp(1 + beta * activation, min=0)
    mask = mask.to(amplitude.dtype)
    return (1 - mask) * amplitude + mask * amplitude * factor


class StyleAdapter(nn.Module):
    """One bias-free 1x1 convolution per styled layer, D_emb -> D_l."""

    def __init__(self, emb_dim: int, layer_channels: Mapping[int, int]):
        super().__init__()
        self.convs = nn.ModuleDict(
            {str(layer): nn.Conv2d(emb_dim, ch, kernel_size=1, bias=False) for layer, ch in layer_channels.items()}
        )

    @property
    def layers(self) -> list[int]:
        return [int(k) for k in self.convs]

    def forward(self, difference: torch.Tensor, layer: int, size: tuple[int, int]) -> torch.Tensor:
        """(B, H, W, D_emb) difference embeddings -> (B, D_l, *size)."""
        if str(layer) not in self.convs:
            raise ValueError(f"layer {layer} is not a styled layer (styled: {self.layers})")
        x = difference.permute(0, 3, 1, 2)
        if tuple(x.shape[-2:]) != tuple(size):
            x = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
        return self.convs[str(layer)](x)


def style_adapter(difference: torch.Tensor, layer: int, size: tuple[int, int], adapter: StyleAdapter) -> torch.Tensor:
    """Functional form; an unbatched (H, W, D_emb) difference yields (D_l, *size)."""
    if difference.dim() == 3:
        return adapter(difference.unsqueeze(0), layer, size)[0]
    return adapter(difference, layer, size)


def style_layer(
    f: torch.Tensor,
    f_d: torch.Tensor,
    beta: float,
    alpha: float,
    strategy: str = "lowfreq",
    use_tanh: bool = True,
) -> torch.Tensor:
    """Style one feature map.

    ``strategy="lowfreq"`` modulates the low-frequency amplitude spectrum;
    ``strategy="original"`` adds the (activated, beta-weighted) style
    difference features directly to the features, for comparison.
    """
    if strategy == "original":
        activation = torch.tanh(f_d) if use_tanh else f_d
        return f + beta * activation
    if strategy != "lowfreq":
        raise ValueError(f"unknown TDST strategy {strategy!r}")
    spec = fft_decompose(f)
    mask = low_freq_mask(f.shape[-2], f.shape[-1], alpha, dtype=f.dtype).mask.to(f.device)
    amp = modulate_amplitude(spec.amplitude, mask, f_d, beta, use_tanh=use_tanh)
    return ifft_compose(amp, spec.phase)


def apply_tdst(
    features: Mapping[int, torch.Tensor],
    difference: torch.Tensor,
    adapter: StyleAdapter,
    control: StyleControl,
    training: bool = True,
    strategy: str = "lowfreq",
    use_tanh: bool = True,
) -> dict[int, torch.Tensor]:
    """Style every layer in ``control.styled_layers``; identity when not training."""
    if not training:
        return dict(features)
    out = dict(features)
    for layer in control.styled_layers:
        f = features[layer]
        f_d = adapter(difference.to(f.dtype), layer, tuple(f.shape[-2:]))
        out[layer] = style_layer(f, f_d, control.beta(layer), control.alpha, strategy, use_tanh)
    return out


@dataclass
class TDSTConfig:
    control: StyleControl = field(default_factory=StyleControl)
    strategy: str = "lowfreq"
    use_tanh: bool = True


class TextDrivenStyleTransform(nn.Module):
    def __init__(self, emb_dim: int, layer_channels: Mapping[int, int], config: TDSTConfig | None = None):
        super().__init__()
        self.config = config or TDSTConfig()
        missing = set(self.config.control.styled_layers) - set(layer_channels)
        if missing:
            raise ValueError(f"no channel count given for styled layers {sorted(missing)}")
        self.adapter = StyleAdapter(
            emb_dim, {layer: layer_channels[layer] for layer in self.config.control.styled_layers}
        )

    def forward(self, features: Mapping[int, torch.Tensor], difference: torch.Tensor) -> dict[int, torch.Tensor]:
        return apply_tdst(
            features,
            difference,
            self.adapter,
            self.config.control,
            training=self.training,
            strategy=self.config.strategy,
            use_tanh=self.config.use_tanh,
        )
