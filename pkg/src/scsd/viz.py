"""Static figures: per-layer masks, similarity maps, spectra, 2-D embeddings."""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.patches as patches  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
from sklearn.decomposition import PCA  # noqa: E402

from .pipeline.data import Sample  # noqa: E402
from .tdst import fft_decompose, low_freq_mask  # noqa: E402

KINDS = ("layer-masks", "similarity-map", "spectrum", "embedding-2d")


def _save(fig, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)


def layer_masks(est, sample: Sample, path, layers: Sequence[int] = (0, -1)) -> dict:
    """Semantic maps decoded from the first and last decoder layer, side by side."""
    n_layers = est.model_.config.decoder_layers
    layers = [layer % n_layers for layer in layers]
    maps = est.predict_layers(sample.image[None], layers)[:, 0]
    n_classes = len(est.class_names)
    fig, axes = plt.subplots(1, len(layers), figsize=(3 * len(layers), 3))
    for ax, layer, m in zip(np.atleast_1d(axes), layers, maps):
        ax.imshow(m, cmap="tab10", vmin=0, vmax=max(n_classes - 1, 1), interpolation="nearest")
        ax.set_title(f"decoder layer {layer + 1}")
        ax.axis("off")
    _save(fig, path)
    return {"panels": len(layers), "layers": [layer + 1 for layer in layers]}


@torch.no_grad()
def similarity_map(est, sample: Sample, path) -> dict:
    model = est.model_
    if model.sqb is None:
        raise ValueError("similarity maps need a model trained with sqb=True")
    model.eval()
    s = model(torch.from_numpy(sample.image[None]))["similarity"][0].numpy()
    c = s.shape[-1]
    fig, axes = plt.subplots(1, c, figsize=(2.5 * c, 2.5))
    for k, ax in enumerate(np.atleast_1d(axes)):
        ax.imshow(s[..., k], vmin=-1, vmax=1, cmap="coolwarm")
        ax.set_title(est.class_names[k], fontsize=8)
        ax.axis("off")
    _save(fig, path)
    return {"panels": c}


@torch.no_grad()
def spectrum(est, sample: Sample, path, condition: int = 1, layer: int = 3) -> dict:
    """Channel-averaged log amplitude of one scale before and after styling.

    The low-frequency rectangle is drawn from :func:`low_freq_mask`.
    """
    model = est.model_
    if model.tdst is None:
        raise ValueError("spectrum plots need a model trained with tdst=True")
    image = torch.from_numpy(sample.image[None])
    label = torch.from_numpy(sample.label[None].astype(np.int64))
    feats = model.backbone(image)
    specific, general = model.domain_embeddings(label, torch.tensor([condition]))
    model.tdst.train()
    styled = model.tdst(feats, specific - general)
    model.tdst.eval()
    before = fft_decompose(feats[layer][0]).amplitude.mean(0).numpy()
    after = fft_decompose(styled[layer][0]).amplitude.mean(0).numpy()
    h, w = before.shape
    lf = low_freq_mask(h, w, model.config.alpha)
    fig, axes = plt.subplots(1, 2, figsize=(6, 3))
    for ax, amp, title in zip(axes, (before, after), ("before", "after")):
        ax.imshow(np.log1p(amp), cmap="magma")
        (r0, r1), (c0, c1) = lf.rows, lf.cols
        ax.add_patch(patches.Rectangle((c0 - 0.5, r0 - 0.5), c1 - c0 + 1, r1 - r0 + 1, fill=False, edgecolor="cyan"))
        ax.set_title(f"F{layer} amplitude {title}")
        ax.axis("off")
    _save(fig, path)
    return {"panels": 2, "rows": lf.rows, "cols": lf.cols, "alpha": lf.alpha, "shape": (h, w)}


@torch.no_grad()
def embedding_2d(est, samples: Sequence[Sample], path) -> dict:
    """PCA of per-image, per-class pooled pixel embeddings, coloured by class and by domain."""
    model = est.model_
    model.eval()
    points, classes, domains = [], [], []
    for s in samples:
        feats = model.backbone(torch.from_numpy(s.image[None]))
        _, pixel = model.pixel_decoder(feats)
        pixel = torch.nn.functional.interpolate(pixel, size=s.label.shape, mode="bilinear", align_corners=False)[0]
        for c in np.unique(s.label):
            if c >= len(est.class_names):
                continue
            m = torch.from_numpy(s.label == c)
            points.append(pixel[:, m].mean(1).numpy())
            classes.append(int(c))
            domains.append(s.domain)
    xy = PCA(n_components=2).fit_transform(np.stack(points))
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for c in sorted(set(classes)):
        sel = np.array(classes) == c
        axes[0].scatter(*xy[sel].T, s=12, label=est.class_names[c])
    dom_order = list(dict.fromkeys(domains))
    for d in dom_order:
        sel = np.array(domains) == d
        axes[1].scatter(*xy[sel].T, s=12, label=d)
    axes[0].set_title("by class")
    axes[1].set_title("by domain")
    legends = [ax.legend(fontsize=7) for ax in axes]
    _save(fig, path)
    return {
        "panels": 2,
        "class_legend": [t.get_text() for t in legends[0].get_texts()],
        "domain_legend": [t.get_text() for t in legends[1].get_texts()],
    }
