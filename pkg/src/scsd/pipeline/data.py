"""Synthetic multi-domain shape segmentation benchmark.

Every sample draws a random layout of four foreground classes over a
background; each domain then re-renders that layout with its own colour,
texture and illumination. Label maps depend only on the layout seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .augment import hue_rotation

CLASS_NAMES: tuple[str, ...] = ("background", "circle", "rectangle", "triangle", "stripe region")
IGNORE_INDEX = 255

# Canonical (undistorted) appearance per class; the stripe region alternates
# between its two colours.
_BASE_COLORS = np.array(
    [
        [0.40, 0.48, 0.38],
        [0.85, 0.22, 0.20],
        [0.20, 0.32, 0.85],
        [0.92, 0.84, 0.22],
        [0.70, 0.70, 0.70],
    ]
)
_STRIPE_DARK = np.array([0.12, 0.12, 0.14])


@dataclass(frozen=True)
class DomainSpec:
    name: str
    hue: float = 0.0  # degrees of rotation about the grey axis
    saturation: float = 1.0
    gain: float = 1.0
    bias: float = 0.0
    noise: float = 0.02  # per-pixel gaussian noise std
    blotch: float = 0.0  # std of smooth low-frequency texture
    seed: int = 0


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    label: np.ndarray  # (H, W) uint8
    domain: str


DEFAULT_DOMAINS: dict[str, DomainSpec] = {
    "clear": DomainSpec("clear", hue=0.0, saturation=1.0, gain=1.0, bias=0.0, noise=0.02, blotch=0.02, seed=11),
    "dusk": DomainSpec("dusk", hue=25.0, saturation=0.8, gain=0.75, bias=0.05, noise=0.04, blotch=0.05, seed=12),
    "snow": DomainSpec("snow", hue=-12.0, saturation=0.55, gain=0.65, bias=0.30, noise=0.05, blotch=0.06, seed=13),
    "night": DomainSpec("night", hue=40.0, saturation=0.65, gain=0.45, bias=0.0, noise=0.06, blotch=0.04, seed=14),
}


def _disk(h, w, cy, cx, r):
    yy, xx = np.mgrid[:h, :w]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2


def _triangle(h, w, pts):
    yy, xx = np.mgrid[:h, :w]
    (y0, x0), (y1, x1), (y2, x2) = pts

    def side(ya, xa, yb, xb):
        return (xb - xa) * (yy - ya) - (yb - ya) * (xx - xa)

    d0, d1, d2 = side(y0, x0, y1, x1), side(y1, x1, y2, x2), side(y2, x2, y0, x0)
    neg = (d0 < 0) | (d1 < 0) | (d2 < 0)
    pos = (d0 > 0) | (d1 > 0) | (d2 > 0)
    return ~(neg & pos)


def generate_layout(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Random label map with every class drawn once, in random stacking order."""
    h = w = size
    label = np.zeros((h, w), dtype=np.uint8)
    s = size / 64
    order = rng.permutation([1, 2, 3, 4])
    for cls in order:
        if cls == 1:
            r = rng.uniform(9, 15) * s
            m = _disk(h, w, rng.uniform(r, h - r), rng.uniform(r, w - r), r)
        elif cls == 2:
            rh, rw = rng.uniform(14, 26, size=2) * s
            y0, x0 = rng.uniform(0, h - rh), rng.uniform(0, w - rw)
            m = np.zeros((h, w), bool)
            m[int(y0) : int(y0 + rh), int(x0) : int(x0 + rw)] = True
        elif cls == 3:
            side = rng.uniform(20, 32) * s
            cy, cx = rng.uniform(side / 2, h - side / 2), rng.uniform(side / 2, w - side / 2)
            theta = rng.uniform(0, 2 * np.pi)
            pts = [
                (cy + side / np.sqrt(3) * np.sin(theta + k * 2 * np.pi / 3),
                 cx + side / np.sqrt(3) * np.cos(theta + k * 2 * np.pi / 3))
                for k in range(3)
            ]
            m = _triangle(h, w, pts)
        else:
            bh, bw = rng.uniform(14, 24) * s, rng.uniform(24, 44) * s
            y0, x0 = rng.uniform(0, h - bh), rng.uniform(0, w - bw)
            m = np.zeros((h, w), bool)
            m[int(y0) : int(y0 + bh), int(x0) : int(x0 + bw)] = True
        label[m] = cls
    return label


def render(label: np.ndarray, domain: DomainSpec, rng: np.random.Generator) -> np.ndarray:
    """Render a label map in the style of ``domain``; returns (3, H, W) float32."""
    h, w = label.shape
    img = _BASE_COLORS[label].copy()  # (H, W, 3)
    stripes = ((np.arange(w)[None, :] + np.arange(h)[:, None]) // 3) % 2 == 0
    img[(label == 4) & stripes] = _STRIPE_DARK

    img = img @ hue_rotation(domain.hue).T
    gray = img.mean(axis=-1, keepdims=True)
    img = gray + domain.saturation * (img - gray)

    if domain.blotch > 0:
        coarse = rng.standard_normal((3, 5, 5))
        smooth = ndimage.zoom(coarse, (1, h / 5, w / 5), order=3)
        img = img + domain.blotch * smooth.transpose(1, 2, 0)
    img = domain.gain * img + domain.bias
    img = img + domain.noise * rng.standard_normal(img.shape)
    return np.clip(img, 0, 1).transpose(2, 0, 1).astype(np.float32)


def generate_dataset(
    domain_specs: Sequence[DomainSpec],
    n_per_domain: int,
    layout_seed: int = 0,
    size: int = 64,
) -> list[Sample]:
    """Render ``n_per_domain`` shared layouts in every domain.

    Sample ``i`` of every domain uses layout seed ``layout_seed + i``, so
    label maps coincide across domains while images differ.
    """
    layouts = [generate_layout(np.random.default_rng(layout_seed + i), size) for i in range(n_per_domain)]
    samples = []
    for spec in domain_specs:
        for i, label in enumerate(layouts):
            rng = np.random.default_rng([spec.seed, layout_seed, i])
            samples.append(Sample(render(label, spec, rng), label.copy(), spec.name))
    return samples


def stack(samples: Iterable[Sample]) -> tuple[np.ndarray, np.ndarray, list[str]]:
    samples = list(samples)
    return (
        np.stack([s.image for s in samples]),
        np.stack([s.label for s in samples]),
        [s.domain for s in samples],
    )


# On-disk layout: <root>/<domain>/<split>/<index>_image.png and
# <index>_label.png, plus <root>/manifest.json.

MANIFEST = "manifest.json"


def write_dataset(
    root: str | os.PathLike,
    splits: dict[str, list[Sample]],
    class_names: Sequence[str] = CLASS_NAMES,
    domains: Sequence[DomainSpec] = (),
) -> Path:
    root = Path(root)
    files: dict[str, dict[str, list[dict[str, str]]]] = {}
    for split, samples in splits.items():
        counters: dict[str, int] = {}
        for s in samples:
            idx = counters.get(s.domain, 0)
            counters[s.domain] = idx + 1
            d = root / s.domain / split
            d.mkdir(parents=True, exist_ok=True)
            img = np.round(s.image.transpose(1, 2, 0) * 255).astype(np.uint8)
            Image.fromarray(img).save(d / f"{idx:05d}_image.png")
            Image.fromarray(s.label).save(d / f"{idx:05d}_label.png")
            files.setdefault(split, {}).setdefault(s.domain, []).append(
                {
                    "image": f"{s.domain}/{split}/{idx:05d}_image.png",
                    "label": f"{s.domain}/{split}/{idx:05d}_label.png",
                }
            )
    manifest = {
        "class_names": list(class_names),
        "ignore_index": IGNORE_INDEX,
        "domains": [asdict(d) for d in domains],
        "splits": {split: {dom: entries for dom, entries in per.items()} for split, per in files.items()},
    }
    path = root / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(root: str | os.PathLike) -> dict:
    path = Path(root) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    return json.loads(path.read_text())


def load_split(root: str | os.PathLike, split: str) -> list[Sample]:
    """Load a split by name, or one domain by name (all its splits)."""
    root = Path(root)
    manifest = read_manifest(root)
    splits = manifest["splits"]
    if split in splits:
        entries = [(dom, e) for dom, es in splits[split].items() for e in es]
    else:
        entries = [(dom, e) for per in splits.values() for dom, es in per.items() if dom == split for e in es]
        if not entries:
            raise KeyError(f"unknown split or domain {split!r}; splits: {sorted(splits)}")
    samples = []
    for dom, e in entries:
        img = np.asarray(Image.open(root / e["image"]).convert("RGB"), dtype=np.float32) / 255.0
        lab = np.asarray(Image.open(root / e["label"]), dtype=np.uint8)
        samples.append(Sample(img.transpose(2, 0, 1).copy(), lab.copy(), dom))
    return samples
