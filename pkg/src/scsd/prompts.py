"""Class and domain text prompts, a pluggable text encoder, and the
per-pixel general / specific / difference embeddings built from them."""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

# "{}" is replaced by the class name.
DEFAULT_TEMPLATES: tuple[str, ...] = (
    "a photo of {}",
    "This is a photo of a {}",
    "a picture of a {}",
    "an image of the {}",
    "a cropped photo of the {}",
    "a close-up photo of a {}",
    "there is a {} in the scene",
)

# The empty string is the null condition: it keeps the source-domain style.
NULL_CONDITION = ""
DEFAULT_CONDITIONS: tuple[str, ...] = (
    NULL_CONDITION,
    "in snow",
    "in night",
    "in fog",
    "in rain",
)

IGNORE_INDEX = 255


class TextEncoder(Protocol):
    """Anything that maps a prompt string to a unit-norm vector of width ``dim``."""

    dim: int

    def encode(self, prompt: str) -> np.ndarray:
        ...


def stub_text_encoder(prompt: str, seed: int = 0, dim: int = 64) -> np.ndarray:
    """Deterministic hash-seeded stand-in for a pretrained text encoder.

    The prompt bytes and ``seed`` are hashed into a PRNG seed, ``dim``
    standard normals are drawn and the result is L2-normalised.
    """
    if not prompt:
        raise ValueError("prompt must be a non-empty string")
    digest = hashlib.sha256(seed.to_bytes(8, "little", signed=True) + prompt.encode("utf-8"))
    rng = np.random.default_rng(int.from_bytes(digest.digest()[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class StubTextEncoder:
    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed

    def encode(self, prompt: str) -> np.ndarray:
        return stub_text_encoder(prompt, self.seed, self.dim)

    def __repr__(self):
        return f"StubTextEncoder(dim={self.dim}, seed={self.seed})"


@dataclass(frozen=True)
class PromptTriplet:
    general: list[str]
    conditional: str
    specific: list[str]


@dataclass(frozen=True)
class TextEmbedTable:
    embeddings: np.ndarray  # (C, D_emb), unit rows
    class_names: list[str]

    def __post_init__(self):
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.class_names):
            raise ValueError("embeddings must be a (C, D_emb) matrix with one row per class")
        if self.embeddings.shape[0] < 1 or self.embeddings.shape[1] < 1:
            raise ValueError("TextEmbedTable needs C >= 1 and D_emb >= 1")


@dataclass(frozen=True)
class PixelDomainEmbeddings:
    specific: np.ndarray  # (H, W, D_emb)
    general: np.ndarray
    difference: np.ndarray
    condition_index: int


def _normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _compose(general_prompt: str, condition: str) -> str:
    return f"{general_prompt} {condition}" if condition else general_prompt


def build_prompt_triplet(
    class_name: str, condition: str, templates: Sequence[str] = DEFAULT_TEMPLATES
) -> PromptTriplet:
    """General prompts for ``class_name`` plus their condition-suffixed variants."""
    if not class_name:
        raise ValueError("class_name must be non-empty")
    general = [t.format(class_name) for t in templates]
    specific = [_compose(p, condition) for p in general]
    return PromptTriplet(general=general, conditional=condition, specific=specific)


def _mean_embedding(prompts: Sequence[str], encoder: TextEncoder) -> np.ndarray:
    if len(prompts) == 1:
        # encoder output is already unit-norm; renormalising would perturb the last bits
        return np.asarray(encoder.encode(prompts[0]), dtype=np.float64)
    return _normalize(np.mean([encoder.encode(p) for p in prompts], axis=0))


def build_class_embeddings(
    class_names: Sequence[str],
    templates: Sequence[str] = DEFAULT_TEMPLATES,
    encoder: TextEncoder | None = None,
) -> TextEmbedTable:
    """Template-averaged, re-normalised text embedding for every class.

    Parameters
    ----------
    class_names : sequence of str
        Unique class names, one row each.
    templates : sequence of str
        Prompt templates with a ``{}`` slot for the class name.
    encoder : TextEncoder, optional
        Defaults to ``StubTextEncoder()``.

    Returns
    -------
    TextEmbedTable
    """
    if not class_names:
        raise ValueError("class_names must be non-empty")
    if not templates:
        raise ValueError("templates must be non-empty")
    if len(set(class_names)) != len(class_names):
        raise ValueError(f"duplicate class names in {list(class_names)}")
    encoder = encoder or StubTextEncoder()
    rows = [_mean_embedding([t.format(c) for t in templates], encoder) for c in class_names]
    return TextEmbedTable(np.stack(rows), list(class_names))


class DomainEmbeddingCache:
    """General and specific embeddings for every (class, condition) pair.

    Filled once, on first use, under a lock; reads afterwards are lock-free.
    ``general`` has shape (C, D_emb) and ``specific`` (K, C, D_emb).
    """

    def __init__(
        self,
        class_names: Sequence[str],
        conditions: Sequence[str] = DEFAULT_CONDITIONS,
        templates: Sequence[str] = DEFAULT_TEMPLATES,
        encoder: TextEncoder | None = None,
    ):
        if len(set(conditions)) != len(conditions):
            raise ValueError(f"duplicate conditions in {list(conditions)}")
        self.class_names = list(class_names)
        self.conditions = list(conditions)
        self.templates = list(templates)
        self.encoder = encoder or StubTextEncoder()
        self._lock = threading.Lock()
        self._tables: tuple[np.ndarray, np.ndarray] | None = None

    def _build(self) -> tuple[np.ndarray, np.ndarray]:
        general = build_class_embeddings(self.class_names, self.templates, self.encoder).embeddings
        specific = np.empty((len(self.conditions),) + general.shape)
        for k, cond in enumerate(self.conditions):
            for c, name in enumerate(self.class_names):
                if cond == NULL_CONDITION:
                    specific[k, c] = general[c]
                else:
                    specific[k, c] = _mean_embedding(
                        build_prompt_triplet(name, cond, self.templates).specific, self.encoder
                    )
        return general, specific

    @property
    def tables(self) -> tuple[np.ndarray, np.ndarray]:
        if self._tables is None:
            with self._lock:
                if self._tables is None:
                    self._tables = self._build()
        return self._tables

    @property
    def general(self) -> np.ndarray:
        return self.tables[0]

    @property
    def specific(self) -> np.ndarray:
        return self.tables[1]


def pixel_domain_embeddings(
    gt_mask: np.ndarray,
    condition_index: int,
    encoder: TextEncoder | None = None,
    class_names: Sequence[str] = (),
    conditions: Sequence[str] = DEFAULT_CONDITIONS,
    templates: Sequence[str] = DEFAULT_TEMPLATES,
    ignore_index: int = IGNORE_INDEX,
    cache: DomainEmbeddingCache | None = None,
) -> PixelDomainEmbeddings:
    """Broadcast per-class general and specific embeddings onto a label map.

    Pixels carrying ``ignore_index`` get zero vectors in all three tensors.
    Pass a prebuilt ``cache`` to avoid re-encoding prompts on every call.
    """
    if cache is None:
        cache = DomainEmbeddingCache(class_names, conditions, templates, encoder)
    n_classes = len(cache.class_names)
    if not 0 <= condition_index < len(cache.conditions):
        raise ValueError(f"condition_index {condition_index} outside [0, {len(cache.conditions)})")
    gt_mask = np.asarray(gt_mask)
    valid = gt_mask != ignore_index
    if np.any((gt_mask[valid] < 0) | (gt_mask[valid] >= n_classes)):
        raise ValueError(f"label map contains values outside [0, {n_classes}) and != {ignore_index}")

    general_table, specific_table = cache.tables
    dim = general_table.shape[1]
    labels = np.where(valid, gt_mask, 0).astype(np.int64)
    general = np.where(valid[..., None], general_table[labels], 0.0)
    specific = np.where(valid[..., None], specific_table[condition_index][labels], 0.0)
    assert general.shape == gt_mask.shape + (dim,)
    return PixelDomainEmbeddings(
        specific=specific,
        general=general,
        difference=specific - general,
        condition_index=condition_index,
    )
