"""Semantic inference from query predictions and dataset-level IoU."""

from __future__ import annotations

import numpy as np
import torch

from .data import IGNORE_INDEX
from .losses import upsample_masks


def semantic_scores(class_logits: torch.Tensor, mask_logits: torch.Tensor, size=None) -> torch.Tensor:
    """Per-class pixel scores ``sum_q p_q(c) * sigmoid(m_q)``, (B, C, H, W).

    The no-object column is dropped before aggregation.
    """
    if size is not None:
        mask_logits = upsample_masks(mask_logits, size)
    prob = class_logits.softmax(-1)[..., :-1]
    return torch.einsum("bnc,bnhw->bchw", prob, mask_logits.sigmoid())


def semantic_inference(class_logits, mask_logits, size=None) -> torch.Tensor:
    return semantic_scores(class_logits, mask_logits, size).argmax(1)


def confusion_matrix(pred: np.ndarray, label: np.ndarray, n_classes: int, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    pred, label = np.asarray(pred).ravel(), np.asarray(label).ravel()
    keep = label != ignore_index
    idx = label[keep].astype(np.int64) * n_classes + pred[keep].astype(np.int64)
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def iou_from_confusion(conf: np.ndarray) -> np.ndarray:
    """Per-class IoU; NaN for classes absent from both prediction and label."""
    inter = np.diag(conf).astype(np.float64)
    union = conf.sum(0) + conf.sum(1) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, np.nan)


def miou_report(
    preds, labels, n_classes: int, class_names=None, ignore_index: int = IGNORE_INDEX
) -> dict:
    """IoU (in %) accumulated over the whole set, ignore label excluded.

    The mean runs over classes that occur in the labels or the predictions.
    """
    preds, labels = list(preds), list(labels)
    if not labels:
        raise ValueError("cannot evaluate an empty sample set")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    for p, y in zip(preds, labels):
        conf += confusion_matrix(p, y, n_classes, ignore_index)
    iou = iou_from_confusion(conf) * 100
    names = list(class_names) if class_names is not None else [str(c) for c in range(n_classes)]
    return {
        "per_class": {n: (None if np.isnan(v) else float(v)) for n, v in zip(names, iou)},
        "mIoU": float(np.nanmean(iou)) if np.isfinite(iou).any() else 0.0,
    }
