"""scikit-learn style estimator around :class:`~scsd.pipeline.model.SCSDModel`."""

from __future__ import annotations

import dataclasses
import logging
import os
from typing import Callable, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .pipeline.augment import augment_batch
from .pipeline.data import CLASS_NAMES, IGNORE_INDEX
from .pipeline.metrics import miou_report, semantic_scores
from .pipeline.model import ModelConfig, SCSDModel
from .pipeline.train import train_step
from .prompts import DEFAULT_CONDITIONS, DEFAULT_TEMPLATES
from .sso import SynergyState
from .utils.validation import check_images, check_X_y

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "scsd-checkpoint/1"


class SCSDSegmenter(BaseEstimator):
    """Query-based semantic segmenter with text-driven domain generalisation.

    Parameters
    ----------
    class_names : sequence of str
        One name per class; the label value is the position in this list.
    conditions : sequence of str
        Conditional domain phrases; ``""`` keeps the source style.
    sqb, tdst, sso : bool
        Switch the semantic query booster, the text-driven style transform
        and the style synergy losses on or off.
    alpha : float
        Low-frequency ratio of the style transform mask.
    betas : sequence of float
        Style intensity per styled layer (strides 8, 16, 32).
    layer_weights : sequence of float
        Per-layer weights of the style aggregation loss.
    tau : float
        Temperature of the style contrastive loss.
    lam, w_init, w_min, w_max, ema_decay : float
        Synergy weighting: step size, initial weight, clamp bounds and the
        smoothing of the loss levels it differences against.
    steps, batch_size, lr, weight_decay : training schedule (AdamW).
    augment : bool
        Random horizontal flip and photometric distortion of training batches.
    random_state : int
        Seeds parameter init, batch order, augmentation and condition sampling.
    warm_start : bool
        Continue from the current step instead of re-initialising on ``fit``.

    Attributes
    ----------
    model_ : SCSDModel
    step_ : int
        Optimiser steps taken so far.
    history_ : list of dict
        Per-step loss scalars.
    """

    def __init__(
        self,
        *,
        class_names: Sequence[str] = CLASS_NAMES,
        conditions: Sequence[str] = DEFAULT_CONDITIONS,
        templates: Sequence[str] = DEFAULT_TEMPLATES,
        n_queries: int = 20,
        d_model: int = 128,
        d_emb: int = 64,
        d_style: int = 64,
        channels: Sequence[int] = (32, 64, 128, 256),
        sqb: bool = True,
        tdst: bool = True,
        sso: bool = True,
        alpha: float = 0.15,
        betas: Sequence[float] = (1.0, 2.0, 4.0),
        styled_layers: Sequence[int] = (3, 4, 5),
        tdst_strategy: str = "lowfreq",
        tdst_tanh: bool = True,
        layer_weights: Sequence[float] = (0.2, 0.5, 1.0),
        tau: float = 0.07,
        lam: float = 0.3,
        w_init: float = 1.0,
        w_min: float = 0.1,
        w_max: float = 2.0,
        ema_decay: float = 0.9,
        steps: int = 2000,
        batch_size: int = 4,
        lr: float = 1e-4,
        weight_decay: float = 0.05,
        augment: bool = True,
        random_state: int = 0,
        backbone_seed: int = 0,
        text_seed: int = 0,
        warm_start: bool = False,
    ):
        self.class_names = class_names
        self.conditions = conditions
        self.templates = templates
        self.n_queries = n_queries
        self.d_model = d_model
        self.d_emb = d_emb
        self.d_style = d_style
        self.channels = channels
        self.sqb = sqb
        self.tdst = tdst
        self.sso = sso
        self.alpha = alpha
        self.betas = betas
        self.styled_layers = styled_layers
        self.tdst_strategy = tdst_strategy
        self.tdst_tanh = tdst_tanh
        self.layer_weights = layer_weights
        self.tau = tau
        self.lam = lam
        self.w_init = w_init
        self.w_min = w_min
        self.w_max = w_max
        self.ema_decay = ema_decay
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.augment = augment
        self.random_state = random_state
        self.backbone_seed = backbone_seed
        self.text_seed = text_seed
        self.warm_start = warm_start

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            class_names=self.class_names,
            conditions=self.conditions,
            templates=self.templates,
            n_queries=self.n_queries,
            d_model=self.d_model,
            d_emb=self.d_emb,
            d_style=self.d_style,
            channels=self.channels,
            alpha=self.alpha,
            betas=self.betas,
            styled_layers=self.styled_layers,
            layer_weights=self.layer_weights,
            tau=self.tau,
            tdst_strategy=self.tdst_strategy,
            tdst_tanh=self.tdst_tanh,
            sqb_on=self.sqb,
            tdst_on=self.tdst,
            sso_on=self.sso,
            backbone_seed=self.backbone_seed,
            text_seed=self.text_seed,
        )

    def _initialize(self):
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.random_state)
            self.model_ = SCSDModel(self._model_config())
        self.optimizer_ = torch.optim.AdamW(
            self.model_.trainable_parameters(), lr=self.lr, weight_decay=self.weight_decay, fused=True
        )
        self.sso_state_ = SynergyState(
            w_init=self.w_init, lam=self.lam, w_min=self.w_min, w_max=self.w_max, ema_decay=self.ema_decay
        )
        self.step_ = 0
        self.history_ = []
        self._batch_rng = np.random.default_rng(self.random_state)
        self._order = np.empty(0, dtype=np.int64)
        self._cond_gen = torch.Generator().manual_seed(self.random_state + 1)
        self._aug_rng = np.random.default_rng(self.random_state + 2)

    def _next_batch(self, n: int) -> np.ndarray:
        while self._order.size < self.batch_size:
            self._order = np.concatenate([self._order, self._batch_rng.permutation(n)])
        idx, self._order = self._order[: self.batch_size], self._order[self.batch_size :]
        return idx

    def fit(self, X, y, callback: Callable[["SCSDSegmenter", dict], None] | None = None):
        """Train until ``step_ == steps``.

        Parameters
        ----------
        X : array (n, 3, H, W) in [0, 1]
        y : array (n, H, W) of class indices, 255 = ignore
        callback : callable, optional
            Called as ``callback(self, metrics)`` after every step.
        """
        X, y = check_X_y(X, y, len(self.class_names), IGNORE_INDEX)
        if not (self.warm_start and hasattr(self, "model_")):
            self._initialize()
        X_t, y_t = torch.from_numpy(X), torch.from_numpy(y)
        while self.step_ < self.steps:
            idx = torch.from_numpy(self._next_batch(len(X)))
            images, labels = X_t[idx], y_t[idx]
            if self.augment:
                images, labels = augment_batch(images, labels, self._aug_rng)
            metrics, self.sso_state_ = train_step(
                self.model_, self.optimizer_, images, labels, self.sso_state_, self._cond_gen
            )
            self.step_ += 1
            metrics = {"step": self.step_, **metrics}
            self.history_.append(metrics)
            if callback is not None:
                callback(self, metrics)
        self.model_.eval()
        return self

    @torch.no_grad()
    def _forward(self, X, batch_size: int = 16):
        check_is_fitted(self, "model_")
        X = check_images(X, allow_unbatched=True)
        self.model_.eval()
        outs = []
        for start in range(0, len(X), batch_size):
            outs.append(self.model_(torch.from_numpy(X[start : start + batch_size])))
        return X, outs

    def predict_layers(self, X, layers: Sequence[int] | None = None) -> np.ndarray:
        """Label maps decoded from individual decoder layers, (n_layers, n, H, W)."""
        X, outs = self._forward(X)
        n_layers = len(outs[0]["class_logits"])
        layers = range(n_layers) if layers is None else layers
        size = X.shape[2:]
        res = []
        for layer in layers:
            maps = [
                semantic_scores(o["class_logits"][layer], o["mask_logits"][layer], size).argmax(1) for o in outs
            ]
            res.append(torch.cat(maps).numpy())
        return np.stack(res)

    def predict_proba(self, X) -> np.ndarray:
        """Per-class pixel scores from the last decoder layer, (n, C, H, W)."""
        X, outs = self._forward(X)
        size = X.shape[2:]
        return torch.cat([semantic_scores(o["class_logits"][-1], o["mask_logits"][-1], size) for o in outs]).numpy()

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(1)

    def evaluate(self, X, y, layer: int = -1) -> dict:
        """Per-class IoU and mIoU (percent) over the whole set."""
        X, y = check_X_y(X, y, len(self.class_names), IGNORE_INDEX)
        pred = self.predict(X) if layer == -1 else self.predict_layers(X, [layer])[0]
        return miou_report(pred, y, len(self.class_names), self.class_names)

    def score(self, X, y) -> float:
        return self.evaluate(X, y)["mIoU"]

    # persistence

    def state(self) -> dict:
        check_is_fitted(self, "model_")
        return {
            "format": CHECKPOINT_FORMAT,
            "params": self.get_params(),
            "model": self.model_.state_dict(),
            "optimizer": self.optimizer_.state_dict(),
            "sso_state": dataclasses.asdict(self.sso_state_),
            "step": self.step_,
            "batch_rng": self._batch_rng.bit_generator.state,
            "order": self._order.copy(),
            "cond_gen": self._cond_gen.get_state(),
            "aug_rng": self._aug_rng.bit_generator.state,
        }

    def save(self, path: str | os.PathLike, extra: dict | None = None) -> None:
        """Write a single-file checkpoint; ``extra`` (e.g. a config snapshot) is stored alongside."""
        payload = self.state()
        payload["extra"] = extra or {}
        tmp = f"{path}.tmp"
        torch.save(payload, tmp)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SCSDSegmenter":
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not an SCSD checkpoint")
        est = cls(**payload["params"])
        est._initialize()
        est.model_.load_state_dict(payload["model"])
        est.optimizer_.load_state_dict(payload["optimizer"])
        est.sso_state_ = SynergyState(**payload["sso_state"])
        est.step_ = payload["step"]
        est._batch_rng.bit_generator.state = payload["batch_rng"]
        est._order = np.asarray(payload["order"], dtype=np.int64)
        est._cond_gen.set_state(payload["cond_gen"])
        est._aug_rng.bit_generator.state = payload["aug_rng"]
        est.checkpoint_extra_ = payload.get("extra", {})
        est.model_.eval()
        return est
