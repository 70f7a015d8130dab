"""Run configuration: one YAML tree, strict keys.

Schema (every key optional; defaults shown in ``default_config()``)::

    dataset:   root, image_size, n_per_domain, n_test_per_domain,
               layout_seed, test_layout_seed,
               domains: {name: {hue, saturation, gain, bias, noise, blotch, seed}},
               source_domains: [names], target_domains: [names]
    model:     n_queries, d_model, d_emb, d_style, channels, backbone_seed, text_seed
    tdst:      alpha, betas, styled_layers, strategy, tanh
    sso:       tau, lambda, w_init, w_min, w_max, ema_decay, layer_weights
    train:     steps, batch, lr, weight_decay, augment, seed, eval_interval
    ablation:  sqb_on, tdst_on, sso_on
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any

import yaml

from .pipeline.data import DEFAULT_DOMAINS, DomainSpec


class ConfigError(ValueError):
    pass


def _default_domains() -> dict[str, dict[str, Any]]:
    return {
        name: {k: v for k, v in dataclasses.asdict(DEFAULT_DOMAINS[name]).items() if k != "name"}
        for name in ("clear", "dusk", "snow")
    }


@dataclass
class DatasetSection:
    root: str = "data"
    image_size: int = 64
    n_per_domain: int = 48
    n_test_per_domain: int = 24
    layout_seed: int = 0
    test_layout_seed: int = 100_000
    domains: dict = field(default_factory=_default_domains)
    source_domains: list = field(default_factory=lambda: ["clear", "dusk"])
    target_domains: list = field(default_factory=lambda: ["snow"])


@dataclass
class ModelSection:
    n_queries: int = 20
    d_model: int = 128
    d_emb: int = 64
    d_style: int = 64
    channels: list = field(default_factory=lambda: [32, 64, 128, 256])
    backbone_seed: int = 0
    text_seed: int = 0


@dataclass
class TDSTSection:
    alpha: float = 0.15
    betas: list = field(default_factory=lambda: [1.0, 2.0, 4.0])
    styled_layers: list = field(default_factory=lambda: [3, 4, 5])
    strategy: str = "lowfreq"
    tanh: bool = True


@dataclass
class SSOSection:
    tau: float = 0.07
    lam: float = field(default=0.3, metadata={"key": "lambda"})
    w_init: float = 1.0
    w_min: float = 0.1
    w_max: float = 2.0
    ema_decay: float = 0.9
    layer_weights: list = field(default_factory=lambda: [0.2, 0.5, 1.0])


@dataclass
class TrainSection:
    steps: int = 2000
    batch: int = 4
    lr: float = 1e-4
    weight_decay: float = 0.05
    augment: bool = True
    seed: int = 0
    eval_interval: int = 500


@dataclass
class AblationSection:
    sqb_on: bool = True
    tdst_on: bool = True
    sso_on: bool = True


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    tdst: TDSTSection = field(default_factory=TDSTSection)
    sso: SSOSection = field(default_factory=SSOSection)
    train: TrainSection = field(default_factory=TrainSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    def domain_specs(self, role: str) -> list[DomainSpec]:
        names = self.dataset.source_domains if role == "source" else self.dataset.target_domains
        return [DomainSpec(name=n, **self.dataset.domains[n]) for n in names]

    def estimator_params(self) -> dict:
        return dict(
            n_queries=self.model.n_queries,
            d_model=self.model.d_model,
            d_emb=self.model.d_emb,
            d_style=self.model.d_style,
            channels=tuple(self.model.channels),
            backbone_seed=self.model.backbone_seed,
            text_seed=self.model.text_seed,
            alpha=self.tdst.alpha,
            betas=tuple(self.tdst.betas),
            styled_layers=tuple(self.tdst.styled_layers),
            tdst_strategy=self.tdst.strategy,
            tdst_tanh=self.tdst.tanh,
            tau=self.sso.tau,
            lam=self.sso.lam,
            w_init=self.sso.w_init,
            w_min=self.sso.w_min,
            w_max=self.sso.w_max,
            ema_decay=self.sso.ema_decay,
            layer_weights=tuple(self.sso.layer_weights),
            steps=self.train.steps,
            batch_size=self.train.batch,
            lr=self.train.lr,
            weight_decay=self.train.weight_decay,
            augment=self.train.augment,
            random_state=self.train.seed,
            sqb=self.ablation.sqb_on,
            tdst=self.ablation.tdst_on,
            sso=self.ablation.sso_on,
        )

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            section = getattr(self, f.name)
            out[f.name] = {sf.metadata.get("key", sf.name): getattr(section, sf.name) for sf in dataclasses.fields(section)}
        return out

    def dump(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


_DOMAIN_KEYS = {f.name for f in dataclasses.fields(DomainSpec)} - {"name"}


def _build_section(cls, name: str, raw: Any):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    by_key = {f.metadata.get("key", f.name): f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in by_key:
            raise ConfigError(f"unknown key '{name}.{key}'")
        kwargs[by_key[key].name] = value
    return cls(**kwargs)


def validate(cfg: RunConfig) -> RunConfig:
    ds = cfg.dataset
    if not isinstance(ds.domains, dict):
        raise ConfigError("'dataset.domains' must map domain names to parameters")
    for name, params in ds.domains.items():
        params = params or {}
        unknown = set(params) - _DOMAIN_KEYS
        if unknown:
            raise ConfigError(f"unknown key 'dataset.domains.{name}.{sorted(unknown)[0]}'")
        ds.domains[name] = params
    for key in ("source_domains", "target_domains"):
        for name in getattr(ds, key):
            if name not in ds.domains:
                raise ConfigError(f"'dataset.{key}' references domain '{name}' missing from 'dataset.domains'")
    if len(ds.source_domains) < 2:
        raise ConfigError("'dataset.source_domains' needs at least two domains")
    if len(ds.target_domains) < 1:
        raise ConfigError("'dataset.target_domains' needs at least one held-out domain")
    if set(ds.source_domains) & set(ds.target_domains):
        raise ConfigError("a domain cannot be both source and target")
    if len(cfg.tdst.betas) != len(cfg.tdst.styled_layers):
        raise ConfigError("'tdst.betas' needs one entry per styled layer")
    if len(cfg.sso.layer_weights) != len(cfg.tdst.styled_layers):
        raise ConfigError("'sso.layer_weights' needs one entry per styled layer")
    if not 0 < cfg.tdst.alpha <= 1:
        raise ConfigError("'tdst.alpha' must lie in (0, 1]")
    if any(b <= 0 for b in cfg.tdst.betas):
        raise ConfigError("'tdst.betas' must all be > 0")
    if cfg.tdst.strategy not in ("lowfreq", "original"):
        raise ConfigError("'tdst.strategy' must be 'lowfreq' or 'original'")
    if ds.image_size % 32:
        raise ConfigError("'dataset.image_size' must be a multiple of 32")
    return cfg


def from_dict(raw: dict | None) -> RunConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    sections = {f.name: f.default_factory for f in dataclasses.fields(RunConfig)}
    for key in raw:
        if key not in sections:
            raise ConfigError(f"unknown key '{key}'")
    kwargs = {}
    for name, factory in sections.items():
        try:
            kwargs[name] = _build_section(type(factory()), name, raw.get(name))
        except TypeError as exc:
            raise ConfigError(f"section '{name}': {exc}") from exc
    return validate(RunConfig(**kwargs))


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return default_config()
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return from_dict(raw)


def default_config() -> RunConfig:
    return validate(RunConfig())
