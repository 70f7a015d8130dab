"""``scsd`` command line: generate | train | eval | viz | ablate.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import viz
from .ablation import ROWS, TDST_ROWS, AblationSetup, run_ablation
from .config import ConfigError, RunConfig, load_config
from .pipeline.data import generate_dataset, load_split, read_manifest, stack, write_dataset
from .pipeline.train import NonFiniteLossError

logger = logging.getLogger("scsd")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class RuntimeAbort(RuntimeError):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
        cfg.dataset.layout_seed = args.seed
    return cfg


def cmd_generate(cfg: RunConfig, out: str) -> Path:
    """Render the source domains into ``train`` and the target domains into ``test``."""
    ds = cfg.dataset
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise RuntimeAbort(f"cannot create {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise RuntimeAbort(f"{out} is not writable")
    train = generate_dataset(cfg.domain_specs("source"), ds.n_per_domain, ds.layout_seed, ds.image_size)
    test = generate_dataset(cfg.domain_specs("target"), ds.n_test_per_domain, ds.test_layout_seed, ds.image_size)
    path = write_dataset(out, {"train": train, "test": test}, domains=cfg.domain_specs("source") + cfg.domain_specs("target"))
    logger.info("wrote %d train and %d test samples to %s", len(train), len(test), out)
    return path


def _arrays(samples):
    X, y, _ = stack(samples)
    return X, y.astype(np.int64)


def cmd_train(cfg: RunConfig, out: str, data: str | None = None, resume: str | None = None) -> Path:
    from .estimator import SCSDSegmenter

    root = data or cfg.dataset.root
    try:
        manifest = read_manifest(root)
        train = load_split(root, "train")
    except (FileNotFoundError, KeyError) as exc:
        raise RuntimeAbort(f"dataset not found: {exc}") from exc
    test = load_split(root, "test") if "test" in manifest["splits"] else []
    os.makedirs(out, exist_ok=True)
    ckpt = Path(out) / "checkpoint.pt"
    metrics_path = Path(out) / "metrics.jsonl"
    cfg.dump(Path(out) / "config.yaml")
    extra = {"config": cfg.to_dict(), "data_root": str(root), "class_names": manifest["class_names"]}

    if resume:
        est = SCSDSegmenter.load(resume)
        est.set_params(steps=cfg.train.steps, warm_start=True)
    else:
        est = SCSDSegmenter(class_names=tuple(manifest["class_names"]), **cfg.estimator_params())
        metrics_path.write_text("")
    X, y = _arrays(train)
    interval = max(cfg.train.eval_interval, 1)

    def callback(est, metrics):
        with metrics_path.open("a") as fh:
            fh.write(json.dumps(metrics) + "\n")
            if est.step_ % interval == 0 or est.step_ == est.steps:
                record = {"step": est.step_}
                if test:
                    Xt, yt = _arrays(test)
                    record["mIoU"] = est.score(Xt, yt)
                    est.model_.train()
                fh.write(json.dumps(record) + "\n")
                est.save(ckpt, extra)
        if est.step_ % 100 == 0:
            logger.info("step %d loss %.4f", est.step_, metrics["loss"])

    try:
        est.fit(X, y, callback=callback)
    except NonFiniteLossError as exc:
        raise RuntimeAbort(f"training aborted at step {est.step_ + 1}: {exc}; last good checkpoint kept at {ckpt}") from exc
    est.save(ckpt, extra)
    return ckpt


def _load_checkpoint(path: str):
    from .estimator import SCSDSegmenter

    try:
        return SCSDSegmenter.load(path)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        raise RuntimeAbort(f"cannot load checkpoint {path}: {exc}") from exc


def cmd_eval(checkpoint: str, split: str, data: str | None = None, out: str | None = None) -> dict:
    est = _load_checkpoint(checkpoint)
    root = data or est.checkpoint_extra_.get("data_root")
    if root is None:
        raise ConfigError("no dataset location: pass --data")
    try:
        manifest = read_manifest(root)
        samples = load_split(root, split)
    except (FileNotFoundError, KeyError) as exc:
        raise RuntimeAbort(str(exc)) from exc
    if list(manifest["class_names"]) != list(est.class_names):
        raise ConfigError(
            f"class mismatch: checkpoint has {len(est.class_names)} classes, manifest has {len(manifest['class_names'])}"
        )
    X, y = _arrays(samples)
    report = est.evaluate(X, y)
    domains = list(dict.fromkeys(s.domain for s in samples))
    per_domain = {}
    for d in domains:
        idx = [i for i, s in enumerate(samples) if s.domain == d]
        per_domain[d] = est.evaluate(X[idx], y[idx])["mIoU"]
    report = {"checkpoint": str(checkpoint), "split": split, "step": est.step_, "domains": domains, **report, "per_domain": per_domain}
    out = out or str(Path(checkpoint).with_name(f"eval_{split}.json"))
    Path(out).write_text(json.dumps(report, indent=2) + "\n")
    print(f"split {split} ({', '.join(domains)}), step {est.step_}")
    for name, v in report["per_class"].items():
        print(f"  {name:<16} {'n/a' if v is None else f'{v:6.2f}'}")
    print(f"  {'mIoU':<16} {report['mIoU']:6.2f}")
    for d, v in per_domain.items():
        print(f"  [{d}] mIoU {v:6.2f}")
    return report


def cmd_viz(checkpoint: str, kind: str, out: str, sample: int = 0, split: str = "train", data: str | None = None) -> dict:
    est = _load_checkpoint(checkpoint)
    root = data or est.checkpoint_extra_.get("data_root")
    try:
        samples = load_split(root, split)
    except (FileNotFoundError, KeyError, TypeError) as exc:
        raise RuntimeAbort(f"cannot load split {split!r}: {exc}") from exc
    if not 0 <= sample < len(samples):
        raise RuntimeAbort(f"sample index {sample} outside [0, {len(samples)})")
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"{kind}_{split}_{sample:05d}.png")
    try:
        if kind == "layer-masks":
            meta = viz.layer_masks(est, samples[sample], path)
        elif kind == "similarity-map":
            meta = viz.similarity_map(est, samples[sample], path)
        elif kind == "spectrum":
            meta = viz.spectrum(est, samples[sample], path)
        elif kind == "embedding-2d":
            pool = samples
            if split == "train" and "test" in read_manifest(root)["splits"]:
                pool = samples + load_split(root, "test")
            meta = viz.embedding_2d(est, pool, path)
        else:
            raise ConfigError(f"unknown kind {kind!r}; choose from {viz.KINDS}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise RuntimeAbort(str(exc)) from exc
    meta["path"] = path
    print(path)
    return meta


def ablation_setup(cfg: RunConfig) -> AblationSetup:
    params = cfg.estimator_params()
    for flag in ("sqb", "tdst", "sso", "random_state"):
        params.pop(flag)
    ds = cfg.dataset
    return AblationSetup(
        source_domains=cfg.domain_specs("source"),
        target_domains=cfg.domain_specs("target"),
        n_train=ds.n_per_domain,
        n_test=ds.n_test_per_domain,
        layout_seed=ds.layout_seed,
        test_layout_seed=ds.test_layout_seed,
        image_size=ds.image_size,
        estimator_params=params,
    )


def cmd_ablate(cfg: RunConfig, out: str, seeds=(0, 1, 2), table: str = "components") -> dict:
    rows = ROWS if table == "components" else TDST_ROWS
    result = run_ablation(
        ablation_setup(cfg), seeds, rows, on_run=lambda row, seed, s: logger.info("seed %d %s %s", seed, row, s)
    )
    os.makedirs(out, exist_ok=True)
    summary = result.to_dict()
    Path(out, f"ablation_{table}.json").write_text(json.dumps(summary, indent=2) + "\n")
    Path(out, f"ablation_{table}.md").write_text(result.table() + "\n")
    print(result.table())
    return summary


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scsd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render the synthetic multi-domain dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train on the source domains")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--data", help="dataset root (default: dataset.root from the config)")
    t.add_argument("--checkpoint", help="resume from this checkpoint")
    t.add_argument("--seed", type=int)

    e = sub.add_parser("eval", help="per-class IoU and mIoU of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test", help="split name or domain name")
    e.add_argument("--data")
    e.add_argument("--out", help="JSON report path")

    v = sub.add_parser("viz", help="render a figure")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--kind", required=True, choices=viz.KINDS)
    v.add_argument("--out", required=True, help="output directory")
    v.add_argument("--sample", type=int, default=0)
    v.add_argument("--split", default="train")
    v.add_argument("--data")

    a = sub.add_parser("ablate", help="run the component (or TDST strategy) ablation sweep")
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    a.add_argument("--table", choices=("components", "tdst"), default="components")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "generate":
            cmd_generate(_config(args), args.out)
        elif args.command == "train":
            cmd_train(_config(args), args.out, args.data, args.checkpoint)
        elif args.command == "eval":
            cmd_eval(args.checkpoint, args.split, args.data, args.out)
        elif args.command == "viz":
            cmd_viz(args.checkpoint, args.kind, args.out, args.sample, args.split, args.data)
        elif args.command == "ablate":
            cmd_ablate(_config(args), args.out, args.seeds, args.table)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
