"""Component ablation: baseline, +SQB, ++TDST, +++SSO on held-out domains."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .pipeline.data import DEFAULT_DOMAINS, DomainSpec, generate_dataset, stack

logger = logging.getLogger(__name__)

ROWS: tuple[tuple[str, dict[str, bool]], ...] = (
    ("baseline", dict(sqb=False, tdst=False, sso=False)),
    ("+ SQB", dict(sqb=True, tdst=False, sso=False)),
    ("++ TDST", dict(sqb=True, tdst=True, sso=False)),
    ("+++ SSO", dict(sqb=True, tdst=True, sso=True)),
)

# styling strategy on the full model: which spectrum is modulated, and whether tanh bounds it
TDST_ROWS: tuple[tuple[str, dict], ...] = (
    ("original", dict(sqb=True, tdst=True, sso=True, tdst_strategy="original", tdst_tanh=False)),
    ("original + Tanh", dict(sqb=True, tdst=True, sso=True, tdst_strategy="original", tdst_tanh=True)),
    ("low-frequency", dict(sqb=True, tdst=True, sso=True, tdst_strategy="lowfreq", tdst_tanh=False)),
    ("low-frequency + Tanh", dict(sqb=True, tdst=True, sso=True, tdst_strategy="lowfreq", tdst_tanh=True)),
)


@dataclass
class AblationSetup:
    source_domains: Sequence[DomainSpec] = (DEFAULT_DOMAINS["clear"], DEFAULT_DOMAINS["dusk"])
    target_domains: Sequence[DomainSpec] = (DEFAULT_DOMAINS["snow"], DEFAULT_DOMAINS["night"])
    n_train: int = 48
    n_test: int = 24
    layout_seed: int = 0
    test_layout_seed: int = 100_000
    image_size: int = 64
    estimator_params: dict = field(default_factory=dict)


@dataclass
class AblationResult:
    rows: list[str]
    seeds: list[int]
    domains: list[str]
    # miou[row][seed_idx][domain] in percent
    miou: dict[str, list[dict[str, float]]]
    seconds: float

    def mean_miou(self, row: str) -> np.ndarray:
        """Held-out mean mIoU per seed."""
        return np.array([np.mean([run[d] for d in self.domains]) for run in self.miou[row]])

    def table(self) -> str:
        head = "| Components | " + " | ".join(f"-> {d}" for d in self.domains) + " | Avg. |"
        sep = "|" + "---|" * (len(self.domains) + 2)
        lines = [head, sep]
        prev = None
        for row in self.rows:
            per_dom = [np.mean([run[d] for run in self.miou[row]]) for d in self.domains]
            avg = float(self.mean_miou(row).mean())
            delta = "" if prev is None else f" ({avg - prev:+.2f})"
            lines.append(f"| {row} | " + " | ".join(f"{v:.2f}" for v in per_dom) + f" | {avg:.2f}{delta} |")
            prev = avg
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "seeds": self.seeds,
            "domains": self.domains,
            "miou": self.miou,
            "mean_miou": {r: self.mean_miou(r).tolist() for r in self.rows},
            "seconds": self.seconds,
        }


def run_ablation(
    setup: AblationSetup | None = None,
    seeds: Sequence[int] = (0, 1, 2),
    rows: Sequence[tuple[str, dict]] = ROWS,
    on_run: Callable[[str, int, dict[str, float]], None] | None = None,
) -> AblationResult:
    """Train every row under every seed on the source domains; score each target domain."""
    from .estimator import SCSDSegmenter

    setup = setup or AblationSetup()
    t0 = time.time()
    train = generate_dataset(setup.source_domains, setup.n_train, setup.layout_seed, setup.image_size)
    X, y, _ = stack(train)
    tests = {}
    for spec in setup.target_domains:
        Xt, yt, _ = stack(generate_dataset([spec], setup.n_test, setup.test_layout_seed, setup.image_size))
        tests[spec.name] = (Xt, yt)
    miou: dict[str, list[dict[str, float]]] = {name: [] for name, _ in rows}
    for seed in seeds:
        for name, flags in rows:
            est = SCSDSegmenter(**{**setup.estimator_params, **flags, "random_state": seed}).fit(X, y)
            scores = {d: est.score(Xt, yt) for d, (Xt, yt) in tests.items()}
            miou[name].append(scores)
            logger.info("seed %d %-10s %s", seed, name, scores)
            if on_run is not None:
                on_run(name, seed, scores)
    return AblationResult(
        rows=[name for name, _ in rows],
        seeds=list(seeds),
        domains=list(tests),
        miou=miou,
        seconds=time.time() - t0,
    )
