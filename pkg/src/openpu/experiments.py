"""Seeded synthetic runs shared by the CLI sweeps and the acceptance checks."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import ContaminationSpec, make_split, synthetic_spec
from .evaluate import MetricsReport, compute_metrics, mean_stderr
from .trainer import TrainConfig, predict, train

# Synthetic protocol used for the desk-scale comparisons: 3 known and 2
# overlapping unknown Gaussians in 20 bands, 100 labeled/class, 4000 wild,
# 5000 test.  The small from-scratch MLP underfits at the TrainConfig default
# step, hence the larger learning rate.
SYNTHETIC_SPEC = dict(n_known=3, n_unknown=2, dim=20, pi=0.6, separation=4.0, overlap=0.5, sigma=1.0, seed=0)
SYNTHETIC_SPLIT = dict(per_class_labeled=100, n_wild=4000, n_test=5000)
SYNTHETIC_LR = 3e-3


def baseline_config(**kw) -> TrainConfig:
    """Naive PU baseline: one network, plain BCE, a single rejection head."""
    base = dict(single_network=True, loss_c="bce", weighting="none", multi_pu=False, beta=0.0,
                base_lr=SYNTHETIC_LR)
    base.update(kw)
    return TrainConfig(**base)


def full_config(**kw) -> TrainConfig:
    base = dict(base_lr=SYNTHETIC_LR)
    base.update(kw)
    return TrainConfig(**base)


@dataclass
class SeedResult:
    seed: int
    report: MetricsReport
    history: list[dict] = field(repr=False)


def run_seed(cfg: TrainConfig, seed: int, spec: ContaminationSpec | None = None,
             split: dict | None = None, aux_source: str = "wild") -> SeedResult:
    spec = spec or synthetic_spec(**SYNTHETIC_SPEC)
    split = split or SYNTHETIC_SPLIT
    D_k, D_wild, D_test = make_split(spec, seed=seed, aux_source=aux_source, **split)
    cfg = replace(cfg, seed=seed)
    result = train(cfg, D_k, D_wild)
    preds = predict(result.net_c, result.net_e, D_test.X, cfg.deploy, cfg.threshold)
    return SeedResult(seed, compute_metrics(preds, D_test.y, spec.n_classes), result.history)


def run_seeds(cfg: TrainConfig, seeds, **kw) -> list[SeedResult]:
    return [run_seed(cfg, s, **kw) for s in seeds]


def summarize(results: list[SeedResult]) -> dict[str, float]:
    out = {}
    for key in ("open_oa", "closed_oa", "f1_u", "auc_u"):
        m, se = mean_stderr([getattr(r.report, key) for r in results])
        out[key] = m
        out[key + "_se"] = se
    return out


def mean_metric(results: list[SeedResult], key: str = "f1_u") -> float:
    return float(np.mean([getattr(r.report, key) for r in results]))
