"""Robust training under label noise by risk-sorted clean/noisy separation.

A network pretrained on the whole corrupted set scores every sample; within
each mini-batch the ``gamma`` fraction with the highest cross-entropy is
treated as noisy.  A fresh network is then trained to minimise the mean loss
on the predicted-clean part minus the mean loss on the predicted-noisy part,
i.e. the noisy labels act as complementary labels.
"""

from __future__ import annotations

import math

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import mlp
from .data import DataMatrix, FlipMask, derive_seed, flip_labels, gen_gauss_classes
from .errors import InvalidArgument, TrainingDiverged
from .models import Hypothesis, ModelSpec, accuracy, fit, init_network, sample_losses

COMPLEMENTARY_CLIP = 10.0


@dataclass(frozen=True, eq=False)
class NoisySplit:
    clean_idx: np.ndarray
    noisy_idx: np.ndarray
    gamma: float


@dataclass(frozen=True)
class DetectionMetrics:
    precision_clean: float
    recall_clean: float
    precision_noisy: float
    recall_noisy: float


@dataclass(frozen=True)
class CaseStudyReport:
    gamma: float
    pretrained_acc: float
    retrained_acc: float
    precision_clean: float
    recall_clean: float
    precision_noisy: float
    recall_noisy: float
    discrepancy: float

    FIELDS = (
        "gamma",
        "pretrained_acc",
        "retrained_acc",
        "precision_clean",
        "recall_clean",
        "precision_noisy",
        "recall_noisy",
        "discrepancy",
    )

    def row(self):
        return [getattr(self, f) for f in self.FIELDS]


def _check_gamma(gamma):
    if not 0 < gamma < 1:
        raise InvalidArgument(f"gamma must lie in (0, 1), got {gamma}")


def _require_classifier(spec: ModelSpec):
    if spec.family != "mlp_classifier":
        raise InvalidArgument("the noisy-label pipeline needs an mlp_classifier spec")


def pretrain(corrupted: DataMatrix, spec: ModelSpec, seed: int) -> Hypothesis:
    """Plain cross-entropy training on the whole corrupted set."""
    _require_classifier(spec)
    if not corrupted.has_labels:
        raise InvalidArgument("pretrain needs labeled data")
    return fit(spec, corrupted, seed)


def split_losses(losses: np.ndarray, gamma: float) -> NoisySplit:
    """Top ``floor(gamma * B)`` losses are noisy; ties go to the lower index as clean."""
    _check_gamma(gamma)
    order = np.argsort(losses, kind="stable")
    k = int(np.floor(gamma * len(losses)))
    cut = len(losses) - k
    return NoisySplit(np.sort(order[:cut]), np.sort(order[cut:]), gamma)


def split_by_risk(batch: DataMatrix, h: Hypothesis, gamma: float) -> NoisySplit:
    """Split a labeled batch by per-sample cross-entropy under ``h``."""
    if not batch.has_labels:
        raise InvalidArgument("split_by_risk needs labeled data")
    return split_losses(sample_losses(h, batch), gamma)


def fixed_batches(n: int, batch: int, seed: int) -> List[np.ndarray]:
    order = np.random.default_rng(derive_seed(seed, 2)).permutation(n)
    return [order[i : i + batch] for i in range(0, n, batch)]


def batch_splits(corrupted: DataMatrix, pretrained: Hypothesis, gamma: float, batch: int, seed: int):
    """Partition rows into fixed batches and split each with the frozen pretrained network.

    Returns ``(batches, per_batch_splits, aggregated_split)``; indices in the
    aggregated split refer to rows of ``corrupted``.
    """
    _check_gamma(gamma)
    losses = sample_losses(pretrained, corrupted)
    batches = fixed_batches(corrupted.rows, batch, seed)
    splits, clean, noisy = [], [], []
    for idx in batches:
        s = split_losses(losses[idx], gamma)
        splits.append((idx[s.clean_idx], idx[s.noisy_idx]))
        clean.append(idx[s.clean_idx])
        noisy.append(idx[s.noisy_idx])
    agg = NoisySplit(np.sort(np.concatenate(clean)), np.sort(np.concatenate(noisy)), gamma)
    return batches, splits, agg


def retrain_robust(
    corrupted: DataMatrix,
    pretrained: Hypothesis,
    gamma: float,
    spec: ModelSpec,
    seed: int,
    clip: float = COMPLEMENTARY_CLIP,
) -> Hypothesis:
    """Train a fresh network on ``mean CE(B_c) - mean min(CE(B_n), clip)`` per batch.

    Batch membership is fixed once from ``seed`` and only the batch order is
    reshuffled each epoch, so the clean/noisy split of every batch stays the same.
    """
    _require_classifier(spec)
    if not corrupted.has_labels:
        raise InvalidArgument("retrain_robust needs labeled data")
    batches, splits, _ = batch_splits(corrupted, pretrained, gamma, spec.batch, seed)
    role = np.zeros(corrupted.rows)
    weight = np.zeros(corrupted.rows)
    for clean_idx, noisy_idx in splits:
        role[clean_idx] = 1.0
        role[noisy_idx] = -1.0
        weight[clean_idx] = 1.0 / len(clean_idx)
        if len(noisy_idx):
            weight[noisy_idx] = 1.0 / len(noisy_idx)
    labels = corrupted.labels

    def objective(out, idx):
        ce, grad = mlp.cross_entropy(out, labels[idx])
        r = role[idx]
        noisy = r < 0
        # clamped complementary terms carry no gradient
        active = np.where(noisy, ce < clip, True)
        ce_used = np.where(noisy, np.minimum(ce, clip), ce)
        w = r * weight[idx]
        loss = float(np.sum(w * ce_used))
        return loss, grad * (w * active)[:, None]

    order_rng = np.random.default_rng(derive_seed(seed, 3))
    params = init_network(spec, corrupted, seed)
    params, history = mlp.train(
        params,
        corrupted.values,
        objective,
        epochs=spec.epochs,
        batch=spec.batch,
        optimizer=spec.optimizer,
        lr=spec.lr,
        rng=order_rng,
        batches=lambda epoch: [batches[i] for i in order_rng.permutation(len(batches))],
    )
    return Hypothesis(spec, params, tuple(history))


def detection_metrics(split: NoisySplit, mask: FlipMask) -> DetectionMetrics:
    """Precision and recall of noisy detection (flipped = positive) and of clean detection.

    A rate with an empty denominator is reported as 0.
    """
    n = len(mask.flipped)
    pred_noisy = np.zeros(n, dtype=bool)
    pred_noisy[split.noisy_idx] = True
    if len(split.clean_idx) + len(split.noisy_idx) != n:
        raise InvalidArgument("split does not cover the dataset")
    truth = mask.flipped

    def ratio(a, b):
        return float(a) / b if b else 0.0

    tp_noisy = np.count_nonzero(pred_noisy & truth)
    tp_clean = np.count_nonzero(~pred_noisy & ~truth)
    return DetectionMetrics(
        precision_clean=ratio(tp_clean, np.count_nonzero(~pred_noisy)),
        recall_clean=ratio(tp_clean, np.count_nonzero(~truth)),
        precision_noisy=ratio(tp_noisy, np.count_nonzero(pred_noisy)),
        recall_noisy=ratio(tp_noisy, np.count_nonzero(truth)),
    )


def clean_noisy_discrepancy(corrupted: DataMatrix, h: Hypothesis, gamma: float) -> float:
    """Risk gap under ``h`` between the predicted-clean and predicted-noisy parts of the whole set."""
    losses = sample_losses(h, corrupted)
    return discrepancy_from_losses(losses, gamma)


def discrepancy_from_losses(losses, gamma) -> float:
    losses = np.asarray(losses, dtype=np.float64)
    s = split_losses(losses, gamma)
    if not len(s.noisy_idx):
        return 0.0
    # centring leaves the gap unchanged and makes equal losses give exactly 0
    losses = losses - losses.min()
    clean = math.fsum(losses[s.clean_idx]) / len(s.clean_idx)
    noisy = math.fsum(losses[s.noisy_idx]) / len(s.noisy_idx)
    return abs(clean - noisy)


@dataclass(frozen=True)
class CaseStudyConfig:
    """Desk-scale setup: labeled Gaussian classes standing in for an image benchmark."""

    n_train: int = 2000
    n_test: int = 2000
    classes: int = 10
    dim: int = 10
    separation: float = 4.0
    noise_rate: float = 0.2
    noise_mode: str = "symmetry"
    gammas: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
    spec: ModelSpec = field(
        default_factory=lambda: ModelSpec(
            "mlp_classifier", hidden=(128, 128), epochs=60, batch=128, optimizer="sgd", lr=0.01
        )
    )
    seed: int = 0


@dataclass
class CaseStudyResult:
    reports: List[CaseStudyReport]
    pretrained: Hypothesis
    curves: List[Tuple[str, float, int, float]]  # (phase, gamma, epoch, loss)


def make_case_data(cfg: CaseStudyConfig):
    train = gen_gauss_classes(cfg.n_train, cfg.classes, cfg.dim, cfg.separation, derive_seed(cfg.seed, 0))
    test = gen_gauss_classes(cfg.n_test, cfg.classes, cfg.dim, cfg.separation, derive_seed(cfg.seed, 1))
    corrupted, mask = flip_labels(train, cfg.noise_rate, cfg.noise_mode, derive_seed(cfg.seed, 2))
    return corrupted, mask, test


def run_case_study(cfg: CaseStudyConfig, pretrained: Optional[Hypothesis] = None) -> CaseStudyResult:
    """Pretrain once, then retrain and evaluate for every ``gamma``."""
    corrupted, mask, test = make_case_data(cfg)
    if pretrained is None:
        pretrained = pretrain(corrupted, cfg.spec, derive_seed(cfg.seed, 3))
    pre_acc = accuracy(pretrained, test)
    curves = [("pretrain", float("nan"), e, loss) for e, loss in enumerate(pretrained.history)]
    losses = sample_losses(pretrained, corrupted)
    reports = []
    for gamma in cfg.gammas:
        retrain_seed = derive_seed(cfg.seed, 4)
        try:
            h = retrain_robust(corrupted, pretrained, gamma, cfg.spec, retrain_seed)
        except TrainingDiverged as exc:
            raise TrainingDiverged(f"retraining diverged at gamma={gamma}: {exc}", exc.batch) from exc
        _, _, agg = batch_splits(corrupted, pretrained, gamma, cfg.spec.batch, retrain_seed)
        m = detection_metrics(agg, mask)
        reports.append(
            CaseStudyReport(
                gamma=float(gamma),
                pretrained_acc=pre_acc,
                retrained_acc=accuracy(h, test),
                precision_clean=m.precision_clean,
                recall_clean=m.recall_clean,
                precision_noisy=m.precision_noisy,
                recall_noisy=m.recall_noisy,
                discrepancy=discrepancy_from_losses(losses, gamma),
            )
        )
        curves.extend(("retrain", float(gamma), e, loss) for e, loss in enumerate(h.history))
    return CaseStudyResult(reports, pretrained, curves)


def sweep_gammas(start=0.1, stop=0.7, step=0.1) -> Sequence[float]:
    count = int(round((stop - start) / step)) + 1
    return tuple(round(start + i * step, 10) for i in range(count))
