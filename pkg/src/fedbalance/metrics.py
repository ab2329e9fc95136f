"""Accuracy, macro one-vs-rest AUC, and dispersion statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    auc: float
    sample_count: int

    def __post_init__(self):
        if not (0.0 <= self.accuracy <= 1.0 and 0.0 <= self.auc <= 1.0):
            raise ValueError("accuracy and auc must lie in [0, 1]")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


def accuracy(predicted: np.ndarray, true: np.ndarray) -> float:
    """Fraction of exact label matches."""
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if len(predicted) != len(true):
        raise ValueError("length mismatch")
    if len(true) == 0:
        raise ValueError("empty input")
    return float(np.mean(predicted == true))


def _binary_auc(scores: np.ndarray, positives: np.ndarray) -> float:
    # Mann-Whitney with tied ranks averaged.
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[positives].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_auc_macro(scores: np.ndarray, labels: np.ndarray) -> float:
    """Macro mean of one-vs-rest AUCs over the classes present in ``labels``.

    ``scores`` is (n_samples, n_classes); column c ranks membership in
    class c.  Classes absent from ``labels`` are skipped.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or len(scores) != len(labels):
        raise ValueError("scores must be (n_samples, n_classes) aligned with labels")
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite scores")
    present = np.unique(labels)
    if len(present) < 2:
        raise ValueError("fewer than 2 classes present in labels")
    aucs = [_binary_auc(scores[:, c], labels == c) for c in present]
    return float(np.mean(aucs))


def sample_std(values) -> float:
    """Sample standard deviation (n-1 denominator); 0 for a single value."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty input")
    if values.size == 1:
        return 0.0
    return float(np.std(values, ddof=1))


def aggregate_over_folds(records) -> list[dict]:
    """Mean of each metric across folds, per (sampler, round).

    ``records`` is a sequence of MetricsRecord-like objects.  Every
    (sampler, round) pair must carry one record per fold; a ragged grid
    is an error.  Sampler order follows first appearance; rounds ascend.
    """
    groups: dict[tuple[str, int], list] = {}
    folds = set()
    sampler_order: list[str] = []
    for r in records:
        key = (r.sampler, r.round)
        groups.setdefault(key, []).append(r)
        folds.add(r.fold)
        if r.sampler not in sampler_order:
            sampler_order.append(r.sampler)
    n_folds = len(folds)
    out = []
    for sampler in sampler_order:
        rounds = sorted(rnd for (s, rnd) in groups if s == sampler)
        for rnd in rounds:
            group = groups[(sampler, rnd)]
            if len(group) != n_folds or len({g.fold for g in group}) != n_folds:
                raise ValueError(
                    f"ragged grid: (sampler={sampler}, round={rnd}) has "
                    f"{len(group)} records for {n_folds} folds"
                )
            out.append(
                {
                    "sampler": sampler,
                    "round": rnd,
                    "test_accuracy": float(np.mean([g.test_accuracy for g in group])),
                    "test_auc": float(np.mean([g.test_auc for g in group])),
                    "std_test_accuracy": float(np.mean([g.std_test_accuracy for g in group])),
                    "std_test_auc": float(np.mean([g.std_test_auc for g in group])),
                    "train_loss": float(np.mean([g.train_loss for g in group])),
                }
            )
    return out
