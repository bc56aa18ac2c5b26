"""Predictive, calibration and OOD-detection metrics (natural logs throughout)."""
from __future__ import annotations

import warnings

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "accuracy",
    "auroc",
    "brier",
    "calibration_bins",
    "ece",
    "entropy",
    "fpr_at_95tpr",
    "mce",
    "nll",
]

PROB_FLOOR = 1e-12


def _probs(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if np.any(p < 0) or np.any(p > 1) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("rows must be probability vectors")
    return p


def _labels(labels, p) -> np.ndarray:
    y = np.asarray(labels, dtype=np.intp)
    if y.shape != (p.shape[0],) or np.any((y < 0) | (y >= p.shape[1])):
        raise ValueError("labels must be one valid class index per row")
    return y


def entropy(probs) -> np.ndarray | float:
    """Row entropies ``-sum p log p`` with ``0 log 0 = 0``."""
    single = np.ndim(probs) == 1
    p = _probs(probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = np.maximum(-terms.sum(axis=1), 0.0)
    return float(h[0]) if single else h


def accuracy(probs, labels) -> float:
    p = _probs(probs)
    return float(np.mean(p.argmax(axis=1) == _labels(labels, p)))


def nll(probs, labels) -> float:
    """Mean negative log-likelihood; true-class probabilities are floored at 1e-12."""
    p = _probs(probs)
    y = _labels(labels, p)
    pt = p[np.arange(p.shape[0]), y]
    n_clamped = int(np.sum(pt < PROB_FLOOR))
    if n_clamped:
        warnings.warn(
            f"{n_clamped} true-class probabilities clamped to {PROB_FLOOR}", RuntimeWarning
        )
    return float(-np.mean(np.log(np.maximum(pt, PROB_FLOOR))))


def brier(probs, labels) -> float:
    p = _probs(probs)
    y = _labels(labels, p)
    onehot = np.zeros_like(p)
    onehot[np.arange(p.shape[0]), y] = 1.0
    return float(np.mean(np.sum((p - onehot) ** 2, axis=1)))


def calibration_bins(probs, labels, bins: int = 15):
    """Per-bin ``(count, accuracy, confidence)`` over equal-width bins ``(lo, hi]``.

    Confidence 0 falls in the first bin.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    p = _probs(probs)
    y = _labels(labels, p)
    conf = p.max(axis=1)
    correct = (p.argmax(axis=1) == y).astype(np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.searchsorted(edges[1:-1], conf, side="left")
    count = np.bincount(idx, minlength=bins).astype(np.float64)
    with np.errstate(invalid="ignore"):
        acc = np.bincount(idx, weights=correct, minlength=bins) / count
        avg_conf = np.bincount(idx, weights=conf, minlength=bins) / count
    return count, acc, avg_conf


def ece(probs, labels, bins: int = 15) -> float:
    count, acc, conf = calibration_bins(probs, labels, bins)
    nz = count > 0
    return float(np.sum(count[nz] / count.sum() * np.abs(acc[nz] - conf[nz])))


def mce(probs, labels, bins: int = 15) -> float:
    count, acc, conf = calibration_bins(probs, labels, bins)
    nz = count > 0
    return float(np.max(np.abs(acc[nz] - conf[nz])))


def _scores(id_scores, ood_scores):
    s_id = np.asarray(id_scores, dtype=np.float64).ravel()
    s_ood = np.asarray(ood_scores, dtype=np.float64).ravel()
    if s_id.size == 0 or s_ood.size == 0:
        raise ValueError("both ID and OOD score sets must be nonempty")
    return s_id, s_ood


def auroc(id_scores, ood_scores) -> float:
    """P(ID score > OOD score) + 0.5 P(tie), via the Mann-Whitney rank statistic.

    Higher scores mean more in-distribution.
    """
    s_id, s_ood = _scores(id_scores, ood_scores)
    ranks = rankdata(np.concatenate([s_id, s_ood]), method="average")
    n1, n2 = s_id.size, s_ood.size
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n2))


def fpr_at_95tpr(id_scores, ood_scores) -> float:
    """Fraction of OOD scores at or above the 5th percentile of ID scores.

    The percentile is the nearest-rank order statistic ``ceil(0.05 N)``.
    """
    s_id, s_ood = _scores(id_scores, ood_scores)
    rank = max(1, -(-5 * s_id.size // 100))  # exact ceil(0.05 N)
    threshold = np.sort(s_id)[rank - 1]
    return float(np.mean(s_ood >= threshold))
