"""Reconstruction metrics and the accuracy-optimal decision threshold."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateError, DegenerateWarning, ShapeError


@dataclass
class MetricReport:
    acc: float
    auc: float
    f1: float
    fcs: float
    mse: float
    threshold: float

    def to_dict(self):
        return {k: float(v) for k, v in asdict(self).items()}


def optimal_threshold(scores, labels):
    """Accuracy-maximizing cut point; a score counts as positive iff > threshold.

    Candidates are 0, 1 and the midpoints between adjacent distinct scores;
    among equally accurate candidates the smallest is returned.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if labels.all() or not labels.any():
        warnings.warn("threshold undefined for single-class labels; using 0.5",
                      DegenerateWarning, stacklevel=2)
        return 0.5
    u = np.unique(scores)
    cand = np.unique(np.concatenate([[0.0, 1.0], (u[:-1] + u[1:]) / 2.0]))
    pos = np.sort(scores[labels])
    neg = np.sort(scores[~labels])
    tp = pos.size - np.searchsorted(pos, cand, side="right")
    tn = np.searchsorted(neg, cand, side="right")
    return float(cand[np.argmax(tp + tn)])


def accuracy_f1(pred, truth):
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction {pred.shape} vs truth {truth.shape}")
    acc = 1.0 - np.mean(pred != truth)
    tp = np.count_nonzero(pred & truth)
    fp = np.count_nonzero(pred & ~truth)
    fn = np.count_nonzero(~pred & truth)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return float(acc), float(f1)


def auc(scores, labels):
    """Area under the ROC curve as the Mann-Whitney statistic (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = np.count_nonzero(labels)
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def fcs(pred, truth):
    """Cosine similarity of the daily infection-ratio curves (0 if either is zero)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction {pred.shape} vs truth {truth.shape}")
    r_pred = pred.mean(axis=0)
    r_true = truth.mean(axis=0)
    denom = np.linalg.norm(r_pred) * np.linalg.norm(r_true)
    if denom == 0:
        return 0.0
    return float(r_pred @ r_true / denom)


def mse_metric(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction {pred.shape} vs truth {truth.shape}")
    return float(np.mean((truth - pred) ** 2))


def metric_report(preds, truths, threshold):
    """Pool per-sample N x T predictions into one report.

    ACC, F1 and AUC are computed over all entries of all samples; FCS is the
    mean of the per-sample values; MSE uses the raw scores.
    """
    preds = [np.asarray(p) for p in preds]
    truths = [np.asarray(t) for t in truths]
    flat_p = np.concatenate([p.ravel() for p in preds])
    flat_t = np.concatenate([t.ravel() for t in truths])
    binary = flat_p > threshold
    acc, f1 = accuracy_f1(binary, flat_t)
    try:
        area = auc(flat_p, flat_t)
    except DegenerateError:
        area = 0.5
    cos = float(np.mean([fcs(p > threshold, t) for p, t in zip(preds, truths)]))
    return MetricReport(acc, area, f1, cos, mse_metric(flat_p, flat_t), threshold)
