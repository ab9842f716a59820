"""Multi-label classification metrics."""

from __future__ import annotations

import logging

import numpy as np
from scipy.stats import rankdata

logger = logging.getLogger(__name__)


class SingleClassError(ValueError):
    pass


def roc_auc(scores, labels) -> float:
    """P(random positive outscores random negative), ties counting one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("roc_auc needs both positive and negative labels")
    ranks = rankdata(s)  # average ranks give the 1/2 tie credit
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def per_class_auc(scores, labels) -> list[float | None]:
    S = np.asarray(scores)
    Y = np.asarray(labels)
    out = []
    for j in range(Y.shape[1]):
        try:
            out.append(roc_auc(S[:, j], Y[:, j]))
        except SingleClassError:
            out.append(None)
    return out


def macro_auc(scores, labels) -> float:
    """Unweighted mean over classes; single-outcome classes are skipped with a warning."""
    aucs = per_class_auc(scores, labels)
    skipped = [j for j, a in enumerate(aucs) if a is None]
    if skipped:
        logger.warning("macro_auc: skipped single-outcome classes %s", skipped)
    valid = [a for a in aucs if a is not None]
    return float(np.mean(valid)) if valid else float("nan")


def f1_per_class(scores, labels, threshold: float = 0.5) -> np.ndarray:
    pred = np.asarray(scores) >= threshold
    y = np.asarray(labels).astype(bool)
    if pred.ndim == 1:
        pred, y = pred[:, None], y[:, None]
    tp = (pred & y).sum(axis=0)
    fp = (pred & ~y).sum(axis=0)
    fn = (~pred & y).sum(axis=0)
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)


def f1_macro(scores, labels, threshold: float = 0.5) -> tuple[float, list[float]]:
    per = f1_per_class(scores, labels, threshold)
    return float(per.mean()), [float(v) for v in per]


def mean_accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of correct binary decisions over all (record, label) cells."""
    pred = np.asarray(scores) >= threshold
    y = np.asarray(labels).astype(bool)
    return float((pred == y).mean())
