"""Classification and novelty metrics. Pure functions, no randomness."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabelsError, EmptyEvaluationError

CONVENTIONS = {
    "auroc": "Mann-Whitney U with midranks; positive class = novel, score = outlier score O",
    "auprc": "average precision (step integration over distinct thresholds, tied scores form one step); "
             "positive class = known, score = 1 - O",
    "novelty_flag": "novel when O > kappa",
    "weighted_f1": "per-class F1 weighted by true support; P, R and F1 are 0 when undefined",
}


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def accuracy(cm) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise EmptyEvaluationError("confusion matrix is empty")
    return float(np.trace(cm) / total)


def per_class_f1(cm) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def weighted_f1(cm) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise EmptyEvaluationError("confusion matrix is empty")
    support = cm.sum(axis=1)
    return float(np.sum(support * per_class_f1(cm)) / total)


def _check(scores, positives):
    s = np.asarray(scores, dtype=np.float64)
    p = np.asarray(positives, dtype=bool)
    if s.ndim != 1 or s.shape != p.shape or s.size == 0:
        raise ValueError("scores and positives must be equal-length non-empty vectors")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, p


def auroc(scores, positives) -> float:
    """``P(score+ > score-) + P(tie) / 2`` via the rank-sum identity."""
    s, p = _check(scores, positives)
    n_pos = int(p.sum())
    n_neg = p.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("AUROC needs both positives and negatives")
    ranks = rankdata(s, method="average")
    u = ranks[p].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, positives) -> float:
    """Average precision: mean over positives of the precision at that positive's score threshold.

    Ties are one threshold: every item with an equal score counts as retrieved
    together, which makes the value independent of input order.
    """
    s, p = _check(scores, positives)
    n_pos = int(p.sum())
    if n_pos == 0:
        raise DegenerateLabelsError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    p_sorted = p[order]
    tp = np.cumsum(p_sorted)
    # last index of each block of equal scores
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp_at = tp[last]
    precision = tp_at / (last + 1)
    recall_step = np.diff(np.r_[0, tp_at]) / n_pos
    return float(np.sum(precision * recall_step))


def novelty_report(outlier_scores, novel_flags, kappa: float = 0.5) -> dict:
    o = np.asarray(outlier_scores, dtype=np.float64)
    novel = np.asarray(novel_flags, dtype=bool)
    if o.shape != novel.shape:
        raise ValueError("outlier scores and novelty flags differ in length")
    flagged = o > kappa
    return {
        "auroc_novel": auroc(o, novel),
        "auprc_known": auprc(1.0 - o, ~novel),
        "kappa": float(kappa),
        "flagged_novel": int(flagged.sum()),
        "flagged_true_novel": int((flagged & novel).sum()),
        "flagged_known": int((flagged & ~novel).sum()),
        "n_novel": int(novel.sum()),
        "n_known": int((~novel).sum()),
        "mean_outlier_novel": float(o[novel].mean()) if novel.any() else None,
        "mean_outlier_known": float(o[~novel].mean()) if (~novel).any() else None,
    }


def classification_report(y_true, y_pred, n_classes: int) -> dict:
    cm = confusion_matrix(y_true, y_pred, n_classes)
    return {
        "accuracy": accuracy(cm),
        "weighted_f1": weighted_f1(cm),
        "support": [int(v) for v in cm.sum(axis=1)],
        "n_eval": int(cm.sum()),
    }
