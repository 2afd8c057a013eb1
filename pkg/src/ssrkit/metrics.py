"""Ranking metrics: AUC (rank statistic), GAUC, LogLoss."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class MetricError(Exception):
    pass


def evaluate_auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative,
    ties counted 0.5. O(n log n) via the rank-sum statistic."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: both classes must be present")
    ranks = rankdata(scores, method="average")
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def evaluate_auc_pairwise(scores, labels) -> float:
    """O(n^2) all-pairs oracle, used to verify evaluate_auc."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise MetricError("AUC undefined: both classes must be present")
    wins = 0.0
    for p in pos:
        wins += np.sum(p > neg) + 0.5 * np.sum(p == neg)
    return wins / (pos.size * neg.size)


def evaluate_gauc(scores, labels, user_ids) -> float:
    """Impression-count-weighted mean of per-user AUC; users with a single
    class are skipped entirely (excluded from numerator and denominator)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    user_ids = np.asarray(user_ids)
    num = 0.0
    den = 0.0
    for uid in np.unique(user_ids):
        m = user_ids == uid
        ul = labels[m]
        if ul.min() == ul.max():
            continue
        num += m.sum() * evaluate_auc(scores[m], ul)
        den += m.sum()
    if den == 0:
        raise MetricError("GAUC undefined: no user has both classes")
    return num / den


def evaluate_logloss(probabilities, labels,
                     clamp: float = 1e-12) -> float:
    p = np.clip(np.asarray(probabilities, dtype=np.float64),
                clamp, 1.0 - clamp)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
