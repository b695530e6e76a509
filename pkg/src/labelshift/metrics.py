"""Evaluation metrics and the statistics used to summarise trial sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ArgumentError, DegenerateSampleError
from .numerics import argmax_rows

EXACT_WILCOXON_MAX_N = 20


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    n: int
    auxiliary: dict = field(default_factory=dict)


def mse_weights(estimated, true_w):
    """Mean over classes of the squared weight error."""
    a = np.asarray(estimated, dtype=float)
    b = np.asarray(true_w, dtype=float)
    if a.shape != b.shape:
        raise ArgumentError(f"weight vectors differ in length: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def _labels_for(probs, labels):
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ArgumentError("labels do not match the probability matrix")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ArgumentError("labels out of range")
    return probs, labels


def nll(probs, labels):
    """Mean negative log likelihood in nats; +inf if a true class has probability 0."""
    probs, labels = _labels_for(probs, labels)
    picked = probs[np.arange(labels.size), labels]
    if np.any(picked <= 0):
        return math.inf
    return float(-np.mean(np.log(picked)))


def accuracy(probs, labels):
    probs, labels = _labels_for(probs, labels)
    return float(np.mean(argmax_rows(probs) == labels))


def ece(probs, labels, num_bins=15):
    """Top-label expected calibration error over equal-width bins.

    Bins are (k/B, (k+1)/B]; empty bins contribute nothing.
    """
    if num_bins < 1:
        raise ArgumentError("num_bins must be at least 1")
    probs, labels = _labels_for(probs, labels)
    return ece_report(probs, labels, num_bins).value


def ece_report(probs, labels, num_bins=15):
    probs, labels = _labels_for(probs, labels)
    n = labels.size
    conf = probs.max(axis=1)
    correct = (argmax_rows(probs) == labels).astype(float)
    edges = np.linspace(0.0, 1.0, num_bins + 1)
    bins = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, num_bins - 1)
    counts = np.bincount(bins, minlength=num_bins)
    conf_sum = np.bincount(bins, weights=conf, minlength=num_bins)
    acc_sum = np.bincount(bins, weights=correct, minlength=num_bins)
    value = float(np.sum(np.abs(acc_sum - conf_sum)) / n)
    return MetricReport("ece", value, n, {"bin_counts": counts.tolist()})


def _kl(p, q):
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def js_divergence(p, q):
    """Jensen-Shannon divergence in nats; bounded by ln 2."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ArgumentError("distributions differ in length")
    mid = 0.5 * (p + q)
    return 0.5 * _kl(p, mid) + 0.5 * _kl(q, mid)


def systematic_bias(probs, labels):
    """JS divergence between label proportions and mean predicted probabilities."""
    probs, labels = _labels_for(probs, labels)
    freq = np.bincount(labels, minlength=probs.shape[1]) / labels.size
    return js_divergence(freq, probs.mean(axis=0))


def delta_accuracy(adapted, original, labels):
    """Accuracy gain of ``adapted`` over ``original``, in percentage points."""
    adapted = np.asarray(adapted, dtype=float)
    original = np.asarray(original, dtype=float)
    if adapted.shape != original.shape:
        raise ArgumentError("adapted and original predictions differ in shape")
    return 100.0 * (accuracy(adapted, labels) - accuracy(original, labels))


# --- Wilcoxon signed-rank ------------------------------------------------

def signed_rank_distribution(ranks):
    """Exact null distribution of W+ for the given (possibly tied) ranks.

    Every sign pattern is equally likely; counts are accumulated by
    dynamic programming over doubled ranks so half-integer average ranks
    stay integral. Returns ``(values, probabilities)``.
    """
    doubled = np.rint(2 * np.asarray(ranks, dtype=float)).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    support = np.flatnonzero(counts)
    probs = np.array([c / 2 ** len(doubled) for c in counts[support]], dtype=float)
    return support / 2.0, probs


def wilcoxon_signed_rank(diffs, alternative="greater"):
    """One-sided (or two-sided) p-value of the Wilcoxon signed-rank test.

    ``greater`` tests whether the differences tend to be positive. Zero
    differences are dropped and tied magnitudes share average ranks. Up to
    20 non-zero differences the p-value is exact; beyond that a normal
    approximation with tie and continuity corrections is used.
    """
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise DegenerateSampleError("all differences are zero")
    if alternative not in ("greater", "less", "two-sided"):
        raise ArgumentError(f"unknown alternative {alternative!r}")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_WILCOXON_MAX_N:
        values, probs = signed_rank_distribution(ranks)
        tol = 1e-9
        upper = float(probs[values >= w_plus - tol].sum())
        lower = float(probs[values <= w_plus + tol].sum())
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
        sd = math.sqrt(var)
        upper = 0.5 * math.erfc(((w_plus - mean - 0.5) / sd) / math.sqrt(2))
        lower = 0.5 * math.erfc(((mean - w_plus - 0.5) / sd) / math.sqrt(2))

    if alternative == "greater":
        return min(upper, 1.0)
    if alternative == "less":
        return min(lower, 1.0)
    return min(1.0, 2.0 * min(upper, lower))


def rank_methods(per_trial_scores, lower_is_better=True):
    """Median over trials of each method's within-trial rank (0 = best,
    ties averaged). Rows are trials, columns are methods."""
    scores = np.asarray(per_trial_scores, dtype=float)
    if scores.ndim != 2 or scores.shape[0] < 1 or scores.shape[1] < 2:
        raise ArgumentError("need a trials x methods matrix with at least two methods")
    keyed = scores if lower_is_better else -scores
    ranks = rankdata(keyed, axis=1) - 1.0
    return np.median(ranks, axis=0)
