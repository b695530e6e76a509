"""Target-prior and shift-weight estimation under label shift.

Maximum likelihood (EM and a direct projected-gradient maximiser), the
confusion-matrix moment estimators BBSL and RLLS, and the Bayes-rule
adaptation of predicted probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ArgumentError, DegenerateRowError, SingularMatrixError
from .numerics import argmax_rows, as_prob_matrix, as_simplex, project_to_simplex

PRIOR_EPS = 1e-8
COND_LIMIT = 1e12


class PriorMode(str, Enum):
    MEAN_PREDICTION = "MeanPrediction"
    LABEL_FREQUENCY = "LabelFrequency"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).replace("_", "").replace("-", "").lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ArgumentError(f"unknown source prior mode {value!r}")


class MomentMode(str, Enum):
    HARD = "Hard"
    SOFT = "Soft"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for member in cls:
            if str(value).lower() == member.value.lower():
                return member
        raise ArgumentError(f"unknown moment mode {value!r}; expected Hard or Soft")


@dataclass(frozen=True, eq=False)
class EmResult:
    """Outcome of a maximum-likelihood prior estimate.

    ``log_likelihood_trace[s]`` is the objective (constant dropped) at the
    s-th iterate, so it has ``iterations + 1`` entries.
    """

    target_priors: np.ndarray
    weights: np.ndarray
    source_priors: np.ndarray
    iterations: int
    final_log_likelihood: float
    converged: bool
    log_likelihood_trace: np.ndarray


@dataclass(frozen=True, eq=False)
class RllsResult:
    weights: np.ndarray
    theta: np.ndarray
    iterations: int
    converged: bool
    objective: float


def estimate_source_priors(valid_probs=None, mode=PriorMode.MEAN_PREDICTION,
                           labels=None, num_classes=None):
    """Source-domain class priors from a validation set.

    ``MeanPrediction`` averages the (calibrated) predicted probabilities,
    which makes EM a fixed point when there is no shift. ``LabelFrequency``
    counts labels.
    """
    mode = PriorMode.parse(mode)
    if mode is PriorMode.MEAN_PREDICTION:
        if valid_probs is None:
            raise ArgumentError("MeanPrediction needs validation probabilities")
        p = as_prob_matrix(valid_probs, "validation probabilities")
        return as_simplex(p.mean(axis=0), "source priors")
    if labels is None:
        raise ArgumentError("LabelFrequency source priors need labels")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ArgumentError("LabelFrequency source priors need at least one label")
    if num_classes is None:
        num_classes = (np.asarray(valid_probs).shape[1] if valid_probs is not None
                       else int(labels.max()) + 1)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ArgumentError("labels out of range")
    return np.bincount(labels, minlength=num_classes) / labels.size


def _check_source_priors(source_priors, m, eps):
    p = as_simplex(source_priors, "source priors")
    if p.size != m:
        raise ArgumentError(f"source priors have {p.size} classes, probabilities have {m}")
    return p


def shift_log_likelihood(q, target_probs, source_priors, eps=PRIOR_EPS):
    """sum_k log sum_i (p(i|x_k) / p_i) q_i, i.e. the label-shift log
    likelihood up to an additive constant. Returns -inf when some row has
    zero likelihood."""
    probs = np.asarray(target_probs, dtype=float)
    p = np.asarray(source_priors, dtype=float)
    if np.any(p < eps):
        raise ArgumentError(
            f"every source prior must be at least {eps:g}; got min {p.min():.3g}"
        )
    q = np.asarray(q, dtype=float)
    if q.shape != p.shape or probs.ndim != 2 or probs.shape[1] != p.size:
        raise ArgumentError("dimension mismatch between q, priors and probabilities")
    s = (probs / p) @ q
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(s)))


def _reduced_problem(target_probs, source_priors, eps):
    probs = as_prob_matrix(target_probs, "target probabilities")
    m = probs.shape[1]
    p = _check_source_priors(source_priors, m, eps)
    keep = p >= eps
    if not keep.any():
        raise ArgumentError("no class has a source prior above the positivity threshold")
    ratios = probs[:, keep] / p[keep]
    dead = np.flatnonzero(ratios.sum(axis=1) <= 0)
    if dead.size:
        raise ArgumentError(
            f"target row {dead[0]} has no probability mass on any class with a "
            "positive source prior"
        )
    return probs, p, keep, ratios


def _expand(q_reduced, keep):
    q = np.zeros(keep.size)
    q[keep] = q_reduced
    return q


def _finish(q_reduced, p, keep, iterations, trace, converged):
    q = _expand(q_reduced, keep)
    weights = np.zeros_like(q)
    weights[keep] = q[keep] / p[keep]
    trace = np.asarray(trace, dtype=float)
    return EmResult(q, weights, p, iterations, float(trace[-1]), converged, trace)


def em_estimate(target_probs, source_priors, tol=1e-10, max_iter=10_000, eps=PRIOR_EPS):
    """Saerens-style EM for the target-domain class priors.

    Starts at the source priors and alternates the Bayes-rule E-step with
    the averaging M-step until the L1 change in the priors drops to ``tol``.
    Classes whose source prior is below ``eps`` are dropped from the
    problem and get prior and weight zero. Hitting ``max_iter`` is reported
    through ``converged``, not raised.
    """
    _, p, keep, ratios = _reduced_problem(target_probs, source_priors, eps)
    q = p[keep] / p[keep].sum()
    trace = []
    converged = False
    iterations = 0
    n = ratios.shape[0]
    ratios_t = np.ascontiguousarray(ratios.T)
    while iterations < max_iter:
        s = ratios @ q
        trace.append(np.sum(np.log(s)))
        # E-step posteriors averaged over rows, without forming the N x m matrix
        q_new = q * (ratios_t @ (1.0 / s)) / n
        q_new /= q_new.sum()
        change = np.abs(q_new - q).sum()
        q = q_new
        iterations += 1
        if change <= tol:
            converged = True
            break
    trace.append(np.sum(np.log(ratios @ q)))
    return _finish(q, p, keep, iterations, trace, converged)


def ml_estimate_direct(target_probs, source_priors, tol=1e-13, max_iter=100_000,
                       eps=PRIOR_EPS):
    """Maximise the same concave likelihood by projected gradient ascent.

    Each step moves along the gradient, projects back onto the simplex and
    backtracks (Armijo) until the objective improves sufficiently. Serves
    as an independent cross-check on :func:`em_estimate`.
    """
    _, p, keep, ratios = _reduced_problem(target_probs, source_priors, eps)
    n = ratios.shape[0]

    def mean_ll(q):
        s = ratios @ q
        if np.any(s <= 0):
            return -np.inf, s
        return np.mean(np.log(s)), s

    q = p[keep] / p[keep].sum()
    value, s = mean_ll(q)
    trace = [value * n]
    step = 1.0
    converged = False
    iterations = 0
    while iterations < max_iter:
        grad = ratios.T @ (1.0 / s) / n
        while True:
            cand = project_to_simplex(q + step * grad)
            cand_value, cand_s = mean_ll(cand)
            if cand_value >= value + 1e-4 * grad @ (cand - q):
                break
            step *= 0.5
            if step < 1e-20:
                cand, cand_value, cand_s = q, value, s
                break
        change = np.abs(cand - q).sum()
        iterations += 1
        q, value, s = cand, cand_value, cand_s
        trace.append(value * n)
        if change <= tol:
            converged = True
            break
        step *= 2.0
    return _finish(q, p, keep, iterations, trace, converged)


def weights_from_priors(q, p, eps=PRIOR_EPS):
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape:
        raise ArgumentError("target and source priors have different lengths")
    if np.any(p < eps):
        raise ArgumentError(f"source priors must be at least {eps:g}")
    return q / p


def adapt_predictions(probs, weights):
    """Re-weight each row by the class ratios and renormalise (Bayes rule)."""
    probs = np.asarray(probs, dtype=float)
    w = np.asarray(weights, dtype=float)
    if probs.ndim != 2 or w.shape != (probs.shape[1],):
        raise ArgumentError("weights do not match the number of classes")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ArgumentError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise ArgumentError("at least one weight must be positive")
    numer = probs * w
    denom = numer.sum(axis=1)
    bad = np.flatnonzero(denom <= 0)
    if bad.size:
        raise DegenerateRowError(int(bad[0]))
    return numer / denom[:, None]


# --- moment matching -----------------------------------------------------

def confusion_matrix(mode, valid_probs, valid_labels):
    """Joint predicted-by-true frequency matrix, C[i, j] ~ P(pred=i, y=j).

    Hard counts argmax predictions; Soft accumulates predicted probabilities.
    """
    mode = MomentMode.parse(mode)
    probs = np.asarray(valid_probs, dtype=float)
    labels = np.asarray(valid_labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ArgumentError("validation probabilities must be a non-empty matrix")
    n, m = probs.shape
    if labels.shape != (n,):
        raise ArgumentError("labels do not match validation probabilities")
    if labels.min() < 0 or labels.max() >= m:
        raise ArgumentError("labels out of range")
    onehot_y = np.eye(m)[labels]
    if mode is MomentMode.HARD:
        preds = np.eye(m)[argmax_rows(probs)]
    else:
        preds = probs
    return preds.T @ onehot_y / n


def target_moments(mode, target_probs):
    """Predicted-class frequencies (Hard) or mean predictions (Soft) on the
    target set, normalised by the number of target samples."""
    mode = MomentMode.parse(mode)
    probs = np.asarray(target_probs, dtype=float)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ArgumentError("target probabilities must be a non-empty matrix")
    if mode is MomentMode.HARD:
        return np.bincount(argmax_rows(probs), minlength=probs.shape[1]) / probs.shape[0]
    return probs.mean(axis=0)


def bbsl_weights_from_moments(confusion, moments, cond_limit=COND_LIMIT):
    C = np.asarray(confusion, dtype=float)
    u = np.asarray(moments, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or u.shape != (C.shape[0],):
        raise ArgumentError("confusion matrix and moments have inconsistent shapes")
    cond = np.linalg.cond(C)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularMatrixError("confusion matrix is singular", cond)
    w = np.linalg.solve(C, u)
    return np.maximum(w, 0.0)


def bbsl_estimate(mode, valid_probs, valid_labels, target_probs, cond_limit=COND_LIMIT):
    """Black-box shift weights: solve C w = u, then clip negatives to zero."""
    C = confusion_matrix(mode, valid_probs, valid_labels)
    u = target_moments(mode, target_probs)
    if u.size != C.shape[0]:
        raise ArgumentError("validation and target probabilities disagree on class count")
    return bbsl_weights_from_moments(C, u, cond_limit)


def rlls_weights_from_moments(confusion, moments, lam=1e-3, delta=1.0, tol=1e-14,
                              max_iter=200_000, cond_limit=COND_LIMIT):
    """Regularised moment matching.

    theta = argmin ||C theta - (u - C 1)||_2 + lam ||theta||_2 over
    theta >= -1, by projected gradient descent with backtracking; the
    weights are 1 + delta * theta clipped at zero.
    """
    C = np.asarray(confusion, dtype=float)
    u = np.asarray(moments, dtype=float)
    m = C.shape[0]
    if C.ndim != 2 or C.shape != (m, m) or u.shape != (m,):
        raise ArgumentError("confusion matrix and moments have inconsistent shapes")
    if lam < 0 or not (0.0 <= delta <= 1.0):
        raise ArgumentError("RLLS needs lambda >= 0 and delta in [0, 1]")
    cond = np.linalg.cond(C)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularMatrixError("confusion matrix is singular", cond)
    target = u - C.sum(axis=1)

    def objective(theta):
        return np.linalg.norm(C @ theta - target) + lam * np.linalg.norm(theta)

    def subgradient(theta):
        r = C @ theta - target
        rn = np.linalg.norm(r)
        tn = np.linalg.norm(theta)
        g = C.T @ r / rn if rn > 0 else np.zeros(m)
        if tn > 0:
            g = g + lam * theta / tn
        return g

    theta = np.zeros(m)
    value = objective(theta)
    step = 1.0
    converged = False
    iterations = 0
    while iterations < max_iter:
        g = subgradient(theta)
        if not np.any(g):
            converged = True
            break
        while True:
            cand = np.maximum(theta - step * g, -1.0)
            cand_value = objective(cand)
            if cand_value <= value - 1e-4 * g @ (theta - cand):
                break
            step *= 0.5
            if step < 1e-30:
                cand, cand_value = theta, value
                break
        change = np.abs(cand - theta).sum()
        iterations += 1
        theta, value = cand, cand_value
        if change <= tol:
            converged = True
            break
        step *= 2.0
    weights = np.maximum(1.0 + delta * theta, 0.0)
    return RllsResult(weights, theta, iterations, converged, float(value))


def rlls_estimate(mode, valid_probs, valid_labels, target_probs, lam=1e-3, delta=1.0,
                  cond_limit=COND_LIMIT, **solver_opts):
    C = confusion_matrix(mode, valid_probs, valid_labels)
    u = target_moments(mode, target_probs)
    if u.size != C.shape[0]:
        raise ArgumentError("validation and target probabilities disagree on class count")
    return rlls_weights_from_moments(C, u, lam, delta, cond_limit=cond_limit, **solver_opts)
