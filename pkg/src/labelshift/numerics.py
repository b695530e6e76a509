"""Stable probability primitives and simplex geometry."""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError

SIMPLEX_TOL = 1e-9
RENORMALIZE_TOL = 1e-6


def log_sum_exp(v, axis=-1):
    """log(sum(exp(v))) via max subtraction.

    Works on vectors, or row-wise (``axis=-1``) on matrices.
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0 or v.shape[axis] == 0:
        raise ArgumentError("log_sum_exp of an empty vector")
    vmax = np.max(v, axis=axis, keepdims=True)
    out = vmax + np.log(np.sum(np.exp(v - vmax), axis=axis, keepdims=True))
    out = np.squeeze(out, axis=axis)
    return float(out) if out.ndim == 0 else out


def log_softmax(z, axis=-1):
    z = np.asarray(z, dtype=float)
    zmax = np.max(z, axis=axis, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(z, axis=-1):
    """Softmax of a logit vector, or of each row of a logit matrix."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ArgumentError("softmax input contains non-finite logits")
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def project_to_simplex(v):
    """Euclidean projection of ``v`` onto the probability simplex.

    Sort-and-threshold: find the largest k with u_k - (sum_{j<=k} u_j - 1)/k > 0
    over the descending sort u, then clip ``v - tau`` at zero.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ArgumentError("project_to_simplex expects a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise ArgumentError("project_to_simplex input must be finite")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - css / k > 0)
    tau = css[rho - 1] / rho
    return np.maximum(v - tau, 0.0)


def as_simplex(v, name="vector"):
    """Validate ``v`` as a probability vector and return a float copy.

    Sums within ``RENORMALIZE_TOL`` of one are renormalized; tiny negative
    rounding residue (> -SIMPLEX_TOL) is clipped to zero.
    """
    v = np.array(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ArgumentError(f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise ArgumentError(f"{name} contains non-finite entries")
    if np.any(v < -SIMPLEX_TOL):
        raise ArgumentError(f"{name} has negative entries")
    v = np.maximum(v, 0.0)
    total = v.sum()
    if abs(total - 1.0) > RENORMALIZE_TOL:
        raise ArgumentError(f"{name} sums to {total!r}, not 1")
    return v / total


def as_prob_matrix(p, name="probabilities"):
    """Validate a row-stochastic N x m matrix, renormalizing rows the same
    way as :func:`as_simplex`."""
    p = np.array(p, dtype=float)
    if p.ndim != 2 or p.shape[0] == 0 or p.shape[1] == 0:
        raise ArgumentError(f"{name} must be a non-empty 2-D matrix")
    if not np.all(np.isfinite(p)):
        raise ArgumentError(f"{name} contains non-finite entries")
    if np.any(p < -SIMPLEX_TOL):
        raise ArgumentError(f"{name} has negative entries")
    p = np.maximum(p, 0.0)
    sums = p.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > RENORMALIZE_TOL)
    if bad.size:
        raise ArgumentError(f"{name} row {bad[0]} sums to {sums[bad[0]]!r}, not 1")
    return p / sums[:, None]


def argmax_rows(p):
    """Row-wise argmax; ties go to the lowest class index."""
    return np.argmax(np.asarray(p), axis=1)
