"""Markdown summaries in the layout of the usual label-shift result tables.

Each cell reads ``median; median rank``. Within a comparison group the
method with the best median is bold, as is every method a paired one-sided
Wilcoxon test cannot call worse than it at p < 0.01.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import DegenerateSampleError
from ..metrics import rank_methods, wilcoxon_signed_rank

SIGNIFICANCE = 0.01


def _fmt(x):
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return "n/a"
    return f"{x:.5g}"


def compare_methods(scores, lower_is_better=True, alpha=SIGNIFICANCE):
    """Median, median rank and bold flag for each column of a trials x
    methods matrix (NaN marks a missing value).

    Ranks use only trials where every method has a value; each Wilcoxon
    comparison drops missing trials pairwise. Identical paired samples are
    a tie, never a significant difference.
    """
    scores = np.asarray(scores, dtype=float)
    k = scores.shape[1]
    with np.errstate(all="ignore"):
        medians = np.array([
            np.median(col[~np.isnan(col)]) if np.any(~np.isnan(col)) else np.nan
            for col in scores.T
        ])
    complete = ~np.isnan(scores).any(axis=1)
    if k >= 2 and complete.any():
        ranks = rank_methods(scores[complete], lower_is_better)
    else:
        ranks = np.full(k, np.nan) if k >= 2 else np.zeros(k)

    key = medians if lower_is_better else -medians
    if np.all(np.isnan(key)):
        return medians, ranks, np.zeros(k, dtype=bool), None
    best = int(np.nanargmin(key))
    bold = np.zeros(k, dtype=bool)
    bold[best] = True
    for j in range(k):
        if j == best:
            continue
        pair = ~np.isnan(scores[:, j]) & ~np.isnan(scores[:, best])
        if not pair.any():
            continue
        diffs = scores[pair, j] - scores[pair, best]
        if not lower_is_better:
            diffs = -diffs
        try:
            p = wilcoxon_signed_rank(diffs, "greater")
        except DegenerateSampleError:
            p = 1.0
        bold[j] = p >= alpha
    return medians, ranks, bold, best


def _cells(records):
    cells = OrderedDict()
    for r in records:
        cells.setdefault((r.shift, r.n), None)
    return list(cells)


def _ordered(values):
    return list(OrderedDict.fromkeys(values))


def _matrix(records, cell, methods, metric, method_key):
    by_trial = OrderedDict()
    for r in records:
        if (r.shift, r.n) != cell:
            continue
        key = method_key(r)
        if key not in methods:
            continue
        value = getattr(r, metric)
        row = by_trial.setdefault(r.trial_id, [np.nan] * len(methods))
        row[methods.index(key)] = np.nan if value is None else float(value)
    if not by_trial:
        return np.full((0, len(methods)), np.nan)
    return np.array(list(by_trial.values()), dtype=float)


def _cell_text(median, rank, bold):
    text = f"{_fmt(median)}; {_fmt(float(rank)) if not np.isnan(rank) else 'n/a'}"
    return f"**{text}**" if bold else text


def _header(cells):
    head = "| Estimator | Calibration | " + " | ".join(f"{s}, n={n}" for s, n in cells) + " |"
    sep = "|---|---|" + "---|" * len(cells)
    return [head, sep]


def mse_table(records):
    """Weight MSE, compared among estimators sharing a calibration family."""
    cells = _cells(records)
    families = _ordered(r.calibration for r in records)
    lines = _header(cells)
    for family in families:
        fam_records = [r for r in records if r.calibration == family]
        estimators = _ordered(r.estimator for r in fam_records)
        columns = []
        for cell in cells:
            mat = _matrix(fam_records, cell, estimators, "mse", lambda r: r.estimator)
            if mat.shape[0] == 0:
                columns.append(None)
            else:
                columns.append(compare_methods(mat, lower_is_better=True))
        for j, est in enumerate(estimators):
            row = [est, family]
            for col in columns:
                if col is None:
                    row.append("n/a")
                else:
                    med, rank, bold, _ = col
                    row.append(_cell_text(med[j], rank[j], bold[j]))
            lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines)


def delta_acc_table(records, estimator="EM"):
    """Accuracy gain of one estimator, compared across calibration families."""
    sub = [r for r in records if r.estimator == estimator]
    if not sub or all(r.delta_acc is None for r in sub):
        return None
    cells = _cells(sub)
    families = _ordered(r.calibration for r in sub)
    lines = _header(cells)
    columns = [
        compare_methods(_matrix(sub, cell, families, "delta_acc", lambda r: r.calibration),
                        lower_is_better=False)
        for cell in cells
    ]
    for j, family in enumerate(families):
        row = [estimator, family]
        for med, rank, bold, _ in columns:
            row.append(_cell_text(med[j], rank[j], bold[j]))
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines)


def calibration_table(records):
    """Median NLL, ECE and systematic bias on the unshifted test pool."""
    families = _ordered(r.calibration for r in records)
    seen = {}
    for r in records:
        key = (r.calibration, r.trial_id, r.shift, r.n)
        if key not in seen and r.nll_unshifted is not None:
            seen[key] = (r.nll_unshifted, r.ece_unshifted, r.js_bias)
    lines = ["| Calibration | NLL | ECE | JS bias |", "|---|---|---|---|"]
    for family in families:
        vals = np.array([v for k, v in seen.items() if k[0] == family], dtype=float)
        if vals.size == 0:
            lines.append(f"| {family} | n/a | n/a | n/a |")
            continue
        med = np.median(vals, axis=0)
        lines.append(f"| {family} | {_fmt(med[0])} | {_fmt(med[1])} | {_fmt(med[2])} |")
    return "\n".join(lines)


def summarize_markdown(records):
    records = list(records)
    trials = len({r.trial_id for r in records})
    parts = [
        "# Label shift experiment summary",
        "",
        f"{trials} trial(s). Cells show `median; median rank` (rank 0 = best). "
        f"Bold entries are not significantly worse than the best entry of their group "
        f"(paired one-sided Wilcoxon signed-rank, p < {SIGNIFICANCE}).",
        "",
        "## Weight MSE (groups: estimators sharing a calibration)",
        "",
        mse_table(records),
        "",
    ]
    for est in _ordered(r.estimator for r in records):
        table = delta_acc_table(records, est)
        if table is not None:
            parts += [f"## Delta accuracy, {est} (groups: calibration families)", "", table, ""]
    parts += ["## Calibration quality on the unshifted test pool", "", calibration_table(records), ""]
    return "\n".join(parts)
