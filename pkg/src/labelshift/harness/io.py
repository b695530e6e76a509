"""Dataset files: CSV with header ``label,logit_0,...,logit_{m-1}`` or
JSON lines carrying the same keys."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..data import LabeledLogitSet
from ..errors import DatasetError

FORMATS = ("csv", "jsonl")


def infer_format(path, fmt=None):
    if fmt:
        fmt = fmt.lower()
        if fmt in ("jsonlines", "ndjson", "json"):
            fmt = "jsonl"
        if fmt not in FORMATS:
            raise DatasetError(f"unknown dataset format {fmt!r}", path=path)
        return fmt
    suffix = Path(path).suffix.lower()
    return "jsonl" if suffix in (".jsonl", ".ndjson", ".json") else "csv"


def _check_logit_header(names, path, line, require_labels):
    has_label = bool(names) and names[0] == "label"
    logit_names = names[1:] if has_label else names
    if require_labels and not has_label:
        raise DatasetError("first column must be 'label'", path=path, line=line)
    expected = [f"logit_{i}" for i in range(len(logit_names))]
    if logit_names != expected or len(logit_names) < 2:
        raise DatasetError(
            "header must be label,logit_0,...,logit_{m-1} with m >= 2", path=path, line=line
        )
    return has_label, len(logit_names)


def _parse_float(text, path, line):
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"cannot parse {text!r} as a number", path=path, line=line) from None
    if not math.isfinite(value):
        raise DatasetError(f"non-finite logit {text!r}", path=path, line=line)
    return value


def _parse_label(value, path, line):
    try:
        label = int(value)
    except (TypeError, ValueError):
        raise DatasetError(f"cannot parse label {value!r}", path=path, line=line) from None
    if label != float(value):
        raise DatasetError(f"label {value!r} is not an integer", path=path, line=line)
    return label


def _read_csv(path, require_labels):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError("empty file", path=path, line=1)
        header = [h.strip() for h in header]
        has_label, m = _check_logit_header(header, path, 1, require_labels)
        logits, labels = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"expected {len(header)} fields, found {len(row)}", path=path, line=line
                )
            if has_label:
                labels.append(_parse_label(row[0].strip(), path, line))
                row = row[1:]
            logits.append([_parse_float(cell.strip(), path, line) for cell in row])
    return logits, (labels if has_label else None), m


def _read_jsonl(path, require_labels):
    logits, labels = [], []
    m = None
    has_label = None
    with open(path, encoding="utf-8") as fh:
        for line, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"invalid JSON: {exc.msg}", path=path, line=line) from None
            if not isinstance(doc, dict):
                raise DatasetError("each line must be a JSON object", path=path, line=line)
            keys = [k for k in doc if k != "label"]
            if m is None:
                has_label = "label" in doc
                names = (["label"] if has_label else []) + sorted(
                    keys, key=lambda k: (len(k), k)
                )
                _, m = _check_logit_header(names, path, line, require_labels)
            if ("label" in doc) != has_label or len(keys) != m:
                raise DatasetError("fields differ from the first record", path=path, line=line)
            try:
                values = [doc[f"logit_{i}"] for i in range(m)]
            except KeyError as exc:
                raise DatasetError(f"missing field {exc}", path=path, line=line) from None
            row = []
            for v in values:
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise DatasetError(f"logit {v!r} is not a number", path=path, line=line)
                row.append(_parse_float(v, path, line))
            logits.append(row)
            if has_label:
                labels.append(_parse_label(doc["label"], path, line))
    if m is None:
        raise DatasetError("empty file", path=path, line=1)
    return logits, (labels if has_label else None), m


def _read(path, fmt, require_labels):
    path = Path(path)
    fmt = infer_format(path, fmt)
    try:
        if fmt == "csv":
            logits, labels, m = _read_csv(path, require_labels)
        else:
            logits, labels, m = _read_jsonl(path, require_labels)
    except OSError as exc:
        raise DatasetError(f"cannot read dataset: {exc.strerror or exc}", path=path) from exc
    except UnicodeDecodeError as exc:
        raise DatasetError(f"not UTF-8 text: {exc}", path=path) from exc
    if not logits:
        raise DatasetError("no data rows", path=path)
    logits = np.asarray(logits, dtype=float)
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        bad = np.flatnonzero((labels < 0) | (labels >= m))
        if bad.size:
            raise DatasetError(
                f"label {labels[bad[0]]} outside [0, {m})", path=path, row=int(bad[0])
            )
    return logits, labels


def load_dataset(path, fmt=None) -> LabeledLogitSet:
    """Read and validate a labelled logit file."""
    logits, labels = _read(path, fmt, require_labels=True)
    return LabeledLogitSet(logits, labels)


def load_logits(path, fmt=None):
    """Read a logit file whose label column is optional.

    Returns ``(logits, labels)`` with ``labels`` None when absent.
    """
    return _read(path, fmt, require_labels=False)


def _fmt(x):
    return repr(float(x))


def save_dataset(data: LabeledLogitSet, path, fmt=None):
    path = Path(path)
    fmt = infer_format(path, fmt)
    m = data.num_classes
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if fmt == "csv":
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["label"] + [f"logit_{i}" for i in range(m)])
                for y, row in zip(data.labels, data.logits):
                    writer.writerow([int(y)] + [_fmt(v) for v in row])
            else:
                for y, row in zip(data.labels, data.logits):
                    doc = {"label": int(y)}
                    doc.update({f"logit_{i}": float(v) for i, v in enumerate(row)})
                    fh.write(json.dumps(doc) + "\n")
    except OSError as exc:
        raise DatasetError(f"cannot write dataset: {exc.strerror or exc}", path=path) from exc


def save_probabilities(probs, path, labels=None):
    """CSV of probability rows, ``label,prob_0,...`` when labels are given."""
    path = Path(path)
    probs = np.asarray(probs, dtype=float)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            head = [f"prob_{i}" for i in range(probs.shape[1])]
            writer.writerow((["label"] if labels is not None else []) + head)
            for k, row in enumerate(probs):
                prefix = [int(labels[k])] if labels is not None else []
                writer.writerow(prefix + [_fmt(v) for v in row])
    except OSError as exc:
        raise DatasetError(f"cannot write probabilities: {exc.strerror or exc}", path=path) from exc
