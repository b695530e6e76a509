"""Trial records and their CSV / JSON / markdown serialisations."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..errors import ArgumentError, DatasetError


@dataclass(frozen=True)
class TrialRecord:
    """One (trial, shift, n, calibration, estimator) outcome.

    Weights are per-class tuples. ``true_weights`` use the realised label
    frequencies of the shifted sample over those of the validation
    subsample; ``nominal_weights`` use the drawn target priors instead.
    Metrics an estimator could not produce are None and explained in
    ``flags``.
    """

    trial_id: int
    shift: str
    shift_kind: str
    shift_param: float | None
    n: int
    calibration: str
    estimator: str
    source_prior_mode: str
    mse: float | None
    mse_nominal: float | None
    delta_acc: float | None
    nll_unshifted: float | None
    ece_unshifted: float | None
    js_bias: float | None
    em_iterations: int | None
    true_weights: tuple
    nominal_weights: tuple
    estimated_weights: tuple | None
    flags: tuple = ()


COLUMNS = tuple(f.name for f in fields(TrialRecord))
_INT_FIELDS = {"trial_id", "n", "em_iterations"}
_FLOAT_FIELDS = {"shift_param", "mse", "mse_nominal", "delta_acc", "nll_unshifted",
                 "ece_unshifted", "js_bias"}
_VECTOR_FIELDS = {"true_weights", "nominal_weights", "estimated_weights"}

RECORDS_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "label-shift trial records",
    "type": "object",
    "required": ["columns", "records"],
    "properties": {
        "columns": {"type": "array", "items": {"type": "string"}},
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "required": list(COLUMNS),
                "additionalProperties": False,
                "properties": {
                    "trial_id": {"type": "integer", "minimum": 0},
                    "shift": {"type": "string"},
                    "shift_kind": {"enum": ["dirichlet", "tweak_one", "explicit"]},
                    "shift_param": {"type": ["number", "null"]},
                    "n": {"type": "integer", "minimum": 1},
                    "calibration": {"type": "string"},
                    "estimator": {"type": "string"},
                    "source_prior_mode": {"type": "string"},
                    "mse": {"type": ["number", "null"], "minimum": 0},
                    "mse_nominal": {"type": ["number", "null"], "minimum": 0},
                    "delta_acc": {"type": ["number", "null"]},
                    "nll_unshifted": {
                        "anyOf": [{"type": ["number", "null"]}, {"const": "inf"}]
                    },
                    "ece_unshifted": {"type": ["number", "null"]},
                    "js_bias": {"type": ["number", "null"]},
                    "em_iterations": {"type": ["integer", "null"]},
                    "true_weights": {"$ref": "#/$defs/weights"},
                    "nominal_weights": {"$ref": "#/$defs/weights"},
                    "estimated_weights": {
                        "anyOf": [{"$ref": "#/$defs/weights"}, {"type": "null"}]
                    },
                    "flags": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
    },
    "$defs": {
        "weights": {
            "type": "array",
            "items": {"anyOf": [{"type": "number"}, {"const": "nan"}, {"const": "inf"}]},
        }
    },
}


def _json_number(x):
    if x is None:
        return None
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def record_to_dict(rec: TrialRecord):
    out = {}
    for name in COLUMNS:
        value = getattr(rec, name)
        if name in _VECTOR_FIELDS:
            value = None if value is None else [_json_number(v) for v in value]
        elif name in _FLOAT_FIELDS:
            value = _json_number(value)
        elif name == "flags":
            value = list(value)
        out[name] = value
    return out


def record_from_dict(doc):
    kw = {}
    for name in COLUMNS:
        value = doc.get(name)
        if name in _VECTOR_FIELDS:
            value = None if value is None else tuple(float(v) for v in value)
        elif name in _FLOAT_FIELDS:
            value = None if value is None else float(value)
        elif name in _INT_FIELDS:
            value = None if value is None else int(value)
        elif name == "flags":
            value = tuple(value or ())
        kw[name] = value
    return TrialRecord(**kw)


def _csv_cell(name, value):
    if value is None:
        return ""
    if name in _VECTOR_FIELDS:
        return json.dumps([_json_number(v) for v in value])
    if name in _FLOAT_FIELDS:
        return repr(float(value))
    if name == "flags":
        return ";".join(value)
    return str(value)


def _csv_value(name, text):
    if name == "flags":
        return tuple(t for t in text.split(";") if t)
    if text == "":
        return None
    if name in _VECTOR_FIELDS:
        return tuple(float(v) for v in json.loads(text))
    if name in _FLOAT_FIELDS:
        return float(text)
    if name in _INT_FIELDS:
        return int(text)
    return text


def records_to_csv(records, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(COLUMNS)
    for rec in records:
        writer.writerow([_csv_cell(name, getattr(rec, name)) for name in COLUMNS])


def read_records_csv(path):
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != COLUMNS:
                raise DatasetError("unexpected record columns", path=path, line=1)
            return [
                TrialRecord(**{name: _csv_value(name, row[name]) for name in COLUMNS})
                for row in reader
            ]
    except OSError as exc:
        raise DatasetError(f"cannot read records: {exc.strerror or exc}", path=path) from exc


def records_to_json(records):
    doc = {"columns": list(COLUMNS), "records": [record_to_dict(r) for r in records]}
    return json.dumps(doc, indent=1, allow_nan=False)


def read_records_json(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetError(f"cannot read records: {exc.strerror or exc}", path=path) from exc
    return [record_from_dict(d) for d in doc["records"]]


def write_report(records, path, format="csv"):
    """Write records as ``csv``, ``json`` or a ``markdown`` summary table."""
    from .report import summarize_markdown

    records = list(records)
    if not records:
        raise ArgumentError("no records to write")
    path = Path(path)
    try:
        if format == "csv":
            with open(path, "w", newline="", encoding="utf-8") as fh:
                records_to_csv(records, fh)
        elif format == "json":
            path.write_text(records_to_json(records) + "\n", encoding="utf-8")
        elif format in ("markdown", "md"):
            path.write_text(summarize_markdown(records), encoding="utf-8")
        else:
            raise ArgumentError(f"unknown report format {format!r}")
    except OSError as exc:
        raise DatasetError(f"cannot write report: {exc.strerror or exc}", path=path) from exc


def as_tuple(v):
    return None if v is None else tuple(float(x) for x in np.asarray(v, dtype=float))
