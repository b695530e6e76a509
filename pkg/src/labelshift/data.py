from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError


@dataclass(frozen=True, eq=False)
class LabeledLogitSet:
    """Raw classifier logits (N x m) paired with integer labels in [0, m)."""

    logits: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        logits = np.array(self.logits, dtype=float)
        labels = np.asarray(self.labels)
        if logits.ndim != 2:
            raise ArgumentError("logits must be an N x m matrix")
        n, m = logits.shape
        if n < 1:
            raise ArgumentError("a logit set needs at least one row")
        if m < 2:
            raise ArgumentError("a logit set needs at least two classes")
        if labels.shape != (n,):
            raise ArgumentError(f"expected {n} labels, got shape {labels.shape}")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.mod(labels, 1) == 0):
                raise ArgumentError("labels must be integers")
        labels = labels.astype(np.int64)
        finite = np.isfinite(logits).all(axis=1)
        if not finite.all():
            raise ArgumentError(f"row {int(np.argmin(finite))} has non-finite logits")
        out_of_range = (labels < 0) | (labels >= m)
        if out_of_range.any():
            row = int(np.argmax(out_of_range))
            raise ArgumentError(f"row {row} has label {labels[row]} outside [0, {m})")
        logits.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.logits.shape[0]

    @property
    def num_classes(self) -> int:
        return self.logits.shape[1]

    def __len__(self):
        return self.n

    def subset(self, index) -> "LabeledLogitSet":
        index = np.asarray(index)
        return LabeledLogitSet(self.logits[index], self.labels[index])

    def label_frequencies(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes) / self.n
