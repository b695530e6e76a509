"""Experiment configuration, parsed from a JSON document."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from ..calibration import Family
from ..errors import ArgumentError, ConfigError
from ..estimation import PriorMode
from ..simulation import ShiftSpec, SyntheticTaskSpec


class Estimator(str, Enum):
    EM = "EM"
    EM_DIRECT = "EM-direct"
    BBSL_HARD = "BBSL-hard"
    BBSL_SOFT = "BBSL-soft"
    RLLS_HARD = "RLLS-hard"
    RLLS_SOFT = "RLLS-soft"

    @classmethod
    def parse(cls, value):
        for member in cls:
            if str(value).lower() == member.value.lower():
                return member
        raise ConfigError(
            f"unknown estimator {value!r}; expected one of {[e.value for e in cls]}"
        )

    @property
    def is_max_likelihood(self):
        return self in (Estimator.EM, Estimator.EM_DIRECT)


@dataclass(frozen=True)
class DatasetSource:
    """Either labelled logit files or a synthetic task.

    With a single ``path`` the file is split in half into validation and
    test pools (seeded by the master seed); ``test_path`` supplies the test
    pool explicitly.
    """

    path: str | None = None
    test_path: str | None = None
    format: str | None = None
    synthetic: SyntheticTaskSpec | None = None
    n_valid: int | None = None
    n_pool: int | None = None

    @classmethod
    def from_dict(cls, doc, base_dir=None):
        if isinstance(doc, str):
            doc = {"path": doc}
        if not isinstance(doc, dict):
            raise ConfigError("dataset must be a path or an object")
        if "synthetic" in doc:
            syn = doc["synthetic"]
            try:
                spec = SyntheticTaskSpec.from_dict(syn)
                n_valid = int(syn["n_valid"])
                n_pool = int(syn["n_pool"])
            except KeyError as exc:
                raise ConfigError(f"synthetic dataset is missing {exc}") from exc
            except (TypeError, ValueError, ArgumentError) as exc:
                raise ConfigError(f"bad synthetic dataset: {exc}") from exc
            if n_valid < 1 or n_pool < 1:
                raise ConfigError("synthetic n_valid and n_pool must be positive")
            return cls(synthetic=spec, n_valid=n_valid, n_pool=n_pool)
        if "path" not in doc:
            raise ConfigError("dataset needs either 'path' or 'synthetic'")

        def resolve(p):
            if p is None:
                return None
            p = Path(p)
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            return str(p)

        return cls(path=resolve(doc["path"]), test_path=resolve(doc.get("test_path")),
                   format=doc.get("format"))

    def to_dict(self):
        if self.synthetic is not None:
            return {"synthetic": {**self.synthetic.to_dict(), "n_valid": self.n_valid,
                                  "n_pool": self.n_pool}}
        out = {"path": self.path}
        if self.test_path:
            out["test_path"] = self.test_path
        if self.format:
            out["format"] = self.format
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSource
    calibration_families: tuple
    estimators: tuple
    shift_grid: tuple
    n_grid: tuple
    trials: int = 10
    master_seed: int = 0
    source_prior_mode: PriorMode = PriorMode.MEAN_PREDICTION
    rlls_lambda: float = 1e-3
    rlls_delta: float = 1.0
    em_tol: float = 1e-10
    em_max_iter: int = 10_000
    ece_bins: int = 15
    stratified_validation: bool = False
    adapt_moment_estimators: bool = False
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        for name in ("calibration_families", "estimators", "shift_grid", "n_grid"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be non-empty")
        if any(n < 1 for n in self.n_grid):
            raise ConfigError("every sample size must be at least 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.rlls_lambda < 0 or not 0 <= self.rlls_delta <= 1:
            raise ConfigError("rlls needs lambda >= 0 and delta in [0, 1]")
        if self.em_tol <= 0 or self.em_max_iter < 1:
            raise ConfigError("em needs tol > 0 and max_iter >= 1")
        if self.ece_bins < 1:
            raise ConfigError("ece_bins must be at least 1")

    def with_seed(self, seed):
        return replace(self, master_seed=int(seed))

    @classmethod
    def from_dict(cls, doc, base_dir=None):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {
            "dataset", "calibration_families", "estimators", "source_prior_mode",
            "shift_grid", "n_grid", "trials", "master_seed", "rlls", "em",
            "ece_bins", "stratified_validation", "adapt_moment_estimators",
        }
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {unknown}")
        if "dataset" not in doc:
            raise ConfigError("config is missing 'dataset'")
        try:
            families = tuple(Family.parse(f) for f in doc.get("calibration_families", ["None"]))
            estimators = tuple(Estimator.parse(e) for e in doc.get("estimators", ["EM"]))
            shifts = tuple(ShiftSpec.from_dict(s) for s in doc.get("shift_grid", []))
            mode = PriorMode.parse(doc.get("source_prior_mode", "MeanPrediction"))
            rlls = doc.get("rlls", {})
            em = doc.get("em", {})
            return cls(
                dataset=DatasetSource.from_dict(doc["dataset"], base_dir),
                calibration_families=families,
                estimators=estimators,
                shift_grid=shifts,
                n_grid=tuple(int(n) for n in doc.get("n_grid", [])),
                trials=int(doc.get("trials", 10)),
                master_seed=int(doc.get("master_seed", 0)),
                source_prior_mode=mode,
                rlls_lambda=float(rlls.get("lambda", 1e-3)),
                rlls_delta=float(rlls.get("delta", 1.0)),
                em_tol=float(em.get("tol", 1e-10)),
                em_max_iter=int(em.get("max_iter", 10_000)),
                ece_bins=int(doc.get("ece_bins", 15)),
                stratified_validation=bool(doc.get("stratified_validation", False)),
                adapt_moment_estimators=bool(doc.get("adapt_moment_estimators", False)),
            )
        except ConfigError:
            raise
        except (ArgumentError, TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(doc, base_dir=path.parent)

    def to_dict(self):
        return {
            "dataset": self.dataset.to_dict(),
            "calibration_families": [f.value for f in self.calibration_families],
            "estimators": [e.value for e in self.estimators],
            "source_prior_mode": self.source_prior_mode.value,
            "shift_grid": [s.to_dict() for s in self.shift_grid],
            "n_grid": list(self.n_grid),
            "trials": self.trials,
            "master_seed": self.master_seed,
            "rlls": {"lambda": self.rlls_lambda, "delta": self.rlls_delta},
            "em": {"tol": self.em_tol, "max_iter": self.em_max_iter},
            "ece_bins": self.ece_bins,
            "stratified_validation": self.stratified_validation,
            "adapt_moment_estimators": self.adapt_moment_estimators,
        }
