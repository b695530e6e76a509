"""Label-shift simulators and a synthetic, analytically tractable task."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import LabeledLogitSet
from .errors import ArgumentError, UnsatisfiableShiftError
from .numerics import as_simplex, log_softmax, softmax


def make_rng(seed) -> np.random.Generator:
    """Counter-based Philox generator seeded from a 64-bit integer.

    A ``Generator`` passes through unchanged, and a ``SeedSequence`` is used
    as-is so callers can hand over spawned children.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    if seed is None or int(seed) < 0 or int(seed) >= 2**64:
        raise ArgumentError("seed must be an explicit integer in [0, 2**64)")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def derive_seed(master_seed, *path) -> np.random.SeedSequence:
    """Child seed for ``path`` (e.g. trial index, grid cell); independent of
    every other path, so adding trials never perturbs existing ones."""
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in path))


class ShiftKind(str, Enum):
    DIRICHLET = "dirichlet"
    TWEAK_ONE = "tweak_one"
    EXPLICIT = "explicit"


@dataclass(frozen=True, eq=False)
class ShiftSpec:
    kind: ShiftKind
    alpha: float | None = None
    class_index: int | None = None
    rho: float | None = None
    priors: np.ndarray | None = None

    def __post_init__(self):
        kind = ShiftKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is ShiftKind.DIRICHLET:
            if self.alpha is None or not self.alpha > 0:
                raise ArgumentError("Dirichlet shift needs alpha > 0")
        elif kind is ShiftKind.TWEAK_ONE:
            if self.rho is None or not 0.0 <= self.rho <= 1.0:
                raise ArgumentError("tweak-one shift needs rho in [0, 1]")
            if self.class_index is None or self.class_index < 0:
                raise ArgumentError("tweak-one shift needs a non-negative class index")
        else:
            if self.priors is None:
                raise ArgumentError("explicit shift needs priors")
            object.__setattr__(self, "priors", as_simplex(self.priors, "explicit priors"))

    @property
    def label(self):
        if self.kind is ShiftKind.DIRICHLET:
            return f"alpha={self.alpha:g}"
        if self.kind is ShiftKind.TWEAK_ONE:
            return f"rho={self.rho:g}@{self.class_index}"
        return "explicit=[" + ",".join(f"{v:.4g}" for v in self.priors) + "]"

    @property
    def parameter(self):
        if self.kind is ShiftKind.DIRICHLET:
            return self.alpha
        if self.kind is ShiftKind.TWEAK_ONE:
            return self.rho
        return None

    def draw(self, m, rng):
        if self.kind is ShiftKind.DIRICHLET:
            return sample_dirichlet_priors(self.alpha, m, rng)
        if self.kind is ShiftKind.TWEAK_ONE:
            return tweak_one_priors(m, self.class_index, self.rho)
        if self.priors.size != m:
            raise ArgumentError(f"explicit priors have {self.priors.size} classes, data has {m}")
        return self.priors.copy()

    def to_dict(self):
        out = {"kind": self.kind.value}
        if self.kind is ShiftKind.DIRICHLET:
            out["alpha"] = self.alpha
        elif self.kind is ShiftKind.TWEAK_ONE:
            out.update(rho=self.rho, class_index=self.class_index)
        else:
            out["priors"] = self.priors.tolist()
        return out

    @classmethod
    def from_dict(cls, doc):
        try:
            kind = ShiftKind(doc["kind"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ArgumentError(f"bad shift spec {doc!r}") from exc
        return cls(kind, alpha=doc.get("alpha"), class_index=doc.get("class_index"),
                   rho=doc.get("rho"), priors=doc.get("priors"))


def sample_dirichlet_priors(alpha, m, seed):
    """One draw from a symmetric Dirichlet(alpha) by normalised Gamma draws.

    For alpha < 1 the Gamma variates are formed in log space as
    log G(alpha + 1) + log(U) / alpha, which keeps tiny components from
    underflowing to an all-zero vector.
    """
    if not alpha > 0:
        raise ArgumentError(f"alpha must be positive, got {alpha}")
    if m < 2:
        raise ArgumentError("need at least two classes")
    rng = make_rng(seed)
    if alpha >= 1.0:
        g = rng.standard_gamma(alpha, size=m)
        return g / g.sum()
    log_g = np.log(rng.standard_gamma(alpha + 1.0, size=m)) + np.log(rng.random(m)) / alpha
    return softmax(log_g)


def tweak_one_priors(m, class_index, rho):
    if m < 2:
        raise ArgumentError("need at least two classes")
    if not 0 <= class_index < m:
        raise ArgumentError(f"class index {class_index} out of range for {m} classes")
    if not 0.0 <= rho <= 1.0:
        raise ArgumentError(f"rho must be in [0, 1], got {rho}")
    priors = np.full(m, (1.0 - rho) / (m - 1))
    priors[class_index] = rho
    return priors


def resample_by_priors(data: LabeledLogitSet, priors, n, seed):
    """Draw ``n`` rows with replacement so class proportions follow ``priors``.

    Class counts come from one multinomial draw; rows are then picked
    uniformly within each class and the result is shuffled.
    """
    priors = as_simplex(priors, "target priors")
    m = data.num_classes
    if priors.size != m:
        raise ArgumentError(f"priors have {priors.size} classes, data has {m}")
    if n < 1:
        raise ArgumentError("sample size must be at least 1")
    rng = make_rng(seed)
    by_class = [np.flatnonzero(data.labels == c) for c in range(m)]
    for c in range(m):
        if priors[c] > 0 and by_class[c].size == 0:
            raise UnsatisfiableShiftError(c)
    counts = rng.multinomial(n, priors)
    picks = [rng.choice(by_class[c], size=counts[c], replace=True)
             for c in range(m) if counts[c]]
    index = rng.permutation(np.concatenate(picks))
    return data.subset(index)


@dataclass(frozen=True, eq=False)
class SyntheticTaskSpec:
    """Gaussian-mixture task whose classifier logits are miscalibrated by a
    known temperature and per-class bias: z = T * log p(y|x) - b."""

    num_classes: int
    true_priors: np.ndarray | None = None
    separation: float = 2.0
    true_temperature: float = 1.0
    true_biases: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        m = int(self.num_classes)
        if m < 2:
            raise ArgumentError("need at least two classes")
        priors = np.full(m, 1.0 / m) if self.true_priors is None else self.true_priors
        priors = as_simplex(priors, "true priors")
        biases = np.zeros(m) if self.true_biases is None else np.array(self.true_biases, float)
        if priors.size != m or biases.shape != (m,):
            raise ArgumentError("priors and biases must have one entry per class")
        if np.any(priors <= 0):
            raise ArgumentError("true priors must be strictly positive")
        if not self.true_temperature > 0:
            raise ArgumentError("true temperature must be positive")
        if not self.separation > 0:
            raise ArgumentError("separation must be positive")
        object.__setattr__(self, "num_classes", m)
        object.__setattr__(self, "true_priors", priors)
        object.__setattr__(self, "true_biases", biases)

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "true_priors": self.true_priors.tolist(),
            "separation": self.separation,
            "true_temperature": self.true_temperature,
            "true_biases": self.true_biases.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            num_classes=doc["num_classes"],
            true_priors=doc.get("true_priors"),
            separation=doc.get("separation", 2.0),
            true_temperature=doc.get("true_temperature", 1.0),
            true_biases=doc.get("true_biases"),
            seed=doc.get("seed", 0),
        )


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    spec: SyntheticTaskSpec
    valid: LabeledLogitSet
    pool: LabeledLogitSet
    valid_posterior: np.ndarray = field(repr=False)
    pool_posterior: np.ndarray = field(repr=False)

    def true_posterior(self, logits):
        """Invert the logit distortion: p(y|x) = softmax((z + b) / T)."""
        z = np.asarray(logits, dtype=float)
        return softmax((z + self.spec.true_biases) / self.spec.true_temperature, axis=1)

    def inverting_bcts(self):
        """BCTS parameters (z / T + b form) that recover the true posterior."""
        from .calibration import CalibrationParams, Family

        T = self.spec.true_temperature
        return CalibrationParams(Family.BCTS, temperature=T, biases=self.spec.true_biases / T)


def _gaussian_mixture(spec, n, rng):
    m = spec.num_classes
    y = rng.choice(m, size=n, p=spec.true_priors)
    x = rng.standard_normal((n, m))
    x[np.arange(n), y] += spec.separation
    # log pi_i - |x - s e_i|^2 / 2 = log pi_i + s x_i + (terms shared by all i)
    log_post = log_softmax(np.log(spec.true_priors) + spec.separation * x, axis=1)
    logits = spec.true_temperature * log_post - spec.true_biases
    return LabeledLogitSet(logits, y), np.exp(log_post)


def generate_synthetic_task(spec: SyntheticTaskSpec, n_valid, n_pool):
    if n_valid < 1 or n_pool < 1:
        raise ArgumentError("set sizes must be at least 1")
    root = np.random.SeedSequence(int(spec.seed))
    valid_seed, pool_seed = root.spawn(2)
    valid, valid_post = _gaussian_mixture(spec, n_valid, make_rng(valid_seed))
    pool, pool_post = _gaussian_mixture(spec, n_pool, make_rng(pool_seed))
    return SyntheticTask(spec, valid, pool, valid_post, pool_post)
