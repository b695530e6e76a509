"""Post-hoc logit calibration fitted by validation-set NLL.

Families, as transforms g(z) fed to a softmax:

    None  z
    TS    z / T
    NBVS  z * W
    BCTS  z / T + b
    VS    z * W + b

Optimisation runs in an unconstrained parameter vector ``theta`` where
temperatures and scales live in log space.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import minimize

from .errors import ArgumentError, NumericalError
from .numerics import log_softmax, log_sum_exp, softmax

LOG_SCALE_CAP = 10.0
BIAS_CAP = 20.0


class Family(str, Enum):
    NONE = "None"
    TS = "TS"
    NBVS = "NBVS"
    BCTS = "BCTS"
    VS = "VS"

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, cls):
            return value
        if value is None:
            return cls.NONE
        for member in cls:
            if str(value).upper() == member.value.upper():
                return member
        raise ArgumentError(
            f"unknown calibration family {value!r}; "
            f"expected one of {[f.value for f in cls]}"
        )

    @property
    def has_temperature(self):
        return self in (Family.TS, Family.BCTS)

    @property
    def has_scales(self):
        return self in (Family.NBVS, Family.VS)

    @property
    def has_biases(self):
        return self in (Family.BCTS, Family.VS)


@dataclass(frozen=True)
class FitInfo:
    converged: bool
    iterations: int
    nll: float
    identity_nll: float
    grad_norm: float
    cap_active: bool
    message: str
    warnings: tuple = ()


@dataclass(frozen=True, eq=False)
class CalibrationParams:
    family: Family
    temperature: float | None = None
    scales: np.ndarray | None = None
    biases: np.ndarray | None = None
    fit_info: FitInfo | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        family = Family.parse(self.family)
        object.__setattr__(self, "family", family)
        temperature = self.temperature if family.has_temperature else None
        scales = self.scales if family.has_scales else None
        biases = self.biases if family.has_biases else None
        if family.has_temperature:
            if temperature is None:
                temperature = 1.0
            temperature = float(temperature)
            if not (np.isfinite(temperature) and temperature > 0):
                raise ArgumentError(f"temperature must be positive, got {temperature}")
        if family.has_scales:
            if scales is None:
                raise ArgumentError(f"{family.value} requires per-class scales")
            scales = np.array(scales, dtype=float)
            if scales.ndim != 1 or not np.all(np.isfinite(scales)) or np.any(scales <= 0):
                raise ArgumentError("scales must be a vector of positive reals")
        if family.has_biases:
            if biases is None:
                raise ArgumentError(f"{family.value} requires per-class biases")
            biases = np.array(biases, dtype=float)
            if biases.ndim != 1 or not np.all(np.isfinite(biases)):
                raise ArgumentError("biases must be a vector of finite reals")
        if scales is not None and biases is not None and scales.size != biases.size:
            raise ArgumentError("scales and biases have different lengths")
        object.__setattr__(self, "temperature", temperature)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "biases", biases)

    @classmethod
    def identity(cls, family=Family.NONE, num_classes=None):
        family = Family.parse(family)
        if (family.has_scales or family.has_biases) and num_classes is None:
            raise ArgumentError("num_classes is required for per-class families")
        return cls(
            family,
            temperature=1.0,
            scales=np.ones(num_classes) if family.has_scales else None,
            biases=np.zeros(num_classes) if family.has_biases else None,
        )

    @property
    def num_classes(self):
        for v in (self.scales, self.biases):
            if v is not None:
                return v.size
        return None

    def to_dict(self):
        out = {"family": self.family.value}
        if self.temperature is not None:
            out["T"] = self.temperature
        if self.scales is not None:
            out["W"] = self.scales.tolist()
        if self.biases is not None:
            out["b"] = self.biases.tolist()
        return out

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict) or "family" not in doc:
            raise ArgumentError("calibration document must be an object with a 'family'")
        return cls(doc["family"], doc.get("T"), doc.get("W"), doc.get("b"))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ArgumentError(f"calibration params are not valid JSON: {exc}") from exc
        return cls.from_dict(doc)


def transform_logits(params: CalibrationParams, logits):
    """Calibrated pre-softmax scores g(z)."""
    z = np.asarray(logits, dtype=float)
    if z.ndim == 1:
        z = z[None, :]
    m = params.num_classes
    if m is not None and z.shape[1] != m:
        raise ArgumentError(
            f"{params.family.value} params have {m} classes but logits have {z.shape[1]}"
        )
    g = z
    if params.family.has_temperature:
        g = g / params.temperature
    if params.family.has_scales:
        g = g * params.scales
    if params.family.has_biases:
        g = g + params.biases
    return g


def apply_calibration(params: CalibrationParams, logits):
    """Calibrated probability matrix softmax(g(z)), one row per logit row."""
    return softmax(transform_logits(params, logits), axis=1)


# --- parameter packing ---------------------------------------------------

def num_parameters(family, m):
    family = Family.parse(family)
    return {
        Family.NONE: 0,
        Family.TS: 1,
        Family.NBVS: m,
        Family.BCTS: 1 + m,
        Family.VS: 2 * m,
    }[family]


def params_to_theta(params: CalibrationParams, m):
    f = params.family
    parts = []
    if f.has_temperature:
        parts.append([np.log(params.temperature)])
    if f.has_scales:
        parts.append(np.log(params.scales))
    if f.has_biases:
        parts.append(params.biases)
    return np.concatenate(parts) if parts else np.zeros(0)


def theta_to_params(family, theta, m):
    family = Family.parse(family)
    theta = np.asarray(theta, dtype=float)
    if theta.size != num_parameters(family, m):
        raise ArgumentError("parameter vector has the wrong length for this family")
    if family is Family.TS:
        return CalibrationParams(family, temperature=np.exp(theta[0]))
    if family is Family.NBVS:
        return CalibrationParams(family, scales=np.exp(theta))
    if family is Family.BCTS:
        return CalibrationParams(family, temperature=np.exp(theta[0]), biases=theta[1:])
    if family is Family.VS:
        return CalibrationParams(family, scales=np.exp(theta[:m]), biases=theta[m:])
    return CalibrationParams(Family.NONE)


def _bounds(family, m):
    out = []
    if family.has_temperature:
        out.append((-LOG_SCALE_CAP, LOG_SCALE_CAP))
    if family.has_scales:
        out.extend([(-LOG_SCALE_CAP, LOG_SCALE_CAP)] * m)
    if family.has_biases:
        out.extend([(-BIAS_CAP, BIAS_CAP)] * m)
    return out


def nll_and_gradient(family, theta, logits, labels):
    """Mean validation NLL in nats and its gradient with respect to ``theta``."""
    family = Family.parse(family)
    z = np.asarray(logits, dtype=float)
    y = np.asarray(labels)
    n, m = z.shape
    theta = np.asarray(theta, dtype=float)

    if family is Family.NONE:
        g = z
    else:
        params = theta_to_params(family, theta, m)
        g = transform_logits(params, z)
    lse = log_sum_exp(g, axis=1)
    rows = np.arange(n)
    value = float(np.mean(lse - g[rows, y]))

    # d(mean NLL)/dg
    dg = np.exp(g - lse[:, None])
    dg[rows, y] -= 1.0
    dg /= n

    if family is Family.NONE:
        return value, np.zeros(0)
    if family is Family.TS:
        grad = [-np.sum(dg * g)]
    elif family is Family.NBVS:
        grad = np.sum(dg * g, axis=0)
    elif family is Family.BCTS:
        # g = z/T + b, so dg/dlogT = -z/T
        scaled = z / params.temperature
        grad = np.concatenate([[-np.sum(dg * scaled)], dg.sum(axis=0)])
    else:
        scaled = z * params.scales
        grad = np.concatenate([np.sum(dg * scaled, axis=0), dg.sum(axis=0)])
    return value, np.asarray(grad, dtype=float)


def _projected_grad_norm(theta, grad, bounds, slack=1e-9):
    pg = grad.copy()
    for i, (lo, hi) in enumerate(bounds):
        if theta[i] <= lo + slack and pg[i] > 0:
            pg[i] = 0.0
        elif theta[i] >= hi - slack and pg[i] < 0:
            pg[i] = 0.0
    return float(np.max(np.abs(pg))) if pg.size else 0.0


def fit_calibration(family, logits, labels=None, grad_tol=1e-6, max_iter=10_000):
    """Fit calibration parameters minimising mean NLL on a labelled set.

    ``logits`` may also be a :class:`LabeledLogitSet`, with ``labels`` omitted.

    L-BFGS-B over the log-space parameter vector, started at the identity
    transform. Parameters are boxed to |log T|, |log W_i| <= 10 and
    |b_i| <= 20; when a box constraint binds the result carries a warning
    and the stationarity guarantee applies to the projected gradient only.
    """
    family = Family.parse(family)
    if labels is None and hasattr(logits, "labels"):
        logits, labels = logits.logits, logits.labels
    if labels is None:
        raise ArgumentError("labels are required to fit calibration")
    z = np.asarray(logits, dtype=float)
    y = np.asarray(labels)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ArgumentError("cannot fit calibration on an empty set")
    if y.shape != (z.shape[0],):
        raise ArgumentError("labels do not match logits")
    n, m = z.shape
    if family is Family.NONE:
        raise ArgumentError("family None has nothing to fit")

    theta0 = params_to_theta(CalibrationParams.identity(family, m), m)
    bounds = _bounds(family, m)
    evals = {"count": 0}

    def objective(theta):
        evals["count"] += 1
        with np.errstate(over="ignore", invalid="ignore"):
            value, grad = nll_and_gradient(family, theta, z, y)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise NumericalError(
                f"non-finite NLL while fitting {family.value} "
                f"(evaluation {evals['count']}, theta={np.array2string(theta, precision=4)})"
            )
        return value, grad

    identity_nll, _ = objective(theta0)
    result = minimize(
        objective,
        theta0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iter, "gtol": grad_tol * 1e-2, "ftol": 0.0, "maxls": 50},
    )
    theta = np.clip(result.x, [b[0] for b in bounds], [b[1] for b in bounds])
    value, grad = objective(theta)
    if value > identity_nll:
        theta, value = theta0, identity_nll
        _, grad = objective(theta)

    grad_norm = _projected_grad_norm(theta, grad, bounds)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    cap_active = bool(np.any(theta <= lo + 1e-9) or np.any(theta >= hi - 1e-9))
    notes = []
    if cap_active:
        notes.append(
            "parameter cap active (a class may be absent from the validation labels)"
        )
    converged = grad_norm <= grad_tol
    if not converged:
        notes.append(f"gradient norm {grad_norm:.3g} above tolerance {grad_tol:.3g}")
    for note in notes:
        warnings.warn(f"{family.value} fit: {note}", RuntimeWarning, stacklevel=2)

    info = FitInfo(
        converged=converged,
        iterations=int(result.nit),
        nll=float(value),
        identity_nll=float(identity_nll),
        grad_norm=grad_norm,
        cap_active=cap_active,
        message=str(result.message),
        warnings=tuple(notes),
    )
    params = theta_to_params(family, theta, m)
    return CalibrationParams(
        params.family, params.temperature, params.scales, params.biases, fit_info=info
    )


def calibration_nll(params: CalibrationParams, logits, labels):
    """Mean NLL of calibrated probabilities, computed in log space."""
    g = transform_logits(params, logits)
    y = np.asarray(labels)
    return float(-np.mean(log_softmax(g, axis=1)[np.arange(len(y)), y]))
