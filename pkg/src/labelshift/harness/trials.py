"""Seeded execution of single trials of the shift-estimation protocol.

Per grid cell (shift template, sample size) a trial draws a validation
subsample without replacement, target priors, and a shifted target sample
with replacement; then, for every calibration family, fits on the
validation subsample and runs every estimator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..calibration import (
    CalibrationParams,
    Family,
    apply_calibration,
    calibration_nll,
    fit_calibration,
)
from ..data import LabeledLogitSet
from ..errors import ArgumentError, ConfigError, LabelShiftError, NumericalError
from ..estimation import (
    adapt_predictions,
    bbsl_estimate,
    em_estimate,
    estimate_source_priors,
    ml_estimate_direct,
    rlls_estimate,
)
from ..metrics import delta_accuracy, ece, mse_weights, systematic_bias
from ..numerics import softmax
from ..simulation import ShiftKind, derive_seed, generate_synthetic_task, make_rng, resample_by_priors
from .config import Estimator, ExperimentConfig
from .io import load_dataset
from .records import TrialRecord, as_tuple

# spawn-key prefix reserved for the valid/test split of a single data file
SPLIT_KEY = 2**32 - 1


@dataclass(frozen=True, eq=False)
class ExperimentData:
    valid: LabeledLogitSet
    pool: LabeledLogitSet

    @property
    def num_classes(self):
        return self.valid.num_classes


def load_experiment_data(config: ExperimentConfig) -> ExperimentData:
    src = config.dataset
    if src.synthetic is not None:
        task = generate_synthetic_task(src.synthetic, src.n_valid, src.n_pool)
        return ExperimentData(task.valid, task.pool)
    data = load_dataset(src.path, src.format)
    if src.test_path:
        pool = load_dataset(src.test_path, src.format)
        if pool.num_classes != data.num_classes:
            raise ConfigError("validation and test files have different class counts")
        return ExperimentData(data, pool)
    if data.n < 2:
        raise ConfigError("a single dataset file needs at least two rows to split")
    rng = make_rng(derive_seed(config.master_seed, SPLIT_KEY))
    order = rng.permutation(data.n)
    half = data.n // 2
    return ExperimentData(data.subset(np.sort(order[:half])), data.subset(np.sort(order[half:])))


def validate_against_data(config: ExperimentConfig, data: ExperimentData):
    """Reject grid settings the data cannot support, before any trial runs."""
    m = data.num_classes
    too_big = [n for n in config.n_grid if n > data.valid.n]
    if too_big:
        raise ConfigError(
            f"sample sizes {too_big} exceed the {data.valid.n} validation rows "
            "(validation subsampling is without replacement)"
        )
    present = np.bincount(data.pool.labels, minlength=m) > 0
    for shift in config.shift_grid:
        if shift.kind is ShiftKind.TWEAK_ONE and shift.class_index >= m:
            raise ConfigError(f"tweak-one class {shift.class_index} out of range for {m} classes")
        if shift.kind is ShiftKind.EXPLICIT:
            if shift.priors.size != m:
                raise ConfigError(f"explicit priors need {m} entries")
            missing = np.flatnonzero((shift.priors > 0) & ~present)
            if missing.size:
                raise ConfigError(f"class {missing[0]} has positive prior but no test rows")
        elif not present.all():
            raise ConfigError(
                f"class {int(np.argmin(present))} has no rows in the test pool; "
                "random shifts cannot be simulated"
            )


def _subsample_validation(valid: LabeledLogitSet, n, rng, stratified):
    if not stratified:
        return valid.subset(np.sort(rng.choice(valid.n, size=n, replace=False)))
    # largest-remainder allocation of n across classes, then uniform within class
    freq = valid.label_frequencies()
    raw = freq * n
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[: n - counts.sum()]] += 1
    picks = []
    for c, k in enumerate(counts):
        members = np.flatnonzero(valid.labels == c)
        picks.append(rng.choice(members, size=min(k, members.size), replace=False))
    return valid.subset(np.sort(np.concatenate(picks)))


def _safe_ratio(num, den):
    out = np.full(num.shape, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    out[~ok & (num == 0)] = 0.0
    return out


def run_cell(config: ExperimentConfig, data: ExperimentData, trial_index, shift_index, n_index):
    """All records for one trial in one (shift, n) grid cell."""
    shift = config.shift_grid[shift_index]
    n = config.n_grid[n_index]
    m = data.num_classes
    seq = derive_seed(config.master_seed, trial_index, shift_index, n_index)
    valid_seq, prior_seq, target_seq = seq.spawn(3)

    valid = _subsample_validation(data.valid, n, make_rng(valid_seq), config.stratified_validation)
    nominal = shift.draw(m, make_rng(prior_seq))
    target = resample_by_priors(data.pool, nominal, n, make_rng(target_seq))

    source_freq = valid.label_frequencies()
    realized = target.label_frequencies()
    true_w = _safe_ratio(realized, source_freq)
    nominal_w = _safe_ratio(nominal, source_freq)
    base_flags = []
    if np.isnan(true_w).any():
        base_flags.append("true_weight_undefined")

    original_target = softmax(target.logits, axis=1)
    records = []
    for family in config.calibration_families:
        family_flags = list(base_flags)
        if family is Family.NONE:
            params = CalibrationParams(Family.NONE)
        else:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    params = fit_calibration(family, valid.logits, valid.labels)
            except NumericalError as exc:
                family_flags.append(f"calibration_failed: {exc}")
                params = None
            else:
                if params.fit_info.cap_active:
                    family_flags.append("calibration_cap_active")
                if not params.fit_info.converged:
                    family_flags.append("calibration_not_converged")
        if params is None:
            for est in config.estimators:
                records.append(_record(config, trial_index, shift, n, family, est,
                                       true_w, nominal_w, None, None, None, None,
                                       tuple(family_flags + ["estimator_skipped"])))
            continue

        valid_probs = apply_calibration(params, valid.logits)
        target_probs = apply_calibration(params, target.logits)
        pool_probs = apply_calibration(params, data.pool.logits)
        cal_metrics = (
            calibration_nll(params, data.pool.logits, data.pool.labels),
            ece(pool_probs, data.pool.labels, config.ece_bins),
            systematic_bias(pool_probs, data.pool.labels),
        )
        source_priors = estimate_source_priors(
            valid_probs, config.source_prior_mode, valid.labels, num_classes=m
        )

        for est in config.estimators:
            flags = list(family_flags)
            weights = None
            iterations = None
            d_acc = None
            try:
                if est.is_max_likelihood:
                    fn = em_estimate if est is Estimator.EM else ml_estimate_direct
                    kwargs = ({"tol": config.em_tol, "max_iter": config.em_max_iter}
                              if est is Estimator.EM else {})
                    res = fn(target_probs, source_priors, **kwargs)
                    weights, iterations = res.weights, res.iterations
                    if not res.converged:
                        flags.append("not_converged")
                else:
                    mode = "Hard" if est.value.endswith("hard") else "Soft"
                    if est.value.startswith("BBSL"):
                        weights = bbsl_estimate(mode, valid_probs, valid.labels, target_probs)
                    else:
                        res = rlls_estimate(mode, valid_probs, valid.labels, target_probs,
                                            lam=config.rlls_lambda, delta=config.rlls_delta)
                        weights, iterations = res.weights, res.iterations
                        if not res.converged:
                            flags.append("not_converged")
            except LabelShiftError as exc:
                flags.append(f"estimator_failed: {type(exc).__name__}: {exc}")
                weights = None

            if weights is not None and (est.is_max_likelihood or config.adapt_moment_estimators):
                try:
                    adapted = adapt_predictions(target_probs, weights)
                    d_acc = delta_accuracy(adapted, original_target, target.labels)
                except (ArgumentError, NumericalError) as exc:
                    flags.append(f"adaptation_failed: {exc}")

            records.append(_record(config, trial_index, shift, n, family, est, true_w,
                                   nominal_w, weights, d_acc, cal_metrics, iterations,
                                   tuple(flags)))
    return records


def _record(config, trial_index, shift, n, family, est, true_w, nominal_w, weights,
            d_acc, cal_metrics, iterations, flags):
    mse = mse_nom = None
    if weights is not None:
        if not np.isnan(true_w).any():
            mse = mse_weights(weights, true_w)
        if not np.isnan(nominal_w).any():
            mse_nom = mse_weights(weights, nominal_w)
    nll_v, ece_v, js_v = cal_metrics if cal_metrics is not None else (None, None, None)
    return TrialRecord(
        trial_id=int(trial_index),
        shift=shift.label,
        shift_kind=shift.kind.value,
        shift_param=shift.parameter,
        n=int(n),
        calibration=family.value,
        estimator=est.value,
        source_prior_mode=config.source_prior_mode.value,
        mse=mse,
        mse_nominal=mse_nom,
        delta_acc=d_acc,
        nll_unshifted=nll_v,
        ece_unshifted=ece_v,
        js_bias=js_v,
        em_iterations=iterations,
        true_weights=as_tuple(true_w),
        nominal_weights=as_tuple(nominal_w),
        estimated_weights=as_tuple(weights),
        flags=flags,
    )


def run_trial(config: ExperimentConfig, trial_index, data: ExperimentData | None = None):
    """Every grid cell for one trial, in (shift, n, family, estimator) order."""
    if data is None:
        data = load_experiment_data(config)
    records = []
    for si in range(len(config.shift_grid)):
        for ni in range(len(config.n_grid)):
            records.extend(run_cell(config, data, trial_index, si, ni))
    return records
