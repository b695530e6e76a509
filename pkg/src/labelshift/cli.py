"""Command line interface.

Exit codes: 0 success, 2 configuration or validation error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .calibration import CalibrationParams, Family, apply_calibration, fit_calibration
from .errors import ArgumentError, DatasetError, NumericalError
from .estimation import (
    PriorMode,
    adapt_predictions,
    bbsl_estimate,
    em_estimate,
    estimate_source_priors,
    ml_estimate_direct,
    rlls_estimate,
)
from .harness.config import Estimator, ExperimentConfig
from .harness.experiment import run_experiment
from .harness.io import load_dataset, load_logits, save_dataset, save_probabilities
from .harness.records import write_report
from .simulation import (
    SyntheticTaskSpec,
    derive_seed,
    generate_synthetic_task,
    make_rng,
    resample_by_priors,
    sample_dirichlet_priors,
    tweak_one_priors,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3

REPORT_SUFFIX = {"csv": ".csv", "json": ".json", "markdown": ".md"}


def _out_dir(args):
    out = Path(args.out or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create output directory: {exc.strerror}", path=out) from exc
    return out


def _write_text(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot write: {exc.strerror}", path=path) from exc


def _load_params(args, valid=None):
    if getattr(args, "params", None):
        try:
            text = Path(args.params).read_text(encoding="utf-8")
        except OSError as exc:
            raise DatasetError(f"cannot read params: {exc.strerror}", path=args.params) from exc
        return CalibrationParams.from_json(text)
    family = Family.parse(getattr(args, "family", "None"))
    if family is Family.NONE:
        return CalibrationParams(Family.NONE)
    if valid is None:
        raise ArgumentError("fitting a calibration family needs --valid")
    return fit_calibration(family, valid.logits, valid.labels)


def cmd_calibrate(args):
    valid = load_dataset(args.valid)
    params = fit_calibration(args.family, valid.logits, valid.labels, grad_tol=args.grad_tol)
    doc = params.to_dict()
    text = json.dumps(doc, indent=1)
    if args.out:
        _write_text(_out_dir(args) / "calibration.json", text + "\n")
    else:
        print(text)
    info = params.fit_info
    print(
        f"{params.family.value}: NLL {info.identity_nll:.6g} -> {info.nll:.6g} "
        f"({info.iterations} iterations, gradient {info.grad_norm:.2g})",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_estimate(args):
    valid = load_dataset(args.valid)
    target_logits, _ = load_logits(args.target)
    params = _load_params(args, valid)
    valid_probs = apply_calibration(params, valid.logits)
    target_probs = apply_calibration(params, target_logits)
    est = Estimator.parse(args.estimator)
    result = {"estimator": est.value, "calibration": params.to_dict()}
    if est.is_max_likelihood:
        p = estimate_source_priors(valid_probs, args.source_priors, valid.labels,
                                   num_classes=valid.num_classes)
        fn = em_estimate if est is Estimator.EM else ml_estimate_direct
        res = fn(target_probs, p)
        result.update(
            source_priors=res.source_priors.tolist(),
            target_priors=res.target_priors.tolist(),
            weights=res.weights.tolist(),
            iterations=res.iterations,
            converged=res.converged,
            log_likelihood=res.final_log_likelihood,
        )
    else:
        mode = "Hard" if est.value.endswith("hard") else "Soft"
        if est.value.startswith("BBSL"):
            w = bbsl_estimate(mode, valid_probs, valid.labels, target_probs)
            result.update(weights=w.tolist())
        else:
            res = rlls_estimate(mode, valid_probs, valid.labels, target_probs,
                                lam=args.rlls_lambda, delta=args.rlls_delta)
            result.update(weights=res.weights.tolist(), iterations=res.iterations,
                          converged=res.converged)
    out = _out_dir(args) if args.out else None
    if args.format == "csv":
        lines = ["class,weight" + (",source_prior,target_prior" if "target_priors" in result else "")]
        for i, w in enumerate(result["weights"]):
            row = f"{i},{w!r}"
            if "target_priors" in result:
                row += f",{result['source_priors'][i]!r},{result['target_priors'][i]!r}"
            lines.append(row)
        text = "\n".join(lines)
        name = "estimate.csv"
    else:
        text = json.dumps(result, indent=1)
        name = "estimate.json"
    if out:
        _write_text(out / name, text + "\n")
    else:
        print(text)
    return EXIT_OK


def _parse_weights(spec):
    path = Path(spec)
    if path.exists():
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ArgumentError(f"{path}: invalid JSON: {exc.msg}") from exc
        return np.asarray(doc["weights"] if isinstance(doc, dict) else doc, dtype=float)
    try:
        return np.array([float(v) for v in spec.split(",")])
    except ValueError as exc:
        raise ArgumentError("--weights must be a JSON file or comma-separated numbers") from exc


def cmd_adapt(args):
    logits, labels = load_logits(args.input)
    params = _load_params(args)
    probs = apply_calibration(params, logits)
    weights = _parse_weights(args.weights)
    adapted = adapt_predictions(probs, weights)
    out = _out_dir(args) / "adapted.csv" if args.out else None
    if out is not None:
        save_probabilities(adapted, out, labels)
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow((["label"] if labels is not None else [])
                        + [f"prob_{i}" for i in range(adapted.shape[1])])
        for k, row in enumerate(adapted):
            writer.writerow(([int(labels[k])] if labels is not None else [])
                            + [repr(float(v)) for v in row])
    return EXIT_OK


def cmd_simulate(args):
    m = args.classes
    if args.biases:
        biases = [float(v) for v in args.biases.split(",")]
    else:
        biases = make_rng(args.seed).uniform(-args.bias_scale, args.bias_scale, m).tolist()
    spec = SyntheticTaskSpec(
        num_classes=m,
        separation=args.separation,
        true_temperature=args.temperature,
        true_biases=biases,
        seed=args.seed,
    )
    task = generate_synthetic_task(spec, args.n_valid, args.n_pool)
    out = _out_dir(args)
    ext = ".jsonl" if args.format == "json" else ".csv"
    save_dataset(task.valid, out / f"valid{ext}")
    save_dataset(task.pool, out / f"pool{ext}")
    meta = {"spec": spec.to_dict(), "n_valid": args.n_valid, "n_pool": args.n_pool}
    if args.alpha is not None or args.rho is not None:
        rng = make_rng(derive_seed(args.seed, 2))
        if args.alpha is not None:
            priors = sample_dirichlet_priors(args.alpha, m, rng)
        else:
            priors = tweak_one_priors(m, args.class_index, args.rho)
        n_target = args.n_target or args.n_pool
        target = resample_by_priors(task.pool, priors, n_target, rng)
        save_dataset(target, out / f"target{ext}")
        meta["target_priors"] = priors.tolist()
        meta["n_target"] = n_target
    _write_text(out / "task.json", json.dumps(meta, indent=1) + "\n")
    print(f"wrote synthetic task to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_experiment(args):
    if not args.config:
        raise ArgumentError("experiment needs --config")
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    result = run_experiment(config, jobs=args.jobs)
    out = _out_dir(args)
    formats = ["csv", "json", "markdown"] if args.format == "all" else [args.format]
    for fmt in formats:
        write_report(result.records, out / f"records{REPORT_SUFFIX[fmt]}", fmt)
    _write_text(out / "summary.md", result.summary)
    print(f"{len(result.records)} records written to {out}", file=sys.stderr)
    return EXIT_OK


def _global_flags(suppress):
    # the copy on each subcommand must not reset values given before it
    default = argparse.SUPPRESS if suppress else None
    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument("--seed", type=int, default=default, help="master seed (64-bit)")
    flags.add_argument("--config", default=default, help="experiment config JSON")
    flags.add_argument("--out", default=default, help="output directory")
    flags.add_argument("--format", default=default,
                       choices=["csv", "json", "markdown", "all"], help="output format")
    return flags


def build_parser():
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(
        prog="labelshift",
        description="Calibrated maximum-likelihood label shift adaptation.",
        parents=[_global_flags(suppress=False)],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="fit calibration parameters")
    p.add_argument("--valid", required=True, help="labelled validation logits")
    p.add_argument("--family", required=True, choices=[f.value for f in Family if f is not Family.NONE])
    p.add_argument("--grad-tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("estimate", parents=[common], help="estimate target priors / weights")
    p.add_argument("--valid", required=True)
    p.add_argument("--target", required=True, help="target logits (label column optional)")
    p.add_argument("--params", help="calibration params JSON (otherwise fit --family)")
    p.add_argument("--family", default="BCTS", choices=[f.value for f in Family])
    p.add_argument("--estimator", default="EM", choices=[e.value for e in Estimator])
    p.add_argument("--source-priors", default="MeanPrediction",
                   choices=[m.value for m in PriorMode])
    p.add_argument("--rlls-lambda", type=float, default=1e-3)
    p.add_argument("--rlls-delta", type=float, default=1.0)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("adapt", parents=[common], help="re-weight predicted probabilities")
    p.add_argument("--input", required=True, help="logits to adapt (label column optional)")
    p.add_argument("--params", help="calibration params JSON; default is plain softmax")
    p.add_argument("--weights", required=True,
                   help="weights JSON file (list or {'weights': [...]}) or comma list")
    p.set_defaults(func=cmd_adapt, family="None")

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic task")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--separation", type=float, default=2.0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--biases", help="comma-separated true biases")
    p.add_argument("--bias-scale", type=float, default=0.0,
                   help="draw biases uniformly in [-s, s] when --biases is absent")
    p.add_argument("--n-valid", type=int, default=10_000)
    p.add_argument("--n-pool", type=int, default=10_000)
    p.add_argument("--alpha", type=float, help="also write a Dirichlet-shifted target set")
    p.add_argument("--rho", type=float, help="also write a tweak-one shifted target set")
    p.add_argument("--class-index", type=int, default=3)
    p.add_argument("--n-target", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", parents=[common], help="run the full trial grid")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_experiment)
    return parser


_FORMAT_DEFAULTS = {"experiment": "all", "estimate": "json", "simulate": "csv"}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None:
        args.format = _FORMAT_DEFAULTS.get(args.command, "csv")
    if args.command == "simulate" and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BrokenPipeError:
        # the reader (e.g. head) went away; keep the exit-time flush quiet too
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
