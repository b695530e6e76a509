from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .config import ExperimentConfig
from .report import summarize_markdown
from .trials import load_experiment_data, run_trial, validate_against_data


@dataclass(frozen=True)
class ExperimentResult:
    records: list
    summary: str


def _run_one(args):
    config, data, trial_index = args
    return run_trial(config, trial_index, data)


def run_experiment(config: ExperimentConfig, jobs=1) -> ExperimentResult:
    """Run every trial over the full grid.

    Data and grid problems are raised before any trial starts. With
    ``jobs > 1`` trials run in worker processes; each trial owns its
    derived seed, and records are merged in trial order, so the output does
    not depend on ``jobs``.
    """
    data = load_experiment_data(config)
    validate_against_data(config, data)
    tasks = [(config, data, t) for t in range(config.trials)]
    if jobs > 1 and config.trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_trial = list(pool.map(_run_one, tasks))
    else:
        per_trial = [_run_one(t) for t in tasks]
    records = [r for trial in per_trial for r in trial]
    return ExperimentResult(records, summarize_markdown(records))
