from .config import DatasetSource, Estimator, ExperimentConfig
from .experiment import ExperimentResult, run_experiment
from .io import load_dataset, load_logits, save_dataset, save_probabilities
from .records import (
    COLUMNS,
    RECORDS_SCHEMA,
    TrialRecord,
    read_records_csv,
    read_records_json,
    write_report,
)
from .report import summarize_markdown
from .trials import ExperimentData, load_experiment_data, run_cell, run_trial

__all__ = [
    "COLUMNS",
    "DatasetSource",
    "Estimator",
    "ExperimentConfig",
    "ExperimentData",
    "ExperimentResult",
    "RECORDS_SCHEMA",
    "TrialRecord",
    "load_dataset",
    "load_experiment_data",
    "load_logits",
    "read_records_csv",
    "read_records_json",
    "run_cell",
    "run_experiment",
    "run_trial",
    "save_dataset",
    "save_probabilities",
    "summarize_markdown",
    "write_report",
]
