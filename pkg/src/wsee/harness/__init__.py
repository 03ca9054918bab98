"""Experiment engine, brute-force oracle and command-line interface."""
from .experiment import (
    CSV_HEADER,
    SCHEMES,
    ExperimentSpec,
    TrialRecord,
    run_convergence,
    run_experiment,
    run_trial,
    summarize,
    write_csv,
)
from .oracle import OracleResult, OracleTooLarge, brute_force_oracle

__all__ = [
    "CSV_HEADER", "SCHEMES", "ExperimentSpec", "TrialRecord", "run_convergence", "run_experiment",
    "run_trial", "summarize", "write_csv", "OracleResult", "OracleTooLarge", "brute_force_oracle",
]
