"""Experiment harness: configs, artifact cache, experiments, reports and CLI."""

from .experiments import (Artifacts, ConfigError, ExperimentConfig, MissingArtifactError, make_test_set,
                          reconstruct_single, run_comparison, run_convergence, run_noise_mismatch)
from .report import ERROR_DEFINITION, ExperimentReport, emit_report, read_csv, write_csv

__all__ = [
    "Artifacts", "ConfigError", "ExperimentConfig", "MissingArtifactError", "make_test_set", "reconstruct_single",
    "run_comparison", "run_convergence", "run_noise_mismatch", "ERROR_DEFINITION", "ExperimentReport",
    "emit_report", "read_csv", "write_csv",
]
