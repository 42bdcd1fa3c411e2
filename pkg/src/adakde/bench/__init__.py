"""Benchmark harness: configuration, runner, metric and report emission."""
from .config import METHODS, ExperimentConfig, dump_config, load_config, parse_methods
from .metrics import normalized_nll
from .report import CellSummary, aggregate, emit_report, markdown_tables, read_raw_csv, report_from_csv
from .runner import EvalReport, RunRecord, run_experiment, run_job

__all__ = [
    "METHODS", "ExperimentConfig", "dump_config", "load_config", "parse_methods", "normalized_nll",
    "CellSummary", "aggregate", "emit_report", "markdown_tables", "read_raw_csv", "report_from_csv",
    "EvalReport", "RunRecord", "run_experiment", "run_job",
]
