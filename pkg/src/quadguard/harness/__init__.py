"""Scenario execution, missions, metrics, sweeps and dataset generation."""

from .simulate import COLUMNS, RunResult, Simulator, crash_check, run_scenario, write_outputs

__all__ = ["COLUMNS", "RunResult", "Simulator", "crash_check", "run_scenario", "write_outputs"]
