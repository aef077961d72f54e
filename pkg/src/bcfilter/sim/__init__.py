"""Scenario loading and simulation."""

from .models import Dynamics, make_dynamics, make_sensor, phase_visible, sensor_variance
from .runner import MetricsLog, RunResult, run_bcf_step, run_scenario, write_outputs
from .scenario import SCHEMA, Scenario, load_scenario, scenario_from_dict

__all__ = [
    "Dynamics", "make_dynamics", "make_sensor", "phase_visible", "sensor_variance",
    "MetricsLog", "RunResult", "run_bcf_step", "run_scenario", "write_outputs",
    "SCHEMA", "Scenario", "load_scenario", "scenario_from_dict",
]
