"""Payment channel network simulator."""
from .experiment import (
    CellResult,
    ConfigError,
    ExperimentConfig,
    results_csv,
    run_cell,
    run_experiment,
    summarize,
)
from .routing import RunMetrics, Simulator, apply_path, route_payment
from .topology import Topology, TopologyError, load_topology, parse_topology_csv, synthesize
from .workload import ValueDist, Workload, generate_workload

__all__ = [
    "CellResult", "ConfigError", "ExperimentConfig", "results_csv", "run_cell", "run_experiment",
    "summarize", "RunMetrics", "Simulator", "apply_path", "route_payment", "Topology",
    "TopologyError", "load_topology", "parse_topology_csv", "synthesize", "ValueDist",
    "Workload", "generate_workload",
]
