"""Agent-based evacuation simulator with event-driven route choice.

Agents walk a continuous floor plan under a simple operational model while
a tactical layer re-evaluates their target exit whenever they get stuck in
a jam or reach an intermediate destination. Four strategies are available:
shortest path with local or global knowledge (LSP, GSP) and their quickest
variants (LSQ, GSQ) that weigh detours against observed queue speeds.
"""

from .errors import (
    BatchError,
    DegenerateSeries,
    EvacsimError,
    GraphError,
    NumericalBlowup,
    ParseError,
    ScenarioError,
    SpawnError,
    ValidationError,
)
from .batch import BatchPlan, run_batch
from .metrics import RunMetrics, aggregate, summarize, total_jam_size
from .navgraph import NavGraph, build_graph, validate_reachability
from .routing import GSP, GSQ, LSP, LSQ, STRATEGIES, RoutingParams
from .scenario_io import Scenario, load_scenario, serialize_scenario
from .simulation import Simulation

__version__ = "0.1.0"

__all__ = [
    "BatchError",
    "BatchPlan",
    "DegenerateSeries",
    "EvacsimError",
    "GraphError",
    "GSP",
    "GSQ",
    "LSP",
    "LSQ",
    "NavGraph",
    "NumericalBlowup",
    "ParseError",
    "RoutingParams",
    "RunMetrics",
    "Scenario",
    "ScenarioError",
    "Simulation",
    "SpawnError",
    "STRATEGIES",
    "ValidationError",
    "aggregate",
    "build_graph",
    "load_scenario",
    "run_batch",
    "serialize_scenario",
    "summarize",
    "total_jam_size",
    "validate_reachability",
]
