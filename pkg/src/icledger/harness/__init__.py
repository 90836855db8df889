"""Scenario corpus, run checks, metrics, state export and the command line."""

from .checks import duplicate_bundles, duplicate_pieces, liveness_failures, log_divergences, oracle_mismatches
from .corpus import Scenario, over_bound_scenarios, scenario_corpus
from .metrics import GroupThroughput, Metrics, StoredTrace, compute_metrics
from .state import NodeState, StateError, export_state, replay

__all__ = [
    "GroupThroughput",
    "Metrics",
    "NodeState",
    "Scenario",
    "StateError",
    "StoredTrace",
    "compute_metrics",
    "duplicate_bundles",
    "duplicate_pieces",
    "export_state",
    "liveness_failures",
    "log_divergences",
    "oracle_mismatches",
    "over_bound_scenarios",
    "replay",
    "scenario_corpus",
]
