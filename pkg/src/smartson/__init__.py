"""Escrow-mediated resource trading between software agents, simulated end to end."""

from smartson.harness import (
    ConfigError,
    EpochRecord,
    ScenarioConfig,
    SimulationReport,
    balance_series,
    emit_report,
    load_config,
    run_scenario,
)
from smartson.ledger import ContractRevert, Ledger
from smartson.matching import ResourceSpec, best_match, cosine_similarity, load_trace
from smartson.money import Money

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractRevert",
    "EpochRecord",
    "Ledger",
    "Money",
    "ResourceSpec",
    "ScenarioConfig",
    "SimulationReport",
    "balance_series",
    "best_match",
    "cosine_similarity",
    "emit_report",
    "load_config",
    "load_trace",
    "run_scenario",
]
