"""Governed agent runtime and failure-injection simulator.

Thin wrapper over the compiled core. Scenario files drive everything:
``run_scenario`` executes the agent runs and the topology simulation,
``replay`` re-derives a recorded trace, ``audit`` checks a trace corpus
against the hardening checklist.
"""

from agentsim._core import (
    AgentsimError,
    audit,
    canonical_digest,
    detect_cycle,
    entropy_bits,
    gini,
    herding_metrics,
    load_scenario,
    replay,
    run_scenario,
    sweep,
    verify_chain,
    verify_completeness,
)

__all__ = [
    "AgentsimError",
    "audit",
    "canonical_digest",
    "detect_cycle",
    "entropy_bits",
    "gini",
    "herding_metrics",
    "load_scenario",
    "replay",
    "run_scenario",
    "sweep",
    "verify_chain",
    "verify_completeness",
]
