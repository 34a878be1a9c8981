"""Deterministic in-process fleet of mock EL/CL API servers."""

from .chain import SyntheticChain, build_chain
from .injections import DivergenceInjection, Scenario, apply_injection
from .responses import NodeState, canonical_response
from .server import MockFleet, MockNode, spawn_fleet, spawn_scenario

__all__ = [
    "DivergenceInjection",
    "MockFleet",
    "MockNode",
    "NodeState",
    "Scenario",
    "SyntheticChain",
    "apply_injection",
    "build_chain",
    "canonical_response",
    "spawn_fleet",
    "spawn_scenario",
]
