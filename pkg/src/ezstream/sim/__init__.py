"""Deterministic multi-endpoint simulator: scenario scripts, canonical
topology builders, a seeded virtual-time world, and report generation."""

from .scenario import (
    Scenario,
    Step,
    build_broadcast_tree,
    build_call,
    build_conference,
    canonical_scenario,
    parse_scenario,
    tree_nodes,
    tree_parent,
)
from .runner import TopologyReport, run_scenario, run_with_world
from .world import SimWorld

__all__ = [
    "Scenario",
    "SimWorld",
    "Step",
    "TopologyReport",
    "build_broadcast_tree",
    "build_call",
    "build_conference",
    "canonical_scenario",
    "parse_scenario",
    "run_scenario",
    "run_with_world",
    "tree_nodes",
    "tree_parent",
]
