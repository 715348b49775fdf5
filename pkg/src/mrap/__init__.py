"""Adiabatic transport through branched tight-binding trees.

A particle injected at the root of a binary tree of coupled sites is carried,
under a counter-intuitive pair of pulses, into an equal-energy (E=0) dark
state spread over the leaves.  Blocking a link or detuning a site removes
that branch from the dark manifold, which gives interaction-free imaging of
many sites at once and collision-free routing to a chosen set of receivers.
"""
from .dynamics import (
    AdiabaticityError,
    Trajectory,
    adiabaticity_metric,
    auto_total_time,
    certify_schedule,
    propagate,
)
from .hamiltonian import PulseSchedule, assemble, d_assemble_dt, pulse
from .ifm import MinefieldScenario, detect_beating, run_ifm
from .nullspace import (
    analytic_null_basis,
    numeric_null_basis,
    target_state,
    transported_states,
)
from .routing import RoutingRound, run_routing
from .spectrum import gap_vs_depth, spectrum_scan
from .topology import NodeId, OcclusionMask, TreeGraph, address_value, build_tree

__all__ = [
    "AdiabaticityError",
    "MinefieldScenario",
    "NodeId",
    "OcclusionMask",
    "PulseSchedule",
    "RoutingRound",
    "Trajectory",
    "TreeGraph",
    "address_value",
    "adiabaticity_metric",
    "analytic_null_basis",
    "assemble",
    "auto_total_time",
    "build_tree",
    "certify_schedule",
    "d_assemble_dt",
    "detect_beating",
    "gap_vs_depth",
    "numeric_null_basis",
    "propagate",
    "pulse",
    "run_ifm",
    "run_routing",
    "spectrum_scan",
    "target_state",
    "transported_states",
]
