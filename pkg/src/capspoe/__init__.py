"""Capsule networks trained as a routing-weighted product of expert neurons."""

from .energy import EnergyModel, cd1_step, generate, p_hidden_given_visible, p_visible_given_hidden
from .kernels import SeededRng, SgdMomentumState
from .routing import RoutingState, route_forward, route_reverse, squash

__all__ = [
    "EnergyModel",
    "RoutingState",
    "SeededRng",
    "SgdMomentumState",
    "cd1_step",
    "generate",
    "p_hidden_given_visible",
    "p_visible_given_hidden",
    "route_forward",
    "route_reverse",
    "squash",
]

__version__ = "0.1.0"
