"""Monomial basis, symbolic dynamics expansion, and moment propagation."""

from uavplan.moments.basis import MomentBasis, MonomialIndex, build_basis
from uavplan.moments.dynamics import (
    MomentVector,
    StepTransition,
    build_transition,
    mc_moment_oracle,
    moments_from_point_state,
    pack_expansion,
    propagate,
)
from uavplan.moments.expansion import SymbolicExpansion, build_expansion

__all__ = [
    "MomentBasis",
    "MomentVector",
    "MonomialIndex",
    "StepTransition",
    "SymbolicExpansion",
    "build_basis",
    "build_expansion",
    "build_transition",
    "mc_moment_oracle",
    "moments_from_point_state",
    "pack_expansion",
    "propagate",
]
