"""1D pulse-wave network solver."""

from .network import (
    DISTAL,
    PROXIMAL,
    InletBC,
    Junction,
    Network,
    NetworkState,
    TerminalRCR,
    VesselSegment,
    apply_stenosis_profile,
    build_network,
    stiffness_coefficient,
    tube_pressure,
    wave_speed,
)
from .stepping import cfl_limit, compute_rhs, init_periodic, invalidate_ops, step

__all__ = [
    "DISTAL",
    "PROXIMAL",
    "InletBC",
    "Junction",
    "Network",
    "NetworkState",
    "TerminalRCR",
    "VesselSegment",
    "apply_stenosis_profile",
    "build_network",
    "stiffness_coefficient",
    "tube_pressure",
    "wave_speed",
    "cfl_limit",
    "compute_rhs",
    "init_periodic",
    "invalidate_ops",
    "step",
]
