"""Nonlinear finite-element ventricle model."""

from .assembly import FEModel
from .material import ActiveParams, GuccioneParams, active_scalar, active_stress, passive_stress
from .mesh import (
    TetMesh,
    generate_idealized_lv,
    load_mesh,
    prescribe_activation,
    save_mesh,
)

__all__ = [
    "FEModel",
    "ActiveParams",
    "GuccioneParams",
    "active_scalar",
    "active_stress",
    "passive_stress",
    "TetMesh",
    "generate_idealized_lv",
    "load_mesh",
    "prescribe_activation",
    "save_mesh",
]
