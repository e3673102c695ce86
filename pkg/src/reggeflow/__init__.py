"""Regge–Ricci flow on simplicial 3-geometries."""
from .complex import (
    ComplexTopology3,
    MetricAssignment,
    build_complex,
    load_mesh,
    save_mesh,
    validate_metric,
)
from .curvature import curvature_field, deficit_angles, regge_action
from .flow import FlowConfig, Termination, jacobian_spectrum, run_flow, step
from .geometry import dual_geometry

__all__ = [
    "ComplexTopology3",
    "MetricAssignment",
    "build_complex",
    "load_mesh",
    "save_mesh",
    "validate_metric",
    "curvature_field",
    "deficit_angles",
    "regge_action",
    "FlowConfig",
    "Termination",
    "jacobian_spectrum",
    "run_flow",
    "step",
    "dual_geometry",
]
__version__ = "0.1.0"
