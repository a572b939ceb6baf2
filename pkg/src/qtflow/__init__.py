"""Conformal Q-curvature and T-curvature flows on T^3 x [0, 1]."""
from .conformal import kappa_invariants, q_curvature, t_curvature
from .config import parse_config
from .geometry import build_grid, flat_background, integrate_boundary, integrate_volume, synthetic_background
from .operators import FLOW_BC, NO_BC, BoundaryConditionSet, chang_qing_p3, p43_bilinear, p43_operator, paneitz_p4
from .qflow import FlowConfig, qflow_step, run_qflow
from .tflow import extend, operator_A, run_tflow, tflow_step

__version__ = "0.1.0"

__all__ = [
    "BoundaryConditionSet", "FLOW_BC", "FlowConfig", "NO_BC", "build_grid", "chang_qing_p3", "extend",
    "flat_background", "integrate_boundary", "integrate_volume", "kappa_invariants", "operator_A",
    "p43_bilinear", "p43_operator", "paneitz_p4", "parse_config", "q_curvature", "qflow_step", "run_qflow",
    "run_tflow", "synthetic_background", "t_curvature", "tflow_step",
]
