"""Stochastic data-driven output-feedback predictive control for ARX systems."""

from .config import BenchmarkConfig, builtin_config, load_config
from .controller import ControllerState, run_closed_loop
from .data import (DesignMatrices, HankelSet, build_design_matrices,
                   build_ocp_hankels, collect_data, hankel, pe_order_check,
                   rank_assumption_check)
from .lti import ArxModel, ExtendedState, Trajectory, extended_matrices, simulate
from .ocp import OcpSpec, assemble, backup_init, build_ocp_spec, measured_init
from .pce import BasisSpec, PceVector, build_joint_basis, disturbance_pce, moments
from .terminal import Box, TerminalIngredients, synthesize

__all__ = [
    "ArxModel", "BasisSpec", "BenchmarkConfig", "Box", "ControllerState",
    "DesignMatrices", "ExtendedState", "HankelSet", "OcpSpec", "PceVector",
    "TerminalIngredients", "Trajectory", "assemble", "backup_init",
    "build_design_matrices", "build_joint_basis", "build_ocp_hankels",
    "build_ocp_spec", "builtin_config", "collect_data", "disturbance_pce",
    "extended_matrices", "hankel", "load_config", "measured_init", "moments",
    "pe_order_check", "rank_assumption_check", "run_closed_loop", "simulate",
    "synthesize",
]
