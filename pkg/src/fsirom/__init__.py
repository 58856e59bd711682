"""Monolithic ALE finite element FSI solver with a time-segmented POD reduced model."""

from .config import RunConfig, load_config
from .fem import DofMap, FieldState, PhysicalParams
from .fom import FomConfig, FsiSolver, TimeHistory
from .mesh import Mesh, generate_benchmark_mesh, load_mesh, save_mesh
from .metrics import NormEvaluator, compare_trajectories
from .pod import BlockPOD, PodBasis, SegmentedPOD, make_schedule, offline_phase
from .rom import run_rom
from .trajectory import Trajectory, load_trajectory, save_trajectory

__version__ = "0.1.0"

__all__ = [
    "BlockPOD", "DofMap", "FieldState", "FomConfig", "FsiSolver", "Mesh", "NormEvaluator", "PhysicalParams",
    "PodBasis", "RunConfig", "SegmentedPOD", "TimeHistory", "Trajectory", "compare_trajectories",
    "generate_benchmark_mesh", "load_config", "load_mesh", "load_trajectory", "make_schedule", "offline_phase",
    "run_rom", "save_mesh", "save_trajectory",
]
