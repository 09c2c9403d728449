"""Two-phase porous-media flow with a mass-conservative, bounds-preserving IMPES scheme."""

from .diagnostics import MassLedger, cfl_number, eta_metric, front_position
from .mesh import BoundaryTag, Mesh, build_structured_triangulation, tag_boundary
from .physics import FluidPair, RockModel
from .schemes import (
    Problem,
    SchemeConfig,
    SimState,
    hfimpes_step,
    initial_state,
    pimpes_step,
    run_time_loop,
    std_impes_step,
)

__all__ = [
    "BoundaryTag", "FluidPair", "MassLedger", "Mesh", "Problem", "RockModel", "SchemeConfig",
    "SimState", "build_structured_triangulation", "cfl_number", "eta_metric", "front_position",
    "hfimpes_step", "initial_state", "pimpes_step", "run_time_loop", "std_impes_step", "tag_boundary",
]
