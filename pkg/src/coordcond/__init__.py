"""Coordinate condensation and baseline solvers for implicit elasticity.

The library solves one implicit step (or a quasistatic load step) of a
lumped-mass FEM model by minimizing its incremental potential with Newton,
Jacobi coordinate descent, JGS2 or coordinate condensation.
"""

from coordcond.basis import PerturbationBasis, build_basis, corotate_basis, estimate_rotations, inject_noise
from coordcond.energy import MaterialParams, SimState, assemble, extract_blocks, make_state
from coordcond.mesh import BoundaryConditions, Mesh, Scene, load_scene, make_grid, make_rod, scene_from_dict
from coordcond.solvers import (
    ConvergenceTrace, SolverConfig, cc_update, cd_update, jacobi_sweep, jgs2_update, newton_reference, solve,
)

__all__ = [
    "BoundaryConditions", "ConvergenceTrace", "MaterialParams", "Mesh", "PerturbationBasis", "Scene",
    "SimState", "SolverConfig", "assemble", "build_basis", "cc_update", "cd_update", "corotate_basis",
    "estimate_rotations", "extract_blocks", "inject_noise", "jacobi_sweep", "jgs2_update", "load_scene",
    "make_grid", "make_rod", "make_state", "newton_reference", "scene_from_dict", "solve",
]
