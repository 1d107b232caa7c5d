"""Hybrid discontinuous Galerkin solver for the 2D mixed Helmholtz equation.

The package discretizes the first-order system ``j kappa sigma = grad u``,
``div sigma = j kappa c u`` with the impedance condition
``sigma . n + u = g`` on structured triangulations, condenses the interior
unknowns onto facet traces and solves the resulting skeleton system
directly or with a preconditioned BiCGSTAB iteration.
"""

from .analysis import (
    EliminationReport,
    EnergyReport,
    ErrorRow,
    ExactSolution,
    RateFit,
    StabilityReport,
    check_energy_identities,
    check_facet_elimination,
    check_stability_bounds,
    compute_errors,
    fit_convergence_rate,
    l2_project_facet,
    l2_project_volume,
    plane_wave,
    sample_solution,
)
from .assembly import (
    ElementBlocks,
    ProblemData,
    Space,
    assemble_all,
    assemble_element,
    assemble_rhs,
)
from .mesh import Mesh, build_structured_mesh
from .ref_fem import (
    QuadratureRule,
    RTBasis,
    ScalarBasis,
    build_rt_basis,
    build_scalar_basis,
    make_quadrature,
)
from .solver import (
    BreakdownError,
    CondensedElement,
    Preconditioner,
    SingularBlockError,
    SkeletonSystem,
    Solution,
    SolveStats,
    build_vertex_patch_blocks,
    condense,
    full_residual,
    reconstruct_interior,
    solve,
    solve_bicgstab,
    solve_direct,
    solve_monolithic,
)

__version__ = "0.1.0"

__all__ = [
    "BreakdownError",
    "CondensedElement",
    "ElementBlocks",
    "EliminationReport",
    "EnergyReport",
    "ErrorRow",
    "ExactSolution",
    "Mesh",
    "Preconditioner",
    "ProblemData",
    "QuadratureRule",
    "RTBasis",
    "RateFit",
    "ScalarBasis",
    "SingularBlockError",
    "SkeletonSystem",
    "Solution",
    "SolveStats",
    "Space",
    "StabilityReport",
    "assemble_all",
    "assemble_element",
    "assemble_rhs",
    "build_rt_basis",
    "build_scalar_basis",
    "build_structured_mesh",
    "build_vertex_patch_blocks",
    "check_energy_identities",
    "check_facet_elimination",
    "check_stability_bounds",
    "compute_errors",
    "condense",
    "fit_convergence_rate",
    "full_residual",
    "l2_project_facet",
    "l2_project_volume",
    "make_quadrature",
    "plane_wave",
    "reconstruct_interior",
    "sample_solution",
    "solve",
    "solve_bicgstab",
    "solve_direct",
    "solve_monolithic",
]
