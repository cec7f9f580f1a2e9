"""Optimal control of a Robin coefficient with P1 finite elements.

The discrete problem minimizes ½‖y_h - y_d‖² + (α/2)‖u_h‖² over piecewise
constant boundary controls u_h with box constraints, subject to
-Δy + y = f in Ω and ∂ₙy + u y = g on Γ.
"""

from .control import (
    BoundaryControl, BoundaryTrace, BoxBounds, control_l2_error, project_box,
    projected_product_error, q_h_project, r_h_midpoint, r_h_simpson, trace_product,
)
from .errors import (
    EvaluationError, NegativeControlWarning, NonConformingResult, NonConvergence,
    NotNested, SolverBreakdown, Stagnation,
)
from .fem import (
    P1Function, RobinSystem, SourceSpec, assemble_load, assemble_robin, norms,
    prepare_solver, solve_spd,
)
from .mesh import Mesh, build_hierarchy, edge_geometry, make_base_mesh, refine, restrict_boundary
from .objective import eval_gradient, eval_objective, hess_vec
from .optimizer import SolveOptions, SolveReport, fixed_point_solve, pdas_solve
from .pde import (
    DesiredState, OcpProblem, PdeContext, solve_adjoint, solve_dual_hessian, solve_state,
    solve_tangent,
)
from .study import BenchmarkSpec, StudyRow, emit_results, run_benchmark, run_mms

__version__ = "0.1.0"
