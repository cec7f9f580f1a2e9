"""Solvers for the discrete projection formula u = Π_ad(R_h^Simp(y·p)/α)."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse.linalg as sla

from .control import BoundaryControl, project_box
from .errors import NonConvergence, Stagnation
from .objective import eval_gradient, hess_vec

__all__ = ["SolveOptions", "SolveReport", "pdas_solve", "fixed_point_solve", "residual"]

log = logging.getLogger(__name__)

DENSE_LIMIT = 64
STAGNATION_WINDOW = 5


@dataclass
class SolveOptions:
    tol: float = 1e-10
    max_outer: int = 30
    inner_tol: float = 1e-12
    damping: float = 0.7
    initial: Optional[BoundaryControl] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


@dataclass(eq=False)
class SolveReport:
    converged: bool
    iterations: int
    residual_history: List[float] = field(default_factory=list)
    active_set_history: List[Tuple[int, int]] = field(default_factory=list)
    inner_iterations: List[int] = field(default_factory=list)
    control: Optional[BoundaryControl] = None
    state: object = None
    adjoint: object = None
    method: str = ""


def _initial_control(problem, opts):
    if opts.initial is not None:
        return BoundaryControl(problem.mesh, project_box(opts.initial.values, problem.bounds))
    c = max(problem.bounds.lower, 0.1)
    return BoundaryControl(problem.mesh, project_box(
        np.full(problem.mesh.n_boundary_edges, c), problem.bounds))


def _evaluate(problem, u):
    """Context, gradient, residual Φ(u) = u - Π(G/α) and active sets at ``u``."""
    ctx = problem.context(u)
    grad = eval_gradient(ctx)
    z = grad.product_mean.values / problem.alpha
    phi = BoundaryControl(u.mesh, u.values - project_box(z, problem.bounds))
    lower = z < problem.bounds.lower
    if problem.bounds.bounded_above:
        upper = z > problem.bounds.upper
    else:
        upper = np.zeros_like(lower)
    return ctx, grad, phi, lower, upper


def residual(problem, u):
    """‖u - Π(R_h^Simp(y·p)/α)‖ in L²(Γ)."""
    return _evaluate(problem, u)[2].norm()


def _finish(report, ctx, converged):
    report.converged = converged
    report.control = ctx.u.copy()
    report.state = ctx.state()
    report.adjoint = ctx.adjoint()
    return report


def _check_stagnation(report):
    r = report.residual_history
    if len(r) > STAGNATION_WINDOW and all(
            r[-i] >= r[-i - 1] for i in range(1, STAGNATION_WINDOW + 1)):
        raise Stagnation(f"{report.method}: residual non-decreasing for "
                         f"{STAGNATION_WINDOW} iterations", report)


def _reduced_newton_step(ctx, grad, lower, upper, opts):
    problem = ctx.problem
    u = ctx.u.values
    n = len(u)
    du = np.zeros(n)
    du[lower] = problem.bounds.lower - u[lower]
    if problem.bounds.bounded_above:
        du[upper] = problem.bounds.upper - u[upper]
    inactive = np.flatnonzero(~(lower | upper))
    if len(inactive) == 0:
        return du, 0

    rhs = -grad.control.values
    if np.any(du != 0):
        rhs = rhs - hess_vec(ctx, ctx.u, du).values
    rhs = rhs[inactive]
    w = ctx.mesh.boundary_lengths[inactive]

    def apply(x):
        full = np.zeros(n)
        full[inactive] = x
        return hess_vec(ctx, ctx.u, full).values[inactive]

    if len(inactive) <= DENSE_LIMIT:
        H = np.column_stack([apply(e) for e in np.eye(len(inactive))])
        du[inactive] = np.linalg.solve(H, rhs)
        return du, len(inactive)

    # length-weighted operator is symmetric; MINRES tolerates indefiniteness
    count = [0]

    def cb(_):
        count[0] += 1

    op = sla.LinearOperator((len(inactive),) * 2, matvec=lambda x: w * apply(x), dtype=float)
    x, info = sla.minres(op, w * rhs, rtol=opts.inner_tol, maxiter=10 * len(inactive),
                         callback=cb)
    if info < 0:
        raise RuntimeError(f"MINRES failed with info={info}")
    du[inactive] = x
    return du, count[0]


def pdas_solve(problem, opts=None):
    """Primal-dual active set (semismooth Newton) iteration.

    Active sets are taken from z = R_h^Simp(y·p)/α: edges with z < lower
    (resp. z > upper) are fixed to the bound, the remaining edges take a
    Newton step on α·u - R_h^Simp(y·p) = 0 using Hessian-vector products.
    """
    opts = opts or SolveOptions()
    report = SolveReport(False, 0, method="pdas")
    u = _initial_control(problem, opts)
    prev = None
    for k in range(opts.max_outer):
        ctx, grad, phi, lower, upper = _evaluate(problem, u)
        res = phi.norm()
        report.iterations = k
        report.residual_history.append(res)
        report.active_set_history.append((int(lower.sum()), int(upper.sum())))
        same = prev is not None and np.array_equal(prev[0], lower) and np.array_equal(prev[1], upper)
        if res <= opts.tol and same:
            report.inner_iterations.append(0)
            log.info("pdas %3d  res %.3e  |A_a| %d  |A_b| %d  converged",
                     k, res, lower.sum(), upper.sum())
            return _finish(report, ctx, True)
        _check_stagnation(report)
        du, inner = _reduced_newton_step(ctx, grad, lower, upper, opts)
        report.inner_iterations.append(inner)
        log.info("pdas %3d  res %.3e  |A_a| %d  |A_b| %d  inner %d",
                 k, res, lower.sum(), upper.sum(), inner)
        u = BoundaryControl(u.mesh, project_box(u.values + du, problem.bounds))
        prev = (lower, upper)
    ctx, grad, phi, lower, upper = _evaluate(problem, u)
    report.iterations = opts.max_outer
    report.residual_history.append(phi.norm())
    report.active_set_history.append((int(lower.sum()), int(upper.sum())))
    return _finish(report, ctx, False)


def fixed_point_solve(problem, opts=None):
    """Damped Picard iteration u ← (1-θ)u + θ·Π(R_h^Simp(y·p)/α)."""
    opts = opts or SolveOptions()
    theta = opts.damping
    report = SolveReport(False, 0, method="fixed-point")
    u = _initial_control(problem, opts)
    prev = None
    max_iter = 10 * opts.max_outer
    for k in range(max_iter):
        ctx, grad, phi, lower, upper = _evaluate(problem, u)
        res = phi.norm()
        report.iterations = k
        report.residual_history.append(res)
        report.active_set_history.append((int(lower.sum()), int(upper.sum())))
        same = prev is not None and np.array_equal(prev[0], lower) and np.array_equal(prev[1], upper)
        if res <= opts.tol and same:
            log.info("fixed-point %3d  res %.3e  converged", k, res)
            return _finish(report, ctx, True)
        if k % 10 == 0:
            log.info("fixed-point %3d  res %.3e  |A_a| %d  |A_b| %d",
                     k, res, lower.sum(), upper.sum())
        u = BoundaryControl(u.mesh, u.values - theta * phi.values)
        prev = (lower, upper)
    _finish(report, ctx, False)
    raise NonConvergence(f"fixed-point iteration did not converge in {max_iter} steps "
                         f"(residual {report.residual_history[-1]:.3e})", report)
