"""Reduced objective j_h(u) = J_h(S_h(u), u), its gradient and Hessian-vector products."""

from dataclasses import dataclass

import numpy as np

from .control import BoundaryControl, BoundaryTrace, r_h_simpson, trace_product
from .fem import P1Function, boundary_mass, fem_operators
from .pde import solve_dual_hessian, solve_tangent

__all__ = [
    "GradientRep",
    "eval_objective",
    "eval_gradient",
    "hess_vec",
    "fd_gradient_check",
    "fd_hessian_check",
]


@dataclass(eq=False)
class GradientRep:
    """Edgewise representative α·u - R_h^Simp(y·p) of j_h'(u)."""

    control: BoundaryControl
    trace: BoundaryTrace
    product_mean: BoundaryControl

    def pair(self, du):
        return self.control.inner(du)


def eval_objective(ctx, u=None):
    ctx = ctx.at(u)
    y = ctx.state()
    return ctx.problem.desired.misfit(y) + 0.5 * ctx.alpha * ctx.u.inner(ctx.u)


def eval_gradient(ctx, u=None):
    ctx = ctx.at(u)
    trace = trace_product(ctx.state(), ctx.adjoint())
    mean = r_h_simpson(trace)
    grad = BoundaryControl(ctx.mesh, ctx.alpha * ctx.u.values - mean.values)
    return GradientRep(grad, trace, mean)


def hess_vec(ctx, u, du):
    """j_h''(u)δu as an edgewise representative; two solves with the cached A(u)."""
    ctx = ctx.at(u)
    y = ctx.state()
    p = ctx.adjoint()
    dy = solve_tangent(ctx, y, du)
    dp = solve_dual_hessian(ctx, p, dy, du)
    s = trace_product(y, dp).values + trace_product(dy, p).values
    mean = (s[:, 0] + 4.0 * s[:, 1] + s[:, 2]) / 6.0
    return BoundaryControl(ctx.mesh, ctx.alpha * np.asarray(getattr(du, "values", du)) - mean)


def fd_gradient_check(ctx, du, eps=1e-4):
    """Compare (∇j, δu)_Γ with a central difference quotient of j.

    The difference j(u + εδu) - j(u - εδu) is formed without cancellation:
    the state difference solves A(u + εδu)(y₊ - y₋) = -2ε B(δu) y₋, which
    holds exactly for the Robin matrices.  Returns
    ``(analytic, fd, relative_error)``.
    """
    u = ctx.u
    problem = ctx.problem
    g = eval_gradient(ctx).pair(du)
    plus = problem.context(u + eps * du)
    ym = problem.context(u - eps * du).state()
    dvals = getattr(du, "values", du)
    dy = plus.solve(-(boundary_mass(ctx.mesh, 2.0 * eps * dvals) @ ym.values))
    dj = problem.desired.misfit_change(ym, dy) + 2.0 * eps * ctx.alpha * u.inner(du)
    fd = dj / (2.0 * eps)
    return g, fd, abs(g - fd) / abs(g)


def fd_hessian_check(ctx, du, eps=1e-4):
    """Compare Hδu with a central difference of the gradient.

    As in :func:`fd_gradient_check` the state and adjoint differences are
    obtained from exact difference equations, and y₊p₊ - y₋p₋ is written as
    y₊(p₊ - p₋) + (y₊ - y₋)p₋.  Returns ``(analytic, fd, relative_error)``
    with the error measured in L²(Γ).
    """
    u = ctx.u
    problem = ctx.problem
    h = hess_vec(ctx, u, du)
    plus = problem.context(u + eps * du)
    minus = problem.context(u - eps * du)
    ym, pm = minus.state(), minus.adjoint()
    bd = boundary_mass(ctx.mesh, 2.0 * eps * getattr(du, "values", du))
    dy = plus.solve(-(bd @ ym.values))
    mass = fem_operators(ctx.mesh).mass
    dp = plus.solve(mass @ dy.values - bd @ pm.values)
    yp = P1Function(ctx.mesh, ym.values + dy.values)
    dprod = trace_product(yp, dp).values + trace_product(dy, pm).values
    dmean = (dprod[:, 0] + 4.0 * dprod[:, 1] + dprod[:, 2]) / 6.0
    fd = BoundaryControl(ctx.mesh, ctx.alpha * getattr(du, "values", du)
                         - dmean / (2.0 * eps))
    return h, fd, (h - fd).norm() / h.norm()
