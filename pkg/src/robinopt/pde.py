"""State, adjoint, tangent and second-order adjoint solves for a fixed control."""

import numbers
from dataclasses import dataclass, field

import numpy as np

from .control import BoundaryControl, BoxBounds
from .fem import (
    P1Function, SourceSpec, TRI_QUAD, assemble_load, assemble_robin, boundary_mass,
    fem_operators, nested_mass_load, prepare_solver, quad_points, _eval_field,
)
from .mesh import is_nested_in, prolongation

__all__ = [
    "DesiredState",
    "OcpProblem",
    "PdeContext",
    "solve_state",
    "solve_adjoint",
    "solve_tangent",
    "solve_dual_hessian",
]


class DesiredState:
    """Desired state y_d: a number, a callable, or a P1Function on a nested mesh.

    Provides the load (y_d, φ_i) and the misfit ½‖y - y_d‖² on any mesh.  P1
    data on a nested mesh is integrated exactly; callables use the degree-4
    triangle rule.
    """

    def __init__(self, data):
        self.data = data
        self._loads = {}

    def load(self, mesh):
        key = id(mesh)
        hit = self._loads.get(key)
        if hit is not None and hit[0] is mesh:
            return hit[1]
        if isinstance(self.data, P1Function):
            b = nested_mass_load(mesh, self.data)
        elif isinstance(self.data, numbers.Real):
            b = fem_operators(mesh).mass @ np.full(mesh.n_vertices, float(self.data))
        else:
            x = quad_points(mesh)
            fv = _eval_field(self.data, x.reshape(-1, 2), "y_d").reshape(x.shape[:2])
            loc = ((fv * TRI_QUAD.weights)[:, :, None] * TRI_QUAD.bary[None]).sum(axis=1)
            loc *= mesh.areas[:, None]
            b = np.bincount(mesh.triangles.ravel(), loc.ravel(), minlength=mesh.n_vertices)
        self._loads[key] = (mesh, b)
        return b

    def misfit(self, y):
        """½‖y - y_d‖² over Ω."""
        mesh = y.mesh
        d = self.data
        if isinstance(d, P1Function):
            if d.mesh is mesh:
                e = y.values - d.values
                return 0.5 * float(e @ (fem_operators(mesh).mass @ e))
            if is_nested_in(d.mesh, mesh):
                e = prolongation(d.mesh, mesh) @ y.values - d.values
                return 0.5 * float(e @ (fem_operators(d.mesh).mass @ e))
            e = y.values - d.lift(mesh).values
            return 0.5 * float(e @ (fem_operators(mesh).mass @ e))
        if isinstance(d, numbers.Real):
            e = y.values - float(d)
            return 0.5 * float(e @ (fem_operators(mesh).mass @ e))
        x = quad_points(mesh)
        yd = _eval_field(d, x.reshape(-1, 2), "y_d").reshape(x.shape[:2])
        e = y.at_barycentric(TRI_QUAD.bary) - yd
        return 0.5 * float(np.sum(TRI_QUAD.weights * e ** 2 * mesh.areas[:, None]))

    def misfit_change(self, y, dy):
        """misfit(y + dy) - misfit(y), without cancellation: (dy, y + dy/2) - (dy, y_d)."""
        mass = fem_operators(y.mesh).mass
        return float(dy.values @ (mass @ (y.values + 0.5 * dy.values))
                     - dy.values @ self.load(y.mesh))


@dataclass(eq=False)
class OcpProblem:
    """Discrete optimal control problem on one mesh; builds a PdeContext per control."""

    mesh: object
    source: SourceSpec
    desired: DesiredState
    alpha: float
    bounds: BoxBounds = field(default_factory=BoxBounds)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not isinstance(self.desired, DesiredState):
            self.desired = DesiredState(self.desired)
        self._load = None

    @property
    def state_load(self):
        if self._load is None:
            self._load = assemble_load(self.mesh, self.source)
        return self._load

    def context(self, u):
        if not isinstance(u, BoundaryControl):
            u = BoundaryControl(self.mesh, np.broadcast_to(u, (self.mesh.n_boundary_edges,)))
        return PdeContext(self, u)


class PdeContext:
    """Assembled and factorized A(u) shared by all solves at the control ``u``."""

    def __init__(self, problem, u):
        if u.mesh is not problem.mesh:
            raise ValueError("control lives on a different mesh")
        self.problem = problem
        self.u = BoundaryControl(u.mesh, u.values.copy())
        self.system = assemble_robin(problem.mesh, self.u)
        self.solver = prepare_solver(self.system)
        self._state = None
        self._adjoint = None

    @property
    def mesh(self):
        return self.problem.mesh

    @property
    def alpha(self):
        return self.problem.alpha

    def at(self, u):
        """Context for ``u``; ``self`` if ``u`` equals the stored control."""
        if u is None or np.array_equal(getattr(u, "values", u), self.u.values):
            return self
        return self.problem.context(u)

    def solve(self, rhs):
        return P1Function(self.mesh, self.solver.solve(rhs))

    def state(self):
        if self._state is None:
            self._state = self.solve(self.problem.state_load)
        return self._state

    def adjoint(self):
        if self._adjoint is None:
            self._adjoint = solve_adjoint(self, self.state())
        return self._adjoint


def solve_state(ctx):
    """y_h = S_h(u)."""
    return ctx.state()


def solve_adjoint(ctx, y):
    """p_h with a_u(v, p) = (y - y_d, v) for all v."""
    mass = fem_operators(ctx.mesh).mass
    return ctx.solve(mass @ y.values - ctx.problem.desired.load(ctx.mesh))


def solve_tangent(ctx, y, du):
    """δy with a_u(δy, v) = -(δu y, v)_Γ."""
    vals = getattr(du, "values", du)
    return ctx.solve(-(boundary_mass(ctx.mesh, vals) @ y.values))


def solve_dual_hessian(ctx, p, dy, du):
    """δp with a_u(v, δp) = (δy, v) - (δu p, v)_Γ."""
    vals = getattr(du, "values", du)
    mass = fem_operators(ctx.mesh).mass
    return ctx.solve(mass @ dy.values - boundary_mass(ctx.mesh, vals) @ p.values)
