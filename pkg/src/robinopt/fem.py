"""P1 finite element assembly for the Robin problem

    -Δy + y = f  in Ω,    ∂ₙy + u y = g  on Γ,

with u piecewise constant on boundary edges.
"""

import numbers
import weakref
from dataclasses import dataclass
from typing import Callable, NamedTuple, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
import warnings

from .errors import EvaluationError, NegativeControlWarning, SolverBreakdown
from .mesh import Mesh, is_nested_in, prolongation

__all__ = [
    "P1Function",
    "SourceSpec",
    "RobinSystem",
    "PreparedSolver",
    "Norms",
    "TRI_QUAD",
    "fem_operators",
    "boundary_mass",
    "assemble_robin",
    "assemble_load",
    "prepare_solver",
    "solve_spd",
    "norms",
    "nested_mass_load",
    "write_system_dump",
]

SOLVE_RTOL = 1e-12

# Degree-4 exact six point rule (barycentric coordinates, weights sum to 1).
_A1, _B1 = 0.445948490915964886318329253883, 0.108103018168070227363341492234
_A2, _B2 = 0.091576213509770743459571463402, 0.816847572980458513080857073196
_W1, _W2 = 0.223381589678011465944640202807, 0.109951743655321867388693130526


class _TriRule(NamedTuple):
    bary: np.ndarray
    weights: np.ndarray


TRI_QUAD = _TriRule(
    bary=np.array([
        [_A1, _A1, _B1], [_A1, _B1, _A1], [_B1, _A1, _A1],
        [_A2, _A2, _B2], [_A2, _B2, _A2], [_B2, _A2, _A2],
    ]),
    weights=np.array([_W1, _W1, _W1, _W2, _W2, _W2]),
)

Field = Union[Callable, numbers.Real, "P1Function"]


@dataclass(eq=False)
class P1Function:
    """Continuous piecewise linear function given by its nodal values."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_vertices,):
            raise ValueError(f"expected {self.mesh.n_vertices} nodal values, "
                             f"got shape {self.values.shape}")

    def at_barycentric(self, bary):
        """Values at barycentric points ``bary`` (q, 3) in every triangle: (nt, q)."""
        return self.values[self.mesh.triangles] @ np.asarray(bary).T

    def gradients(self):
        """Constant gradient on each triangle, shape (nt, 2)."""
        G = fem_operators(self.mesh).grad_bary
        return np.einsum("tkd,tk->td", G, self.values[self.mesh.triangles])

    def __call__(self, points):
        """Point evaluation by brute-force triangle search (meant for tests and plots)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tri = self.mesh.triangles
        p = self.mesh.vertices[tri]
        out = np.empty(len(pts))
        for n, x in enumerate(pts):
            lam = _barycentric(p, x)
            inside = np.all(lam >= -1e-12, axis=1)
            t = np.flatnonzero(inside)
            if len(t) == 0:
                raise ValueError(f"point {x} outside the mesh")
            t = t[0]
            out[n] = lam[t] @ self.values[tri[t]]
        return out if np.ndim(points) > 1 else out[0]

    def lift(self, fine):
        """Same function represented on a nested finer mesh."""
        return P1Function(fine, prolongation(fine, self.mesh) @ self.values)


def _barycentric(p, x):
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    r = x - p[:, 0]
    l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


@dataclass
class SourceSpec:
    """Volume source ``f`` and boundary datum ``g``.

    ``f`` may be a number, a callable taking an (n, 2) array of points, or a
    P1Function on the same or a nested finer mesh.  ``g`` may be a number, a
    callable, or an array with one constant value per boundary edge.
    """

    f: Field = 0.0
    g: Union[Field, np.ndarray] = 0.0


class _FemOperators:
    def __init__(self, mesh):
        tri = mesh.triangles
        p = mesh.vertices[tri]
        area = mesh.areas
        # gradients of barycentric coordinates, (nt, 3, 2)
        e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        self.grad_bary = np.stack([-e[..., 1], e[..., 0]], axis=-1) / (2 * area[:, None, None])

        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        kloc = area[:, None, None] * np.einsum("tid,tjd->tij", self.grad_bary, self.grad_bary)
        mref = (np.ones((3, 3)) + np.eye(3)) / 12.0
        mloc = area[:, None, None] * mref
        n = mesh.n_vertices
        self.stiffness = sp.csr_matrix((kloc.ravel(), (rows, cols)), shape=(n, n))
        self.mass = sp.csr_matrix((mloc.ravel(), (rows, cols)), shape=(n, n))

        be = mesh.boundary_edges
        self.b_rows = np.repeat(be, 2, axis=1).ravel()
        self.b_cols = np.tile(be, (1, 2)).ravel()
        self.b_local = (np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0).ravel()
        base = (self.stiffness + self.mass).tocsc()
        base.sort_indices()
        self.base = base
        # boundary entries couple vertices of one triangle, so they sit inside the base pattern
        col_of = np.repeat(np.arange(n), np.diff(base.indptr))
        keys = col_of.astype(np.int64) * n + base.indices
        self.b_pos = np.searchsorted(keys, self.b_cols.astype(np.int64) * n + self.b_rows)
        # MMD on the refinement numbering is very slow; a row-major vertex order is not
        self.perm = np.lexsort((mesh.vertices[:, 0], mesh.vertices[:, 1]))


_OPS = weakref.WeakKeyDictionary()


def fem_operators(mesh):
    """Stiffness, mass and boundary scatter data, cached per mesh."""
    ops = _OPS.get(mesh)
    if ops is None:
        ops = _OPS[mesh] = _FemOperators(mesh)
    return ops


def boundary_mass(mesh, weights):
    """Σ_E w_E ∫_E φ_i φ_j for piecewise constant edge weights ``w``."""
    ops = fem_operators(mesh)
    w = np.asarray(weights, dtype=float) * mesh.boundary_lengths
    vals = (w[:, None] * ops.b_local[None, :]).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((vals, (ops.b_rows, ops.b_cols)), shape=(n, n))


@dataclass(eq=False)
class RobinSystem:
    mesh: Mesh
    matrix: sp.csc_matrix
    control: np.ndarray


def assemble_robin(mesh, u):
    """Matrix of a_u(y, v) = (∇y,∇v) + (y,v) + (u y, v)_Γ."""
    vals = np.asarray(getattr(u, "values", u), dtype=float)
    if vals.ndim == 0:
        vals = np.full(mesh.n_boundary_edges, float(vals))
    if vals.shape != (mesh.n_boundary_edges,):
        raise ValueError("control must have one value per boundary edge")
    if np.any(vals < 0):
        warnings.warn(f"assembling with negative control (min {vals.min():.3g})",
                      NegativeControlWarning, stacklevel=2)
    ops = fem_operators(mesh)
    w = vals * mesh.boundary_lengths
    data = ops.base.data + np.bincount(
        ops.b_pos, (w[:, None] * ops.b_local[None, :]).ravel(), minlength=ops.base.nnz)
    A = sp.csc_matrix((data, ops.base.indices, ops.base.indptr), shape=ops.base.shape)
    return RobinSystem(mesh, A, vals.copy())


def _eval_field(field, points, what):
    try:
        if isinstance(field, numbers.Real):
            return np.full(len(points), float(field))
        vals = np.asarray(field(points), dtype=float)
        if vals.ndim == 0:
            vals = np.full(len(points), float(vals))
    except Exception as exc:
        raise EvaluationError(f"could not evaluate {what}: {exc}") from exc
    if vals.shape != (len(points),) or not np.all(np.isfinite(vals)):
        raise EvaluationError(f"{what} returned invalid values at quadrature points")
    return vals


def quad_points(mesh):
    """Physical coordinates of the six-point rule, shape (nt, 6, 2)."""
    p = mesh.vertices[mesh.triangles]
    return np.einsum("qk,tkd->tqd", TRI_QUAD.bary, p)


def nested_mass_load(mesh, fn):
    """Exact ∫ fn φ_i for a P1Function ``fn`` on ``mesh`` or a nested finer mesh."""
    if fn.mesh is mesh:
        return fem_operators(mesh).mass @ fn.values
    if is_nested_in(fn.mesh, mesh):
        P = prolongation(fn.mesh, mesh)
        return P.T @ (fem_operators(fn.mesh).mass @ fn.values)
    if is_nested_in(mesh, fn.mesh):
        return fem_operators(mesh).mass @ fn.lift(mesh).values
    raise ValueError("P1 data must live on a mesh nested with the target mesh")


def volume_load(mesh, f):
    """∫_Ω f φ_i."""
    if isinstance(f, P1Function):
        return nested_mass_load(mesh, f)
    if isinstance(f, numbers.Real) and f == 0:
        return np.zeros(mesh.n_vertices)
    x = quad_points(mesh)
    fv = _eval_field(f, x.reshape(-1, 2), "f").reshape(x.shape[:2])
    loc = (fv * TRI_QUAD.weights)[:, :, None] * TRI_QUAD.bary[None]  # (nt, q, 3)
    loc = loc.sum(axis=1) * mesh.areas[:, None]
    return np.bincount(mesh.triangles.ravel(), loc.ravel(), minlength=mesh.n_vertices)


def boundary_load(mesh, g):
    """∫_Γ g φ_i by Simpson's rule on each edge (exact for edgewise constants)."""
    be = mesh.boundary_edges
    L = mesh.boundary_lengths
    if isinstance(g, np.ndarray):
        if g.shape != (mesh.n_boundary_edges,):
            raise ValueError("edgewise g must have one value per boundary edge")
        ga = gm = gb = g
    elif isinstance(g, numbers.Real):
        if g == 0:
            return np.zeros(mesh.n_vertices)
        ga = gm = gb = np.full(len(be), float(g))
    else:
        ga = _eval_field(g, mesh.vertices[be[:, 0]], "g")
        gm = _eval_field(g, mesh.boundary_midpoints, "g")
        gb = _eval_field(g, mesh.vertices[be[:, 1]], "g")
    la = L / 6.0 * (ga + 2.0 * gm)
    lb = L / 6.0 * (2.0 * gm + gb)
    return (np.bincount(be[:, 0], la, minlength=mesh.n_vertices)
            + np.bincount(be[:, 1], lb, minlength=mesh.n_vertices))


def assemble_load(mesh, src):
    """Load vector F(φ_i) = (f, φ_i)_Ω + (g, φ_i)_Γ."""
    return volume_load(mesh, src.f) + boundary_load(mesh, src.g)


class PreparedSolver:
    """Sparse LU factorization of a RobinSystem, reusable across right-hand sides."""

    def __init__(self, system, rtol=SOLVE_RTOL):
        self.system = system
        self.rtol = rtol
        self._perm = fem_operators(system.mesh).perm
        A = system.matrix[self._perm][:, self._perm].tocsc()
        self._lu = sla.splu(A, permc_spec="MMD_AT_PLUS_A")
        self.n_solves = 0
        self._anorm_cache = None

    def solve(self, rhs):
        """Solve with the cached factors.

        Accepts the result when the normwise backward error
        ‖b - Ax‖ / (‖A‖‖x‖ + ‖b‖) is at most ``rtol``; the plain relative
        residual ‖b - Ax‖/‖b‖ cannot reach 1e-12 on fine meshes in double
        precision because ‖x‖ grows like h⁻¹ while ‖b‖ does not.
        """
        b = np.asarray(rhs, dtype=float)
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros_like(b)
        A = self.system.matrix
        x = self._lu_solve(b)
        r = b - A @ x
        err = self.backward_error(x, r, bnorm)
        if err > self.rtol:
            x += self._lu_solve(r)
            r = b - A @ x
            err = self.backward_error(x, r, bnorm)
        self.n_solves += 1
        if not err <= self.rtol:
            raise SolverBreakdown(f"backward error {err:.3e} exceeds {self.rtol:.1e}")
        return x

    def _lu_solve(self, b):
        x = np.empty_like(b)
        x[self._perm] = self._lu.solve(b[self._perm])
        return x

    def backward_error(self, x, r, bnorm):
        return np.linalg.norm(r) / (self._anorm * np.linalg.norm(x) + bnorm)

    @property
    def _anorm(self):
        if self._anorm_cache is None:
            self._anorm_cache = float(sla.norm(self.system.matrix, ord=1))
        return self._anorm_cache


def prepare_solver(system):
    return PreparedSolver(system)


def solve_spd(system, rhs, solver=None):
    """Solve A y = rhs; pass a PreparedSolver to reuse its factorization."""
    if solver is None:
        solver = PreparedSolver(system)
    return P1Function(system.mesh, solver.solve(rhs))


class Norms(NamedTuple):
    l2_omega: float
    h1_omega: float
    linf_omega: float
    l2_gamma: float


def _fd_gradient(fn, pts, step=1e-6):
    ex = np.array([step, 0.0])
    ey = np.array([0.0, step])
    gx = (fn(pts + ex) - fn(pts - ex)) / (2 * step)
    gy = (fn(pts + ey) - fn(pts - ey)) / (2 * step)
    return np.stack([gx, gy], axis=-1)


def norms(y, reference, reference_grad=None):
    """Error norms of ``y - reference``.

    ``reference`` is a number, a callable of (n, 2) points, or a P1Function
    on a nested mesh.  For callables the H¹ part uses ``reference_grad`` when
    given, otherwise central differences.
    """
    if isinstance(reference, P1Function) and reference.mesh is not y.mesh:
        if is_nested_in(reference.mesh, y.mesh):
            y = y.lift(reference.mesh)
        else:
            reference = reference.lift(y.mesh)
    mesh = y.mesh
    x = quad_points(mesh)
    flat = x.reshape(-1, 2)
    yq = y.at_barycentric(TRI_QUAD.bary)
    gy = y.gradients()[:, None, :]
    be = mesh.boundary_edges
    ends = [mesh.vertices[be[:, 0]], mesh.boundary_midpoints, mesh.vertices[be[:, 1]]]

    if isinstance(reference, P1Function):
        rq = reference.at_barycentric(TRI_QUAD.bary)
        gr = reference.gradients()[:, None, :]
        rv = reference.values
        r_edge = [rv[be[:, 0]], 0.5 * (rv[be[:, 0]] + rv[be[:, 1]]), rv[be[:, 1]]]
    elif isinstance(reference, numbers.Real):
        rq = np.full_like(yq, float(reference))
        gr = np.zeros_like(gy)
        rv = np.full(mesh.n_vertices, float(reference))
        r_edge = [np.full(len(be), float(reference))] * 3
    else:
        rq = _eval_field(reference, flat, "reference").reshape(yq.shape)
        if reference_grad is not None:
            gr = np.asarray(reference_grad(flat), dtype=float).reshape(x.shape)
        else:
            gr = _fd_gradient(reference, flat).reshape(x.shape)
        rv = _eval_field(reference, mesh.vertices, "reference")
        r_edge = [_eval_field(reference, pts, "reference") for pts in ends]

    w = TRI_QUAD.weights[None, :] * mesh.areas[:, None]
    e = yq - rq
    l2sq = float(np.sum(w * e ** 2))
    grad_sq = float(np.sum(w * np.sum((gy - gr) ** 2, axis=-1)))
    linf = max(float(np.max(np.abs(e))), float(np.max(np.abs(y.values - rv))))
    yv = y.values
    y_edge = [yv[be[:, 0]], 0.5 * (yv[be[:, 0]] + yv[be[:, 1]]), yv[be[:, 1]]]
    d = [ye - re for ye, re in zip(y_edge, r_edge)]
    gsq = float(np.sum(mesh.boundary_lengths / 6.0 * (d[0] ** 2 + 4 * d[1] ** 2 + d[2] ** 2)))
    return Norms(np.sqrt(l2sq), np.sqrt(l2sq + grad_sq), linf, np.sqrt(gsq))


def write_system_dump(system, path):
    A = system.matrix.tocoo()
    order = np.lexsort((A.col, A.row))
    with open(path, "w") as fh:
        fh.write(f"% {A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for r, c, v in zip(A.row[order], A.col[order], A.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")
