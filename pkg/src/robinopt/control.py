"""Piecewise constant boundary controls and the operators acting on them."""

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mesh import Mesh, restrict_boundary

__all__ = [
    "BoxBounds",
    "BoundaryControl",
    "BoundaryTrace",
    "project_box",
    "trace_product",
    "r_h_simpson",
    "r_h_midpoint",
    "q_h_project",
    "control_l2_error",
    "edgewise_projected_error_sq",
    "projected_product_error",
    "write_control_csv",
]


@dataclass(frozen=True)
class BoxBounds:
    """Control bounds ``lower <= u <= upper``; ``upper=None`` means unbounded."""

    lower: float = 0.0
    upper: Optional[float] = None

    def __post_init__(self):
        if self.upper is not None and math.isinf(self.upper) and self.upper > 0:
            object.__setattr__(self, "upper", None)
        if self.upper is not None and not self.lower < self.upper:
            raise ValueError(f"need lower < upper, got {self.lower} >= {self.upper}")

    @property
    def bounded_above(self):
        return self.upper is not None


def project_box(v, bounds):
    """Pointwise clamp onto ``[lower, upper]``."""
    out = np.maximum(v, bounds.lower)
    if bounds.bounded_above:
        out = np.minimum(out, bounds.upper)
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(eq=False)
class BoundaryControl:
    """One value per boundary edge."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_boundary_edges,):
            raise ValueError(f"expected {self.mesh.n_boundary_edges} edge values, "
                             f"got shape {self.values.shape}")

    @classmethod
    def constant(cls, mesh, c):
        return cls(mesh, np.full(mesh.n_boundary_edges, float(c)))

    def inner(self, other):
        w = other.values if isinstance(other, BoundaryControl) else np.asarray(other)
        return float(np.sum(self.mesh.boundary_lengths * self.values * w))

    def norm(self):
        return math.sqrt(self.inner(self))

    def copy(self):
        return BoundaryControl(self.mesh, self.values.copy())

    def _wrap(self, values):
        return BoundaryControl(self.mesh, values)

    def __add__(self, other):
        return self._wrap(self.values + getattr(other, "values", other))

    def __sub__(self, other):
        return self._wrap(self.values - getattr(other, "values", other))

    def __mul__(self, s):
        return self._wrap(self.values * s)

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.values)


@dataclass(eq=False)
class BoundaryTrace:
    """Values of a continuous function on Γ at (start, midpoint, end) of each edge."""

    mesh: Mesh
    values: np.ndarray  # (nb, 3)


def _edge_endpoint_values(y):
    be = y.mesh.boundary_edges
    return y.values[be[:, 0]], y.values[be[:, 1]]


def trace_product(y, p):
    """Boundary trace of the product of two P1 functions (quadratic per edge)."""
    if y.mesh is not p.mesh:
        raise ValueError("state and adjoint live on different meshes")
    y0, y1 = _edge_endpoint_values(y)
    p0, p1 = _edge_endpoint_values(p)
    mid = 0.25 * (y0 + y1) * (p0 + p1)
    return BoundaryTrace(y.mesh, np.column_stack([y0 * p0, mid, y1 * p1]))


def r_h_simpson(t):
    v = t.values
    return BoundaryControl(t.mesh, (v[:, 0] + 4.0 * v[:, 1] + v[:, 2]) / 6.0)


def r_h_midpoint(u, mesh):
    """Value at the midpoint of each (straight) edge."""
    vals = np.asarray(u(mesh.boundary_midpoints), dtype=float) if callable(u) else u
    return BoundaryControl(mesh, np.broadcast_to(vals, (mesh.n_boundary_edges,)).copy())


_GAUSS5 = np.polynomial.legendre.leggauss(5)


def q_h_project(u, mesh):
    """Edgewise mean value, by five point Gauss quadrature on each edge."""
    if not callable(u):
        return BoundaryControl.constant(mesh, u)
    x, w = _GAUSS5
    t = 0.5 * (x + 1.0)
    be = mesh.boundary_edges
    a = mesh.vertices[be[:, 0]]
    b = mesh.vertices[be[:, 1]]
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    vals = np.asarray(u(pts.reshape(-1, 2)), dtype=float).reshape(len(be), len(t))
    return BoundaryControl(mesh, 0.5 * vals @ w)


def control_l2_error(a, b):
    """‖a - b‖ in L²(Γ) for piecewise constants on nested boundary meshes."""
    fine, coarse = (a, b) if a.mesh.level >= b.mesh.level else (b, a)
    emap = restrict_boundary(fine.mesh, coarse.mesh)
    diff = fine.values - coarse.values[emap]
    return math.sqrt(float(np.sum(fine.mesh.boundary_lengths * diff ** 2)))


def _quadratic_coeffs(y0, y1, p0, p1):
    dy = y1 - y0
    dp = p1 - p0
    return y0 * p0, y0 * dp + dy * p0, dy * dp


def _roots_in_unit_interval(c0, c1, c2):
    """Real roots of c0 + c1 t + c2 t² strictly inside (0, 1); others become 1."""
    n = len(c0)
    r = np.full((n, 2), 1.0)
    scale = np.abs(c0) + np.abs(c1) + np.abs(c2)
    quad = np.abs(c2) > 1e-14 * scale
    lin = ~quad & (np.abs(c1) > 1e-14 * scale)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r[lin, 0] = -c0[lin] / c1[lin]
        disc = c1 ** 2 - 4.0 * c2 * c0
        ok = quad & (disc >= 0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        q = -0.5 * (c1 + np.copysign(sq, c1))
        r1 = q / c2
        r2 = np.where(q != 0, c0 / q, r1)
        r[ok, 0] = r1[ok]
        r[ok, 1] = r2[ok]
    r[~np.isfinite(r) | (r <= 0.0) | (r >= 1.0)] = 1.0
    return r


def edgewise_projected_error_sq(qa, qb, lengths, alpha, bounds, split=True):
    """∑_E ∫_E |Π(qa/α) - Π(qb/α)|² for quadratic edge traces.

    ``qa`` and ``qb`` are (nb, 3) coefficient arrays (c0, c1, c2) of the
    products in the edge parameter t ∈ [0, 1].  With ``split`` each edge is
    cut where either product crosses α·lower or α·upper and Simpson's rule
    is used on every piece; without it plain Simpson on the whole edge.
    """
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    nb = len(qa)
    pts = [np.zeros((nb, 1)), np.ones((nb, 1))]
    if split:
        thresholds = [alpha * bounds.lower]
        if bounds.bounded_above:
            thresholds.append(alpha * bounds.upper)
        for q in (qa, qb):
            for thr in thresholds:
                pts.append(_roots_in_unit_interval(q[:, 0] - thr, q[:, 1], q[:, 2]))
    t = np.sort(np.hstack(pts), axis=1)

    def f(s):
        va = qa[:, [0]] + s * (qa[:, [1]] + s * qa[:, [2]])
        vb = qb[:, [0]] + s * (qb[:, [1]] + s * qb[:, [2]])
        return project_box(va / alpha, bounds) - project_box(vb / alpha, bounds)

    lo, hi = t[:, :-1], t[:, 1:]
    simpson = (hi - lo) / 6.0 * (f(lo) ** 2 + 4.0 * f(0.5 * (lo + hi)) ** 2 + f(hi) ** 2)
    return float(np.sum(np.asarray(lengths) * simpson.sum(axis=1)))


def projected_product_error(ya, pa, yb, pb, alpha, bounds, split=True):
    """‖Π(ya·pa/α) - Π(yb·pb/α)‖ in L²(Γ), where (yb, pb) live on a nested coarser mesh."""
    fine = ya.mesh
    if yb.mesh is not fine:
        restrict_boundary(fine, yb.mesh)  # raises NotNested
        yb = yb.lift(fine)
        pb = pb.lift(fine)
    qa = np.column_stack(_quadratic_coeffs(*_edge_endpoint_values(ya), *_edge_endpoint_values(pa)))
    qb = np.column_stack(_quadratic_coeffs(*_edge_endpoint_values(yb), *_edge_endpoint_values(pb)))
    sq = edgewise_projected_error_sq(qa, qb, fine.boundary_lengths, alpha, bounds, split=split)
    return math.sqrt(max(sq, 0.0))


def write_control_csv(control, path):
    mid = control.mesh.boundary_midpoints
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["edge_index", "midpoint_x", "midpoint_y", "value"])
        for i, (xy, v) in enumerate(zip(mid, control.values)):
            w.writerow([i, repr(float(xy[0])), repr(float(xy[1])), repr(float(v))])
