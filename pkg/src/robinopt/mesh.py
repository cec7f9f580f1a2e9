"""Triangular meshes of the unit square and their nested refinement hierarchy.

The base mesh consists of two right triangles.  Each call to :func:`refine`
performs two complete longest-edge bisection sweeps, which halves the mesh
size and doubles the number of boundary edges.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import NonConformingResult, NotNested

__all__ = [
    "Mesh",
    "EdgeGeometry",
    "make_base_mesh",
    "refine",
    "build_hierarchy",
    "edge_geometry",
    "restrict_boundary",
    "prolongation",
    "is_nested_in",
    "write_mesh_dump",
]


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation of the unit square.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise vertex order
    boundary_edges : (nb, 2) int array
        Closed loop of boundary edges, oriented so that the domain lies on
        the left.
    boundary_triangles : (nb,) int array
        Triangle owning each boundary edge.
    level : int
    parent_edge_map : (nb,) int array or None
        Boundary edge of the parent mesh containing each boundary edge.
    parent : Mesh or None
    midpoint_parents : tuple of (k, 2) int arrays
        For every bisection sweep that created this mesh from ``parent``, the
        endpoint pair of each new vertex, in creation order.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_triangles: np.ndarray
    level: int = 0
    parent_edge_map: Optional[np.ndarray] = None
    parent: Optional["Mesh"] = None
    midpoint_parents: tuple = ()

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_boundary_edges(self):
        return len(self.boundary_edges)

    @property
    def n_dof(self):
        """Unknowns of the discrete control problem: P1 state plus P0 control."""
        return self.n_vertices + self.n_boundary_edges

    @cached_property
    def areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return _frozen(0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]), float)

    @cached_property
    def h(self):
        """Maximal element diameter."""
        p = self.vertices[self.triangles]
        lens = [np.linalg.norm(p[:, (k + 1) % 3] - p[:, k], axis=1) for k in range(3)]
        return float(np.max(lens))

    @cached_property
    def boundary_lengths(self):
        a, b = self._boundary_points()
        return _frozen(np.linalg.norm(b - a, axis=1), float)

    @cached_property
    def boundary_midpoints(self):
        a, b = self._boundary_points()
        return _frozen(0.5 * (a + b), float)

    @cached_property
    def boundary_normals(self):
        a, b = self._boundary_points()
        d = b - a
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return _frozen(n / np.linalg.norm(n, axis=1)[:, None], float)

    def _boundary_points(self):
        return (self.vertices[self.boundary_edges[:, 0]],
                self.vertices[self.boundary_edges[:, 1]])

    def validate(self, tol=1e-12):
        """Check the structural invariants; raise ``AssertionError`` on failure."""
        assert np.all(self.areas > 0), "non-positive triangle area"
        assert abs(self.areas.sum() - 1.0) <= tol, "areas do not sum to 1"
        keys = _edge_keys(self.triangles, self.n_vertices).ravel()
        uniq, counts = np.unique(keys, return_counts=True)
        assert counts.max() <= 2, "edge shared by more than two triangles"
        bkeys = _pair_keys(self.boundary_edges, self.n_vertices)
        assert np.array_equal(np.sort(bkeys), uniq[counts == 1]), \
            "boundary edges do not match edges with a single neighbour"
        mid = self.boundary_midpoints
        on_side = (np.isclose(mid, 0.0, atol=0) | np.isclose(mid, 1.0, atol=0)).any(axis=1)
        assert on_side.all(), "boundary edge off the square boundary"
        ends = self.boundary_edges
        assert np.array_equal(ends[:, 1], np.roll(ends[:, 0], -1)), \
            "boundary edges do not form a closed loop"
        return True


@dataclass(frozen=True)
class EdgeGeometry:
    endpoints: tuple
    midpoint: np.ndarray
    length: float
    outward_normal: np.ndarray


def make_base_mesh():
    """Two right triangles split along the diagonal (0,0)-(1,1)."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    triangles = np.array([[0, 1, 2], [0, 2, 3]])
    bedges = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
    btri = np.array([0, 0, 1, 1])
    return Mesh(_frozen(vertices, float), _frozen(triangles, np.int64),
                _frozen(bedges, np.int64), _frozen(btri, np.int64), level=0)


def _pair_keys(pairs, nv):
    lo = np.minimum(pairs[..., 0], pairs[..., 1]).astype(np.int64)
    hi = np.maximum(pairs[..., 0], pairs[..., 1]).astype(np.int64)
    return lo * nv + hi


def _edge_keys(tris, nv):
    # column k holds the edge opposite local vertex k
    pairs = np.stack([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]], axis=1)
    return _pair_keys(pairs, nv)


def _bisect_sweep(vertices, triangles, bedges):
    """Split every triangle once across its longest edge."""
    nv = len(vertices)
    p = vertices[triangles]
    len2 = np.stack([np.sum((p[:, (k + 2) % 3] - p[:, (k + 1) % 3]) ** 2, axis=1)
                     for k in range(3)], axis=1)
    longest = len2 == len2.max(axis=1, keepdims=True)
    # ties: smallest global index of the opposite vertex
    k = np.argmin(np.where(longest, triangles, np.iinfo(np.int64).max), axis=1)
    rows = np.arange(len(triangles))
    c = triangles[rows, k]
    a = triangles[rows, (k + 1) % 3]
    b = triangles[rows, (k + 2) % 3]

    keys = _pair_keys(np.column_stack([a, b]), nv)
    uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    mid_of_uniq = nv + rank
    m = mid_of_uniq[inverse]

    all_keys = _edge_keys(triangles, nv)
    chosen = np.zeros_like(all_keys, dtype=bool)
    chosen[rows, k] = True
    hanging = np.isin(all_keys, uniq) & ~chosen
    if hanging.any():
        raise NonConformingResult(
            f"{int(hanging.sum())} edges bisected on one side only")

    ua = a[first[order]]
    ub = b[first[order]]
    new_pts = 0.5 * (vertices[ua] + vertices[ub])
    new_vertices = np.vstack([vertices, new_pts])
    new_tris = np.empty((2 * len(triangles), 3), dtype=np.int64)
    new_tris[0::2] = np.column_stack([c, a, m])
    new_tris[1::2] = np.column_stack([c, m, b])

    bkeys = _pair_keys(bedges, nv)
    split = np.isin(bkeys, uniq)
    bmid = np.full(len(bedges), -1, dtype=np.int64)
    bmid[split] = mid_of_uniq[np.searchsorted(uniq, bkeys[split])]
    rep = np.where(split, 2, 1)
    start = np.cumsum(rep) - rep
    new_bedges = np.empty((rep.sum(), 2), dtype=np.int64)
    new_bedges[start, 0] = bedges[:, 0]
    new_bedges[start, 1] = np.where(split, bmid, bedges[:, 1])
    s = start[split] + 1
    new_bedges[s, 0] = bmid[split]
    new_bedges[s, 1] = bedges[split, 1]
    parent = np.repeat(np.arange(len(bedges)), rep)
    return new_vertices, new_tris, new_bedges, parent, np.column_stack([ua, ub])


def _owning_triangles(triangles, bedges, nv):
    keys = _edge_keys(triangles, nv).ravel()
    order = np.argsort(keys, kind="stable")
    bk = _pair_keys(bedges, nv)
    pos = np.searchsorted(keys[order], bk)
    return order[pos] // 3


def refine(mesh):
    """Two longest-edge bisection sweeps; returns the next mesh of the hierarchy."""
    vertices, triangles, bedges = mesh.vertices, mesh.triangles, mesh.boundary_edges
    parent_map = np.arange(len(bedges))
    midpoint_parents = []
    for _ in range(2):
        vertices, triangles, bedges, parent, mids = _bisect_sweep(vertices, triangles, bedges)
        parent_map = parent_map[parent]
        midpoint_parents.append(_frozen(mids, np.int64))
    btri = _owning_triangles(triangles, bedges, len(vertices))
    return Mesh(
        vertices=_frozen(vertices, float),
        triangles=_frozen(triangles, np.int64),
        boundary_edges=_frozen(bedges, np.int64),
        boundary_triangles=_frozen(btri, np.int64),
        level=mesh.level + 1,
        parent_edge_map=_frozen(parent_map, np.int64),
        parent=mesh,
        midpoint_parents=tuple(midpoint_parents),
    )


def build_hierarchy(max_level):
    """Meshes of levels ``0..max_level``."""
    meshes = [make_base_mesh()]
    for _ in range(max_level):
        meshes.append(refine(meshes[-1]))
    return meshes


def edge_geometry(mesh, edge_index):
    nb = mesh.n_boundary_edges
    if not -nb <= edge_index < nb:
        raise IndexError(f"boundary edge {edge_index} out of range for {nb} edges")
    i, j = mesh.boundary_edges[edge_index]
    return EdgeGeometry(
        endpoints=(mesh.vertices[i].copy(), mesh.vertices[j].copy()),
        midpoint=mesh.boundary_midpoints[edge_index].copy(),
        length=float(mesh.boundary_lengths[edge_index]),
        outward_normal=mesh.boundary_normals[edge_index].copy(),
    )


def _same_mesh(a, b):
    if a is b:
        return True
    return (a.level == b.level
            and a.vertices.shape == b.vertices.shape
            and a.triangles.shape == b.triangles.shape
            and np.array_equal(a.vertices, b.vertices)
            and np.array_equal(a.triangles, b.triangles))


def _chain_to(fine, coarse):
    """Meshes from ``fine`` up to (excluding) ``coarse`` along parent links."""
    chain = []
    m = fine
    while m is not None and m.level >= coarse.level:
        if _same_mesh(m, coarse):
            return chain
        chain.append(m)
        m = m.parent
    raise NotNested(f"level-{fine.level} mesh is not a refinement of the "
                    f"given level-{coarse.level} mesh")


def is_nested_in(fine, coarse):
    try:
        _chain_to(fine, coarse)
    except NotNested:
        return False
    return True


def restrict_boundary(fine, coarse):
    """Index of the coarse boundary edge containing each fine boundary edge."""
    emap = np.arange(fine.n_boundary_edges)
    for m in _chain_to(fine, coarse):
        emap = m.parent_edge_map[emap]
    return emap


def _sweep_prolongation(n_old, mids):
    k = len(mids)
    rows = np.concatenate([np.arange(n_old), n_old + np.repeat(np.arange(k), 2)])
    cols = np.concatenate([np.arange(n_old), mids.ravel()])
    vals = np.concatenate([np.ones(n_old), np.full(2 * k, 0.5)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_old + k, n_old))


def prolongation(fine, coarse):
    """Sparse matrix mapping coarse P1 nodal values to fine ones (exact for nested meshes)."""
    chain = _chain_to(fine, coarse)
    P = sp.identity(coarse.n_vertices, format="csr")
    for m in reversed(chain):
        n = m.parent.n_vertices
        for mids in m.midpoint_parents:
            P = _sweep_prolongation(n, mids) @ P
            n += len(mids)
    return P.tocsr()


def write_mesh_dump(mesh, path):
    with open(path, "w") as fh:
        fh.write(f"# level {mesh.level}\nvertices {mesh.n_vertices}\n")
        for i, (x, y) in enumerate(mesh.vertices):
            fh.write(f"{i} {x!r} {y!r}\n")
        fh.write(f"triangles {mesh.n_triangles}\n")
        for i, (a, b, c) in enumerate(mesh.triangles):
            fh.write(f"{i} {a} {b} {c}\n")
        fh.write(f"boundary_edges {mesh.n_boundary_edges}\n")
        for i, (a, b) in enumerate(mesh.boundary_edges):
            fh.write(f"{i} {a} {b}\n")
