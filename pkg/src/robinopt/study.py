"""Mesh refinement studies: the Robin-coefficient benchmark and a manufactured solution."""

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .control import (
    BoundaryControl, BoxBounds, control_l2_error, projected_product_error, r_h_midpoint,
)
from .errors import NegativeControlWarning, NonConvergence, Stagnation
from .fem import SourceSpec, assemble_load, assemble_robin, norms, solve_spd
from .mesh import build_hierarchy, refine, restrict_boundary
from .optimizer import SolveOptions, fixed_point_solve, pdas_solve
from .pde import DesiredState, OcpProblem

__all__ = [
    "BenchmarkSpec",
    "StudyRow",
    "BenchmarkRun",
    "MmsRow",
    "eoc",
    "solve_level",
    "run_benchmark",
    "run_mms",
    "emit_results",
]

log = logging.getLogger(__name__)

# Picard on the benchmark is stable only for θ below about 2α/λ_max(j'') ≈ 0.009
FALLBACK_DAMPING = 0.006
FALLBACK_MAX_OUTER = 800


@dataclass
class BenchmarkSpec:
    """Data of the Robin-coefficient benchmark on the unit square.

    The reference coefficient is a bump on the side x₁ = 0 and -0.01
    elsewhere.  ``bump_axis`` selects the coordinate the bump depends on:
    ``"x2"`` (the coordinate along that side) or ``"x1"``, which makes the
    coefficient identically -0.01.
    """

    alpha: float = 1e-2
    bounds: BoxBounds = field(default_factory=BoxBounds)
    f: float = 0.0
    g: float = 0.25
    bump_axis: str = "x2"

    def __post_init__(self):
        if self.bump_axis not in ("x1", "x2"):
            raise ValueError("bump_axis must be 'x1' or 'x2'")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def u_tilde(self, x):
        x = np.atleast_2d(x)
        s = x[:, 1] if self.bump_axis == "x2" else x[:, 0]
        bump = np.maximum(-0.01, 1.0 - 30.0 * (s - 0.5) ** 2)
        return np.where(x[:, 0] == 0.0, bump, -0.01)

    @property
    def source(self):
        return SourceSpec(f=self.f, g=self.g)

    def desired_state(self, ref_mesh):
        """Discrete state of the reference coefficient on ``ref_mesh``."""
        u_ref = r_h_midpoint(self.u_tilde, ref_mesh)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NegativeControlWarning)
            system = assemble_robin(ref_mesh, u_ref)
        return solve_spd(system, assemble_load(ref_mesh, self.source))


@dataclass
class StudyRow:
    level: int
    dof: int
    bd_dof: int
    err_full: float
    eoc_full: Optional[float]
    err_post: float
    eoc_post: Optional[float]
    converged: bool = True
    iterations: int = 0
    method: str = "pdas"


@dataclass(eq=False)
class BenchmarkRun:
    rows: List[StudyRow]
    reports: dict
    reference: object
    spec: BenchmarkSpec

    @property
    def failed(self):
        return any(not r.converged for r in self.rows) or not self.reference.converged


def eoc(errors):
    """log₂ of consecutive error ratios; ``None`` where undefined."""
    out = [None]
    for a, b in zip(errors[:-1], errors[1:]):
        out.append(math.log2(a / b) if a and b and a > 0 and b > 0 else None)
    return out


def _prolong_control(u, mesh):
    return BoundaryControl(mesh, u.values[restrict_boundary(mesh, u.mesh)])


def solve_level(problem, opts, solver="pdas", initial=None):
    """Solve one level; PDAS falls back to damped Picard if it fails to converge."""
    opts = SolveOptions(tol=opts.tol, max_outer=opts.max_outer, inner_tol=opts.inner_tol,
                        damping=opts.damping, initial=initial)
    if solver == "pdas":
        try:
            report = pdas_solve(problem, opts)
            if report.converged:
                return report
            log.info("level %d: PDAS did not converge, switching to fixed point",
                     problem.mesh.level)
        except Stagnation:
            log.info("level %d: PDAS stagnated, switching to fixed point", problem.mesh.level)
        opts.damping = min(opts.damping, FALLBACK_DAMPING)
        opts.max_outer = max(opts.max_outer, FALLBACK_MAX_OUTER)
    elif solver != "fixed-point":
        raise ValueError(f"unknown solver {solver!r}")
    try:
        return fixed_point_solve(problem, opts)
    except NonConvergence as exc:
        log.warning("level %d: %s", problem.mesh.level, exc)
        return exc.report


def run_benchmark(max_level=7, ref_level=9, opts=None, spec=None, solver="pdas",
                  meshes=None):
    """Refinement study against the solution on ``ref_level``.

    y_d is the discrete state of the reference coefficient on the reference
    mesh and enters every level through exact nested integration.  Each
    level is warm-started from the prolongated solution of the previous one.
    """
    if ref_level < max_level + 2:
        raise ValueError("ref_level must be at least max_level + 2")
    spec = spec or BenchmarkSpec()
    opts = opts or SolveOptions()
    if solver == "fixed-point" and opts.damping > FALLBACK_DAMPING:
        opts = SolveOptions(tol=opts.tol, max_outer=opts.max_outer,
                            inner_tol=opts.inner_tol, damping=FALLBACK_DAMPING)
    meshes = list(meshes) if meshes is not None else build_hierarchy(ref_level)
    while len(meshes) <= ref_level:
        meshes.append(refine(meshes[-1]))
    desired = DesiredState(spec.desired_state(meshes[ref_level]))

    reports = {}
    initial = None
    for level in range(ref_level + 1):
        mesh = meshes[level]
        problem = OcpProblem(mesh, spec.source, desired, spec.alpha, spec.bounds)
        if initial is not None:
            initial = _prolong_control(initial, mesh)
        rep = solve_level(problem, opts, solver=solver, initial=initial)
        log.info("level %d: %s converged=%s after %d iterations (residual %.2e)",
                 level, rep.method, rep.converged, rep.iterations, rep.residual_history[-1])
        initial = rep.control
        if level <= max_level or level == ref_level:
            reports[level] = rep

    ref = reports[ref_level]
    rows = []
    for level in range(max_level + 1):
        rep = reports[level]
        mesh = meshes[level]
        rows.append(StudyRow(
            level=level,
            dof=mesh.n_dof,
            bd_dof=mesh.n_boundary_edges,
            err_full=control_l2_error(ref.control, rep.control),
            eoc_full=None,
            err_post=projected_product_error(ref.state, ref.adjoint, rep.state, rep.adjoint,
                                             spec.alpha, spec.bounds),
            eoc_post=None,
            converged=rep.converged,
            iterations=rep.iterations,
            method=rep.method,
        ))
    _fill_eoc(rows, "err_full", "eoc_full")
    _fill_eoc(rows, "err_post", "eoc_post")
    return BenchmarkRun(rows, reports, ref, spec)


def _fill_eoc(rows, err, out):
    rates = eoc([getattr(r, err) for r in rows])
    for i, (row, rate) in enumerate(zip(rows, rates)):
        ok = row.converged and (i == 0 or rows[i - 1].converged)
        setattr(row, out, rate if ok else None)


@dataclass
class MmsRow:
    level: int
    dof: int
    h1_err: float
    l2_err: float
    linf_err: float
    l2_gamma_err: float
    eoc_h1: Optional[float] = None
    eoc_l2: Optional[float] = None
    eoc_linf: Optional[float] = None
    eoc_l2_gamma: Optional[float] = None


def mms_exact(x):
    return np.cos(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])


def mms_exact_grad(x):
    s0, c0 = np.sin(np.pi * x[:, 0]), np.cos(np.pi * x[:, 0])
    s1, c1 = np.sin(np.pi * x[:, 1]), np.cos(np.pi * x[:, 1])
    return np.pi * np.column_stack([-s0 * c1, -c0 * s1])


def run_mms(max_level=8, min_level=1, meshes=None):
    """State solver errors for y = cos(πx₁)cos(πx₂) with u ≡ 1.

    Since ∂ₙy = 0 on the square, the boundary datum is g = y.
    """
    src = SourceSpec(f=lambda x: (2 * np.pi ** 2 + 1) * mms_exact(x), g=mms_exact)
    meshes = list(meshes) if meshes is not None else build_hierarchy(max_level)
    rows = []
    for level in range(min_level, max_level + 1):
        mesh = meshes[level]
        y = solve_spd(assemble_robin(mesh, 1.0), assemble_load(mesh, src))
        n = norms(y, mms_exact, mms_exact_grad)
        rows.append(MmsRow(level, mesh.n_vertices, n.h1_omega, n.l2_omega,
                           n.linf_omega, n.l2_gamma))
    for err, out in [("h1_err", "eoc_h1"), ("l2_err", "eoc_l2"),
                     ("linf_err", "eoc_linf"), ("l2_gamma_err", "eoc_l2_gamma")]:
        for row, rate in zip(rows, eoc([getattr(r, err) for r in rows])):
            setattr(row, out, rate)
    return rows


BENCHMARK_FIELDS = ["level", "dof", "bd_dof", "err_full", "eoc_full", "err_post", "eoc_post"]
MMS_FIELDS = ["level", "dof", "h1_err", "eoc_h1", "l2_err", "eoc_l2", "linf_err", "eoc_linf",
              "l2_gamma_err", "eoc_l2_gamma"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.5e}"


def emit_results(rows, fmt="csv", path=None, fields=None):
    """Write rows as CSV or JSON; returns the text.  ``path=None`` skips writing."""
    if not rows:
        raise ValueError("no rows to emit")
    if fields is None:
        fields = BENCHMARK_FIELDS if isinstance(rows[0], StudyRow) else MMS_FIELDS
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            d = asdict(r)
            w.writerow([_fmt(d[k]) for k in fields])
        text = buf.getvalue()
    elif fmt == "json":
        records = []
        for r in rows:
            d = asdict(r)
            records.append({k: d[k] for k in fields})
        text = json.dumps(records, indent=2) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        try:
            with open(path, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write results to {path}: {exc}") from exc
    return text
