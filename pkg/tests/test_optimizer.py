import numpy as np
import pytest

from robinopt import (
    BoundaryControl, BoxBounds, DesiredState, OcpProblem, SolveOptions, SourceSpec,
    Stagnation, control_l2_error, eval_gradient, fixed_point_solve, pdas_solve,
)
from robinopt.errors import NonConvergence
from robinopt.optimizer import _check_stagnation, SolveReport, residual

from conftest import smooth_yd


@pytest.fixture
def capped(meshes):
    return OcpProblem(meshes[3], SourceSpec(f=1.0, g=0.25), DesiredState(smooth_yd),
                      alpha=1e-2, bounds=BoxBounds(0.0, 1.1))


def _vi_certificate(problem, u, rng, n=50):
    g = eval_gradient(problem.context(u)).control
    lo, hi = problem.bounds.lower, problem.bounds.upper or 10.0
    return min(g.inner(BoundaryControl(u.mesh, rng.uniform(lo, hi, len(u.values))) - u)
               for _ in range(n))


def test_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(tol=0)
    with pytest.raises(ValueError):
        SolveOptions(damping=1.5)
    with pytest.raises(ValueError):
        SolveOptions(max_outer=0)


def test_pdas_unconstrained_stationary(problem):
    rep = pdas_solve(problem)
    assert rep.converged
    assert rep.residual_history[-1] <= 1e-10
    assert np.abs(eval_gradient(problem.context(rep.control)).control.values).max() < 1e-9


def test_pdas_mixed_active_set(capped, rng):
    rep = pdas_solve(capped)
    assert rep.converged
    n_upper = rep.active_set_history[-1][1]
    assert 0 < n_upper < capped.mesh.n_boundary_edges
    assert rep.control.values.max() == pytest.approx(1.1)
    assert _vi_certificate(capped, rep.control, rng) >= -1e-9
    assert residual(capped, rep.control) <= 1e-10


def test_pdas_agrees_with_fixed_point(capped):
    a = pdas_solve(capped, SolveOptions(tol=1e-12))
    b = fixed_point_solve(capped, SolveOptions(tol=1e-12, damping=0.006, max_outer=800))
    assert a.method == "pdas" and b.method == "fixed-point"
    assert control_l2_error(a.control, b.control) < 1e-10


def test_fixed_point_nonconvergence_carries_report(capped):
    with pytest.raises(NonConvergence) as info:
        fixed_point_solve(capped, SolveOptions(damping=0.006, max_outer=2))
    rep = info.value.report
    assert not rep.converged and len(rep.residual_history) == 20


def test_pdas_warm_start(capped):
    first = pdas_solve(capped)
    again = pdas_solve(capped, SolveOptions(initial=first.control))
    assert again.iterations <= 1


def test_stagnation_detection():
    rep = SolveReport(False, 0, residual_history=[1.0] * 7, method="pdas")
    with pytest.raises(Stagnation) as info:
        _check_stagnation(rep)
    assert info.value.report is rep


def _reachable(mesh, alpha):
    # y_d is the state of a feasible constant control
    from robinopt import assemble_load, assemble_robin, solve_spd
    src = SourceSpec(f=1.0, g=0.5)
    yd = solve_spd(assemble_robin(mesh, 0.8), assemble_load(mesh, src))
    return OcpProblem(mesh, src, DesiredState(yd), alpha=alpha, bounds=BoxBounds(0.1, 2.0))


@pytest.fixture
def reachable(meshes):
    return _reachable(meshes[3], 10.0)


def test_reachable_target(reachable):
    a = pdas_solve(reachable)
    assert a.converged and a.residual_history[-1] <= 1e-10
    # Tikhonov term pulls the optimum away from the generating control
    assert np.abs(a.control.values - 0.8).max() > 1e-3
    b = fixed_point_solve(reachable, SolveOptions(damping=0.5, tol=1e-12))
    assert control_l2_error(a.control, b.control) <= 1e-10


def test_undamped_picard_cycles(reachable):
    # the Picard map has slope below -1 here, so θ = 1 oscillates
    with pytest.raises(NonConvergence):
        fixed_point_solve(reachable, SolveOptions(damping=1.0, max_outer=3))


def test_fixed_point_damping_independent(meshes):
    problem = _reachable(meshes[3], 100.0)
    a = fixed_point_solve(problem, SolveOptions(damping=1.0, tol=1e-12))
    b = fixed_point_solve(problem, SolveOptions(damping=0.5, tol=1e-12))
    assert control_l2_error(a.control, b.control) <= 1e-11
