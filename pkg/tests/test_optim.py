import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from turingflow.errors import InvalidArgument, InvalidState
from turingflow.grid import BoundarySpec, Domain, Segment, build_grid
from turingflow.media import MediaParams
from turingflow.optim import (MMA, FlowProblem, MassFlowConstraint, ObjectiveWeights, density_filter,
                              fd_gradient, mass_flow_violation, mma_step, optimize, outlet_uniformity,
                              sensitivities, total_objective)

from conftest import manifold_case


# -- objective terms -------------------------------------------------------------------

def test_uniformity_examples():
    assert outlet_uniformity(np.full(7, 0.3)) == 0.0
    assert outlet_uniformity([0.8, 1.2]) == pytest.approx(0.04)
    u = np.array([0.1, 0.4, 0.2, 0.25])
    assert outlet_uniformity(3.7 * u) == pytest.approx(outlet_uniformity(u), rel=1e-12)


def test_uniformity_errors():
    with pytest.raises(InvalidState):
        outlet_uniformity([1.0, -1.0])
    with pytest.raises(InvalidArgument):
        outlet_uniformity([1.0])


def test_uniformity_gradient():
    rng = np.random.default_rng(0)
    u, ds = rng.uniform(0.5, 1.5, 9), rng.uniform(0.5, 2.0, 9)
    f, g = outlet_uniformity(u, ds, grad=True)
    h = 1e-6
    fd = [(outlet_uniformity(u + h * e, ds) - outlet_uniformity(u - h * e, ds)) / (2 * h)
          for e in np.eye(9)]
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-10)


def test_total_objective():
    w = ObjectiveWeights()
    with pytest.raises(InvalidState):
        total_objective(1.0, 1.0, w)
    w.normalize(2.0, 0.3)
    assert total_objective(2.0, 0.3, w) == pytest.approx(1.0)
    assert total_objective(1.0, 0.3, w) == pytest.approx(0.75)
    w0 = ObjectiveWeights(w_dissipation=1.0, w_uniformity=0.0, f_o0=2.0, f_u0=0.3)
    assert total_objective(1.0, 99.0, w0) == pytest.approx(0.5)


@pytest.mark.parametrize("kw", [dict(w_dissipation=-1.0), dict(w_dissipation=0.0, w_uniformity=0.0)])
def test_weights_invariants(kw):
    with pytest.raises(InvalidArgument):
        ObjectiveWeights(**kw)


def test_mass_flow_violation():
    c = MassFlowConstraint.uniform(1.0, 4, 0.06)
    assert np.allclose(mass_flow_violation(np.full(4, 0.25), c), -0.06 ** 2)
    assert np.allclose(mass_flow_violation(np.full(4, 0.25 * 1.06), c), 0.0, atol=1e-12)
    assert mass_flow_violation(np.full(4, 0.25 * 1.5), c)[0] == pytest.approx(0.25 - 0.0036)
    with pytest.raises(InvalidArgument):
        MassFlowConstraint((0.1, 0.0), 0.06)
    with pytest.raises(InvalidArgument):
        MassFlowConstraint((0.1,), 0.0)
    with pytest.raises(InvalidArgument):
        mass_flow_violation(np.ones(3), c)


# -- MMA ---------------------------------------------------------------------------------

def test_mma_zero_gradient():
    x = np.array([0.2, 0.5, 0.9])
    assert np.array_equal(mma_step(MMA(), x, np.zeros(3)), x)


def test_mma_descent_direction():
    x = np.full(5, 0.5)
    new = mma_step(MMA(), x, -np.ones(5))
    assert np.all(new > x) and np.all(new <= x + 0.1 + 1e-15)


def test_mma_non_finite():
    with pytest.raises(InvalidArgument):
        mma_step(MMA(), np.full(2, 0.5), np.array([0.0, np.nan]))


@pytest.mark.parametrize("x0", [0.9, 0.0, 1.0, 0.31, 0.5])
def test_mma_quadratic(x0):
    state, x = MMA(), np.array([x0])
    for _ in range(50):
        x = mma_step(state, x, 2 * (x - 0.3))
    assert abs(x[0] - 0.3) < 1e-4


@settings(max_examples=50, deadline=None)
@given(x=arrays(float, 6, elements=st.floats(0, 1)),
       g=arrays(float, 6, elements=st.floats(-1e3, 1e3)),
       c=st.floats(1e-3, 1e3))
@example(x=np.zeros(6), g=np.full(6, 5e-324), c=1.0)
def test_mma_bounds_and_scale(x, g, c):
    a = mma_step(MMA(), x, g)
    assert np.all(a >= 0) and np.all(a <= 1)
    assert np.all(np.abs(a - x) <= 0.1 + 1e-12)
    b = mma_step(MMA(), x, c * g)
    assert np.allclose(a, b, atol=1e-9)


# -- sensitivities -----------------------------------------------------------------------

def test_adjoint_matches_fd_small():
    grid, bc = manifold_case(nx=16, ny=8, width=0.016, height=0.008, offset=0.002, inlet=0.003)
    problem = FlowProblem(grid, bc, MediaParams(length=0.016), tol=1e-11)
    gamma = np.random.default_rng(4).uniform(0.1, 0.9, grid.shape)
    w = ObjectiveWeights()
    ev = problem.evaluate(problem.design(gamma), w)
    cells = np.arange(0, grid.ncells, 11)
    fd = fd_gradient(problem, gamma, w, cells)
    assert np.max(np.abs(ev.grad.ravel()[cells] - fd) / np.abs(fd)) < 1e-4


def test_passive_cells():
    grid, bc = manifold_case(nx=16, ny=8, width=0.016, height=0.008, offset=0.002, inlet=0.003)
    passive = np.zeros(grid.shape, bool)
    passive[-2:] = True
    problem = FlowProblem(grid, bc, MediaParams(length=0.016), tol=1e-11, filter_radius=3e-3,
                          passive=passive)
    gamma = np.random.default_rng(4).uniform(0.1, 0.9, grid.shape)
    design = problem.design(gamma)
    assert np.all(design.gamma[passive] == 0) and np.all(design.gamma[~passive] > 0)
    w = ObjectiveWeights()
    ev = problem.evaluate(design, w)
    cells = np.arange(0, grid.ncells, 7)
    fd = fd_gradient(problem, gamma, w, cells)
    assert np.max(np.abs(ev.grad.ravel()[cells] - fd)) < 1e-4 * np.max(np.abs(fd))


def test_adjoint_symmetric():
    grid = build_grid(Domain(0.02, 0.01), nx=20, ny=10)
    bc = BoundarySpec(Segment("bottom", 0.008, 0.004, 0.2), Segment("top"))
    g = sensitivities(grid, bc, np.full(grid.shape, 0.5), params=MediaParams(length=0.02))
    assert np.max(np.abs(g - g[:, ::-1])) <= 1e-10 * np.max(np.abs(g))


def test_adjoint_dead_cells_small():
    # cells in a sealed-off corner hardly affect the objective
    grid, bc = manifold_case(nx=20, ny=10, width=0.02, height=0.01, offset=0.001, inlet=0.003)
    gamma = np.full(grid.shape, 0.8)
    gamma[:4, 14:] = 0.0
    g = sensitivities(grid, bc, gamma, params=MediaParams(length=0.02))
    assert np.max(np.abs(g[:2, 17:])) < 0.05 * np.max(np.abs(g[:, :6]))


def test_filter_rows_convex():
    grid = build_grid(Domain(0.02, 0.01), nx=20, ny=10)
    H = density_filter(grid, 3e-3)
    assert np.allclose(np.asarray(H.sum(axis=1)).ravel(), 1.0)
    assert H.min() >= 0
    assert (density_filter(grid, 0.0) != density_filter(grid, 0.0).T).nnz == 0


# -- optimization loop -------------------------------------------------------------------

def small_problem(**kw):
    grid, bc = manifold_case(nx=24, ny=12, width=0.024, height=0.012, offset=0.002, inlet=0.003)
    return FlowProblem(grid, bc, MediaParams(length=0.024), **kw)


def test_optimize_no_budget():
    res = optimize(small_problem(), max_iters=0)
    assert np.all(res.design.gamma == 0.5)
    assert res.best_iteration == 0 and len(res.history) == 1


def test_optimize_improves_uniformity():
    seen = []
    res = optimize(small_problem(filter_radius=2e-3), max_iters=30,
                   callback=lambda s, ev: seen.append(s.gamma.copy()))
    h = res.history
    assert h[res.best_iteration].F <= h[0].F
    assert h[0].f_u / h[res.best_iteration].f_u >= 10
    best = np.minimum.accumulate([r.F for r in h])
    assert np.all(np.diff(best) <= 0)
    assert all(np.all((g >= 0) & (g <= 1)) for g in seen)
    assert [r.iteration for r in h] == list(range(len(h)))


def test_optimize_symmetric():
    grid = build_grid(Domain(0.02, 0.02), nx=16, ny=16)
    bc = BoundarySpec(Segment("bottom", 0.008, 0.004, 0.2), Segment("top"))
    res = optimize(FlowProblem(grid, bc, MediaParams(length=0.02), tol=1e-10), max_iters=10)
    g = res.design.gamma
    assert np.max(np.abs(g - g[:, ::-1])) < 1e-6
