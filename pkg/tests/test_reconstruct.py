import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faultscope.reconstruct import (
    ReconstructionProblem,
    SolverConfig,
    adjoint_gradient,
    beta_sweep,
    block_soft_threshold,
    cluster_score,
    objective,
    solve,
)
from faultscope.simulate import LinearSystem, SignalBundle, make_twin, simulate


def small_problem(seed, n=5, beta=0.01, horizon=2.0, dt=0.1):
    rng = np.random.default_rng(seed)
    A = rng.normal(scale=0.5, size=(n, n)) - np.eye(n)
    sys = LinearSystem(A, (0, 2), rng.normal(size=n), horizon=horizon, dt=dt)
    w = SignalBundle((1, 3), sys.grid, rng.normal(size=(len(sys.grid), 2)))
    _, y = simulate(sys, w)
    return ReconstructionProblem(sys, y, tuple(range(n)), beta=beta), rng


def test_zero_residual_gives_zero_input():
    sys = LinearSystem(-np.eye(3), (0, 1), np.ones(3), horizon=2.0, dt=0.1)
    _, y = simulate(sys)
    res = solve(ReconstructionProblem(sys, y, (0, 1, 2), beta=0.1))
    assert np.all(res.w_hat.values == 0)
    assert res.objective == 0.0
    g = adjoint_gradient(ReconstructionProblem(sys, y, (0, 1, 2)), SignalBundle.zeros((0, 1, 2), sys.grid))
    assert np.all(g.values == 0)


def test_objective_decomposition():
    prob, rng = small_problem(0)
    w = rng.normal(size=(len(prob.grid), 5))
    J, fit, pen = objective(prob, w)
    assert J == pytest.approx(0.5 * fit**2 + 0.01 * pen)
    J2, fit2, pen2 = objective(prob.with_beta(0.02), w)
    assert (fit2, pen2) == (fit, pen)
    assert J2 - J == pytest.approx(0.01 * pen)
    J0, fit0, pen0 = objective(prob, np.zeros_like(w))
    assert pen0 == 0.0 and J0 == pytest.approx(0.5 * fit0**2)


def test_gradient_matches_finite_differences():
    prob, rng = small_problem(1)
    W = rng.normal(size=(len(prob.grid), 5))
    G = adjoint_gradient(prob, W).values
    h = 1e-5

    def smooth(X):
        return 0.5 * objective(prob, X)[1] ** 2

    worst = 0.0
    for idx in [(0, 0), (3, 1), (10, 2), (20, 4), (len(prob.grid) - 1, 3), (7, 0)]:
        E = np.zeros_like(W)
        E[idx] = h
        fd = (smooth(W + E) - smooth(W - E)) / (2 * h)
        worst = max(worst, abs(fd - G[idx]) / max(abs(G).max(), 1e-12))
    assert worst <= 1e-5


def test_gradient_linear_in_residual():
    prob, _ = small_problem(2)
    zero = np.zeros((len(prob.grid), 5))
    g1 = adjoint_gradient(prob, zero).values
    _, y0 = simulate(prob.system)
    y2 = y0 + (prob.y_data - y0) * 2.0
    prob2 = ReconstructionProblem(prob.system, y2, prob.ground_set, prob.beta)
    assert np.allclose(adjoint_gradient(prob2, zero).values, 2 * g1, rtol=1e-10, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_objective_is_convex(seed, lam):
    prob, rng = small_problem(seed % 7)
    r = np.random.default_rng(seed)
    U = r.normal(size=(len(prob.grid), 5))
    V = r.normal(size=(len(prob.grid), 5))
    mid = objective(prob, lam * U + (1 - lam) * V)[0]
    assert mid <= lam * objective(prob, U)[0] + (1 - lam) * objective(prob, V)[0] + 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 5.0))
def test_block_soft_threshold_is_prox(seed, tau):
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(6, 4)) * rng.uniform(0, 3, size=4)
    P = block_soft_threshold(V, tau)

    def h(X):
        return 0.5 * np.sum((X - V) ** 2) + tau * np.linalg.norm(X, axis=0).sum()

    for _ in range(5):
        assert h(P) <= h(P + 1e-3 * rng.normal(size=V.shape)) + 1e-12
    for j in range(4):
        nv = np.linalg.norm(V[:, j])
        assert np.linalg.norm(P[:, j]) == pytest.approx(max(nv - tau, 0.0), abs=1e-12)


def test_solver_trace_and_descent():
    prob, _ = small_problem(3, beta=0.05)
    res = solve(prob)
    trace = np.array(res.objective_trace)
    assert np.all(np.diff(trace) <= 1e-12)
    J0 = objective(prob, np.zeros((len(prob.grid), 5)))[0]
    assert res.objective <= J0
    assert res.objective == pytest.approx(objective(prob, res.w_hat)[0], rel=1e-9)
    assert res.iterations >= 1 and res.stop_reason


def test_nonconvergence_is_reported():
    prob, _ = small_problem(4, beta=1e-4)
    prob = ReconstructionProblem(prob.system, prob.y_data, prob.ground_set, 1e-4,
                                 solver=SolverConfig(max_iters=3))
    res = solve(prob)
    assert not res.converged and res.iterations == 3


def test_scalar_integrator_recovery():
    sys = LinearSystem(np.zeros((1, 1)), (0,), np.zeros(1), horizon=10.0, dt=0.05)
    t = sys.grid
    pulse = ((t >= 2.0) & (t <= 5.0)).astype(float)
    w = SignalBundle((0,), t, pulse[:, None])
    _, y = simulate(sys, w)
    prob = ReconstructionProblem(sys, y, (0,), beta=1.0,
                                 solver=SolverConfig(max_iters=20000, grad_tol=1e-10, objective_tol=1e-14))
    results = beta_sweep(prob, [1e-2, 1e-4, 1e-6, 1e-8])
    err = [np.linalg.norm(r.w_hat.channel(0) - pulse) / np.linalg.norm(pulse) for r in results]
    assert min(err) <= 0.05


def test_sparse_target_dominates():
    exp = make_twin(12, 6, 1, seed=3)
    prob = ReconstructionProblem(exp.system, exp.y_data, tuple(range(12)))
    res = solve(prob)
    assert res.top_channels(1) == list(exp.targets)


def test_invalid_problems():
    prob, _ = small_problem(5)
    with pytest.raises(ValueError):
        ReconstructionProblem(prob.system, prob.y_data, (), 0.1)
    with pytest.raises(ValueError):
        ReconstructionProblem(prob.system, prob.y_data, (0, 9), 0.1)
    with pytest.raises(ValueError):
        ReconstructionProblem(prob.system, prob.y_data, (0,), 0.0)
    with pytest.raises(ValueError):
        SolverConfig(step=-1.0)


def test_cluster_score_examples():
    prob, _ = small_problem(6, beta=0.05)
    res = solve(prob)
    single = cluster_score(res, [[i] for i in range(5)])
    assert {cs.nodes[0]: cs.score for cs in single} == pytest.approx(res.channel_norms)
    scores = cluster_score(res, [(0, 1), (2, 3, 4)])
    assert scores[0].score >= scores[1].score
    assert sum(cs.score for cs in scores) == pytest.approx(sum(res.channel_norms.values()))
    with pytest.raises(ValueError):
        cluster_score(res, [(0, 1), (1, 2, 3, 4)])
    with pytest.raises(ValueError):
        cluster_score(res, [(0, 1), (2, 3)])


def test_cluster_score_zero():
    sys = LinearSystem(-np.eye(3), (0,), np.ones(3), horizon=1.0, dt=0.1)
    _, y = simulate(sys)
    res = solve(ReconstructionProblem(sys, y, (0, 1, 2)))
    assert [cs.score for cs in cluster_score(res, [(0,), (1, 2)])] == [0.0, 0.0]
    assert [cs.index for cs in cluster_score(res, [(0,), (1, 2)])] == [0, 1]
