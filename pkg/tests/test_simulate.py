import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faultscope.gammoid import Gammoid, spark_exact
from faultscope.simulate import (
    GridError,
    IntegrationError,
    LinearSystem,
    SignalBundle,
    lp_norms,
    make_grid,
    make_twin,
    pq_norm,
    q_norm,
    residual,
    rk4_matrices,
    simulate,
    support,
    trapezoid_weights,
)


def decay_error(dt):
    sys = LinearSystem(np.array([[-1.0]]), (0,), np.array([1.0]), 1.0, dt)
    states, _ = simulate(sys)
    return float(np.max(np.abs(states.values[:, 0] - np.exp(-states.grid))))


def test_grid_validation():
    assert len(make_grid(1.0, 0.25)) == 5
    with pytest.raises(GridError):
        make_grid(1.0, 0.3)
    with pytest.raises(GridError):
        make_grid(1.0, -0.1)


def test_zero_dynamics_keeps_state():
    sys = LinearSystem(np.zeros((3, 3)), (0, 2), np.array([1.0, 2.0, 3.0]), 1.0, 0.1)
    states, out = simulate(sys)
    assert np.allclose(states.values, [1.0, 2.0, 3.0])
    assert out.channels == (0, 2)


def test_exponential_decay_accuracy_and_order():
    e2 = decay_error(1e-3)
    assert e2 <= 1e-8
    order = np.log2(decay_error(0.1) / decay_error(0.05))
    assert 3.5 <= order <= 4.5


def test_rk4_matrices_match_direct_stages(rng):
    A = rng.standard_normal((4, 4))
    dt = 0.07
    P, Q0, Q1 = rk4_matrices(A, dt)
    x, w0, w1 = rng.standard_normal((3, 4))
    wm = (w0 + w1) / 2
    f = lambda x, w: A @ x + w
    k1 = f(x, w0)
    k2 = f(x + dt / 2 * k1, wm)
    k3 = f(x + dt / 2 * k2, wm)
    k4 = f(x + dt * k3, w1)
    direct = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    assert np.allclose(P @ x + Q0 @ w0 + Q1 @ w1, direct, atol=1e-14)


def test_forced_scalar_against_closed_form():
    # x' = -x + 1, x(0) = 0 -> 1 - exp(-t)
    sys = LinearSystem(np.array([[-1.0]]), (0,), np.zeros(1), 2.0, 1e-3)
    w = SignalBundle((0,), sys.grid, np.ones(len(sys.grid)))
    states, _ = simulate(sys, w)
    assert np.max(np.abs(states.values[:, 0] - (1 - np.exp(-sys.grid)))) < 1e-10


def test_superposition(rng):
    A = rng.standard_normal((4, 4)) - 3 * np.eye(4)
    x0 = rng.standard_normal(4)
    sys = LinearSystem(A, (1, 3), x0, 1.0, 0.05)
    sys0 = LinearSystem(A, (1, 3), np.zeros(4), 1.0, 0.05)
    g = sys.grid
    w1 = SignalBundle((0, 2), g, rng.standard_normal((len(g), 2)))
    w2 = SignalBundle((0, 2), g, rng.standard_normal((len(g), 2)))
    both, _ = simulate(sys, w1 + w2)
    a, _ = simulate(sys, w1)
    b, _ = simulate(sys0, w2)
    assert np.allclose(both.values, a.values + b.values, atol=1e-10)


def test_blow_up_raises():
    sys = LinearSystem(np.array([[800.0]]), (0,), np.ones(1), 10.0, 0.1)
    with pytest.raises(IntegrationError, match="step"):
        simulate(sys)


def test_input_grid_mismatch():
    sys = LinearSystem(np.zeros((1, 1)), (0,), np.zeros(1), 1.0, 0.1)
    w = SignalBundle((0,), np.linspace(0, 1, 5), np.zeros(5))
    with pytest.raises(GridError):
        simulate(sys, w)


def test_residual_examples():
    exp = make_twin(8, 4, 1, "pulse", seed=3)
    quiet = LinearSystem(exp.system.A, exp.system.sensors, exp.system.x0, exp.system.horizon, exp.system.dt)
    _, y0 = simulate(quiet)
    assert np.allclose(residual(y0, quiet).values, 0.0)
    r1 = residual(exp.y_data, exp.system)
    _, y2 = simulate(exp.system, 2.0 * exp.true_input)
    r2 = residual(y2, exp.system)
    assert np.allclose(r2.values, 2 * r1.values, atol=1e-12)


def test_residual_nonzero_downstream():
    exp = make_twin(30, 10, 1, "pulse", seed=11)
    t = exp.targets[0]
    downstream = exp.graph.reachable_from([t]) & set(exp.system.sensors)
    r = residual(exp.y_data, exp.system)
    if downstream:
        assert max(r.norm_map()[z] for z in downstream) > 0
    for z in set(exp.system.sensors) - downstream:
        assert r.norm_map()[z] < 1e-12


def test_residual_channel_mismatch():
    exp = make_twin(6, 3, 1, seed=0)
    with pytest.raises(GridError):
        residual(exp.y_data.restrict(exp.system.sensors[:2]), exp.system)


def test_pq_norm_examples():
    grid = np.linspace(0, 1, 11)
    zero = SignalBundle((0, 1), grid, np.zeros((11, 2)))
    for q in (0, 1, 2, np.inf):
        assert pq_norm(zero, q) == 0
    one = SignalBundle((0,), grid, np.ones(11))
    assert one.channel_norms()[0] == pytest.approx(1.0)
    assert pq_norm(one, 1) == pytest.approx(1.0) and pq_norm(one, 2) == pytest.approx(1.0)
    assert pq_norm(one, 0) == 1


def test_sine_quadrature():
    grid = np.linspace(0, 2 * np.pi, int(round(2 * np.pi / 1e-3)) + 1)
    sig = SignalBundle((0,), grid, np.sin(grid))
    assert sig.channel_norms()[0] == pytest.approx(np.sqrt(np.pi), abs=1e-6)


def test_support_tolerance():
    grid = np.linspace(0, 1, 11)
    vals = np.zeros((11, 3))
    vals[:, 0] = 1.0
    vals[:, 1] = 1e-9
    sig = SignalBundle((4, 5, 6), grid, vals)
    assert support(sig) == (4,)
    assert pq_norm(sig, 0) == 1


def test_signal_csv_roundtrip(rng):
    grid = np.linspace(0, 1, 6)
    sig = SignalBundle((3, 7), grid, rng.standard_normal((6, 2)))
    back = SignalBundle.from_csv(sig.to_csv())
    assert back.channels == (3, 7)
    assert np.array_equal(back.values, sig.values) and np.array_equal(back.grid, sig.grid)
    assert sig.to_csv().splitlines()[0] == "t,3,7"


def test_signal_validation():
    with pytest.raises(GridError):
        SignalBundle((0,), [0.0, 0.5, 0.6], np.zeros(3))
    with pytest.raises(GridError):
        SignalBundle((0,), [0.0, 1.0], [np.nan, 0.0])


def test_make_twin_determinism_and_invariant():
    a = make_twin(30, 10, 1, "pulse", seed=7)
    b = make_twin(30, 10, 1, "pulse", seed=7)
    assert a.y_data.to_csv() == b.y_data.to_csv()
    _, y = simulate(a.system, a.true_input)
    assert np.array_equal(y.values, a.y_data.values)
    assert len(a.targets) == 1 and len(a.system.sensors) == 10
    assert np.max(np.linalg.eigvals(a.system.A).real) < 0
    assert np.all(np.diag(a.system.A) == np.diag(a.system.A)[0])


@pytest.mark.parametrize("shape", ["step", "pulse", "smooth-random"])
def test_input_shapes(shape):
    exp = make_twin(6, 3, 2, shape, seed=2)
    assert exp.true_input.values.shape == (len(exp.system.grid), 2)
    assert np.all(exp.true_input.channel_norms() > 0)


def test_make_twin_preconditions():
    with pytest.raises(ValueError):
        make_twin(5, 3, 6)
    with pytest.raises(ValueError):
        make_twin(5, 6, 1)
    with pytest.raises(ValueError):
        make_twin(5, 3, 1, "sawtooth")


def test_spark_regime_of_generator():
    sparks = [spark_exact(Gammoid(e.graph, range(30), e.system.sensors), 2).value
              for e in (make_twin(30, 10, 1, seed=s) for s in range(50))]
    assert sum(s >= 3 for s in sparks) > 25


def test_measure_matches_data():
    exp = make_twin(8, 3, 1, seed=4)
    assert np.array_equal(exp.measure(exp.system.sensors).values, exp.y_data.values)


# --- norm properties on random signal pairs ---------------------------------

signal_values = st.lists(st.floats(-5, 5, allow_nan=False), min_size=4 * 9, max_size=4 * 9)


def bundle(vals, k=4):
    grid = np.linspace(0.0, 2.0, 9)
    return SignalBundle(tuple(range(k)), grid, np.array(vals).reshape(9, k))


@settings(max_examples=80, deadline=None)
@given(signal_values, signal_values, st.sampled_from([1.0, 2.0, 3.0, np.inf]),
       st.floats(-3, 3, allow_nan=False))
def test_q_norm_is_a_norm(u, v, q, a):
    U, V = bundle(u), bundle(v)
    assert pq_norm(U + V, q) <= pq_norm(U, q) + pq_norm(V, q) + 1e-10
    assert pq_norm(a * U, q) == pytest.approx(abs(a) * pq_norm(U, q), rel=1e-10, abs=1e-10)


@settings(max_examples=80, deadline=None)
@given(signal_values, signal_values, st.sampled_from([1.0, 2.0, 3.0]))
def test_disjoint_support_additivity(u, v, q):
    u = np.array(u).reshape(9, 4)
    v = np.array(v).reshape(9, 4)
    u[:, 2:] = 0
    v[:, :2] = 0
    U, V = bundle(u.ravel()), bundle(v.ravel())
    lhs = pq_norm(U + V, q) ** q
    assert lhs == pytest.approx(pq_norm(U, q) ** q + pq_norm(V, q) ** q, rel=1e-10, abs=1e-10)
    assert pq_norm(U, 2) + pq_norm(V, 2) <= np.sqrt(2) * pq_norm(U + V, 2) + 1e-10


@settings(max_examples=80, deadline=None)
@given(signal_values, st.integers(1, 4))
def test_sparse_norm_chain(u, k):
    u = np.array(u).reshape(9, 4)
    u[:, k:] = 0
    U = bundle(u.ravel())
    n1, n2, ninf = pq_norm(U, 1), pq_norm(U, 2), pq_norm(U, np.inf)
    assert n1 <= np.sqrt(k) * n2 + 1e-10
    assert np.sqrt(k) * n2 <= k * ninf + 1e-10
    assert n1 / np.sqrt(k) <= n2 + 1e-10 and n2 <= np.sqrt(k) * ninf + 1e-10


@settings(max_examples=80, deadline=None)
@given(signal_values, signal_values)
def test_componentwise_reverse_triangle(y, z):
    Y, Z = bundle(y), bundle(z)
    lhs = np.abs(Y.channel_norms() - Z.channel_norms())
    assert np.all(lhs <= (Y + Z).channel_norms() + 1e-10)


def test_trapezoid_weights_sum_to_length():
    grid = np.linspace(0, 3, 31)
    assert trapezoid_weights(grid).sum() == pytest.approx(3.0)
    assert q_norm(np.array([3.0, 4.0]), 2) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        q_norm(np.array([1.0]), 0.5)
    assert lp_norms(np.ones((5, 1)), np.linspace(0, 1, 5), np.inf)[0] == 1.0
