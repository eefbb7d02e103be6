import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faultscope.graph import (
    GraphError,
    InfluenceGraph,
    InvalidPathError,
    compose,
    from_state_matrix,
    path_set_weight,
    path_weight,
    transpose,
)


@st.composite
def graphs(draw, max_n=6):
    n = draw(st.integers(1, max_n))
    pairs = draw(st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=n * n))
    weights = draw(st.lists(st.floats(0.1, 3.0) | st.floats(-3.0, -0.1),
                            min_size=len(pairs), max_size=len(pairs)))
    return InfluenceGraph(n, [(a, b, w) for (a, b), w in zip(sorted(pairs), weights)])


def test_zero_matrix_has_no_edges():
    g = from_state_matrix(np.zeros((3, 3)))
    assert g.n == 3 and g.n_edges == 0


def test_identity_gives_self_loops():
    g = from_state_matrix(np.eye(2))
    assert g.edges == [(0, 0, 1.0), (1, 1, 1.0)]


def test_single_entry_orientation():
    g = from_state_matrix(np.array([[0.0, 0.0], [5.0, 0.0]]))
    assert g.edges == [(0, 1, 5.0)]
    # brute-force scan of entries
    A = g.to_matrix()
    found = [(j, i, A[i, j]) for i in range(2) for j in range(2) if A[i, j] != 0]
    assert found == g.edges


def test_non_square_rejected():
    with pytest.raises(GraphError):
        from_state_matrix(np.zeros((2, 3)))


def test_construction_validation():
    with pytest.raises(GraphError):
        InfluenceGraph(2, [(0, 1, 0.0)])
    with pytest.raises(GraphError):
        InfluenceGraph(2, [(0, 1, 1.0), (0, 1, 2.0)])
    with pytest.raises(GraphError):
        InfluenceGraph(2, [(0, 2, 1.0)])
    with pytest.raises(GraphError):
        InfluenceGraph(2, [(0, 1, float("nan"))])


def test_path_weights():
    g = InfluenceGraph(3, [(0, 1, 2.0), (1, 2, 3.0), (0, 2, -2.0)])
    assert path_weight(g, [1]) == 1.0
    assert path_weight(g, [0, 1, 2]) == 6.0
    assert path_set_weight(g, [[0, 1, 2], [0, 2]]) == 4.0
    with pytest.raises(InvalidPathError):
        path_weight(g, [2, 0])
    with pytest.raises(InvalidPathError):
        path_weight(g, [])


def test_transpose_examples():
    g = InfluenceGraph(2, [(0, 1, 5.0)])
    assert transpose(g).edges == [(1, 0, 5.0)]
    assert transpose(InfluenceGraph(0)).n_edges == 0


def test_compose_chain():
    e = InfluenceGraph(2, [(0, 1, 1.0)])
    g, mapping = compose(e, [1], e, [0])
    assert g.n == 3
    assert g.edges == [(0, 1, 1.0), (1, 2, 1.0)]
    assert mapping == {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}


def test_compose_disjoint_union():
    e = InfluenceGraph(2, [(0, 1, 1.0)])
    g, _ = compose(e, [], e, [])
    assert g.n == 4 and g.n_edges == 2


def test_compose_errors():
    e = InfluenceGraph(2, [(0, 1, 1.0)])
    with pytest.raises(GraphError):
        compose(e, [0, 1], e, [0])
    with pytest.raises(GraphError):
        compose(e, [0, 0], e, [0, 1])


def test_compose_parallel_edges_sum_and_cancel():
    g1 = InfluenceGraph(2, [(0, 1, 1.0)])
    g2 = InfluenceGraph(2, [(0, 1, 2.0)])
    g, _ = compose(g1, [0, 1], g2, [0, 1])
    assert g.edges == [(0, 1, 3.0)]
    g3 = InfluenceGraph(2, [(0, 1, -1.0)])
    g, _ = compose(g1, [0, 1], g3, [0, 1])
    assert g.n_edges == 0


def test_compose_with_transpose_topology():
    # five-node sketch: inputs 0, 1 feed 2, 3; sensors 3, 4
    g = InfluenceGraph(5, [(0, 2, 1.0), (1, 2, 1.0), (1, 3, 1.0), (2, 4, 1.0), (3, 4, 1.0)])
    Z = [3, 4]
    gt = transpose(g)
    comp, mapping = compose(g, Z, gt, Z)
    assert comp.n == 2 * 5 - len(Z)
    assert comp.n_edges == 2 * g.n_edges
    # every original edge appears reversed among the primed nodes
    for s, d, w in g.edges:
        assert comp.weight(mapping[(1, d)], mapping[(1, s)]) == w


def test_labels_and_json_roundtrip():
    g = InfluenceGraph(2, [(0, 1, 1.5)], labels=["a", "b"])
    h = InfluenceGraph.from_dict(g.to_dict())
    assert h == g and h.labels == ("a", "b")
    c, _ = compose(g, [1], g, [0])
    assert c.labels == ("a", "b", "b'")


@settings(max_examples=60, deadline=None)
@given(graphs())
def test_double_transpose_is_identity(g):
    assert transpose(transpose(g)) == g


@settings(max_examples=60, deadline=None)
@given(graphs())
def test_matrix_roundtrip(g):
    A = g.to_matrix()
    assert from_state_matrix(A) == g
    assert np.array_equal(from_state_matrix(A).to_matrix(), A)


@settings(max_examples=60, deadline=None)
@given(graphs(), st.data())
def test_reversed_path_weight_in_transpose(g, data):
    if g.n_edges == 0:
        return
    start = data.draw(st.sampled_from([s for s, _, _ in g.edges]))
    path = [start]
    for _ in range(data.draw(st.integers(0, 4))):
        succ = g.successors(path[-1])
        if not succ:
            break
        path.append(data.draw(st.sampled_from([v for v, _ in succ])))
    assert path_weight(transpose(g), path[::-1]) == pytest.approx(path_weight(g, path))


@settings(max_examples=40, deadline=None)
@given(graphs(max_n=4), graphs(max_n=4), graphs(max_n=4))
def test_compose_associative_on_chains(a, b, c):
    # glue last node of each graph to the first node of the next
    ab, m1 = compose(a, [a.n - 1], b, [0])
    left, _ = compose(ab, [m1[(1, b.n - 1)]], c, [0])
    bc, m2 = compose(b, [b.n - 1], c, [0])
    right, _ = compose(a, [a.n - 1], bc, [0])
    assert left.n == right.n
    assert sorted(w for *_, w in left.edges) == pytest.approx(sorted(w for *_, w in right.edges))
    assert left.n_edges == right.n_edges
