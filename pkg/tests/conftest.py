import itertools

import networkx as nx
import numpy as np
import pytest

from faultscope.graph import InfluenceGraph


def random_graph(rng, n, p=0.35, self_loops=False):
    edges = []
    for i in range(n):
        for j in range(n):
            if (i != j or self_loops) and rng.random() < p:
                w = rng.uniform(0.25, 1.0) * rng.choice([-1.0, 1.0])
                edges.append((i, j, w))
    return InfluenceGraph(n, edges)


def simple_paths(g, s, Z):
    """All simple paths from ``s`` ending in ``Z`` (networkx enumeration)."""
    G = nx.DiGraph()
    G.add_nodes_from(range(g.n))
    G.add_edges_from((a, b) for a, b, _ in g.edges if a != b)
    out = [(s,)] if s in Z else []
    for z in Z:
        if z != s:
            out += [tuple(p) for p in nx.all_simple_paths(G, s, z)]
    return out


def brute_force_linked(g, S, Z, cache=None):
    """Backtracking over one path per source; paths must be node-disjoint."""
    S = sorted(S)
    Z = set(Z)
    if cache is None:
        cache = {}
    cand = []
    for s in S:
        if (s, frozenset(Z)) not in cache:
            cache[(s, frozenset(Z))] = simple_paths(g, s, Z)
        cand.append(cache[(s, frozenset(Z))])

    def rec(i, used):
        if i == len(S):
            return True
        for p in cand[i]:
            if used.isdisjoint(p) and not any(q in p for q in S[i + 1:]):
                if rec(i + 1, used | set(p)):
                    return True
        return False

    return rec(0, set())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def chain():
    return InfluenceGraph(3, [(0, 1, 1.0), (1, 2, 1.0)])
