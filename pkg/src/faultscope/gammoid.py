"""Gammoids: linkedness, rank and spark of input node sets.

An input set ``S`` is independent when it is linked into the outputs ``Z``,
i.e. there are ``|S|`` pairwise node-disjoint directed paths from ``S``
ending in ``Z``. Linkedness is decided by max-flow on the node-split network.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .graph import InfluenceGraph, transpose

Path = Tuple[int, ...]


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Gammoid:
    graph: InfluenceGraph
    ground_set: Tuple[int, ...]
    output_set: Tuple[int, ...]

    def __post_init__(self):
        ground = tuple(sorted(set(int(i) for i in self.ground_set)))
        outputs = tuple(sorted(set(int(i) for i in self.output_set)))
        for i in ground + outputs:
            if not 0 <= i < self.graph.n:
                raise DomainError(f"node {i} not in graph with {self.graph.n} nodes")
        object.__setattr__(self, "ground_set", ground)
        object.__setattr__(self, "output_set", outputs)

    def to_dict(self) -> dict:
        return {
            "graph": self.graph.to_dict(),
            "ground_set": list(self.ground_set),
            "output_set": list(self.output_set),
        }

    @classmethod
    def from_dict(cls, data) -> "Gammoid":
        return cls(InfluenceGraph.from_dict(data["graph"]), data["ground_set"], data["output_set"])


@dataclass(frozen=True)
class RankReport:
    subset: Tuple[int, ...]
    rank: int
    nullity: int
    witness: Optional[List[Path]] = None


@dataclass(frozen=True)
class SparkResult:
    """Outcome of the exhaustive spark search.

    ``value`` is the spark when the search finished. When ``truncated`` it is a
    lower bound (every set up to ``max_size`` is independent). ``unbounded``
    marks a ground set in which every subset is independent; ``value`` is then
    ``|L| + 1``.
    """

    value: int
    unbounded: bool = False
    truncated: bool = False
    dependent_set: Optional[Tuple[int, ...]] = field(default=None, compare=False)


def max_linking(
    g: InfluenceGraph, sources: Iterable[int], sinks: Iterable[int]
) -> Tuple[int, List[Path]]:
    """Maximum number of node-disjoint paths from ``sources`` into ``sinks``.

    Each node ``v`` is split into ``2v`` (in) and ``2v+1`` (out) joined by a
    unit arc. Returns the flow value and one path per unit of flow.
    """
    sources = sorted(set(sources))
    sinks = set(sinks)
    n = g.n
    S, T = 2 * n, 2 * n + 1
    orig: Dict[Tuple[int, int], int] = {}
    cap: Dict[Tuple[int, int], int] = {}
    adj: List[List[int]] = [[] for _ in range(2 * n + 2)]

    def arc(u, v):
        if (u, v) not in orig:
            orig[(u, v)] = 1
            cap[(u, v)] = 1
            cap.setdefault((v, u), 0)
            adj[u].append(v)
            adj[v].append(u)

    involved = g.reachable_from(sources)
    for v in sorted(involved):
        arc(2 * v, 2 * v + 1)
        for w, _ in g.successors(v):
            if w != v:
                arc(2 * v + 1, 2 * w)
    for s in sources:
        arc(S, 2 * s)
    for z in sorted(sinks & involved):
        arc(2 * z + 1, T)

    flow = 0
    while True:
        parent = {S: S}
        queue = deque([S])
        while queue and T not in parent:
            u = queue.popleft()
            for v in adj[u]:
                if v not in parent and cap[(u, v)] > 0:
                    parent[v] = u
                    queue.append(v)
        if T not in parent:
            break
        v = T
        while v != S:
            u = parent[v]
            cap[(u, v)] -= 1
            cap[(v, u)] += 1
            v = u
        flow += 1

    def carries(u, v):
        return (u, v) in orig and cap[(u, v)] < orig[(u, v)]

    paths: List[Path] = []
    for s in sources:
        if not carries(S, 2 * s):
            continue
        path = [s]
        v = s
        while not carries(2 * v + 1, T):
            v = next(w for w, _ in g.successors(v) if w != v and carries(2 * v + 1, 2 * w))
            path.append(v)
        paths.append(tuple(path))
    return flow, paths


def _check_subset(gam: Gammoid, S: Iterable[int]) -> Tuple[int, ...]:
    S = tuple(sorted(set(int(i) for i in S)))
    extra = set(S) - set(gam.ground_set)
    if extra:
        raise DomainError(f"nodes {sorted(extra)} are not in the ground set")
    return S


def is_linked(gam: Gammoid, S: Iterable[int]) -> Tuple[bool, Optional[List[Path]]]:
    """Whether ``S`` is linked into the output set, with a witness family."""
    S = _check_subset(gam, S)
    if not S:
        return True, []
    if len(S) > len(gam.output_set):
        return False, None
    flow, paths = max_linking(gam.graph, S, gam.output_set)
    if flow == len(S):
        return True, paths
    return False, None


def rank(gam: Gammoid, S: Iterable[int]) -> RankReport:
    S = _check_subset(gam, S)
    if not S:
        return RankReport(S, 0, 0, [])
    flow, paths = max_linking(gam.graph, S, gam.output_set)
    return RankReport(S, flow, len(S) - flow, paths)


def spark_exact(gam: Gammoid, max_size: int = 6) -> SparkResult:
    """Smallest size of a dependent input set, by exhaustive search.

    Sizes ``r = 1, 2, ...`` are scanned in order; the first size with a
    dependent subset is the spark. If no dependent subset exists at all the
    spark is reported as ``|L| + 1`` (unbounded). If the scan stops at
    ``max_size`` first, ``value = max_size + 1`` is a lower bound.
    """
    if max_size < 1:
        raise DomainError("max_size must be at least 1")
    L = gam.ground_set
    P = len(gam.output_set)
    g = gam.graph
    Z = gam.output_set
    # a node that reaches no output is dependent on its own
    reach_z = {i for i in L if g.reachable_from([i]) & set(Z)}
    for i in L:
        if i not in reach_z:
            return SparkResult(1, dependent_set=(i,))
    limit = min(max_size, len(L))
    for r in range(2, limit + 1):
        if r > P:
            return SparkResult(r, dependent_set=tuple(L[:r]))
        for S in combinations(L, r):
            flow, _ = max_linking(g, S, Z)
            if flow < r:
                return SparkResult(r, dependent_set=S)
    if limit == len(L):
        return SparkResult(len(L) + 1, unbounded=True)
    return SparkResult(limit + 1, truncated=True)


def k_sparse_condition(spark: int, k: int) -> bool:
    """Uniqueness condition for ``k``-sparse inputs: ``k < spark / 2``."""
    if k < 1:
        raise DomainError("k must be at least 1")
    return 2 * k < spark


def sparse_localizable(gam: Gammoid, k: int, max_size: int = 6) -> bool:
    """True only when ``k``-sparse inputs are provably unique.

    A truncated spark search contributes its lower bound, which keeps the
    answer conservative.
    """
    if k < 1:
        raise DomainError("k must be at least 1")
    return k_sparse_condition(spark_exact(gam, max_size).value, k)


def transpose_gammoid(gam: Gammoid) -> Gammoid:
    """``(L, g, Z) -> (Z, g', L)``."""
    return Gammoid(transpose(gam.graph), gam.output_set, gam.ground_set)
