"""Weighted influence graphs.

Node ``i`` carries state ``x_i``; an edge ``i -> j`` with weight ``w`` means
``x_i`` enters the equation of ``x_j`` with coefficient ``w``, i.e. the edge
weight of ``i -> j`` is ``A[j, i]``.
"""
from __future__ import annotations

from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

Edge = Tuple[int, int]


class GraphError(ValueError):
    pass


class InvalidPathError(GraphError):
    pass


class InfluenceGraph:
    """Immutable weighted digraph on nodes ``0 .. n-1``.

    Zero-weight edges are rejected. Self-loops are allowed.
    """

    __slots__ = ("_n", "_w", "_succ", "_pred", "_labels")

    def __init__(
        self,
        n: int,
        edges: Iterable[Tuple[int, int, float]] = (),
        labels: Optional[Sequence[str]] = None,
    ):
        n = int(n)
        if n < 0:
            raise GraphError(f"node count must be non-negative, got {n}")
        weights: Dict[Edge, float] = {}
        for src, dst, w in edges:
            src, dst, w = int(src), int(dst), float(w)
            if not (0 <= src < n and 0 <= dst < n):
                raise GraphError(f"edge {src}->{dst} outside node range [0, {n})")
            if (src, dst) in weights:
                raise GraphError(f"duplicate edge {src}->{dst}")
            if w == 0.0:
                raise GraphError(f"edge {src}->{dst} has zero weight")
            if not np.isfinite(w):
                raise GraphError(f"edge {src}->{dst} has non-finite weight {w}")
            weights[(src, dst)] = w
        if labels is not None:
            labels = tuple(str(s) for s in labels)
            if len(labels) != n:
                raise GraphError(f"expected {n} labels, got {len(labels)}")
        succ: List[List[Tuple[int, float]]] = [[] for _ in range(n)]
        pred: List[List[Tuple[int, float]]] = [[] for _ in range(n)]
        for (src, dst), w in sorted(weights.items()):
            succ[src].append((dst, w))
            pred[dst].append((src, w))
        self._n = n
        self._w = weights
        self._succ = tuple(tuple(s) for s in succ)
        self._pred = tuple(tuple(p) for p in pred)
        self._labels = labels

    @property
    def n(self) -> int:
        return self._n

    @property
    def labels(self) -> Optional[Tuple[str, ...]]:
        return self._labels

    def label(self, i: int) -> str:
        return self._labels[i] if self._labels is not None else str(i)

    @property
    def edges(self) -> List[Tuple[int, int, float]]:
        """Edges as ``(src, dst, weight)`` sorted by ``(src, dst)``."""
        return [(s, d, w) for (s, d), w in sorted(self._w.items())]

    @property
    def n_edges(self) -> int:
        return len(self._w)

    def has_edge(self, src: int, dst: int) -> bool:
        return (src, dst) in self._w

    def weight(self, src: int, dst: int) -> float:
        try:
            return self._w[(src, dst)]
        except KeyError:
            raise InvalidPathError(f"no edge {src}->{dst}") from None

    def successors(self, i: int) -> Tuple[Tuple[int, float], ...]:
        return self._succ[i]

    def predecessors(self, i: int) -> Tuple[Tuple[int, float], ...]:
        return self._pred[i]

    def to_matrix(self) -> np.ndarray:
        """State matrix with ``A[dst, src] = weight``."""
        A = np.zeros((self._n, self._n))
        for (s, d), w in self._w.items():
            A[d, s] = w
        return A

    def reachable_from(self, sources: Iterable[int]) -> set:
        seen = set(sources)
        stack = list(seen)
        while stack:
            u = stack.pop()
            for v, _ in self._succ[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    def to_dict(self) -> dict:
        out = {"n": self._n, "edges": [[s, d, w] for s, d, w in self.edges]}
        if self._labels is not None:
            out["labels"] = list(self._labels)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "InfluenceGraph":
        try:
            n = data["n"]
            edges = [tuple(e) for e in data["edges"]]
        except (KeyError, TypeError) as exc:
            raise GraphError(f"malformed graph JSON: {exc}") from None
        return cls(n, edges, data.get("labels"))

    def __eq__(self, other) -> bool:
        if not isinstance(other, InfluenceGraph):
            return NotImplemented
        return self._n == other._n and self._w == other._w

    def __hash__(self):
        return hash((self._n, frozenset(self._w.items())))

    def __repr__(self) -> str:
        return f"InfluenceGraph(n={self._n}, edges={self.n_edges})"


def from_state_matrix(A, labels: Optional[Sequence[str]] = None) -> InfluenceGraph:
    """Influence graph of ``x' = A x``: edge ``i -> j`` iff ``A[j, i] != 0``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise GraphError(f"state matrix must be square, got shape {A.shape}")
    dst, src = np.nonzero(A)
    edges = [(int(s), int(d), float(A[d, s])) for d, s in zip(dst, src)]
    return InfluenceGraph(A.shape[0], edges, labels)


def path_weight(g: InfluenceGraph, path: Sequence[int]) -> float:
    """Product of edge weights along ``path``; a single node has weight 1."""
    if len(path) == 0:
        raise InvalidPathError("a path needs at least one node")
    for i in path:
        if not 0 <= i < g.n:
            raise InvalidPathError(f"node {i} not in graph")
    w = 1.0
    for a, b in zip(path[:-1], path[1:]):
        w *= g.weight(a, b)
    return w


def path_set_weight(g: InfluenceGraph, paths: Iterable[Sequence[int]]) -> float:
    return float(sum(path_weight(g, p) for p in paths))


def transpose(g: InfluenceGraph) -> InfluenceGraph:
    """Flip every edge, keeping weights and node indices."""
    return InfluenceGraph(g.n, [(d, s, w) for s, d, w in g.edges], g.labels)


def compose(
    g1: InfluenceGraph,
    glue1: Sequence[int],
    g2: InfluenceGraph,
    glue2: Sequence[int],
) -> Tuple[InfluenceGraph, Dict[Tuple[int, int], int]]:
    """Disjoint union of ``g1`` and ``g2`` with ``glue2[k]`` merged into ``glue1[k]``.

    Returns the composed graph and a map ``(graph_index, old_id) -> new_id``
    with ``graph_index`` 0 for ``g1`` and 1 for ``g2``. Nodes of ``g1`` keep
    their ids; the remaining nodes of ``g2`` follow in increasing order.

    Parallel edges created by the identification are merged by summing their
    weights; a merged edge whose weights cancel exactly is dropped.
    """
    glue1, glue2 = list(glue1), list(glue2)
    if len(glue1) != len(glue2):
        raise GraphError(f"glue lists differ in length ({len(glue1)} != {len(glue2)})")
    if len(set(glue1)) != len(glue1) or len(set(glue2)) != len(glue2):
        raise GraphError("glue lists must not contain duplicates")
    for i in glue1:
        if not 0 <= i < g1.n:
            raise GraphError(f"glue node {i} not in first graph")
    for i in glue2:
        if not 0 <= i < g2.n:
            raise GraphError(f"glue node {i} not in second graph")

    mapping: Dict[Tuple[int, int], int] = {(0, i): i for i in range(g1.n)}
    merged = dict(zip(glue2, glue1))
    nxt = g1.n
    for i in range(g2.n):
        if i in merged:
            mapping[(1, i)] = merged[i]
        else:
            mapping[(1, i)] = nxt
            nxt += 1

    acc: Dict[Edge, float] = {}
    for s, d, w in g1.edges:
        acc[(s, d)] = w
    for s, d, w in g2.edges:
        key = (mapping[(1, s)], mapping[(1, d)])
        acc[key] = acc.get(key, 0.0) + w

    labels = None
    if g1.labels is not None or g2.labels is not None:
        labels = [""] * nxt
        for (gi, old), new in mapping.items():
            src = g1 if gi == 0 else g2
            if gi == 1 and old in merged:
                continue
            labels[new] = src.label(old) if gi == 0 else src.label(old) + "'"
    edges = [(s, d, w) for (s, d), w in acc.items() if w != 0.0]
    return InfluenceGraph(nxt, edges, labels), mapping
