"""Laplace-domain quantities of linear systems and coherence-based spark bounds."""
from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .gammoid import Gammoid
from .graph import InfluenceGraph, from_state_matrix
from .simulate import LinearSystem


class ResolventError(ArithmeticError):
    """``s I - A`` is singular (``s`` is an eigenvalue of ``A``)."""


class DegenerateCoherenceError(ArithmeticError):
    pass


def _matrix(sys) -> np.ndarray:
    return np.asarray(sys.A if isinstance(sys, LinearSystem) else sys, dtype=float)


def resolvent(A: np.ndarray, s: complex) -> np.ndarray:
    """``(s I - A)^-1``.

    For ``|s|`` well beyond ``||A||`` the Neumann series is summed instead of
    solving: every entry is then a sum of walk-weight terms, so even entries
    many orders of magnitude below the largest one keep full relative accuracy.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    norm = np.linalg.norm(A, 2) if n else 0.0
    if n and abs(s) >= 4 * norm:
        ratio = norm / abs(s)
        extra = 40 if ratio == 0 else int(np.ceil(np.log(1e-18) / np.log(ratio)))
        R = np.zeros((n, n), dtype=complex)
        term = np.eye(n, dtype=complex) / s
        for _ in range(n + extra):
            R += term
            term = A @ term / s
            if not term.any():
                break
        return R
    M = s * np.eye(n) - A
    if n and np.linalg.cond(M) > 1e14:
        raise ResolventError(f"s = {s} is (numerically) an eigenvalue of A")
    try:
        return np.linalg.solve(M, np.eye(n, dtype=complex))
    except np.linalg.LinAlgError as exc:
        raise ResolventError(str(exc)) from None


def transfer_entry(sys, s: complex, out: int, in_: int) -> complex:
    """Entry ``(out, in_)`` of ``(s I - A)^-1``."""
    return complex(resolvent(_matrix(sys), s)[out, in_])


def transfer_matrix(sys, s: complex, L: Sequence[int], Z: Sequence[int]) -> np.ndarray:
    """``T(s)`` with rows ``Z`` and columns ``L``."""
    R = resolvent(_matrix(sys), s)
    return R[np.ix_(list(Z), list(L))]


def path_sum_transfer(g: InfluenceGraph, s: complex, out: int, in_: int, terms: int = 60) -> complex:
    """Truncated walk expansion ``(1/s) sum_k F(P_k(in, out)) / s^k``.

    Walk weights are accumulated by pushing weight along graph edges, one
    length at a time; valid for ``|s|`` beyond the spectral radius.
    """
    v = np.zeros(g.n, dtype=complex)
    v[in_] = 1.0
    total = 0j
    for k in range(terms):
        total += v[out] / s ** (k + 1)
        nxt = np.zeros_like(v)
        for i in np.nonzero(v)[0]:
            for j, w in g.successors(int(i)):
                nxt[j] += w * v[i]
        v = nxt
    return total


def gramian(sys, s: complex, L: Sequence[int], Z: Sequence[int]) -> np.ndarray:
    """Input gramian ``T(s)^* T(s)`` over the ground set ``L``."""
    T = transfer_matrix(sys, s, L, Z)
    return T.conj().T @ T


@dataclass(frozen=True)
class CoherenceMatrix:
    """Pairwise coherences over ``node_ids``.

    ``excluded`` lists ground nodes that influence no output; they have no
    row. ``kind`` is ``"gramian"`` (with ``s``) or ``"shortest_path"``.
    """

    node_ids: Tuple[int, ...]
    values: np.ndarray
    kind: str
    s: Optional[complex] = None
    excluded: Tuple[int, ...] = ()
    path_lengths: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @property
    def mutual(self) -> float:
        """Largest off-diagonal coherence (0 for fewer than two nodes)."""
        m = len(self.node_ids)
        if m < 2:
            return 0.0
        off = self.values[~np.eye(m, dtype=bool)]
        return float(off.max())

    def index(self, node: int) -> int:
        return self.node_ids.index(node)

    def get(self, i: int, j: int) -> float:
        return float(self.values[self.index(i), self.index(j)])

    def to_csv(self, labels: Optional[Sequence[str]] = None) -> str:
        labels = [str(i) for i in self.node_ids] if labels is None else list(labels)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node"] + labels)
        for lab, row in zip(labels, self.values):
            w.writerow([lab] + [repr(float(v)) for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "node_ids": list(self.node_ids),
            "values": self.values.tolist(),
            "excluded": list(self.excluded),
            "mu_mutual": self.mutual,
        }
        if self.s is not None:
            d["s"] = [self.s.real, self.s.imag]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def coherence_from_gramian(G: np.ndarray, L: Sequence[int], s=None,
                           excluded: Sequence[int] = ()) -> CoherenceMatrix:
    """Normalise a gramian; nodes in ``excluded`` or with zero diagonal are dropped."""
    d = np.real(np.diag(G))
    drop = set(excluded)
    keep = [k for k in range(len(L)) if L[k] not in drop and d[k] > 0]
    gone = tuple(sorted(int(L[k]) for k in range(len(L)) if k not in keep))
    Gk = G[np.ix_(keep, keep)]
    dk = np.sqrt(d[keep])
    mu = np.abs(Gk) / dk[:, None] / dk[None, :]
    mu = np.clip((mu + mu.T) / 2, 0.0, 1.0)
    np.fill_diagonal(mu, 1.0)
    return CoherenceMatrix(tuple(int(L[k]) for k in keep), mu, "gramian", s, gone)


def coherence_at(sys, s: complex, L: Sequence[int], Z: Sequence[int]) -> CoherenceMatrix:
    """Coherence ``|G_ij| / sqrt(G_ii G_jj)`` of the input gramian at ``s``.

    Nodes without a path to any output have an identically zero gramian
    row; they are dropped from the matrix and listed in ``excluded``.
    """
    A = _matrix(sys)
    L = [int(l) for l in L]
    G = gramian(A, s, L, Z)
    g = from_state_matrix(A)
    zset = set(int(z) for z in Z)
    unreachable = [l for l in L if not (g.reachable_from([l]) & zset)]
    return coherence_from_gramian(G, L, s, unreachable)


def _shortest_walks(g: InfluenceGraph, source: int) -> Tuple[Dict[int, int], Dict[int, float]]:
    """Hop distance and total weight of all shortest walks from ``source``.

    Level-synchronous BFS: the weight of a node first reached at depth ``d``
    is the sum over its depth ``d-1`` predecessors of ``weight * edge``.
    """
    dist = {source: 0}
    weight = {source: 1.0}
    frontier = [source]
    d = 0
    while frontier:
        d += 1
        acc: Dict[int, float] = defaultdict(float)
        for u in frontier:
            wu = weight[u]
            for v, w in g.successors(u):
                if v not in dist:
                    acc[v] += wu * w
        for v in acc:
            dist[v] = d
        weight.update(acc)
        frontier = sorted(acc)
    return dist, weight


def shortest_path_coherence(gam: Gammoid) -> CoherenceMatrix:
    """Shortest-path coherence over the ground set of ``gam``.

    A path from ``l_i`` to ``l_j'`` in the gramian gammoid (the gammoid
    composed with its transpose along the outputs) runs from ``l_i`` to an
    output ``z`` in ``g`` and then from ``z'`` back to ``l_j'`` in the
    transposed graph, i.e. along a path ``l_j -> z`` reversed. Its length is
    ``d(l_i, z) + d(l_j, z)``; the minimal length over ``z`` selects the
    shortest paths, and their summed weight is
    ``sum_z W(l_i, z) W(l_j, z)`` over the minimising outputs, with ``W`` the
    weight of all shortest ``l -> z`` walks. Pairs without a common output
    get coherence 0; ground nodes reaching no output are excluded.
    """
    g = gam.graph
    Z = set(gam.output_set)
    reach: Dict[int, Dict[int, Tuple[int, float]]] = {}
    excluded = []
    for l in gam.ground_set:
        dist, weight = _shortest_walks(g, l)
        hits = {z: (dist[z], weight[z]) for z in Z if z in dist}
        if hits:
            reach[l] = hits
        else:
            excluded.append(l)
    nodes = tuple(l for l in gam.ground_set if l in reach)
    m = len(nodes)
    F = np.zeros((m, m))
    lengths = np.full((m, m), -1, dtype=int)
    for a in range(m):
        ra = reach[nodes[a]]
        for b in range(a, m):
            rb = reach[nodes[b]]
            common = ra.keys() & rb.keys()
            if not common:
                continue
            best = min(ra[z][0] + rb[z][0] for z in common)
            f = sum(ra[z][1] * rb[z][1] for z in sorted(common) if ra[z][0] + rb[z][0] == best)
            F[a, b] = F[b, a] = f
            lengths[a, b] = lengths[b, a] = best
    diag = np.diag(F).copy()
    bad = [nodes[k] for k in range(m) if not diag[k] > 0]
    if bad:
        raise DegenerateCoherenceError(
            f"shortest walks to the outputs cancel for nodes {bad}; coherence undefined"
        )
    mu = np.abs(F) / np.sqrt(np.outer(diag, diag)) if m else np.zeros((0, 0))
    mu = np.clip(mu, 0.0, 1.0)
    np.fill_diagonal(mu, 1.0)
    return CoherenceMatrix(nodes, mu, "shortest_path", None, tuple(excluded), lengths)


def spark_lower_bound(mu_mutual: float) -> float:
    """``1 / mu + 1``; infinite for ``mu = 0``."""
    if not (-1e-12 <= mu_mutual <= 1 + 1e-12) or math.isnan(mu_mutual):
        raise ValueError(f"mutual coherence must lie in [0, 1], got {mu_mutual}")
    mu = min(max(mu_mutual, 0.0), 1.0)
    if mu == 0.0:
        return math.inf
    return 1.0 / mu + 1.0


def coherence_spark_bound(coh: CoherenceMatrix, ground_size: Optional[int] = None) -> float:
    """Spark lower bound implied by a coherence matrix.

    A ground node without any output is dependent by itself, so the bound
    drops to 1. The result never exceeds ``|L| + 1``, the largest spark.
    """
    if coh.excluded:
        return 1.0
    n = len(coh.node_ids) if ground_size is None else ground_size
    return min(spark_lower_bound(coh.mutual), n + 1.0)


def default_s_samples(A: np.ndarray) -> List[complex]:
    A = np.asarray(A, dtype=float)
    rho = float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0
    r = 2 * rho + 1
    return [complex(r, 0), complex(0, r), complex(1e8, 0)]


def cascade_layers(gam: Gammoid) -> Optional[Dict[int, int]]:
    """Layer index per node if ``gam`` is a cascade, else ``None``.

    Every edge must go from layer ``l`` to ``l + 1``, the ground set must be
    exactly layer 0 and the output set exactly the last layer.
    """
    g = gam.graph
    n = g.n
    L, Z = set(gam.ground_set), set(gam.output_set)
    pot: Dict[int, int] = {}
    comps: List[List[int]] = []
    for root in range(n):
        if root in pot:
            continue
        pot[root] = 0
        comp, stack = [root], [root]
        while stack:
            u = stack.pop()
            nbrs = [(v, 1) for v, _ in g.successors(u)] + [(v, -1) for v, _ in g.predecessors(u)]
            for v, step in nbrs:
                want = pot[u] + step
                if v in pot:
                    if pot[v] != want:
                        return None
                else:
                    pot[v] = want
                    comp.append(v)
                    stack.append(v)
        comps.append(comp)

    layer: Dict[int, int] = {}
    loose = []
    for comp in comps:
        grounds = [v for v in comp if v in L]
        if not grounds:
            loose.append(comp)
            continue
        base = pot[grounds[0]]
        if any(pot[v] != base for v in grounds) or any(pot[v] < base for v in comp):
            return None
        for v in comp:
            layer[v] = pot[v] - base
    if not layer:
        return None
    depth = max(layer.values())
    for comp in loose:
        lo = min(pot[v] for v in comp)
        span = max(pot[v] for v in comp) - lo
        if comp_has := [v for v in comp if v in Z]:
            top = max(pot[v] for v in comp)
            if any(pot[v] != top for v in comp_has) or span > depth - 1:
                return None
            for v in comp:
                layer[v] = pot[v] - top + depth
        else:
            if span > depth - 2:
                return None
            for v in comp:
                layer[v] = pot[v] - lo + 1
    if {v for v, l in layer.items() if l == 0} != L:
        return None
    if {v for v, l in layer.items() if l == depth} != Z:
        return None
    return layer


def is_cascade(gam: Gammoid) -> bool:
    return cascade_layers(gam) is not None
