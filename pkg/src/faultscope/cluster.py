"""Clustering of hard-to-distinguish nodes, sensor re-placement and the
iterative localisation loop built on them."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .gammoid import Gammoid
from .graph import InfluenceGraph, transpose
from .lintransfer import CoherenceMatrix, shortest_path_coherence
from .reconstruct import ReconstructionProblem, SolverConfig, cluster_score, solve

LINKAGES = ("average", "complete", "single")
_TIE = 1e-12


@dataclass(frozen=True)
class Merge:
    left: Tuple[int, ...]
    right: Tuple[int, ...]
    height: float


@dataclass(frozen=True)
class Clustering:
    """Partition of ``node_ids``; cluster ``c`` holds the nodes with ``assignments[node] == c``.

    Cluster indices are numbered by first appearance in ``node_ids``.
    """

    node_ids: Tuple[int, ...]
    assignments: Dict[int, int]
    linkage: str
    cut: Dict[str, float]
    merges: Tuple[Merge, ...] = field(default=(), compare=False, repr=False)

    @property
    def n_clusters(self) -> int:
        return len(set(self.assignments.values()))

    def clusters(self) -> List[Tuple[int, ...]]:
        out: List[List[int]] = [[] for _ in range(self.n_clusters)]
        for node in self.node_ids:
            out[self.assignments[node]].append(node)
        return [tuple(c) for c in out]

    def cluster_of(self, node: int) -> int:
        return self.assignments[node]

    def members(self, index: int) -> Tuple[int, ...]:
        return self.clusters()[index]

    def to_dict(self) -> dict:
        return {
            "node_ids": list(self.node_ids),
            "clusters": [list(c) for c in self.clusters()],
            "linkage": self.linkage,
            "cut": dict(self.cut),
            "merge_heights": [m.height for m in self.merges],
        }


def agglomerate(D: np.ndarray, linkage: str = "average") -> List[Tuple[int, int, float]]:
    """Full agglomerative merge sequence on a distance matrix.

    Clusters are named by their smallest position. Each step merges the pair
    at the smallest linkage distance; distances within ``1e-12`` count as
    equal and the lexicographically smallest pair of names wins. Returns
    ``(name_a, name_b, height)`` with ``name_a < name_b``; the merged cluster
    keeps ``name_a``.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"linkage must be one of {LINKAGES}, got {linkage!r}")
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    members: Dict[int, List[int]] = {i: [i] for i in range(n)}
    dist: Dict[Tuple[int, int], float] = {(i, j): float(D[i, j]) for i in range(n) for j in range(i + 1, n)}
    merges = []
    while len(members) > 1:
        best = min(dist.values())
        a, b = min(p for p, d in dist.items() if d <= best + _TIE)
        h = dist[(a, b)]
        na, nb = len(members[a]), len(members[b])
        members[a] = members[a] + members.pop(b)
        for c in members:
            if c == a:
                continue
            dac = dist[(min(a, c), max(a, c))]
            dbc = dist.pop((min(b, c), max(b, c)))
            if linkage == "average":
                new = (na * dac + nb * dbc) / (na + nb)
            elif linkage == "complete":
                new = max(dac, dbc)
            else:
                new = min(dac, dbc)
            dist[(min(a, c), max(a, c))] = new
        del dist[(a, b)]
        merges.append((a, b, h))
    return merges


def _gap_merge_count(heights: Sequence[float]) -> int:
    """Number of merges to keep: cut in the widest gap of ``0, h_1, ..., h_{n-1}``.

    Equal heights everywhere carry no structure and give a single cluster.
    """
    if not heights:
        return 0
    gaps = np.diff([0.0] + [max(h, 0.0) for h in heights])
    if gaps.max() <= _TIE:
        return len(heights)
    return int(np.argmax(gaps))


def cluster_matrix(
    node_ids: Sequence[int],
    similarity: np.ndarray,
    linkage: str = "average",
    n_clusters: Optional[int] = None,
    threshold: Optional[float] = None,
) -> Clustering:
    node_ids = tuple(int(i) for i in node_ids)
    n = len(node_ids)
    if n == 0:
        raise ValueError("cannot cluster an empty node set")
    S = np.asarray(similarity, dtype=float)
    if S.shape != (n, n):
        raise ValueError(f"similarity matrix shape {S.shape} does not match {n} nodes")
    if n_clusters is not None and threshold is not None:
        raise ValueError("give either n_clusters or threshold, not both")
    D = 1.0 - S
    np.fill_diagonal(D, 0.0)
    merges = agglomerate(D, linkage)
    heights = [h for _, _, h in merges]
    if n_clusters is not None:
        if not 1 <= n_clusters <= n:
            raise ValueError(f"n_clusters must lie in [1, {n}], got {n_clusters}")
        keep = n - n_clusters
        cut = {"n_clusters": int(n_clusters)}
    elif threshold is not None:
        keep = sum(1 for h in heights if h <= threshold + _TIE)
        cut = {"threshold": float(threshold)}
    else:
        keep = _gap_merge_count(heights)
        cut = {"n_clusters": n - keep, "rule": "largest-gap"}
    # merge heights of the three linkages never decrease, so a prefix is a cut
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    log = []
    for a, b, h in merges[:keep]:
        ra, rb = find(a), find(b)
        log.append(Merge(tuple(node_ids[i] for i in range(n) if find(i) == ra),
                         tuple(node_ids[i] for i in range(n) if find(i) == rb), h))
        parent[rb] = ra
    index: Dict[int, int] = {}
    assign: Dict[int, int] = {}
    for pos, node in enumerate(node_ids):
        root = find(pos)
        if root not in index:
            index[root] = len(index)
        assign[node] = index[root]
    return Clustering(node_ids, assign, linkage, cut, tuple(log))


def cluster_inputs(
    coh: CoherenceMatrix,
    linkage: str = "average",
    n_clusters: Optional[int] = None,
    threshold: Optional[float] = None,
) -> Clustering:
    """Agglomerative clustering on ``1 - mu``.

    Without ``n_clusters`` or ``threshold`` the dendrogram is cut in its
    widest gap.
    """
    V = np.asarray(coh.values, dtype=float)
    if V.size and (np.any(V < -1e-12) or np.any(V > 1 + 1e-12) or not np.allclose(V, V.T)):
        raise ValueError("coherence matrix must be symmetric with entries in [0, 1]")
    return cluster_matrix(coh.node_ids, V, linkage, n_clusters, threshold)


def output_gammoid(gam: Gammoid, restricted_ground: Sequence[int],
                   candidates: Optional[Sequence[int]] = None) -> Gammoid:
    """Gammoid whose ground set is the sensor candidates, read through the transposed graph."""
    restricted = sorted(set(int(i) for i in restricted_ground))
    if not restricted:
        raise ValueError("restricted ground set must not be empty")
    extra = set(restricted) - set(gam.ground_set)
    if extra:
        raise ValueError(f"nodes {sorted(extra)} are not in the ground set")
    cand = range(gam.graph.n) if candidates is None else candidates
    return Gammoid(transpose(gam.graph), cand, restricted)


def cluster_outputs(
    gam: Gammoid,
    restricted_ground: Sequence[int],
    candidates: Optional[Sequence[int]] = None,
    linkage: str = "average",
    n_clusters: Optional[int] = None,
    threshold: Optional[float] = None,
) -> Tuple[CoherenceMatrix, Clustering]:
    """Coherence and clustering of sensor candidates as seen from ``restricted_ground``.

    Two candidates are coherent when the restricted inputs reach them along
    similar shortest walks. Candidates not downstream of any restricted
    node are listed in ``excluded`` of the returned matrix.
    """
    coh = shortest_path_coherence(output_gammoid(gam, restricted_ground, candidates))
    if not coh.node_ids:
        raise ValueError("no sensor candidate is reachable from the restricted ground set")
    return coh, cluster_inputs(coh, linkage, n_clusters, threshold)


@dataclass(frozen=True)
class SensorMove:
    remove: int
    add: int
    uncovered_cluster: int

    def to_dict(self) -> dict:
        return {"remove": self.remove, "add": self.add, "uncovered_cluster": self.uncovered_cluster}


@dataclass(frozen=True)
class SensorPlan:
    current_sensors: Tuple[int, ...]
    redundant_pairs: Tuple[Tuple[int, int], ...]
    suggestions: Tuple[SensorMove, ...]
    idle_sensors: Tuple[int, ...] = ()
    uncovered_clusters: Tuple[int, ...] = ()
    skipped: bool = False

    def to_dict(self) -> dict:
        return {
            "current_sensors": list(self.current_sensors),
            "redundant_pairs": [list(p) for p in self.redundant_pairs],
            "idle_sensors": list(self.idle_sensors),
            "uncovered_clusters": list(self.uncovered_clusters),
            "suggestions": [m.to_dict() for m in self.suggestions],
            "skipped": self.skipped,
        }


def plan_sensors(output_clusters: Clustering, current: Sequence[int],
                 move_idle: bool = True) -> SensorPlan:
    """Suggest moving surplus sensors into output clusters that have none.

    A cluster holding several sensors keeps its lowest-index one. Sensors
    outside the clustering see nothing of the restricted inputs; with
    ``move_idle`` they are offered for moves after the surplus ones.
    Uncovered clusters are filled in index order, each with its
    lowest-index node. ``skipped`` flags surplus sensors left without a
    target cluster.
    """
    current = tuple(int(z) for z in current)
    groups = output_clusters.clusters()
    holders: List[List[int]] = [[] for _ in groups]
    idle = []
    for z in current:
        if z in output_clusters.assignments:
            holders[output_clusters.cluster_of(z)].append(z)
        else:
            idle.append(z)
    redundant, surplus = [], []
    for hs in holders:
        hs = sorted(hs)
        for other in hs[1:]:
            redundant.append((hs[0], other))
            surplus.append(other)
    movable = surplus + (sorted(idle) if move_idle else [])
    uncovered = [c for c, hs in enumerate(holders) if not hs]
    moves = tuple(SensorMove(rem, min(groups[c]), c) for rem, c in zip(movable, uncovered))
    return SensorPlan(current, tuple(redundant), moves, tuple(sorted(idle)), tuple(uncovered),
                      skipped=len(surplus) > len(uncovered))


# --- iterative localisation --------------------------------------------------


@dataclass
class RoundRecord:
    round: int
    ground_set: Tuple[int, ...]
    sensors: Tuple[int, ...]
    clusters: List[Tuple[int, ...]]
    scores: List[Tuple[int, Tuple[int, ...], float]]
    selected: Tuple[int, ...]
    dropped_unobservable: Tuple[int, ...] = ()
    sensor_plan: Optional[SensorPlan] = None
    chosen_move: Optional[SensorMove] = None
    solver: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "ground_set": list(self.ground_set),
            "sensors": list(self.sensors),
            "dropped_unobservable": list(self.dropped_unobservable),
            "clusters": [list(c) for c in self.clusters],
            "scores": [{"cluster": i, "nodes": list(nodes), "score": s} for i, nodes, s in self.scores],
            "selected": list(self.selected),
            "sensor_plan": None if self.sensor_plan is None else self.sensor_plan.to_dict(),
            "chosen_move": None if self.chosen_move is None else self.chosen_move.to_dict(),
            "solver": self.solver,
        }


@dataclass
class LocalizationTrace:
    rounds: List[RoundRecord]
    final_ground_set: Tuple[int, ...]
    final_sensors: Tuple[int, ...]
    stalled: bool
    stop_reason: str

    def to_dict(self) -> dict:
        return {
            "rounds": [r.to_dict() for r in self.rounds],
            "final_ground_set": list(self.final_ground_set),
            "final_sensors": list(self.final_sensors),
            "stalled": self.stalled,
            "stop_reason": self.stop_reason,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def select_top_clusters(scores, k: int) -> Tuple[int, ...]:
    """Nodes of the best-scoring clusters, taken in rank order until ``k`` are covered."""
    chosen: List[int] = []
    for cs in scores:
        if len(chosen) >= k:
            break
        chosen.extend(cs.nodes)
    return tuple(sorted(chosen))


def _cluster_count(policy, sensors, nodes) -> Optional[int]:
    if policy == "gap":
        return None
    m = len(sensors) if policy == "sensors" else int(policy)
    return max(1, min(m, len(nodes)))


def iterate_localization(
    exp,
    k: int,
    max_rounds: int = 5,
    beta: float = 1e-3,
    linkage: str = "complete",
    solver: Optional[SolverConfig] = None,
    ground_set: Optional[Sequence[int]] = None,
    candidates=None,
    n_clusters=2,
    output_clusters="sensors",
    move_sensors: bool = True,
) -> LocalizationTrace:
    """Alternate input clustering, reconstruction, cluster selection and sensor moves.

    ``exp`` supplies the system and can report data for any sensor set (a
    twin experiment). Each round narrows the ground set to the top-scoring
    input clusters covering ``k`` nodes and moves at most one sensor. The
    loop ends when at most ``k`` nodes remain, after ``max_rounds`` rounds,
    or when a round neither shrinks the ground set nor moves a sensor.

    ``n_clusters`` and ``output_clusters`` set the cluster counts of the
    input and output clusterings: ``"sensors"`` uses the current number of
    sensors, ``"gap"`` the widest-gap cut, an integer a fixed count (all
    capped by the number of nodes). ``candidates`` is the pool of sensor
    positions: all nodes by default, ``"ground"`` for the nodes still
    suspected in the current round, or an explicit node list.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if max_rounds < 1:
        raise ValueError("max_rounds must be at least 1")
    solver = SolverConfig() if solver is None else solver
    g: InfluenceGraph = exp.system.graph()
    sensors = tuple(exp.system.sensors)
    ground = tuple(sorted(range(exp.system.n) if ground_set is None else set(ground_set)))
    rounds: List[RoundRecord] = []

    if len(ground) <= k:
        rounds.append(RoundRecord(1, ground, sensors, [ground], [], ground))
        return LocalizationTrace(rounds, ground, sensors, False, "ground set within k")

    stalled, reason = False, "max_rounds"
    for rnd in range(1, max_rounds + 1):
        gam = Gammoid(g, ground, sensors)
        coh = shortest_path_coherence(gam)
        dropped = coh.excluded
        ground_now = coh.node_ids
        if not ground_now:
            rounds.append(RoundRecord(rnd, ground, sensors, [], [], (), dropped))
            ground, reason = (), "nothing observable"
            break
        clustering = cluster_inputs(coh, linkage, _cluster_count(n_clusters, sensors, ground_now))
        sys = exp.system.with_sensors(sensors)
        prob = ReconstructionProblem(sys, exp.measure(sensors), ground_now, beta, solver=solver)
        res = solve(prob)
        scores = cluster_score(res, clustering)
        selected = select_top_clusters(scores, k)

        plan, move = None, None
        if len(selected) > k and move_sensors:
            pool = selected if candidates == "ground" else candidates
            out_gam = output_gammoid(Gammoid(g, ground_now, sensors), selected, pool)
            out_coh = shortest_path_coherence(out_gam)
            out_clusters = cluster_inputs(out_coh, linkage,
                                          _cluster_count(output_clusters, sensors, out_coh.node_ids))
            plan = plan_sensors(out_clusters, sensors)
            if plan.suggestions:
                move = plan.suggestions[0]
                sensors = tuple(sorted(set(sensors) - {move.remove} | {move.add}))

        rounds.append(RoundRecord(
            rnd, ground_now, tuple(prob.system.sensors), clustering.clusters(),
            [(cs.index, cs.nodes, cs.score) for cs in scores], selected, dropped, plan, move,
            {"converged": res.converged, "iterations": res.iterations, "objective": res.objective},
        ))
        shrunk = len(selected) < len(ground)
        ground = selected
        if len(ground) <= k:
            reason = "ground set within k"
            break
        if not shrunk and move is None:
            stalled, reason = True, "stalled"
            break
    return LocalizationTrace(rounds, ground, sensors, stalled, reason)
