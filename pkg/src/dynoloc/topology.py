"""Connectivity graph, 3-core peeling and incremental rigid-graph construction."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .geometry import Point2, are_collinear

log = logging.getLogger(__name__)


def edge_key(i: int, j: int) -> tuple[int, int]:
    if i == j:
        raise ValueError(f"self-loop on node {i}")
    return (i, j) if i < j else (j, i)


class ConnectivityGraph:
    """Undirected graph with a link-quality weight per edge.

    An edge whose quality is 0 is kept on record (with its last update time)
    but treated as absent by every query that asks about connectivity.
    """

    def __init__(self, node_ids: Iterable[int] = ()):
        self.node_ids: set[int] = set(node_ids)
        self._lq: dict[tuple[int, int], float] = {}
        self._updated: dict[tuple[int, int], float] = {}
        self._adj: dict[int, set[int]] = {n: set() for n in self.node_ids}

    def add_node(self, n: int) -> None:
        self.node_ids.add(n)
        self._adj.setdefault(n, set())

    def set_link(self, i: int, j: int, lq: float, t: float = 0.0) -> None:
        if lq < 0 or not math.isfinite(lq):
            raise ValueError(f"invalid link quality {lq}")
        k = edge_key(i, j)
        self.add_node(i)
        self.add_node(j)
        self._lq[k] = float(lq)
        self._updated[k] = float(t)
        if lq > 0:
            self._adj[i].add(j)
            self._adj[j].add(i)
        else:
            self._adj[i].discard(j)
            self._adj[j].discard(i)

    def remove_link(self, i: int, j: int) -> None:
        k = edge_key(i, j)
        self._lq.pop(k, None)
        self._updated.pop(k, None)
        self._adj.get(i, set()).discard(j)
        self._adj.get(j, set()).discard(i)

    def lq(self, i: int, j: int) -> float:
        return self._lq.get(edge_key(i, j), 0.0)

    def last_update(self, i: int, j: int) -> float | None:
        return self._updated.get(edge_key(i, j))

    def has_edge(self, i: int, j: int) -> bool:
        return i != j and j in self._adj.get(i, ())

    def neighbors(self, i: int) -> set[int]:
        return self._adj.get(i, set())

    def degree(self, i: int) -> int:
        return len(self._adj.get(i, ()))

    def edges(self) -> list[tuple[int, int]]:
        """Live edges (LQ > 0), sorted."""
        return sorted(k for k, v in self._lq.items() if v > 0)

    def records(self) -> list[tuple[tuple[int, int], float, float]]:
        """Every stored link, live or not: (key, lq, last_update)."""
        return [(k, self._lq[k], self._updated[k]) for k in sorted(self._lq)]

    def copy(self) -> ConnectivityGraph:
        g = ConnectivityGraph(self.node_ids)
        for k, lq, t in self.records():
            g.set_link(k[0], k[1], lq, t)
        return g

    def __eq__(self, other):
        if not isinstance(other, ConnectivityGraph):
            return NotImplemented
        return self.node_ids == other.node_ids and self.records() == other.records()


@dataclass
class CoreDecomposition:
    core_number: dict[int, int]
    three_core_components: list[set[int]]

    def three_core(self) -> set[int]:
        return {n for n, c in self.core_number.items() if c == 3}


def k_core_decompose(g: ConnectivityGraph) -> CoreDecomposition:
    """Peel degree-1 then degree-2 nodes; whatever survives is the 3-core."""
    degree = {n: g.degree(n) for n in g.node_ids}
    alive = set(g.node_ids)
    core: dict[int, int] = {}
    for k in (1, 2):
        stack = sorted(n for n in alive if degree[n] <= k)
        while stack:
            n = stack.pop()
            if n not in alive:
                continue
            alive.discard(n)
            core[n] = k
            for m in g.neighbors(n):
                if m in alive:
                    degree[m] -= 1
                    if degree[m] <= k:
                        stack.append(m)
    for n in alive:
        core[n] = 3

    components = []
    seen: set[int] = set()
    for n in sorted(alive):
        if n in seen:
            continue
        comp, frontier = {n}, [n]
        while frontier:
            u = frontier.pop()
            for v in g.neighbors(u):
                if v in alive and v not in comp:
                    comp.add(v)
                    frontier.append(v)
        seen |= comp
        components.append(comp)
    components.sort(key=lambda c: (-len(c), min(c)))
    return CoreDecomposition(core, components)


class NoRigidSeed(RuntimeError):
    pass


@dataclass
class RigidGraph:
    """A rigid subgraph grown from a founding triangle.

    ``members`` keeps admission order, ``supports`` the prior members each
    node was admitted against, ``edges`` every range on record between
    members and ``positions`` the provisional placement used for the
    collinearity tests. ``log`` holds the admission/removal history.
    """

    members: list[int]
    edges: dict[tuple[int, int], float]
    anchor_triangle: tuple[int, int, int]
    supports: dict[int, tuple[int, ...]] = field(default_factory=dict)
    positions: dict[int, Point2] = field(default_factory=dict)
    log: list[tuple] = field(default_factory=list)
    component_id: int = 0

    def __contains__(self, n: int) -> bool:
        return n in self.supports

    def member_set(self) -> set[int]:
        return set(self.members)

    def range(self, i: int, j: int) -> float | None:
        return self.edges.get(edge_key(i, j))

    def copy(self) -> RigidGraph:
        return RigidGraph(
            list(self.members), dict(self.edges), self.anchor_triangle, dict(self.supports),
            dict(self.positions), list(self.log), self.component_id,
        )


def _non_collinear_triple(
    candidates: list[int], positions: dict[int, Point2], tol: float
) -> tuple[int, int, int] | None:
    """First triple (in list order) whose positions are not collinear."""
    usable = [c for c in candidates if c in positions]
    for a, b, c in itertools.combinations(usable, 3):
        if not are_collinear(positions[a], positions[b], positions[c], tol):
            return (a, b, c)
    return None


def is_rigid_admissible(
    candidate: int,
    rigid: RigidGraph,
    positions: dict[int, Point2],
    graph: ConnectivityGraph,
    tol: float = 1e-3,
) -> bool:
    if candidate in rigid:
        return False
    targets = sorted(n for n in graph.neighbors(candidate) if n in rigid)
    if len(targets) < 3:
        return False
    return _non_collinear_triple(targets, positions, tol) is not None


def trilaterate(anchors: list[Point2], ranges: list[float], iters: int = 10) -> tuple[Point2, float]:
    """Least-squares circle intersection. Returns the point and RMS range residual."""
    p = np.array([a.as_tuple() for a in anchors], dtype=float)
    r = np.asarray(ranges, dtype=float)
    if len(p) >= 3:
        a = 2.0 * (p[1:] - p[0])
        b = r[0] ** 2 - r[1:] ** 2 + np.sum(p[1:] ** 2, axis=1) - np.sum(p[0] ** 2)
        x, *_ = np.linalg.lstsq(a, b, rcond=None)
    else:
        x = p.mean(axis=0)
    for _ in range(iters):
        diff = x - p
        dist = np.linalg.norm(diff, axis=1)
        dist = np.where(dist < 1e-12, 1e-12, dist)
        jac = diff / dist[:, None]
        res = dist - r
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        x = x + step
        if np.linalg.norm(step) < 1e-12:
            break
    resid = np.linalg.norm(x - p, axis=1) - r
    return Point2(float(x[0]), float(x[1])), float(np.sqrt(np.mean(resid**2)))


def place_triangle(d12: float, d13: float, d23: float) -> tuple[Point2, Point2, Point2]:
    x = (d12**2 + d13**2 - d23**2) / (2 * d12)
    y = math.sqrt(max(0.0, d13**2 - x**2))
    return Point2(0.0, 0.0), Point2(d12, 0.0), Point2(x, y)


def _triangle_ok(a: float, b: float, c: float, slack: float = 0.95) -> bool:
    if min(a, b, c) <= 0:
        return False
    return slack * (a + b) > c and slack * (b + c) > a and slack * (a + c) > b


def _rank_edges(node: int, targets: Iterable[int], graph: ConnectivityGraph, use_lq: bool) -> list[int]:
    if use_lq:
        return sorted(targets, key=lambda t: (-graph.lq(node, t), t))
    return sorted(targets)


def bootstrap_rigid_graph(
    g: ConnectivityGraph,
    decomp: CoreDecomposition,
    range_oracle: Callable[[int, int], float | None],
    component: set[int] | None = None,
    use_lq: bool = True,
    tol: float = 1e-3,
    max_seeds: int = 25,
) -> RigidGraph:
    """Grow a rigid graph inside one 3-core component.

    Nodes are ranked by degree inside the 3-core (ties: lower id first). The
    first mutually connected triple that measures as a proper triangle
    founds the graph; every other node is admitted once it has three
    non-collinear edges into it, choosing the support edges by link quality.
    If growth stalls short of the whole component, the next founding
    triangle in rank order is tried (up to ``max_seeds``) and the largest
    result kept.
    ``range_oracle`` is only asked for edges actually needed; it may return
    None when the range cannot be obtained.
    """
    if component is None:
        if not decomp.three_core_components:
            raise NoRigidSeed("no rigid seed")
        component = decomp.three_core_components[0]
    core_nodes = set(component)
    deg = {n: sum(1 for m in g.neighbors(n) if m in core_nodes) for n in core_nodes}
    ranked = sorted(core_nodes, key=lambda n: (-deg[n], n))

    cache: dict[tuple[int, int], float | None] = {}

    def measure(i, j):
        k = edge_key(i, j)
        if k not in cache:
            cache[k] = range_oracle(*k)
        return cache[k]

    best = None
    tried = 0
    for a, b, c in itertools.combinations(ranked, 3):
        if not (g.has_edge(a, b) and g.has_edge(a, c) and g.has_edge(b, c)):
            continue
        dab, dac, dbc = measure(a, b), measure(a, c), measure(b, c)
        if None in (dab, dac, dbc) or not _triangle_ok(dab, dac, dbc):
            continue
        pa, pb, pc = place_triangle(dab, dac, dbc)
        if are_collinear(pa, pb, pc, tol):
            continue
        rigid = RigidGraph(
            members=[a, b, c],
            edges={edge_key(a, b): dab, edge_key(a, c): dac, edge_key(b, c): dbc},
            anchor_triangle=(a, b, c),
            supports={a: (), b: (a,), c: (a, b)},
            positions={a: pa, b: pb, c: pc},
        )
        rigid.log.append(("found", (a, b, c), {a: pa, b: pb, c: pc}))
        _grow(rigid, ranked, g, measure, use_lq, tol)
        if best is None or len(rigid.members) > len(best.members):
            best = rigid
        tried += 1
        if len(best.members) == len(core_nodes) or tried >= max_seeds:
            break
    if best is None:
        raise NoRigidSeed("no rigid seed")
    return best


def _grow(rigid, ranked, g, measure, use_lq, tol) -> None:
    progress = True
    while progress:
        progress = False
        for n in ranked:
            if n in rigid or not is_rigid_admissible(n, rigid, rigid.positions, g, tol):
                continue
            if admit(rigid, n, g, measure, use_lq=use_lq, tol=tol):
                progress = True


def admit(
    rigid: RigidGraph,
    node: int,
    graph: ConnectivityGraph,
    range_oracle: Callable[[int, int], float | None],
    use_lq: bool = True,
    tol: float = 1e-3,
) -> bool:
    """Admit ``node`` against its best three non-collinear edges into ``rigid``."""
    targets = [t for t in graph.neighbors(node) if t in rigid]
    ranked = _rank_edges(node, targets, graph, use_lq)
    # candidates whose range is unobtainable are skipped
    while True:
        triple = _non_collinear_triple(ranked, rigid.positions, tol)
        if triple is None:
            return False
        ranges = [range_oracle(node, t) for t in triple]
        missing = [t for t, r in zip(triple, ranges) if r is None or r <= 0]
        if not missing:
            break
        ranked = [t for t in ranked if t not in missing]
    pos, _ = trilaterate([rigid.positions[t] for t in triple], ranges)
    rigid.members.append(node)
    rigid.supports[node] = tuple(triple)
    rigid.positions[node] = pos
    for t, r in zip(triple, ranges):
        rigid.edges[edge_key(node, t)] = r
    rigid.log.append(("admit", node, tuple(triple), {t: rigid.positions[t] for t in triple}))
    return True


def _remove(rigid: RigidGraph, n: int) -> None:
    rigid.members.remove(n)
    del rigid.supports[n]
    rigid.positions.pop(n, None)
    for k in [k for k in rigid.edges if n in k]:
        del rigid.edges[k]
    rigid.log.append(("remove", n))


def purge_non_rigid(
    rigid: RigidGraph,
    g: ConnectivityGraph,
    decomp: CoreDecomposition | None = None,
    tol: float = 1e-3,
) -> RigidGraph:
    """Drop members that left the 3-core or lost an admission edge, cascading.

    A member whose support set was hit is re-tested: it stays if its other
    recorded ranges to surviving earlier members still give three live,
    non-collinear supports. Losing a founding node re-founds the graph from
    the survivors' recorded ranges (with a fresh admission log).
    """
    if decomp is None:
        decomp = k_core_decompose(g)
    out = rigid.copy()
    founders = set(out.anchor_triangle)

    def live(i, j):
        return g.has_edge(i, j)

    for n in [m for m in out.members if decomp.core_number.get(m, 1) != 3]:
        _remove(out, n)
    while True:
        if any(f not in out for f in founders) or not all(
            live(a, b) for a, b in itertools.combinations(out.anchor_triangle, 2)
        ):
            return _refound(out, g, tol)
        doomed = None
        for idx, n in enumerate(out.members):
            sup = out.supports[n]
            if n in founders or (all(s in out for s in sup) and all(live(n, s) for s in sup)):
                continue
            earlier = out.members[:idx]
            recorded = [m for m in earlier if out.range(n, m) is not None and live(n, m)]
            triple = _non_collinear_triple(recorded, out.positions, tol)
            if triple is None:
                doomed = n
                break
            out.supports[n] = triple
            out.log.append(("resupport", n, triple, {t: out.positions[t] for t in triple}))
        if doomed is None:
            return out
        _remove(out, doomed)


def _refound(rigid: RigidGraph, g: ConnectivityGraph, tol: float) -> RigidGraph:
    """Rebuild from the survivors' recorded, still-live ranges after a founder is lost."""
    sub = ConnectivityGraph(rigid.members)
    for (a, b), r in rigid.edges.items():
        if g.has_edge(a, b):
            sub.set_link(a, b, g.lq(a, b))
    decomp = k_core_decompose(sub)
    if not decomp.three_core_components:
        return RigidGraph([], {}, rigid.anchor_triangle, component_id=rigid.component_id)
    try:
        fresh = bootstrap_rigid_graph(sub, decomp, lambda a, b: rigid.edges.get(edge_key(a, b)), tol=tol)
    except NoRigidSeed:
        return RigidGraph([], {}, rigid.anchor_triangle, component_id=rigid.component_id)
    for k, r in rigid.edges.items():
        if k[0] in fresh and k[1] in fresh and g.has_edge(*k):
            fresh.edges[k] = r
    fresh.component_id = rigid.component_id
    return fresh


def replay_admission_log(rigid: RigidGraph, tol: float = 1e-3) -> bool:
    """Re-run the admission history and check every step was legal."""
    members: set[int] = set()
    for event in rigid.log:
        kind = event[0]
        if kind == "found":
            _, tri, pos = event
            if members or are_collinear(pos[tri[0]], pos[tri[1]], pos[tri[2]], tol):
                return False
            members |= set(tri)
        elif kind in ("admit", "resupport"):
            _, n, sup, pos = event
            if len(sup) < 3 or not all(s in members for s in sup):
                return False
            if are_collinear(pos[sup[0]], pos[sup[1]], pos[sup[2]], tol):
                return False
            if kind == "admit":
                if n in members:
                    return False
                members.add(n)
        elif kind == "remove":
            members.discard(event[1])
    return members == rigid.member_set()
