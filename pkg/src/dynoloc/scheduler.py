"""Per-epoch edge selection under a slot budget, concurrency rounds and baselines."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .geometry import Point2, are_collinear
from .metrics import NodeTelemetry
from .ranging import slots_for_aggregated_session
from .topology import ConnectivityGraph, CoreDecomposition, edge_key

STRATEGIES = ("dynoloc", "h-agnos", "h-dyn", "random")


@dataclass
class RangingBudget:
    """Slots available in one epoch.

    ``overhead_slots`` is charged once per session on top of its 2N+2 radio
    slots (control-plane round trip).
    """

    epoch_duration: float
    slot_time_ms: float
    overhead_slots: int = 0
    slots_used: int = 0

    def __post_init__(self):
        if self.epoch_duration <= 0 or self.slot_time_ms <= 0:
            raise ValueError("epoch duration and slot time must be positive")

    @property
    def total_slots(self) -> int:
        # round before flooring so 1 s / 8 ms gives 125, not 124
        return math.floor(round(self.epoch_duration * 1000.0 / self.slot_time_ms, 9))

    @classmethod
    def from_refresh_rate(cls, hz: float, slot_time_ms: float, overhead_slots: int = 0) -> RangingBudget:
        return cls(1.0 / hz, slot_time_ms, overhead_slots)

    def session_cost(self, n_responders: int) -> int:
        return slots_for_aggregated_session(n_responders) + self.overhead_slots


@dataclass(frozen=True)
class Session:
    initiator: int
    responders: tuple[int, ...]
    purpose: str  # admission | refresh | excluded-node | baseline

    def members(self) -> tuple[int, ...]:
        return (self.initiator, *self.responders)


@dataclass
class RangingSchedule:
    sessions: list[Session] = field(default_factory=list)
    rounds: list[list[int]] = field(default_factory=list)
    excluded: dict[int, tuple[int, ...]] = field(default_factory=dict)
    slots_used: int = 0

    def sequential_cost(self, budget: RangingBudget) -> int:
        return sum(budget.session_cost(len(s.responders)) for s in self.sessions)

    def round_cost(self, budget: RangingBudget) -> int:
        if not self.rounds:
            return self.sequential_cost(budget)
        return sum(
            max(budget.session_cost(len(self.sessions[i].responders)) for i in rnd)
            for rnd in self.rounds
            if rnd
        )

    def pairs(self) -> list[tuple[int, int]]:
        return [edge_key(s.initiator, r) for s in self.sessions for r in s.responders]


def _pick_support(
    node: int,
    candidates: list[int],
    positions: Mapping[int, Point2],
    tol: float = 1e-3,
) -> tuple[int, ...] | None:
    """First three candidates (in the given order) with non-collinear known positions.

    Candidates without a position estimate cannot be tested and are taken as
    they come.
    """
    n = len(candidates)
    for a in range(n):
        for b in range(a + 1, n):
            for c in range(b + 1, n):
                tri = (candidates[a], candidates[b], candidates[c])
                if all(t in positions for t in tri) and are_collinear(
                    positions[tri[0]], positions[tri[1]], positions[tri[2]], tol
                ):
                    continue
                return tri
    return None


def _founding_triangle(graph, decomp, positions, tol, at_rest) -> tuple[int, int, int] | None:
    """Best-connected mutually linked triple, preferring nodes at rest (their ranges keep)."""
    core = decomp.three_core()
    deg = {n: sum(1 for m in graph.neighbors(n) if m in core) for n in core}
    ranked = sorted(core, key=lambda n: (n not in at_rest, -deg[n], n))
    for tri in itertools.combinations(ranked, 3):
        a, b, c = tri
        if not (graph.has_edge(a, b) and graph.has_edge(a, c) and graph.has_edge(b, c)):
            continue
        if all(t in positions for t in tri) and are_collinear(positions[a], positions[b], positions[c], tol):
            continue
        return tri
    return None


def select_edges_epoch(
    graph: ConnectivityGraph,
    decomp: CoreDecomposition,
    rigid_members: set[int],
    telemetry: Mapping[int, NodeTelemetry],
    budget: RangingBudget,
    positions: Mapping[int, Point2] | None = None,
    last_measured: Mapping[tuple[int, int], float] | None = None,
    use_lq: bool = True,
    use_mobility: bool = True,
    epoch: int = 0,
    collinear_tol: float = 1e-3,
    at_rest: set[int] | None = None,
) -> RangingSchedule:
    """Pick this epoch's aggregated sessions, highest-uncertainty nodes first.

    Candidates are the nodes outside the rigid set plus its single most
    uncertain member. A candidate with three or more edges into the rigid
    set ranges its three best (highest-LQ, non-collinear) rigid neighbors
    and then counts as rigid itself; candidates that are not yet admissible
    are retried after each admission. The rest are marked excluded and range
    whatever rigid edges they have, or failing that their three best
    neighbors. Nodes at rest prefer resting neighbors. Selection stops at
    the first session that no longer fits. Leftover slots refresh the
    stalest measured rigid edges, preferably by appending a responder to a
    session the endpoint already runs.
    """
    if budget.total_slots < 4:
        raise ValueError("budget below one ranging session (4 slots)")
    positions = positions or {}
    last_measured = last_measured or {}
    schedule = RangingSchedule()
    nodes = sorted(graph.node_ids)
    if not nodes or not graph.edges():
        return schedule

    target = set(rigid_members)

    def mob(n):
        t = telemetry.get(n)
        return t.mobility if t is not None else 0.0

    if use_mobility:
        order = sorted(nodes, key=lambda n: (-mob(n), -decomp.core_number.get(n, 1), -graph.degree(n), n))
    else:
        k = epoch % len(nodes)
        order = nodes[k:] + nodes[:k]

    at_rest = at_rest or set()

    def rank(n, cands):
        # a node at rest anchors on other resting nodes first: those ranges stay valid
        rest = (lambda t: t not in at_rest) if n in at_rest and use_mobility else (lambda t: False)
        if use_lq:
            return sorted(cands, key=lambda t: (rest(t), -graph.lq(n, t), t))
        return sorted(cands, key=lambda t: (rest(t), t))

    remaining = budget.total_slots
    initiators: set[int] = set()

    def add(session) -> bool:
        nonlocal remaining
        cost = budget.session_cost(len(session.responders))
        if cost > remaining:
            return False
        schedule.sessions.append(session)
        initiators.add(session.initiator)
        remaining -= cost
        return True

    full = False
    if len(target) < 3:
        # nothing rigid survives: range a founding triangle first
        target = set()
        seed = _founding_triangle(graph, decomp, positions, collinear_tol, at_rest)
        if seed is not None:
            a, b, c = seed
            full = not (add(Session(a, (b, c), "admission")) and add(Session(b, (c,), "admission")))
            target = set(seed)

    # admission pass: the highest-M node that can be admitted goes next and
    # joins the rigid set, which may make deferred nodes admissible
    # candidates: everything outside the rigid set, plus the most uncertain member
    top = max(sorted(target), key=mob, default=None) if use_mobility else None
    if top is not None and mob(top) <= 0.0:
        top = None
    pending = [n for n in order if graph.neighbors(n) and n not in initiators and (n not in target or n == top)]
    while pending and not full:
        for n in pending:
            into_rigid = rank(n, [t for t in graph.neighbors(n) if t in target and t != n])
            support = _pick_support(n, into_rigid, positions, collinear_tol) if len(into_rigid) >= 3 else None
            if support is not None:
                full = not add(Session(n, support, "admission"))
                if not full:
                    pending.remove(n)
                    target.add(n)
                break
        else:
            break

    # whatever could not be admitted ranges the edges it has
    for n in pending:
        if full:
            break
        into_rigid = rank(n, [t for t in graph.neighbors(n) if t in target and t != n])
        edges = into_rigid[:3] if into_rigid else rank(n, list(graph.neighbors(n)))[:3]
        schedule.excluded[n] = tuple(into_rigid)
        full = not add(Session(n, tuple(edges), "excluded-node"))

    # leftover: refresh stalest previously measured rigid edges, by adding a
    # responder to a session the node already runs (2 slots) or, for a node
    # with no session yet, opening a single-responder one
    if not full:
        by_init = {sess.initiator: k for k, sess in enumerate(schedule.sessions)}
        stale = sorted(
            (t, k) for k, t in last_measured.items()
            if k[0] in target and k[1] in target and graph.has_edge(*k)
        )
        for _, (a, b) in stale:
            if remaining < 2:
                break
            if any(b in schedule.sessions[by_init[x]].responders for x in (a,) if x in by_init) or any(
                a in schedule.sessions[by_init[x]].responders for x in (b,) if x in by_init
            ):
                continue
            for init, resp in ((a, b), (b, a)):
                if init in by_init:
                    k = by_init[init]
                    old = schedule.sessions[k]
                    schedule.sessions[k] = Session(init, old.responders + (resp,), old.purpose)
                    remaining -= 2
                    break
            else:
                one = budget.session_cost(1)
                if remaining >= one:
                    schedule.sessions.append(Session(a, (b,), "refresh"))
                    by_init[a] = len(schedule.sessions) - 1
                    initiators.add(a)
                    remaining -= one
    schedule.slots_used = budget.total_slots - remaining
    return schedule


def _sessions_conflict(
    s1: Session,
    s2: Session,
    graph: ConnectivityGraph,
    interference_range: float,
    positions: Mapping[int, Point2],
) -> bool:
    m1, m2 = s1.members(), s2.members()
    if set(m1) & set(m2):
        return True
    for a in m1:
        for b in m2:
            if graph.has_edge(a, b):
                return True
            if a not in positions or b not in positions:
                return True
            if positions[a].dist(positions[b]) <= interference_range:
                return True
    return False


def form_concurrency_rounds(
    schedule: RangingSchedule,
    graph: ConnectivityGraph,
    interference_range: float,
    positions: Mapping[int, Point2],
    budget: RangingBudget | None = None,
) -> RangingSchedule:
    """Greedy colouring of the session conflict graph, most expensive sessions first."""
    cost = (lambda s: budget.session_cost(len(s.responders))) if budget else (
        lambda s: slots_for_aggregated_session(len(s.responders))
    )
    order = sorted(range(len(schedule.sessions)), key=lambda i: (-cost(schedule.sessions[i]), i))
    rounds: list[list[int]] = []
    for i in order:
        s = schedule.sessions[i]
        for rnd in rounds:
            if not any(
                _sessions_conflict(s, schedule.sessions[j], graph, interference_range, positions) for j in rnd
            ):
                rnd.append(i)
                break
        else:
            rounds.append([i])
    for rnd in rounds:
        rnd.sort()
    rounds.sort(key=lambda r: r[0])
    out = RangingSchedule(list(schedule.sessions), rounds, dict(schedule.excluded))
    out.slots_used = (
        out.round_cost(budget) if budget else sum(max(cost(out.sessions[i]) for i in r) for r in rounds)
    )
    return out


def baseline_h_agnos(
    graph: ConnectivityGraph, budget: RangingBudget, cursor: tuple[int, int] | None = None
) -> tuple[RangingSchedule, tuple[int, int] | None]:
    """Round robin over every live edge, one single-responder session each.

    ``cursor`` is the last edge ranged; the next epoch resumes after it.
    """
    edges = graph.edges()
    schedule = RangingSchedule()
    if not edges:
        return schedule, cursor
    start = 0
    if cursor is not None:
        start = next((i for i, e in enumerate(edges) if e > cursor), 0)
    remaining = budget.total_slots
    one = budget.session_cost(1)
    last = cursor
    for k in range(len(edges)):
        if remaining < one:
            break
        a, b = edges[(start + k) % len(edges)]
        schedule.sessions.append(Session(a, (b,), "baseline"))
        remaining -= one
        last = (a, b)
    schedule.slots_used = budget.total_slots - remaining
    return schedule, last


def baseline_h_dyn(
    graph: ConnectivityGraph,
    telemetry: Mapping[int, NodeTelemetry],
    budget: RangingBudget,
    epoch: int = 0,
) -> RangingSchedule:
    """Most mobile nodes first, up to three neighbors each, blind to LQ and rigidity.

    Neighbors are taken in id order, rotated each epoch so every edge gets a turn.
    """
    schedule = RangingSchedule()

    def mob(n):
        t = telemetry.get(n)
        return t.mobility if t is not None else 0.0

    remaining = budget.total_slots
    for n in sorted(graph.node_ids, key=lambda n: (-mob(n), n)):
        nbrs = sorted(graph.neighbors(n))
        if not nbrs:
            continue
        k = (epoch * 3) % len(nbrs)
        picked = tuple((nbrs[k:] + nbrs[:k])[:3])
        cost = budget.session_cost(len(picked))
        if cost > remaining:
            break
        schedule.sessions.append(Session(n, picked, "baseline"))
        remaining -= cost
    schedule.slots_used = budget.total_slots - remaining
    return schedule


def baseline_random(graph: ConnectivityGraph, budget: RangingBudget, rng: np.random.Generator) -> RangingSchedule:
    edges = graph.edges()
    schedule = RangingSchedule()
    remaining = budget.total_slots
    one = budget.session_cost(1)
    for idx in rng.permutation(len(edges)):
        if remaining < one:
            break
        a, b = edges[idx]
        if rng.random() < 0.5:
            a, b = b, a
        schedule.sessions.append(Session(a, (b,), "baseline"))
        remaining -= one
    schedule.slots_used = budget.total_slots - remaining
    return schedule
