import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynoloc.geometry import Point2
from dynoloc.metrics import NodeTelemetry
from dynoloc.scheduler import (
    RangingBudget,
    RangingSchedule,
    Session,
    baseline_h_agnos,
    baseline_h_dyn,
    baseline_random,
    form_concurrency_rounds,
    select_edges_epoch,
)
from dynoloc.topology import ConnectivityGraph, k_core_decompose


def budget_of(slots, overhead=0):
    return RangingBudget(slots * 0.008, 8.0, overhead)


def test_budget_slot_count():
    assert RangingBudget.from_refresh_rate(1.0, 8.0).total_slots == 125
    assert RangingBudget.from_refresh_rate(4.0, 8.0).total_slots == 31
    assert budget_of(10).total_slots == 10
    assert RangingBudget(1.0, 8.0, overhead_slots=1).session_cost(3) == 9
    with pytest.raises(ValueError):
        RangingBudget(0.0, 8.0)


def test_budget_shrinks_with_refresh_rate():
    slots = [RangingBudget.from_refresh_rate(hz, 8.0).total_slots for hz in (0.5, 1, 2, 4)]
    assert slots == sorted(slots, reverse=True) and len(set(slots)) == 4


# rigid square 1..4 plus outsiders wired to three of its corners
SQUARE = {1: Point2(0, 0), 2: Point2(10, 0), 3: Point2(10, 10), 4: Point2(0, 10)}


def world(extra_edges, lq=None):
    g = ConnectivityGraph()
    for a, b in itertools.combinations(SQUARE, 2):
        g.set_link(a, b, 1.0)
    for a, b in extra_edges:
        g.set_link(a, b, (lq or {}).get((a, b), 1.0))
    return g


def test_higher_m_goes_first():
    g = world([(5, 1), (5, 2), (5, 3), (6, 2), (6, 3), (6, 4)])
    tel = {5: NodeTelemetry(mobility=1.0), 6: NodeTelemetry(mobility=5.0)}
    s = select_edges_epoch(g, k_core_decompose(g), set(SQUARE), tel, budget_of(16), SQUARE)
    assert [x.initiator for x in s.sessions[:2]] == [6, 5]


def test_three_best_lq_edges():
    lq = {(5, 1): 9.0, (5, 2): 7.0, (5, 3): 5.0, (5, 4): 3.0, (5, 6): 1.0}
    g = world(list(lq), lq)
    g.set_link(6, 1, 1.0)
    s = select_edges_epoch(g, k_core_decompose(g), set(SQUARE), {5: NodeTelemetry(mobility=2.0)}, budget_of(8), SQUARE)
    assert s.sessions[0].initiator == 5
    assert set(s.sessions[0].responders) == {1, 2, 3}


def test_budget_cutoff_and_leftover():
    g = world([(5, 1), (5, 2), (5, 3), (6, 2), (6, 3), (6, 4)])
    tel = {5: NodeTelemetry(mobility=5.0), 6: NodeTelemetry(mobility=1.0)}
    last = {(1, 2): 0.0}
    s = select_edges_epoch(g, k_core_decompose(g), set(SQUARE), tel, budget_of(10), SQUARE, last)
    assert [x.initiator for x in s.sessions] == [5]
    # two slots left over: too few for a fresh 1-responder session (4 slots), but
    # enough to append one responder to the session already scheduled if it helps
    assert s.slots_used <= 10


def test_leftover_refresh_skipped_when_it_cannot_fit():
    g = world([(5, 1), (5, 2), (5, 3)])
    tel = {5: NodeTelemetry(mobility=5.0)}
    last = {(2, 3): 0.0}
    s = select_edges_epoch(g, k_core_decompose(g), set(SQUARE), tel, budget_of(10), SQUARE, last)
    assert s.slots_used == 8
    assert [x.purpose for x in s.sessions] == ["admission"]


def test_leftover_refreshes_stalest_edge_first():
    g = world([(5, 1), (5, 2), (5, 3)])
    tel = {5: NodeTelemetry(mobility=5.0)}
    last = {(1, 2): 3.0, (3, 4): 1.0, (1, 3): 2.0}
    s = select_edges_epoch(g, k_core_decompose(g), set(SQUARE), tel, budget_of(12), SQUARE, last)
    refresh = [x for x in s.sessions if x.purpose == "refresh"]
    assert refresh == [Session(3, (4,), "refresh")]


def test_excluded_node_ranges_what_it_has():
    g = world([(5, 1), (5, 2)])
    s = select_edges_epoch(g, k_core_decompose(g), set(SQUARE), {5: NodeTelemetry(mobility=3.0)}, budget_of(8), SQUARE)
    assert s.excluded == {5: (1, 2)}
    assert s.sessions[0] == Session(5, (1, 2), "excluded-node")


def test_empty_graph_and_tiny_budget():
    g = ConnectivityGraph([1, 2])
    assert select_edges_epoch(g, k_core_decompose(g), set(), {}, budget_of(10)).sessions == []
    with pytest.raises(ValueError):
        select_edges_epoch(g, k_core_decompose(g), set(), {}, budget_of(3))


def test_founding_triangle_when_nothing_rigid():
    g = world([])
    s = select_edges_epoch(g, k_core_decompose(g), set(), {}, budget_of(40), SQUARE)
    assert s.sessions[0].purpose == "admission"
    assert len(s.sessions[0].responders) == 2


def random_world(seed, n=10, p=0.6):
    rng = np.random.default_rng(seed)
    pos = {k: Point2(*rng.uniform(0, 30, 2)) for k in range(n)}
    g = ConnectivityGraph(range(n))
    for a, b in itertools.combinations(range(n), 2):
        if rng.random() < p:
            g.set_link(a, b, float(rng.uniform(0.5, 50)))
    tel = {k: NodeTelemetry(mobility=float(rng.uniform(0, 5))) for k in range(n)}
    decomp = k_core_decompose(g)
    members = set(decomp.three_core_components[0]) if decomp.three_core_components else set()
    members = set(sorted(members)[: int(rng.integers(0, len(members) + 1))])
    last = {e: float(rng.uniform(0, 10)) for e in g.edges() if rng.random() < 0.5}
    return g, decomp, members, tel, pos, last, rng


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(4, 200), st.booleans(), st.booleans())
def test_schedule_invariants(seed, slots, use_lq, use_mobility):
    g, decomp, members, tel, pos, last, _ = random_world(seed)
    b = budget_of(slots, overhead=1)
    s = select_edges_epoch(g, decomp, members, tel, b, pos, last, use_lq=use_lq, use_mobility=use_mobility)
    assert s.sequential_cost(b) <= b.total_slots
    assert s.slots_used == s.sequential_cost(b)
    initiators = [x.initiator for x in s.sessions]
    assert len(initiators) == len(set(initiators))
    for x in s.sessions:
        assert all(g.has_edge(x.initiator, r) for r in x.responders)
        assert len(set(x.responders)) == len(x.responders)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(4, 200))
def test_lq_ablation_keeps_initiators(seed, slots):
    g, decomp, members, tel, pos, _, _ = random_world(seed)
    b = budget_of(slots)
    with_lq = select_edges_epoch(g, decomp, members, tel, b, pos, use_lq=True)
    without = select_edges_epoch(g, decomp, members, tel, b, pos, use_lq=False)
    assert [x.initiator for x in with_lq.sessions] == [x.initiator for x in without.sessions]
    assert [len(x.responders) for x in with_lq.sessions] == [len(x.responders) for x in without.sessions]


def two_sessions(gap):
    pos = {1: Point2(0, 0), 2: Point2(1, 0), 3: Point2(gap, 0), 4: Point2(gap + 1, 0)}
    g = ConnectivityGraph()
    g.set_link(1, 2, 1.0)
    g.set_link(3, 4, 1.0)
    sched = RangingSchedule([Session(1, (2,), "admission"), Session(3, (4,), "admission")])
    return sched, g, pos


def test_far_sessions_share_a_round():
    sched, g, pos = two_sessions(200)
    out = form_concurrency_rounds(sched, g, 100.0, pos)
    assert out.rounds == [[0, 1]]
    assert out.slots_used == 4


def test_shared_node_conflicts():
    g = ConnectivityGraph()
    g.set_link(1, 2, 1.0)
    g.set_link(1, 3, 1.0)
    pos = {1: Point2(0, 0), 2: Point2(500, 0), 3: Point2(-500, 0)}
    sched = RangingSchedule([Session(2, (1,), "admission"), Session(3, (1,), "admission")])
    assert len(form_concurrency_rounds(sched, g, 100.0, pos).rounds) == 2


def test_three_mutual_conflicts_three_rounds():
    g = ConnectivityGraph()
    pos = {}
    sessions = []
    for k in range(3):
        a, b = 2 * k, 2 * k + 1
        g.set_link(a, b, 1.0)
        pos[a], pos[b] = Point2(k, 0), Point2(k, 1)
        sessions.append(Session(a, (b,), "admission"))
    out = form_concurrency_rounds(RangingSchedule(sessions), g, 100.0, pos)
    assert len(out.rounds) == 3
    assert out.slots_used == 12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.floats(1, 60))
def test_rounds_never_cost_more(seed, radius):
    g, decomp, members, tel, pos, last, _ = random_world(seed, n=12, p=0.4)
    b = budget_of(120, overhead=1)
    s = select_edges_epoch(g, decomp, members, tel, b, pos, last)
    out = form_concurrency_rounds(s, g, radius, pos, b)
    assert out.slots_used <= s.sequential_cost(b)
    assert sorted(i for r in out.rounds for i in r) == list(range(len(s.sessions)))
    for rnd in out.rounds:
        for i, j in itertools.combinations(rnd, 2):
            mi, mj = out.sessions[i].members(), out.sessions[j].members()
            assert not set(mi) & set(mj)
            assert all(pos[a].dist(pos[c]) > radius for a in mi for c in mj)


def six_edge_graph():
    g = ConnectivityGraph()
    for a, b in [(1, 2), (1, 3), (2, 3), (3, 4), (4, 5), (5, 6)]:
        g.set_link(a, b, 1.0)
    return g


def test_h_agnos_round_robin():
    g = six_edge_graph()
    b = budget_of(16)  # four 1-responder sessions
    s1, cur = baseline_h_agnos(g, b)
    s2, _ = baseline_h_agnos(g, b, cur)
    assert s1.pairs() == [(1, 2), (1, 3), (2, 3), (3, 4)]
    assert s2.pairs() == [(4, 5), (5, 6), (1, 2), (1, 3)]


def test_h_agnos_deterministic_and_full_budget():
    g = six_edge_graph()
    assert baseline_h_agnos(g, budget_of(16), (2, 3))[0].pairs() == baseline_h_agnos(g, budget_of(16), (2, 3))[0].pairs()
    full, _ = baseline_h_agnos(g, budget_of(100))
    assert sorted(full.pairs()) == g.edges()


def test_h_dyn_most_mobile_first_and_lq_blind():
    g = six_edge_graph()
    tel = {4: NodeTelemetry(mobility=9.0), 1: NodeTelemetry(mobility=1.0)}
    s = baseline_h_dyn(g, tel, budget_of(100))
    assert s.sessions[0].initiator == 4
    h = ConnectivityGraph()
    rng = np.random.default_rng(0)
    for a, b in g.edges():
        h.set_link(a, b, float(rng.uniform(0.1, 100)))
    assert baseline_h_dyn(h, tel, budget_of(100)).sessions == s.sessions


def test_h_dyn_ties_by_id():
    g = six_edge_graph()
    tel = {n: NodeTelemetry(mobility=1.0, tsl=1.0) for n in g.node_ids}
    s = baseline_h_dyn(g, tel, budget_of(100))
    assert [x.initiator for x in s.sessions] == sorted(g.node_ids)


@given(st.integers(0, 10_000), st.integers(4, 60))
def test_random_baseline_fills_budget(seed, slots):
    g = six_edge_graph()
    b = budget_of(slots)
    s = baseline_random(g, b, np.random.default_rng(seed))
    assert s.slots_used <= slots
    assert len(s.sessions) == min(len(g.edges()), slots // 4)
