import itertools
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynoloc.geometry import Point2, procrustes_align
from dynoloc.topology import (
    ConnectivityGraph,
    NoRigidSeed,
    bootstrap_rigid_graph,
    edge_key,
    is_rigid_admissible,
    k_core_decompose,
    place_triangle,
    purge_non_rigid,
    replay_admission_log,
    trilaterate,
)


def graph_from(edges, nodes=None, lq=None):
    g = ConnectivityGraph(nodes or {n for e in edges for n in e})
    for a, b in edges:
        g.set_link(a, b, (lq or {}).get(edge_key(a, b), 1.0))
    return g


def clique(n, start=1):
    return list(itertools.combinations(range(start, start + n), 2))


def exact_oracle(pos):
    return lambda a, b: pos[a].dist(pos[b])


def test_edge_key_and_self_loop():
    assert edge_key(5, 2) == (2, 5)
    with pytest.raises(ValueError):
        edge_key(3, 3)


def test_zero_lq_link_is_absent():
    g = graph_from([(1, 2)])
    g.set_link(1, 2, 0.0, 4.0)
    assert not g.has_edge(1, 2)
    assert g.edges() == []
    assert g.last_update(1, 2) == 4.0
    with pytest.raises(ValueError):
        g.set_link(1, 2, -1.0)


def test_kcore_k4():
    d = k_core_decompose(graph_from(clique(4)))
    assert set(d.core_number.values()) == {3}
    assert d.three_core_components == [{1, 2, 3, 4}]


def test_kcore_path():
    d = k_core_decompose(graph_from([(1, 2), (2, 3), (3, 4), (4, 5)]))
    assert set(d.core_number.values()) == {1}


def test_kcore_k5_pendant():
    d = k_core_decompose(graph_from(clique(5) + [(1, 6)]))
    assert d.core_number[6] == 1
    assert all(d.core_number[n] == 3 for n in range(1, 6))


def test_kcore_cycle_is_two_core():
    d = k_core_decompose(graph_from([(1, 2), (2, 3), (3, 4), (4, 1), (4, 5)]))
    assert d.core_number == {1: 2, 2: 2, 3: 2, 4: 2, 5: 1}


random_graphs = st.integers(1, 12).flatmap(
    lambda n: st.tuples(
        st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=40)
    )
)


def build(n, pairs):
    g = ConnectivityGraph(range(n))
    for a, b in pairs:
        if a != b:
            g.set_link(a, b, 1.0)
    return g


@given(random_graphs)
def test_kcore_matches_networkx(case):
    n, pairs = case
    g = build(n, pairs)
    ref = nx.Graph()
    ref.add_nodes_from(range(n))
    ref.add_edges_from(g.edges())
    expected = {v: max(1, min(3, c)) for v, c in nx.core_number(ref).items()}
    assert k_core_decompose(g).core_number == expected


@given(random_graphs, st.randoms(use_true_random=False))
def test_three_core_independent_of_insertion_order(case, rnd):
    n, pairs = case
    pairs = [p for p in pairs if p[0] != p[1]]
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a, b = k_core_decompose(build(n, pairs)), k_core_decompose(build(n, shuffled))
    assert a.three_core() == b.three_core()
    assert a.core_number == b.core_number


@given(random_graphs)
def test_three_core_components_have_min_degree_three(case):
    g = build(*case)
    for comp in k_core_decompose(g).three_core_components:
        assert all(len(g.neighbors(v) & comp) >= 3 for v in comp)


# five node layout: 1..4 form a rigid quad with both diagonals
QUAD = {1: Point2(0, 0), 2: Point2(4, 0), 3: Point2(4, 4), 4: Point2(0, 4), 5: Point2(2, 7)}


def quad_rigid():
    g = graph_from(clique(4))
    d = k_core_decompose(g)
    return bootstrap_rigid_graph(g, d, exact_oracle(QUAD))


def test_admissible_with_three_noncollinear_edges():
    rg = quad_rigid()
    g = graph_from(clique(4) + [(5, 2), (5, 3), (5, 4)])
    assert is_rigid_admissible(5, rg, QUAD, g)


def test_not_admissible_with_two_edges():
    rg = quad_rigid()
    g = graph_from(clique(4) + [(5, 3), (5, 4)])
    assert not is_rigid_admissible(5, rg, QUAD, g)


def test_not_admissible_when_targets_collinear():
    pos = {1: Point2(0, 0), 2: Point2(1, 0), 3: Point2(2, 0), 4: Point2(3, 0), 9: Point2(0, 5)}
    g = graph_from(clique(4) + [(9, 1), (9, 2), (9, 3), (9, 4)])
    rg = quad_rigid()
    rg.positions = {k: pos[k] for k in (1, 2, 3, 4)}
    assert not is_rigid_admissible(9, rg, pos, g)


def test_bootstrap_k4():
    rg = quad_rigid()
    assert sorted(rg.members) == [1, 2, 3, 4]
    assert len(rg.edges) == 6
    assert replay_admission_log(rg)


def test_bootstrap_excludes_two_edge_node():
    g = graph_from(clique(4) + [(5, 3), (5, 4)])
    rg = bootstrap_rigid_graph(g, k_core_decompose(g), exact_oracle(QUAD))
    assert rg.member_set() == {1, 2, 3, 4}


def test_bootstrap_k5_plus_pendant():
    pos = {k: Point2(5 * math.cos(k), 5 * math.sin(k)) for k in range(1, 7)}
    g = graph_from(clique(5) + [(1, 6)])
    rg = bootstrap_rigid_graph(g, k_core_decompose(g), exact_oracle(pos))
    assert rg.member_set() == {1, 2, 3, 4, 5}


def test_bootstrap_tree_has_no_seed():
    g = graph_from([(1, 2), (1, 3), (1, 4), (2, 5)])
    with pytest.raises(NoRigidSeed):
        bootstrap_rigid_graph(g, k_core_decompose(g), lambda a, b: 1.0)


def test_bootstrap_ranks_by_core_degree():
    # nodes 1, 3 and 5 share the highest 3-core degree; the lowest id leads
    pos = {k: Point2(*p) for k, p in {1: (0, 0), 2: (6, 0), 3: (6, 6), 4: (0, 6), 5: (3, 2)}.items()}
    edges = [(1, 2), (2, 3), (3, 4), (4, 1), (1, 3), (5, 1), (5, 2), (5, 3), (5, 4)]
    g = graph_from(edges)
    rg = bootstrap_rigid_graph(g, k_core_decompose(g), exact_oracle(pos))
    assert rg.anchor_triangle[0] == 1
    assert rg.member_set() == {1, 2, 3, 4, 5}


def test_bootstrap_support_edges_prefer_lq():
    pos = {k: Point2(*p) for k, p in {1: (0, 0), 2: (6, 0), 3: (6, 6), 4: (0, 6), 5: (3, 9)}.items()}
    edges = clique(4) + [(5, 1), (5, 2), (5, 3), (5, 4)]
    lq = {(1, 5): 1.0, (2, 5): 9.0, (3, 5): 7.0, (4, 5): 5.0}
    g = graph_from(edges, lq=lq)
    rg = bootstrap_rigid_graph(g, k_core_decompose(g), exact_oracle(pos))
    assert set(rg.supports[5]) == {2, 3, 4}


def test_purge_unchanged_without_change():
    rg = quad_rigid()
    g = graph_from(clique(4))
    out = purge_non_rigid(rg, g)
    assert out.member_set() == rg.member_set()


def test_purge_drops_isolated_member():
    pos = {k: Point2(5 * math.cos(k), 5 * math.sin(k)) for k in range(1, 6)}
    g = graph_from(clique(5))
    rg = bootstrap_rigid_graph(g, k_core_decompose(g), exact_oracle(pos))
    last = rg.members[-1]
    for m in list(g.neighbors(last)):
        g.set_link(last, m, 0.0)
    out = purge_non_rigid(rg, g)
    assert last not in out
    assert replay_admission_log(out)


def test_purge_cascades_to_dependents():
    # admission order 3, 4, 2, 5, 1, 6 with 6 resting on (3, 4, 5): once 5 loses
    # two supports it goes, and 6 follows
    pos = {1: Point2(0, 0), 2: Point2(4, 0), 3: Point2(2, 3), 4: Point2(6, 3), 5: Point2(4, 6), 6: Point2(8, 6)}
    edges = [(1, 2), (1, 3), (2, 3), (4, 1), (4, 2), (4, 3), (5, 2), (5, 3), (5, 4), (6, 3), (6, 4), (6, 5)]
    g = graph_from(edges)
    rg = bootstrap_rigid_graph(g, k_core_decompose(g), exact_oracle(pos))
    assert rg.member_set() == set(pos)
    assert rg.supports[6] == (3, 4, 5)
    g.set_link(5, 2, 0.0)
    g.set_link(5, 3, 0.0)
    out = purge_non_rigid(rg, g)
    assert out.member_set() == {1, 2, 3, 4}
    assert replay_admission_log(out)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_clique_fully_admitted_and_log_replays(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 10))
    pos = {k: Point2(*rng.uniform(0, 20, 2)) for k in range(n)}
    g = graph_from(list(itertools.combinations(range(n), 2)))
    try:
        rg = bootstrap_rigid_graph(g, k_core_decompose(g), exact_oracle(pos))
    except NoRigidSeed:
        return  # every triple degenerate: vanishingly rare
    assert rg.member_set() == set(pos) or len(rg.members) >= n - 1
    assert replay_admission_log(rg)
    # random edge deletions keep the admission invariant
    for a, b in itertools.combinations(range(n), 2):
        if rng.random() < 0.3:
            g.set_link(a, b, 0.0)
    assert replay_admission_log(purge_non_rigid(rg, g))


@given(st.integers(0, 10_000))
def test_tree_never_rigid(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 12))
    edges = [(k, int(rng.integers(0, k))) for k in range(1, n)]
    g = graph_from(edges)
    with pytest.raises(NoRigidSeed):
        bootstrap_rigid_graph(g, k_core_decompose(g), lambda a, b: 1.0)


def test_place_triangle_3_4_5():
    a, b, c = place_triangle(5.0, 4.0, 3.0)
    assert (a, b) == (Point2(0, 0), Point2(5, 0))
    assert math.isclose(c.x, 3.2) and math.isclose(c.y, 2.4)


def test_trilaterate_exact():
    anchors = [Point2(0, 0), Point2(10, 0), Point2(0, 10)]
    truth = Point2(3, 4)
    p, resid = trilaterate(anchors, [truth.dist(a) for a in anchors])
    assert p.dist(truth) < 1e-9 and resid < 1e-9


def test_bootstrap_embeds_consistently():
    rng = np.random.default_rng(4)
    pos = {k: Point2(*rng.uniform(0, 30, 2)) for k in range(8)}
    g = graph_from(list(itertools.combinations(range(8), 2)))
    rg = bootstrap_rigid_graph(g, k_core_decompose(g), exact_oracle(pos))
    nodes = sorted(rg.members)
    _, rmse = procrustes_align([rg.positions[n] for n in nodes], [pos[n] for n in nodes])
    assert rmse < 1e-6
