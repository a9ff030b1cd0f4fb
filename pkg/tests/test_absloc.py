import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynoloc.absloc import (
    ReferenceMissing,
    RotationUnresolvable,
    flip_correction,
    implied_positions_from_headings,
    rotation_from_headings,
    rotation_from_motion,
    to_absolute,
)
from dynoloc.geometry import Point2, RigidTransform, apply_transform, wrap_angle
from dynoloc.relloc import PartialEDM, RelativeEmbedding, cmds_embed


def emb(**pts):
    return RelativeEmbedding({int(k[1:]): Point2(*v) for k, v in pts.items()})


def ang_close(a, b, tol=1e-9):
    return abs(wrap_angle(a - b)) < tol


def test_aligned_frames_give_zero():
    e = emb(n1=(0, 0), n2=(3, 0))
    implied = {1: Point2(10, 10), 2: Point2(13, 10)}
    assert ang_close(rotation_from_headings(e, implied), 0.0)


def test_edge_along_north_gives_quarter_turn():
    e = emb(n1=(0, 0), n2=(3, 0))
    implied = {1: Point2(0, 0), 2: Point2(0, 3)}
    assert ang_close(rotation_from_headings(e, implied), math.pi / 2)


def test_circular_mean_of_two_edges():
    e = emb(n1=(0, 0), n2=(1, 0), n3=(0, 1))
    r10, r14 = math.radians(10), math.radians(14)
    implied = {
        1: Point2(0, 0),
        2: Point2(math.cos(r10), math.sin(r10)),
        3: Point2(-math.sin(r14), math.cos(r14)),
    }
    theta = rotation_from_headings(e, implied, pairs=[(1, 2), (1, 3)])
    assert ang_close(theta, math.radians(12), 1e-9)


def test_rotation_needs_two_nodes():
    with pytest.raises(RotationUnresolvable, match="rotation unresolvable"):
        rotation_from_headings(emb(n1=(0, 0), n2=(1, 0)), {1: Point2(0, 0)})


def test_implied_positions_use_compass_bearing():
    out = implied_positions_from_headings(Point2(1, 1), {2: 2.0, 3: 4.0, 4: 1.0}, {2: 0.0, 3: math.pi / 2})
    assert out[2].dist(Point2(1, 3)) < 1e-12
    assert out[3].dist(Point2(5, 1)) < 1e-12
    assert 4 not in out


TRUTH = {1: Point2(0, 0), 2: Point2(6, 1), 3: Point2(4, 7), 4: Point2(-2, 5)}


def test_no_flip_for_truth():
    flip, confident = flip_correction(RelativeEmbedding(dict(TRUTH)), TRUTH)
    assert (flip, confident) == (False, True)


def test_flip_for_mirror():
    mirrored = RelativeEmbedding({n: Point2(p.x, -p.y) for n, p in TRUTH.items()})
    flip, confident = flip_correction(mirrored, TRUTH)
    assert flip and confident


def test_collinear_no_flip_low_confidence():
    line = {1: Point2(0, 0), 2: Point2(1, 0), 3: Point2(2, 0)}
    assert flip_correction(RelativeEmbedding(line), line) == (False, False)


def test_pure_translation():
    e = emb(n1=(0, 0), n2=(1, 2), n3=(-3, 4))
    out, _ = to_absolute(e, 1, Point2(10, 20), 0.0, False)
    assert out == {1: Point2(10, 20), 2: Point2(11, 22), 3: Point2(7, 24)}


def test_quarter_turn():
    out, _ = to_absolute(emb(n1=(0, 0), n2=(1, 0)), 1, Point2(5, 5), math.pi / 2, False)
    assert out[2].dist(Point2(5, 6)) < 1e-12


def test_missing_reference():
    with pytest.raises(ReferenceMissing):
        to_absolute(emb(n1=(0, 0)), 9, Point2(0, 0), 0.0, False)


def synthetic(seed, n=6):
    rng = np.random.default_rng(seed)
    truth = {k: Point2(*rng.uniform(0, 40, 2)) for k in range(n)}
    e = cmds_embed(PartialEDM.from_points(list(truth), np.array([p.as_tuple() for p in truth.values()])))
    return truth, e


def headings_toward_reference(truth, ref):
    # heading of node n is the compass bearing of the edge ref -> n
    out = {}
    for n, p in truth.items():
        if n != ref:
            d = p - truth[ref]
            out[n] = math.atan2(d.x, d.y) % (2 * math.pi)
    return out


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_round_trip_with_perfect_headings(seed):
    truth, e = synthetic(seed)
    ref = 0
    hd = headings_toward_reference(truth, ref)
    implied = implied_positions_from_headings(truth[ref], {n: truth[n].dist(truth[ref]) for n in hd}, hd)
    implied[ref] = truth[ref]
    flip, confident = flip_correction(e, implied)
    assert confident
    theta = rotation_from_headings(e, implied, flipped=flip)
    out, t = to_absolute(e, ref, truth[ref], theta, flip)
    assert max(out[n].dist(truth[n]) for n in truth) < 1e-6
    assert out[ref].dist(truth[ref]) < 1e-6


@given(
    st.integers(0, 100_000), st.floats(-10, 10), st.booleans(),
    st.floats(-100, 100), st.floats(-100, 100),
)
def test_to_absolute_preserves_distances(seed, theta, flip, x, y):
    _, e = synthetic(seed, n=5)
    out, _ = to_absolute(e, 0, Point2(x, y), theta, flip)
    for a in out:
        for b in out:
            assert abs(out[a].dist(out[b]) - e.coordinates[a].dist(e.coordinates[b])) < 1e-9


def test_rotation_from_motion_recovers_frame():
    rng = np.random.default_rng(2)
    truth0 = {k: Point2(*rng.uniform(0, 30, 2)) for k in range(6)}
    moves = {0: math.radians(30), 1: math.radians(200)}
    truth1 = dict(truth0)
    for n, h in moves.items():
        truth1[n] = truth0[n] + Point2(math.sin(h), math.cos(h)).scale(1.5)
    for flip in (False, True):
        hidden = RigidTransform(0.7, Point2(3, -2), flip)
        # the relative frames are an unknown rigid motion of the truth
        prev = RelativeEmbedding({n: apply_transform(hidden, p) for n, p in truth0.items()})
        cur = RelativeEmbedding({n: apply_transform(hidden, p) for n, p in truth1.items()})
        theta, got_flip = rotation_from_motion(prev, cur, moves)
        assert got_flip == flip
        back, _ = to_absolute(cur, 5, truth1[5], theta, got_flip)
        assert max(back[n].dist(truth1[n]) for n in truth1) < 1e-6


def test_rotation_from_motion_needs_movers():
    e = RelativeEmbedding(dict(TRUTH))
    with pytest.raises(RotationUnresolvable):
        rotation_from_motion(e, e, {1: 0.0, 2: 1.0})
