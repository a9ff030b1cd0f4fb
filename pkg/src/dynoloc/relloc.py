"""Relative localization: multilateration, EDM completion, classical MDS and
placement of nodes hanging off the rigid core by one or two ranges."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import Point2
from .topology import ConnectivityGraph, RigidGraph, edge_key, place_triangle, trilaterate

log = logging.getLogger(__name__)

RESIDUAL_FLAG_M = 0.5


@dataclass
class PartialEDM:
    nodes: list[int]
    d: np.ndarray
    mask: np.ndarray
    timestamps: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.nodes)
        if self.d.shape != (n, n) or self.mask.shape != (n, n):
            raise ValueError("matrix shape does not match node count")
        if not (np.array_equal(self.d, self.d.T) and np.array_equal(self.mask, self.mask.T)):
            raise ValueError("EDM must be exactly symmetric")
        if np.any(self.d < 0):
            raise ValueError("negative distance")
        np.fill_diagonal(self.mask, True)
        np.fill_diagonal(self.d, 0.0)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @classmethod
    def from_ranges(
        cls,
        nodes: Sequence[int],
        ranges: Mapping[tuple[int, int], float],
        timestamps: Mapping[tuple[int, int], float] | None = None,
    ) -> PartialEDM:
        nodes = list(nodes)
        idx = {v: k for k, v in enumerate(nodes)}
        n = len(nodes)
        d = np.zeros((n, n))
        mask = np.eye(n, dtype=bool)
        for (a, b), r in ranges.items():
            if a in idx and b in idx:
                i, j = idx[a], idx[b]
                d[i, j] = d[j, i] = r
                mask[i, j] = mask[j, i] = True
        return cls(nodes, d, mask, dict(timestamps or {}))

    @classmethod
    def from_points(cls, nodes: Sequence[int], pts: np.ndarray) -> PartialEDM:
        pts = np.asarray(pts, dtype=float)
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        d = 0.5 * (d + d.T)
        return cls(list(nodes), d, np.ones(d.shape, dtype=bool))


def sequential_multilaterate(rigid: RigidGraph) -> tuple[dict[int, Point2], set[int]]:
    """Place every member in admission order.

    The founding triangle fixes the frame (first node at the origin, second
    on +x, third above the axis). Later members are fitted to all their
    ranges to already placed nodes. Nodes whose RMS range residual exceeds
    0.5 m are returned in the flagged set but still placed.
    """
    if not rigid.members:
        raise ValueError("empty rigid graph")
    a, b, c = rigid.anchor_triangle
    pos: dict[int, Point2] = {}
    pa, pb, pc = place_triangle(rigid.range(a, b), rigid.range(a, c), rigid.range(b, c))
    for n, p in zip((a, b, c), (pa, pb, pc)):
        if n in rigid:
            pos[n] = p
    flagged: set[int] = set()
    for n in rigid.members:
        if n in pos:
            continue
        placed = [m for m in pos if rigid.range(n, m) is not None]
        if len(placed) < 2:
            flagged.add(n)
            pos[n] = rigid.positions.get(n, Point2(0.0, 0.0))
            continue
        if len(placed) == 2:
            p, resid = _two_range_point(pos, placed, [rigid.range(n, m) for m in placed])
        else:
            p, resid = trilaterate([pos[m] for m in placed], [rigid.range(n, m) for m in placed])
        if resid > RESIDUAL_FLAG_M:
            flagged.add(n)
        pos[n] = p
    return pos, flagged


def _two_range_point(pos: dict[int, Point2], placed: list[int], ranges: list[float]) -> tuple[Point2, float]:
    # two circles give a mirror pair; keep the one clear of the other placed nodes
    (a, b), (ra, rb) = placed, ranges
    cands, ok = circle_intersections(pos[a], ra, pos[b], rb)
    others = [p for m, p in pos.items() if m not in (a, b)]
    best = max(cands, key=lambda p: (min((p.dist(q) for q in others), default=0.0), -p.y, -p.x))
    resid = math.sqrt(((best.dist(pos[a]) - ra) ** 2 + (best.dist(pos[b]) - rb) ** 2) / 2)
    return best, resid


def _stress(x: np.ndarray, ii: np.ndarray, jj: np.ndarray, dm: np.ndarray) -> float:
    cur = np.linalg.norm(x[ii] - x[jj], axis=1)
    return float(np.sum((cur - dm) ** 2))


def complete_edm(
    e: PartialEDM,
    init_coords: np.ndarray,
    max_iter: int = 200,
    delta_lambda: float = 0.1,
    tol: float = 1e-5,
) -> tuple[PartialEDM, np.ndarray]:
    """Fill unmeasured entries by relaxing coordinates against the measured ones.

    Each sweep visits measured pairs in order of decreasing |residual|*distance
    and moves both endpoints by lambda/2 of the signed correction along their
    difference vector. lambda decays as 1/(1 + c*delta_lambda) with the sweep
    count c. Stops after ``max_iter`` sweeps or when the relative stress
    improvement falls below ``tol``. Measured entries are returned untouched.
    Returns the completed EDM and the final coordinates.
    """
    x = np.array(init_coords, dtype=float).reshape(e.n, 2).copy()
    iu = np.triu_indices(e.n, 1)
    sel = e.mask[iu]
    ii, jj = iu[0][sel], iu[1][sel]
    dm = e.d[ii, jj]
    jitter = np.random.default_rng(0)

    prev = _stress(x, ii, jj, dm)
    for c in range(max_iter):
        lam = 1.0 / (1.0 + c * delta_lambda)
        diff = x[ii] - x[jj]
        cur = np.linalg.norm(diff, axis=1)
        order = np.argsort(-np.abs(cur - dm), kind="stable")
        xs = x.tolist()
        for k in order.tolist():
            i, j, target = int(ii[k]), int(jj[k]), float(dm[k])
            xi, xj = xs[i], xs[j]
            dx, dy = xi[0] - xj[0], xi[1] - xj[1]
            dist = math.hypot(dx, dy)
            if dist < 1e-9:
                xi[0] += 1e-6 * (jitter.random() - 0.5)
                xi[1] += 1e-6 * (jitter.random() - 0.5)
                dx, dy = xi[0] - xj[0], xi[1] - xj[1]
                dist = max(math.hypot(dx, dy), 1e-12)
            s = lam * (target - dist) / dist / 2.0
            xi[0] += s * dx
            xi[1] += s * dy
            xj[0] -= s * dx
            xj[1] -= s * dy
        x = np.array(xs)
        cur_stress = _stress(x, ii, jj, dm)
        if prev <= 1e-24 or (prev - cur_stress) / prev < tol:
            prev = cur_stress
            break
        prev = cur_stress

    full = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    full = 0.5 * (full + full.T)
    d = np.where(e.mask, e.d, full)
    return PartialEDM(list(e.nodes), d, np.ones_like(e.mask), dict(e.timestamps)), x


class DegenerateConfiguration(ValueError):
    pass


@dataclass
class RelativeEmbedding:
    coordinates: dict[int, Point2]
    component_id: int = 0
    strain: float = 0.0

    def array(self, nodes: Sequence[int] | None = None) -> np.ndarray:
        nodes = list(self.coordinates) if nodes is None else nodes
        return np.array([self.coordinates[n].as_tuple() for n in nodes])


def cmds_embed(full_edm: PartialEDM, component_id: int = 0) -> RelativeEmbedding:
    """Classical MDS into the plane, centred on the origin."""
    if not full_edm.mask.all():
        raise ValueError("cmds_embed needs a fully specified EDM")
    n = full_edm.n
    nodes = full_edm.nodes
    if n == 1:
        return RelativeEmbedding({nodes[0]: Point2(0.0, 0.0)}, component_id, 0.0)
    if n == 2:
        h = full_edm.d[0, 1] / 2.0
        return RelativeEmbedding({nodes[0]: Point2(-h, 0.0), nodes[1]: Point2(h, 0.0)}, component_id, 0.0)
    d2 = full_edm.d**2
    j = np.eye(n) - np.ones((n, n)) / n
    b = -0.5 * j @ d2 @ j
    b = 0.5 * (b + b.T)
    w, q = np.linalg.eigh(b)
    top = np.argsort(w)[::-1][:2]
    w, q = w[top], q[:, top]
    tol = 1e-9 * max(float(np.trace(b)), 1e-300)
    if np.sum(w > tol) < 2:
        raise DegenerateConfiguration("degenerate configuration")
    for k in range(2):
        if q[np.argmax(np.abs(q[:, k])), k] < 0:
            q[:, k] = -q[:, k]
    x = q * np.sqrt(w)
    x -= x.mean(axis=0)
    strain = float(np.linalg.norm(x @ x.T - b))
    coords = {nd: Point2(float(x[k, 0]), float(x[k, 1])) for k, nd in enumerate(nodes)}
    return RelativeEmbedding(coords, component_id, strain)


@dataclass
class NonRigidPlacement:
    node: int
    candidates: tuple[Point2, ...]
    chosen: Point2
    method: str
    low_confidence: bool = False

    def __post_init__(self):
        if self.chosen not in self.candidates:
            raise ValueError("chosen placement is not a candidate")


def circle_intersections(c1: Point2, r1: float, c2: Point2, r2: float) -> tuple[list[Point2], bool]:
    """Intersection points of two circles; (points, intersect).

    When the circles miss each other the single closest-approach midpoint is
    returned with ``intersect`` False.
    """
    d = c1.dist(c2)
    if d < 1e-12:
        return [c1 + Point2(r1, 0.0)], False
    ux, uy = (c2.x - c1.x) / d, (c2.y - c1.y) / d
    if d > r1 + r2 or d < abs(r1 - r2):
        if d > r1 + r2:
            t = (r1 + (d - r2)) / 2.0
        elif r1 > r2:
            t = (r1 + (d + r2)) / 2.0
        else:
            t = (-r1 + (d - r2)) / 2.0
        return [Point2(c1.x + t * ux, c1.y + t * uy)], False
    a = (r1**2 - r2**2 + d**2) / (2 * d)
    h = math.sqrt(max(0.0, r1**2 - a**2))
    mx, my = c1.x + a * ux, c1.y + a * uy
    p1 = Point2(mx - h * uy, my + h * ux)
    p2 = Point2(mx + h * uy, my - h * ux)
    return [p1, p2], True


def resolve_two_core(
    node: int,
    embedded: Mapping[int, Point2],
    two_ranges: Mapping[int, float],
    graph: ConnectivityGraph,
    previous: Point2 | None = None,
    proximity: float = 10.0,
) -> NonRigidPlacement:
    """Place a node from two ranges to embedded nodes.

    A candidate is ruled out when an embedded node it has no link to sits
    within ``proximity`` of it: that close, the two would have connected.
    Otherwise the candidate nearer the previous estimate wins, then the one
    with lower (y, x).
    """
    (a, ra), (b, rb) = sorted(two_ranges.items())[:2]
    cands, ok = circle_intersections(embedded[a], ra, embedded[b], rb)
    if not ok:
        return NonRigidPlacement(node, (cands[0],), cands[0], "two-range-disambiguation", True)

    strangers = [p for m, p in embedded.items() if m != node and m not in (a, b) and not graph.has_edge(node, m)]

    def conflicts(p):
        return [p.dist(q) for q in strangers if p.dist(q) < proximity]

    hits = [conflicts(p) for p in cands]
    alive = [p for p, h in zip(cands, hits) if not h]
    if len(alive) == 1:
        chosen = alive[0]
    elif previous is not None:
        chosen = min(cands, key=lambda p: (p.dist(previous), p.y, p.x))
    elif not alive:
        # both contradicted: keep the one whose nearest contradiction is farther
        chosen = max(zip(cands, hits), key=lambda ph: (-len(ph[1]), min(ph[1]), -ph[0].y))[0]
    else:
        chosen = min(cands, key=lambda p: (p.y, p.x))
    return NonRigidPlacement(node, tuple(cands), chosen, "two-range-disambiguation")


def resolve_one_core(
    node: int,
    anchor: Point2,
    range_m: float,
    heading: float | None,
    previous: Point2 | None = None,
) -> NonRigidPlacement | None:
    """Place a node from one range and a compass bearing of the edge.

    The edge is taken along the node's heading; which way round is decided
    by the previous estimate. Without a heading the node stays unlocalized.
    """
    if heading is None:
        return None
    fwd = anchor + Point2(math.sin(heading), math.cos(heading)).scale(range_m)
    back = anchor - Point2(math.sin(heading), math.cos(heading)).scale(range_m)
    chosen = fwd
    if previous is not None and back.dist(previous) < fwd.dist(previous):
        chosen = back
    return NonRigidPlacement(node, (fwd, back), chosen, "heading-projection")


def smooth_locations(history: Mapping[int, Sequence[Point2]], window_len: int = 3) -> dict[int, Point2]:
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    out = {}
    for n, pts in history.items():
        if not pts:
            continue
        w = list(pts)[-window_len:]
        out[n] = Point2(sum(p.x for p in w) / len(w), sum(p.y for p in w) / len(w))
    return out


def relative_embedding_for(
    rigid: RigidGraph,
    extra_ranges: Mapping[tuple[int, int], float] | None = None,
    component_id: int = 0,
) -> tuple[RelativeEmbedding, set[int]]:
    """Full relative pipeline for one rigid component."""
    ranges = dict(rigid.edges)
    for k, r in (extra_ranges or {}).items():
        if k[0] in rigid and k[1] in rigid:
            ranges[edge_key(*k)] = r
    work = rigid.copy()
    work.edges = ranges
    pos, flagged = sequential_multilaterate(work)
    nodes = list(rigid.members)
    init = np.array([pos[n].as_tuple() for n in nodes])
    edm = PartialEDM.from_ranges(nodes, ranges)
    full, _ = complete_edm(edm, init)
    try:
        emb = cmds_embed(full, component_id)
    except DegenerateConfiguration:
        log.debug("component %d degenerate, using multilateration", component_id)
        c = init.mean(axis=0)
        emb = RelativeEmbedding({n: Point2(*(pos[n].as_tuple() - c)) for n in nodes}, component_id, float("nan"))
    return emb, flagged
