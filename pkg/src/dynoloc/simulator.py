"""Epoch-driven simulation: ground-truth motion, ranging sessions on a slot
timeline, localization and error evaluation."""

from __future__ import annotations

import bisect
import itertools
import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import absloc
from .geometry import Point2, are_collinear, bearing, procrustes_align, unit_from_bearing, wrap_angle
from .metrics import STATIC_EPS, NodeTelemetry, decay_stale_links, link_quality_from_cir, reset_on_localize, update_mobility
from .ranging import RangeMeasurement, measure_range, simulate_link, synthesize_cir_features
from .relloc import RelativeEmbedding, relative_embedding_for, resolve_one_core, resolve_two_core, smooth_locations
from .scenario import NodeSpec, Scenario
from .scheduler import (
    RangingBudget,
    RangingSchedule,
    baseline_h_agnos,
    baseline_h_dyn,
    baseline_random,
    form_concurrency_rounds,
    select_edges_epoch,
)
from .topology import (
    ConnectivityGraph,
    NoRigidSeed,
    RigidGraph,
    bootstrap_rigid_graph,
    edge_key,
    k_core_decompose,
    purge_non_rigid,
    trilaterate,
)

log = logging.getLogger(__name__)

IMU_DT = 0.01
MAX_MEASUREMENT_AGE_EPOCHS = 3
STALE_DISPLACEMENT_M = 0.5
# support triangles flatter than this are too ill-conditioned for noisy ranges
SUPPORT_COLLINEAR_TOL = 0.15
MOTION_GAIN = 0.25
DISAGREE_PATIENCE = 3


class Trajectory:
    """Constant-speed motion around the closed loop position -> path[0] -> ... -> position."""

    def __init__(self, spec: NodeSpec):
        self.spec = spec
        pts = [spec.position, *spec.path]
        self.pts = pts
        self.seg_len = [pts[i].dist(pts[(i + 1) % len(pts)]) for i in range(len(pts))]
        self.cum = list(itertools.accumulate(self.seg_len, initial=0.0))
        self.loop = self.cum[-1]
        self.speed = spec.speed if self.loop > 1e-9 else 0.0

    def at(self, t: float) -> tuple[Point2, float | None, float]:
        """(position, direction of motion or None when static, speed)."""
        if self.speed <= 0:
            return self.spec.position, None, 0.0
        s = (self.speed * t) % self.loop
        i = min(bisect.bisect_right(self.cum, s) - 1, len(self.seg_len) - 1)
        while self.seg_len[i] <= 1e-12:
            i = (i + 1) % len(self.seg_len)
            s = self.cum[i]
        a, b = self.pts[i], self.pts[(i + 1) % len(self.pts)]
        f = (s - self.cum[i]) / self.seg_len[i]
        return Point2(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)), bearing(a, b), self.speed


def step_mobility(
    scenario: Scenario, t: float, dt: float, rng: np.random.Generator | None = None
) -> dict[int, tuple[Point2, float, float]]:
    """Truth at t + dt: node -> (position, heading, acceleration along track).

    Heading is the direction of motion plus compass noise; static nodes keep
    their configured heading (0 when none is set).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    sigma = math.radians(scenario.heading_noise_sigma)
    out = {}
    for spec in scenario.nodes:
        traj = Trajectory(spec)
        p, h, v = traj.at(t + dt)
        _, _, v0 = traj.at(t) if t > 0 else (None, None, 0.0)
        base = h if h is not None else (spec.heading or 0.0)
        noise = rng.normal(0.0, sigma) if (rng is not None and sigma > 0) else 0.0
        out[spec.id] = (p, (base + noise) % (2 * math.pi), (v - v0) / dt)
    return out


@dataclass
class EpochRecord:
    epoch: int
    time: float
    truth: dict[int, Point2]
    estimates: dict[int, Point2]
    errors: dict[int, float]
    localized: dict[int, bool]
    slots_used: int
    total_slots: int
    component_sizes: list[int]
    component_of: dict[int, int]
    core_number: dict[int, int]
    schedule: list[tuple[int, tuple[int, ...], str]]
    ranges_measured: int
    sessions_dropped: int
    reference: int | None = None
    relative_rmse: float | None = None
    absolute_rmse: float | None = None
    placement: dict[int, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def pt(p):
            return [p.x, p.y]

        return {
            "epoch": self.epoch,
            "time": self.time,
            "truth": {str(n): pt(p) for n, p in sorted(self.truth.items())},
            "estimates": {str(n): pt(p) for n, p in sorted(self.estimates.items())},
            "errors": {str(n): e for n, e in sorted(self.errors.items())},
            "localized": {str(n): v for n, v in sorted(self.localized.items())},
            "slots_used": self.slots_used,
            "total_slots": self.total_slots,
            "component_sizes": self.component_sizes,
            "component_of": {str(n): c for n, c in sorted(self.component_of.items())},
            "core_number": {str(n): c for n, c in sorted(self.core_number.items())},
            "schedule": [[i, list(r), p] for i, r, p in self.schedule],
            "ranges_measured": self.ranges_measured,
            "sessions_dropped": self.sessions_dropped,
            "reference": self.reference,
            "relative_rmse": self.relative_rmse,
            "absolute_rmse": self.absolute_rmse,
            "placement": {str(n): m for n, m in sorted(self.placement.items())},
        }


@dataclass
class _Track:
    history: deque = field(default_factory=lambda: deque(maxlen=8))
    estimate: Point2 | None = None
    time: float = -math.inf


class World:
    """All mutable simulation state; :meth:`run_epoch` advances one refresh interval."""

    def __init__(self, scenario: Scenario):
        s = self.s = scenario
        streams = np.random.SeedSequence(s.seed).spawn(4)
        self.rng_range, self.rng_cir, self.rng_heading, self.rng_sched = (np.random.default_rng(x) for x in streams)
        self.T = 1.0 / s.refresh_rate
        self.budget = RangingBudget(
            self.T, s.slot_time_ms, overhead_slots=math.ceil(s.wifi_overhead_ms / s.slot_time_ms - 1e-9)
        )
        # mobility-blind strategies keep every range inside the fixed window
        self.mobility_aware = s.use_mobility and s.strategy in ("dynoloc", "h-dyn")
        # only dynoloc exploits motionless pairs (long-lived, min-filtered ranges)
        self.rest_aware = s.use_mobility and s.strategy == "dynoloc"
        self.use_lq = s.use_lq and s.strategy == "dynoloc"
        self.interference_range = s.interference_range or s.radio.los_max_range
        self.ids = sorted(n.id for n in s.nodes)
        self.traj = {n.id: Trajectory(n) for n in s.nodes}
        ref = s.reference
        self.ref = ref.id if ref else None
        self.ref_pos = ref.position if ref else None
        self.static_heading = {}
        for n in s.nodes:
            if n.heading is not None:
                self.static_heading[n.id] = n.heading
            elif ref is not None and n.id != ref.id and n.position != ref.position:
                self.static_heading[n.id] = bearing(ref.position, n.position)
            else:
                self.static_heading[n.id] = 0.0
        self.graph = ConnectivityGraph(self.ids)
        self.telemetry = {n: NodeTelemetry() for n in self.ids}
        self.measurements: dict[tuple[int, int], RangeMeasurement] = {}
        self.tracks = {n: _Track() for n in self.ids}
        self.last_moved = {n: (0.0 if self.traj[n].at(0.0)[2] > STATIC_EPS else -math.inf) for n in self.ids}
        self.rigid: list[RigidGraph] = []
        self.prev_embedding: tuple[float, RelativeEmbedding] | None = None
        self.cursor = None
        self._disagree = 0
        self._fixes = 0
        self.epoch = 0
        self._bootstrap()

    # truth -----------------------------------------------------------------
    def truth(self, t: float) -> dict[int, Point2]:
        return {n: self.traj[n].at(t)[0] for n in self.ids}

    def speed(self, n: int, t: float) -> float:
        return self.traj[n].at(t)[2]

    def sample_headings(self, t: float) -> dict[int, float]:
        sigma = math.radians(self.s.heading_noise_sigma)
        out = {}
        for n in self.ids:
            _, h, _ = self.traj[n].at(t)
            base = h if h is not None else self.static_heading[n]
            noise = self.rng_heading.normal(0.0, sigma) if sigma > 0 else 0.0
            out[n] = (base + noise) % (2 * math.pi)
        return out

    # radio -----------------------------------------------------------------
    def refresh_links(self, t: float) -> None:
        pos = self.truth(t)
        for a, b in itertools.combinations(self.ids, 2):
            conn, los, walls = simulate_link(pos, self.s.walls, (a, b), self.s.radio)
            if conn:
                cir = synthesize_cir_features(los, walls, self.rng_cir)
                self.graph.set_link(a, b, link_quality_from_cir(cir).value, t)
        self.graph = decay_stale_links(self.graph, t, self.s.link_timeout)

    def _range(self, a: int, b: int, t: float, pos: dict[int, Point2]) -> RangeMeasurement | None:
        conn, los, walls = simulate_link(pos, self.s.walls, (a, b), self.s.radio)
        if not conn:
            return None
        d = max(pos[a].dist(pos[b]), 1e-3)
        r = d if self.s.ideal_ranging else measure_range(d, los, walls, self.s.radio, self.rng_range)
        lq = link_quality_from_cir(synthesize_cir_features(los, walls, self.rng_cir), t)
        return RangeMeasurement(edge_key(a, b), r, t, lq, d)

    def _bootstrap(self) -> None:
        """Discovery at t = 0: every live link is ranged once, outside the budget."""
        self.refresh_links(0.0)
        pos = self.truth(0.0)
        for a, b in self.graph.edges():
            m = self._range(a, b, 0.0, pos)
            if m is not None:
                self.measurements[m.pair] = m

    # scheduling ------------------------------------------------------------
    def _schedule(self, decomp) -> RangingSchedule:
        s, b = self.s, self.budget
        if b.total_slots < b.session_cost(1):
            return RangingSchedule()
        if s.strategy == "dynoloc":
            members = self.persistent_rigid_members(self.epoch * self.T + self.T)
            last = {k: m.timestamp for k, m in self.measurements.items()}
            positions = {n: tr.estimate for n, tr in self.tracks.items() if tr.estimate is not None}
            return select_edges_epoch(
                self.graph, decomp, members, self.telemetry, b, positions, last,
                use_lq=s.use_lq, use_mobility=s.use_mobility, epoch=self.epoch,
                collinear_tol=SUPPORT_COLLINEAR_TOL,
                at_rest={n for n in self.ids if self.last_moved[n] < self.epoch * self.T},
            )
        if s.strategy == "h-agnos":
            sched, self.cursor = baseline_h_agnos(self.graph, b, self.cursor)
            return sched
        if s.strategy == "h-dyn":
            return baseline_h_dyn(self.graph, self.telemetry, b, epoch=self.epoch)
        return baseline_random(self.graph, b, self.rng_sched)

    def persistent_rigid_members(self, t: float) -> set[int]:
        """Members of the last rigid graphs whose ranges will still be usable at ``t``.

        Edges of moving nodes go stale within the epoch, so those members
        fall out (and anything resting on them cascades) and must be
        re-admitted with fresh ranges.
        """
        usable = self.usable_measurements(t)
        members: set[int] = set()
        for rg in self.rigid:
            pg = ConnectivityGraph(self.ids)
            for k in rg.edges:
                if k in usable and self.graph.has_edge(*k):
                    pg.set_link(*k, self.graph.lq(*k))
            members |= purge_non_rigid(rg, pg, k_core_decompose(pg), SUPPORT_COLLINEAR_TOL).member_set()
        return members

    # main loop -------------------------------------------------------------
    def run_epoch(self) -> EpochRecord:
        k, T = self.epoch, self.T
        t0, t1 = k * T, (k + 1) * T
        if k > 0:
            self.refresh_links(t0)
        decomp = k_core_decompose(self.graph)
        schedule = self._schedule(decomp)
        positions = {n: tr.estimate for n, tr in self.tracks.items() if tr.estimate is not None}
        schedule = form_concurrency_rounds(schedule, self.graph, self.interference_range, positions, self.budget)

        self._integrate_imu(t0, t1)
        slot_s = self.s.slot_time_ms / 1000.0
        used, fresh, n_ranges, dropped = 0, set(), 0, 0
        for rnd in schedule.rounds:
            costs = {i: self.budget.session_cost(len(schedule.sessions[i].responders)) for i in rnd}
            for i in rnd:
                sess = schedule.sessions[i]
                tm = t0 + (used + costs[i] / 2.0) * slot_s
                pos = self.truth(tm)
                got = [self._range(sess.initiator, r, tm, pos) for r in sess.responders]
                if any(m is None for m in got):
                    # a silent responder aborts the session; that link is now known dead
                    for r, m in zip(sess.responders, got):
                        if m is None:
                            self.graph.set_link(sess.initiator, r, 0.0, tm)
                    dropped += 1
                    continue
                for m in got:
                    self._store(m)
                    self.graph.set_link(*m.pair, m.lq_at_measure.value, tm)
                    fresh.update(m.pair)
                    n_ranges += 1
            used += max(costs.values())

        headings = self.sample_headings(t1)
        for n in self.ids:
            tel = self.telemetry[n]
            self.telemetry[n] = NodeTelemetry(tel.mobility, tel.velocity, headings[n], tel.tsl, tel.last_imu_read)

        self.methods = {}
        if n_ranges:
            placed, comp_of, sizes = self._localize(t1, headings)
        else:
            placed, comp_of, sizes = {}, {}, []
        for n in placed:
            self.telemetry[n] = reset_on_localize(self.telemetry[n])

        rec = self._record(k, t1, placed, comp_of, sizes, decomp, schedule, used, n_ranges, dropped)
        self.epoch += 1
        return rec

    def _integrate_imu(self, t0: float, t1: float) -> None:
        steps = max(1, int(round((t1 - t0) / IMU_DT)))
        dt = (t1 - t0) / steps
        for n in self.ids:
            tel = self.telemetry[n]
            traj = self.traj[n]
            for j in range(1, steps + 1):
                v = traj.speed if traj.speed > 0 else 0.0
                tel = update_mobility(tel, (v - tel.velocity) / dt, dt)
                if abs(tel.velocity) > STATIC_EPS:
                    self.last_moved[n] = t0 + j * dt
            self.telemetry[n] = tel

    def _at_rest_since(self, m: RangeMeasurement) -> bool:
        return all(self.last_moved[n] < m.timestamp for n in m.pair)

    def _store(self, m: RangeMeasurement) -> None:
        """Keep the newest range, or for a pair that has not moved since, the smallest.

        Ranging error is a non-negative bias, so the minimum over repeats
        of a motionless pair is the best estimate of the true distance.
        """
        old = self.measurements.get(m.pair)
        if self.rest_aware and old is not None and self._at_rest_since(old) and old.range < m.range:
            m = RangeMeasurement(m.pair, old.range, m.timestamp, m.lq_at_measure, m.truth_range)
        self.measurements[m.pair] = m

    # localization ----------------------------------------------------------
    def usable_measurements(self, t: float) -> dict[tuple[int, int], RangeMeasurement]:
        """Ranges recent enough that neither endpoint has moved much since."""
        out = {}
        for key, m in self.measurements.items():
            vsum = self.speed(key[0], t) + self.speed(key[1], t)
            # without a notion of mobility only this epoch's ranges can be trusted
            epochs = MAX_MEASUREMENT_AGE_EPOCHS if self.mobility_aware else 1.0
            if self.rest_aware and self._at_rest_since(m):
                epochs = self.s.link_timeout / self.T
            elif vsum > 0 and self.mobility_aware:
                epochs = min(MAX_MEASUREMENT_AGE_EPOCHS, max(1.0, STALE_DISPLACEMENT_M / (vsum * self.T)))
            if t - m.timestamp <= epochs * self.T + 1e-9:
                out[key] = m
        return out

    def _implied(self, t: float, nodes, headings, usable) -> dict[int, Point2]:
        """Where heading and dead reckoning say each node is now."""
        implied = {self.ref: self.ref_pos}
        self._fixes = 0
        for n in nodes:
            if n == self.ref:
                continue
            tr = self.tracks[n]
            v = self.speed(n, t)
            moving = v > absloc.MIN_HEADING_SPEED
            if not moving and edge_key(n, self.ref) in usable:
                self._fixes += 1
                # a fresh absolute fix beats our own previous estimate
                implied[n] = self.ref_pos + unit_from_bearing(headings[n]).scale(usable[edge_key(n, self.ref)].range)
            elif tr.estimate is not None and t - tr.time <= MAX_MEASUREMENT_AGE_EPOCHS * self.T + 1e-9:
                p = tr.estimate
                if moving and self.mobility_aware:
                    p = p + unit_from_bearing(headings[n]).scale(v * (t - tr.time))
                implied[n] = p
        return implied

    def _motion_rotation(self, t, emb: RelativeEmbedding, headings) -> tuple[float, bool] | None:
        if self.prev_embedding is None:
            return None
        t_prev, prev = self.prev_embedding
        if t - t_prev > (MAX_MEASUREMENT_AGE_EPOCHS - 0.5) * self.T:
            return None
        moving = {n: headings[n] for n in emb.coordinates if self.speed(n, t) > absloc.MIN_HEADING_SPEED}
        try:
            return absloc.rotation_from_motion(prev, emb, moving)
        except absloc.RotationUnresolvable:
            return None

    def _orient(self, t, emb: RelativeEmbedding, headings, usable) -> tuple[float, bool] | None:
        """Rotation and mirror state for this epoch's embedding.

        Static nodes with a range to the reference give absolute fixes.
        Without enough of them the fit leans on tracked estimates, which
        carry any past orientation error forward, so it is nudged toward
        the orientation implied by how nodes moved since the last epoch.
        """
        implied = self._implied(t, emb.coordinates, headings, usable)
        motion = self._motion_rotation(t, emb, headings)
        if len(implied) < 3:
            return motion
        flip, _ = absloc.flip_correction(emb, implied)
        theta = absloc.rotation_from_headings(emb, implied, flipped=flip)
        if motion is None or self._fixes >= 2:
            self._disagree = 0
            return theta, flip
        m_theta, m_flip = motion
        if m_flip != flip or abs(wrap_angle(m_theta - theta)) > math.pi / 3:
            # a gross disagreement that persists means the track itself is wrong
            self._disagree += 1
            if self._disagree >= DISAGREE_PATIENCE:
                self._disagree = 0
                # the old track is in the wrong frame; do not smooth across the switch
                for tr in self.tracks.values():
                    tr.history.clear()
                return motion
            return theta, flip
        self._disagree = 0
        return theta + MOTION_GAIN * wrap_angle(m_theta - theta), flip

    def _localize(self, t: float, headings: dict[int, float]):
        usable = self.usable_measurements(t)
        mg = ConnectivityGraph(self.ids)
        for (a, b), m in usable.items():
            mg.set_link(a, b, m.lq_at_measure.value, m.timestamp)
        md = k_core_decompose(mg)

        def oracle(a, b):
            m = usable.get(edge_key(a, b))
            return m.range if m is not None else None

        comps = []
        for cid, comp in enumerate(md.three_core_components):
            try:
                rg = bootstrap_rigid_graph(
                    mg, md, oracle, component=comp, use_lq=self.use_lq, tol=SUPPORT_COLLINEAR_TOL
                )
            except NoRigidSeed:
                continue
            rg.component_id = cid
            for k, m in usable.items():
                if k[0] in rg and k[1] in rg:
                    rg.edges[k] = m.range
            comps.append(rg)
        self.rigid = comps
        comp_of = {n: rg.component_id for rg in comps for n in rg.members}
        sizes = [len(rg.members) for rg in comps]

        placed: dict[int, Point2] = {}
        home = next((rg for rg in comps if self.ref in rg), None)
        if home is None:
            return placed, comp_of, sizes
        emb, _ = relative_embedding_for(home, component_id=home.component_id)
        orient = self._orient(t, emb, headings, usable)
        self.prev_embedding = (t, emb)
        if orient is None:
            return placed, comp_of, sizes
        theta, flip = orient
        placed, _ = absloc.to_absolute(emb, self.ref, self.ref_pos, theta, flip)
        self.methods = {n: "rigid" for n in placed}

        self._attach_non_rigid(t, placed, usable, headings)
        self._smooth(t, placed, headings)
        return placed, comp_of, sizes

    def _previous(self, n: int, t: float, headings) -> Point2 | None:
        tr = self.tracks[n]
        if tr.estimate is None:
            return None
        v = self.speed(n, t)
        if v > absloc.MIN_HEADING_SPEED and self.mobility_aware:
            return tr.estimate + unit_from_bearing(headings[n]).scale(v * (t - tr.time))
        return tr.estimate

    def _attach_non_rigid(self, t, placed, usable, headings) -> None:
        """Place 2-core and 1-core nodes against already placed ones, most ranges first."""
        while True:
            best = None
            for n in self.ids:
                if n in placed:
                    continue
                rs = {m: usable[edge_key(n, m)].range for m in placed if edge_key(n, m) in usable}
                if rs and (best is None or len(rs) > len(best[1])):
                    best = (n, rs)
            if best is None:
                return
            n, rs = best
            prev = self._previous(n, t, headings)
            if len(rs) >= 3 and not self._well_spread(rs, placed):
                # anchors nearly on a line: keep the widest pair, disambiguate as a 2-range node
                pair = max(itertools.combinations(sorted(rs), 2), key=lambda ab: placed[ab[0]].dist(placed[ab[1]]))
                rs = {m: rs[m] for m in pair}
            if len(rs) >= 3:
                anchors = sorted(rs)
                p, _ = trilaterate([placed[m] for m in anchors], [rs[m] for m in anchors])
                self.methods[n] = "multilateration"
            elif len(rs) == 2:
                p = resolve_two_core(n, placed, rs, self.graph, prev).chosen
                self.methods[n] = "two-range"
            else:
                (m, r), = rs.items()
                h = headings[n] if self.speed(n, t) > absloc.MIN_HEADING_SPEED else None
                res = resolve_one_core(n, placed[m], r, h, prev)
                if res is None:
                    # cannot be placed this epoch; stop offering it
                    usable = {k: v for k, v in usable.items() if n not in k}
                    continue
                p = res.chosen
                self.methods[n] = "heading"
            placed[n] = p

    @staticmethod
    def _well_spread(rs, placed) -> bool:
        return any(
            not are_collinear(placed[a], placed[b], placed[c], SUPPORT_COLLINEAR_TOL)
            for a, b, c in itertools.combinations(sorted(rs), 3)
        )

    def _smooth(self, t, placed, headings) -> None:
        window = self.s.smoothing_window
        for n, p in list(placed.items()):
            tr = self.tracks[n]
            if n == self.ref:
                out = p
            else:
                tr.history.append((t, p))
                v = self.speed(n, t)
                shift = unit_from_bearing(headings[n]) if v > absloc.MIN_HEADING_SPEED and self.mobility_aware else None
                recent = [
                    (tk, pk) for tk, pk in tr.history if t - tk <= (window - 0.5) * self.T
                ]
                comp = [pk + shift.scale(v * (t - tk)) if shift else pk for tk, pk in recent]
                out = smooth_locations({n: comp}, window)[n]
            placed[n] = out
            tr.estimate, tr.time = out, t

    def _record(self, k, t, placed, comp_of, sizes, decomp, schedule, used, n_ranges, dropped) -> EpochRecord:
        truth = self.truth(t)
        est = {n: tr.estimate for n, tr in self.tracks.items() if tr.estimate is not None}
        errors = {n: est[n].dist(truth[n]) for n in est}
        localized = {n: n in placed for n in self.ids}
        rel = ab = None
        loc = sorted(placed)
        if len(loc) >= 3:
            try:
                _, rel = procrustes_align([placed[n] for n in loc], [truth[n] for n in loc])
                ab = math.sqrt(sum(placed[n].dist(truth[n]) ** 2 for n in loc) / len(loc))
            except ValueError:
                pass
        return EpochRecord(
            epoch=k, time=t, truth=truth, estimates=est, errors=errors, localized=localized,
            slots_used=used, total_slots=self.budget.total_slots, component_sizes=sizes,
            component_of={n: comp_of.get(n, -1) for n in self.ids},
            core_number=dict(decomp.core_number),
            schedule=[(s.initiator, s.responders, s.purpose) for s in schedule.sessions],
            ranges_measured=n_ranges, sessions_dropped=dropped, reference=self.ref,
            relative_rmse=rel, absolute_rmse=ab, placement=dict(self.methods),
        )


def run_epoch(world: World) -> EpochRecord:
    return world.run_epoch()


def run_simulation(scenario: Scenario) -> list[EpochRecord]:
    world = World(scenario)
    return [world.run_epoch() for _ in range(scenario.epochs)]


def _percentile(xs, q):
    return float(np.percentile(xs, q)) if len(xs) else None


def evaluate_run(records: list[EpochRecord], strategy: str | None = None) -> dict:
    """Error statistics over localized node-epochs (reference node excluded)."""
    if not records:
        raise ValueError("no records to evaluate")
    errs, tracking, series = [], [], []
    slots = 0
    for r in records:
        ep = [r.errors[n] for n, ok in r.localized.items() if ok and n != r.reference and n in r.errors]
        tr = [e for n, e in r.errors.items() if n != r.reference]
        errs += ep
        tracking += tr
        others = [n for n in r.localized if n != r.reference]
        series.append({
            "epoch": r.epoch,
            "median_error": _percentile(ep, 50),
            "pct_localized": 100.0 * sum(r.localized[n] for n in others) / max(1, len(others)),
            "relative_rmse": r.relative_rmse,
            "absolute_rmse": r.absolute_rmse,
            "slots_used": r.slots_used,
        })
        slots += r.slots_used
    n_possible = sum(len([n for n in r.localized if n != r.reference]) for r in records)
    srt = np.sort(errs)
    cdf = []
    if len(srt):
        for q in np.linspace(0, 100, 21):
            cdf.append([float(np.percentile(srt, q)), float(q / 100)])
    return {
        "strategy": strategy,
        "epochs": len(records),
        "median_error": _percentile(errs, 50),
        "mean_error": float(np.mean(errs)) if errs else None,
        "p90_error": _percentile(errs, 90),
        "tracking_median_error": _percentile(tracking, 50),
        "pct_localized": 100.0 * len(errs) / max(1, n_possible),
        "samples": len(errs),
        "mean_slots_used": slots / len(records),
        "series": series,
        "cdf": cdf,
    }
