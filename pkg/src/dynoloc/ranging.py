"""DS-TWR algebra, aggregated-session slot accounting and the simulated UWB channel."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .geometry import Point2, segments_intersect
from .metrics import CirFeatures, LinkQuality

C_M_PER_US = 299.792458  # speed of light, meters per microsecond


class NonPhysicalExchange(ValueError):
    pass


@dataclass(frozen=True)
class TwrTimestamps:
    """Round (D) and reply (R) intervals in microseconds.

    D1/R2 are timed by the initiator's clock, R1/D2 by the responder's.
    """

    D1: float
    R1: float
    D2: float
    R2: float


def tof_from_timestamps(t: TwrTimestamps) -> float:
    if min(t.D1, t.R1, t.D2, t.R2) <= 0:
        raise NonPhysicalExchange("non-physical exchange: non-positive interval")
    num = t.D1 * t.D2 - t.R1 * t.R2
    tof = 0.5 * (num / (2 * (t.D1 + t.R1)) + num / (2 * (t.D2 + t.R2)))
    if tof <= 0:
        raise NonPhysicalExchange("non-physical exchange")
    return tof


def simulate_twr(
    tof_us: float, reply_us: float, drift_init_ppm: float = 0.0, drift_resp_ppm: float = 0.0
) -> TwrTimestamps:
    """Intervals of an exchange with true TOF and equal reply delays on each side.

    Each side reports its intervals scaled by its own clock error.
    """
    ki, kr = 1 + drift_init_ppm * 1e-6, 1 + drift_resp_ppm * 1e-6
    d1 = 2 * tof_us + reply_us
    d2 = 2 * tof_us + reply_us
    return TwrTimestamps(D1=d1 * ki, R1=reply_us * kr, D2=d2 * kr, R2=reply_us * ki)


def slots_for_aggregated_session(n: int) -> int:
    if n < 1:
        raise ValueError("an aggregated session needs at least one responder")
    return 2 * n + 2


def session_messages(initiator: int, responders: Sequence[int]) -> list[tuple[str, int, int | None]]:
    """Message sequence of one aggregated session, one entry per slot.

    (kind, sender, receiver); broadcast frames carry receiver None.
    """
    if not responders:
        raise ValueError("an aggregated session needs at least one responder")
    msgs: list[tuple[str, int, int | None]] = [("init", initiator, None)]
    msgs += [("poll", r, initiator) for r in responders]
    msgs.append(("response", initiator, None))
    msgs += [("final", r, initiator) for r in responders]
    return msgs


@dataclass(frozen=True)
class ChannelParams:
    los_max_range: float = 70.0
    nlos_base_range: float = 30.0
    per_wall_range_penalty: float = 2.0
    nlos_floor_range: float = 10.0
    los_sigma: float = 0.08
    los_bias: float = 0.05
    nlos_bias_mean_per_wall: float = 0.5
    nlos_bias_base: float = 0.25
    bias_cap: float = 10.0
    slot_time_low_rate: float = 8.0
    slot_time_high_rate: float = 2.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"radio.{k} must be positive, got {v}")
        if self.bias_cap < self.nlos_bias_base:
            raise ValueError("radio.bias_cap must be >= radio.nlos_bias_base")


@dataclass(frozen=True)
class RangeMeasurement:
    pair: tuple[int, int]
    range: float
    timestamp: float
    lq_at_measure: LinkQuality
    truth_range: float

    def __post_init__(self):
        if self.range <= 0:
            raise ValueError("range must be positive")
        a, b = self.pair
        object.__setattr__(self, "pair", (a, b) if a < b else (b, a))


Wall = tuple[Point2, Point2]


def count_walls(a: Point2, b: Point2, walls: Sequence[Wall]) -> int:
    return sum(1 for w in walls if segments_intersect(a, b, w[0], w[1]))


def connect_range(wall_count: int, params: ChannelParams) -> float:
    if wall_count == 0:
        return params.los_max_range
    return max(params.nlos_floor_range, params.nlos_base_range - params.per_wall_range_penalty * wall_count)


def simulate_link(
    true_positions: Mapping[int, Point2],
    walls: Sequence[Wall],
    pair: tuple[int, int],
    params: ChannelParams,
    rng: np.random.Generator | None = None,
) -> tuple[bool, bool, int]:
    """(connected, is_los, wall_count). Geometry only, so ``rng`` is not consumed."""
    a, b = true_positions[pair[0]], true_positions[pair[1]]
    walls_hit = count_walls(a, b, walls)
    return a.dist(b) <= connect_range(walls_hit, params), walls_hit == 0, walls_hit


def measure_range(
    true_distance: float, is_los: bool, wall_count: int, params: ChannelParams, rng: np.random.Generator
) -> float:
    if true_distance <= 0:
        raise ValueError("true distance must be positive")
    if is_los:
        return true_distance + max(0.0, rng.normal(params.los_bias, params.los_sigma))
    mean = params.nlos_bias_base + params.nlos_bias_mean_per_wall * wall_count
    return true_distance + min(params.bias_cap, rng.exponential(mean))


def synthesize_cir_features(is_los: bool, wall_count: int, rng: np.random.Generator) -> CirFeatures:
    f1 = rng.uniform(0.0, 0.4)
    f2 = rng.uniform(0.05, 0.2)
    f3 = rng.uniform(1.0, 1.3)
    f4 = rng.uniform(1.0, 1.5)
    if is_los or wall_count == 0:
        return CirFeatures(f1, f2, f3, f4)
    scale = 1.0 + 0.3 * wall_count
    jit = rng.uniform(0.8, 1.2, size=4)
    return CirFeatures(*(float(f * scale * j) for f, j in zip((f1, f2, f3, f4), jit)))
