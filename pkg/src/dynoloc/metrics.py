"""Per-node mobility metric M and per-link quality L."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .topology import ConnectivityGraph

STATIC_EPS = 1e-3
LQ_EPS = 0.005


@dataclass(frozen=True)
class NodeTelemetry:
    mobility: float = 0.0
    velocity: float = 0.0
    heading: float = 0.0
    tsl: float = 0.0
    last_imu_read: float = 0.0

    def __post_init__(self):
        if self.mobility < 0 or self.tsl < 0:
            raise ValueError("mobility and time-since-localization must be non-negative")
        object.__setattr__(self, "heading", self.heading % (2 * math.pi))


def update_mobility(t: NodeTelemetry, accel: float, dt: float) -> NodeTelemetry:
    """Integrate one IMU step.

    Moving node: v += a*dt, then M += |v|*dt. Static node (|v| and |a| below
    1e-3): M follows exp(TsL) - 1, never decreasing.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = t.velocity + accel * dt
    tsl = t.tsl + dt
    if abs(v) < STATIC_EPS and abs(accel) < STATIC_EPS:
        m = max(t.mobility, math.expm1(tsl))
    else:
        m = t.mobility + abs(v) * dt
    return replace(t, mobility=m, velocity=v, tsl=tsl, last_imu_read=t.last_imu_read + dt)


def reset_on_localize(t: NodeTelemetry) -> NodeTelemetry:
    return replace(t, mobility=0.0, velocity=0.0, tsl=0.0)


@dataclass(frozen=True)
class CirFeatures:
    f1: float
    f2: float
    f3: float
    f4: float

    def __post_init__(self):
        for name in ("f1", "f2", "f3", "f4"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")

    def product(self) -> float:
        return self.f1 * self.f2 * self.f3 * self.f4


@dataclass(frozen=True)
class LinkQuality:
    value: float
    last_update: float = 0.0


def link_quality_from_cir(c: CirFeatures, now: float = 0.0) -> LinkQuality:
    return LinkQuality(1.0 / (LQ_EPS + c.product()), now)


def decay_stale_links(g: ConnectivityGraph, now: float, threshold: float = 30.0) -> ConnectivityGraph:
    """Copy of ``g`` with every link older than ``threshold`` seconds set to LQ 0."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    out = g.copy()
    for (i, j), lq, t in g.records():
        if lq > 0 and now - t > threshold:
            out.set_link(i, j, 0.0, t)
    return out
