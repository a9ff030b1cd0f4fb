"""Planar points, rigid transforms and point-set alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True, slots=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def __add__(self, other: Point2) -> Point2:
        return Point2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: Point2) -> Point2:
        return Point2(self.x - other.x, self.y - other.y)

    def scale(self, k: float) -> Point2:
        return Point2(self.x * k, self.y * k)

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def dist(self, other: Point2) -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


ORIGIN = Point2(0.0, 0.0)


@dataclass(frozen=True, slots=True)
class RigidTransform:
    """Reflect across the x-axis (if ``flipped``), rotate CCW, then translate."""

    rotation_angle: float = 0.0
    translation: Point2 = ORIGIN
    flipped: bool = False

    def inverse(self) -> RigidTransform:
        c, s = math.cos(self.rotation_angle), math.sin(self.rotation_angle)
        tx, ty = self.translation.x, self.translation.y
        if self.flipped:
            # F R(-a) = R(a) F, so the inverse keeps the angle
            fx, fy = tx, -ty
            return RigidTransform(
                self.rotation_angle, Point2(-(c * fx - s * fy), -(s * fx + c * fy)), True
            )
        return RigidTransform(
            -self.rotation_angle, Point2(-(c * tx + s * ty), -(-s * tx + c * ty)), False
        )

    def compose(self, inner: RigidTransform) -> RigidTransform:
        """Transform equivalent to applying ``inner`` first, then ``self``."""
        angle = self.rotation_angle + (-inner.rotation_angle if self.flipped else inner.rotation_angle)
        return RigidTransform(
            angle, apply_transform(self, inner.translation), self.flipped != inner.flipped
        )

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.rotation_angle), math.sin(self.rotation_angle)
        m = np.array([[c, -s], [s, c]])
        if self.flipped:
            m = m @ np.diag([1.0, -1.0])
        return m


def apply_transform(t: RigidTransform, p: Point2) -> Point2:
    y = -p.y if t.flipped else p.y
    c, s = math.cos(t.rotation_angle), math.sin(t.rotation_angle)
    return Point2(c * p.x - s * y + t.translation.x, s * p.x + c * y + t.translation.y)


def are_collinear(a: Point2, b: Point2, c: Point2, tol: float = 1e-3) -> bool:
    """Scale-free collinearity: twice the triangle area over the squared longest side."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    area2 = abs((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x))
    longest = max(
        (a.x - b.x) ** 2 + (a.y - b.y) ** 2,
        (b.x - c.x) ** 2 + (b.y - c.y) ** 2,
        (a.x - c.x) ** 2 + (a.y - c.y) ** 2,
    )
    if longest == 0.0:
        return True
    return area2 / longest < tol


def _as_array(points: Sequence[Point2]) -> np.ndarray:
    return np.array([(p.x, p.y) for p in points], dtype=float).reshape(-1, 2)


def _best_rotation(src: np.ndarray, dst: np.ndarray) -> tuple[float, float]:
    # closed form for 2D: maximise sum of dot products after rotation
    cs, ct = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - cs, dst - ct
    num = np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    den = np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1])
    theta = math.atan2(num, den)
    c, s = math.cos(theta), math.sin(theta)
    rotated = a @ np.array([[c, s], [-s, c]])
    rmse = math.sqrt(np.mean(np.sum((rotated - b) ** 2, axis=1)))
    return theta, rmse


def procrustes_align(
    source: Sequence[Point2], target: Sequence[Point2], allow_flip: bool = True
) -> tuple[RigidTransform, float]:
    """Rigid transform taking ``source`` onto ``target`` with least RMSE.

    Returns the transform and the residual RMSE in meters. With ``allow_flip``
    the reflected solution is also tried and the better one kept.
    """
    if len(source) != len(target):
        raise ValueError("source and target differ in length")
    if len(source) < 2:
        raise ValueError("need at least two points")
    src, dst = _as_array(source), _as_array(target)
    if np.max(np.ptp(src, axis=0)) < 1e-12:
        raise ValueError("degenerate source: all points coincide")

    best = None
    for flip in (False, True) if allow_flip else (False,):
        s = src * np.array([1.0, -1.0]) if flip else src
        theta, rmse = _best_rotation(s, dst)
        if best is None or rmse < best[2] - 1e-15:
            best = (flip, theta, rmse)
    flip, theta, rmse = best
    partial = RigidTransform(theta, ORIGIN, flip)
    c_src = apply_transform(partial, Point2(*src.mean(axis=0)))
    c_dst = Point2(*dst.mean(axis=0))
    return RigidTransform(theta, c_dst - c_src, flip), rmse


def segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool:
    """Proper or touching intersection of two closed segments."""

    def orient(a, b, c):
        v = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    def on_segment(a, b, c):
        return min(a.x, b.x) - 1e-12 <= c.x <= max(a.x, b.x) + 1e-12 and min(
            a.y, b.y
        ) - 1e-12 <= c.y <= max(a.y, b.y) + 1e-12

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_segment(p1, p2, q1):
        return True
    if o2 == 0 and on_segment(p1, p2, q2):
        return True
    if o3 == 0 and on_segment(q1, q2, p1):
        return True
    if o4 == 0 and on_segment(q1, q2, p2):
        return True
    return False


def bearing(frm: Point2, to: Point2) -> float:
    """Compass bearing of ``to`` seen from ``frm``: radians clockwise from +y (North)."""
    return math.atan2(to.x - frm.x, to.y - frm.y) % (2 * math.pi)


def unit_from_bearing(b: float) -> Point2:
    return Point2(math.sin(b), math.cos(b))


def circular_mean(angles: Sequence[float], weights: Sequence[float] | None = None) -> float:
    if weights is None:
        weights = [1.0] * len(angles)
    s = sum(w * math.sin(a) for a, w in zip(angles, weights))
    c = sum(w * math.cos(a) for a, w in zip(angles, weights))
    return math.atan2(s, c)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi
