"""Scenario description, TOML loading and validation."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .geometry import Point2
from .ranging import ChannelParams
from .scheduler import STRATEGIES

MAX_SPEED = 3.0


class ScenarioError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class NodeSpec:
    id: int
    position: Point2
    path: tuple[Point2, ...] = ()
    speed: float = 0.0
    is_reference: bool = False
    heading: float | None = None  # radians clockwise from North; None = derive

    @property
    def mobile(self) -> bool:
        return self.speed > 0 and len(self.path) > 0


@dataclass(frozen=True)
class Scenario:
    width: float
    height: float
    walls: tuple[tuple[Point2, Point2], ...]
    nodes: tuple[NodeSpec, ...]
    radio: ChannelParams = field(default_factory=ChannelParams)
    refresh_rate: float = 1.0
    strategy: str = "dynoloc"
    seed: int = 0
    epochs: int = 30
    heading_noise_sigma: float = 0.0  # degrees
    data_rate: str = "low"
    wifi_overhead_ms: float = 8.0
    interference_range: float | None = None
    link_timeout: float = 30.0
    smoothing_window: int = 3
    use_lq: bool = True
    use_mobility: bool = True
    ideal_ranging: bool = False

    def __post_init__(self):
        problems = check_scenario(self)
        if problems:
            raise ScenarioError(problems)

    @property
    def reference(self) -> NodeSpec | None:
        return next((n for n in self.nodes if n.is_reference), None)

    @property
    def slot_time_ms(self) -> float:
        return self.radio.slot_time_high_rate if self.data_rate == "high" else self.radio.slot_time_low_rate

    def with_(self, **kw) -> Scenario:
        return replace(self, **kw)


def check_scenario(s: Scenario) -> list[str]:
    p = []
    if not (s.width > 0 and s.height > 0):
        p.append("arena: width and height must be positive")
    seen: dict[int, int] = {}
    for k, n in enumerate(s.nodes):
        if n.id in seen:
            p.append(f"nodes[{k}].id duplicates nodes[{seen[n.id]}].id")
        else:
            seen[n.id] = k
        if not (0.0 <= n.speed <= MAX_SPEED):
            p.append(f"nodes[{k}].speed = {n.speed} outside [0, {MAX_SPEED:g}]")
        if n.speed > 0 and not n.path:
            p.append(f"nodes[{k}].path required for a moving node")
    refs = [k for k, n in enumerate(s.nodes) if n.is_reference]
    if len(refs) > 1:
        p.append(f"nodes[{refs[1]}].is_reference: at most one reference node allowed")
    if not s.refresh_rate > 0:
        p.append("run.refresh_rate must be positive")
    if s.strategy not in STRATEGIES:
        p.append(f"run.strategy '{s.strategy}' not one of {', '.join(STRATEGIES)}")
    if not (0 <= s.seed < 2**64):
        p.append("run.seed must fit in an unsigned 64-bit integer")
    if s.epochs < 1:
        p.append("run.epochs must be >= 1")
    if s.heading_noise_sigma < 0:
        p.append("run.heading_noise_sigma must be >= 0")
    if s.data_rate not in ("low", "high"):
        p.append("run.data_rate must be 'low' or 'high'")
    if s.wifi_overhead_ms < 0:
        p.append("run.wifi_overhead_ms must be >= 0")
    if s.link_timeout <= 0:
        p.append("run.link_timeout must be positive")
    if s.smoothing_window < 1:
        p.append("run.smoothing_window must be >= 1")
    return p


_RUN_KEYS = {
    "refresh_rate": float, "strategy": str, "seed": int, "epochs": int, "heading_noise_sigma": float,
    "data_rate": str, "wifi_overhead_ms": float, "interference_range": float, "link_timeout": float,
    "smoothing_window": int, "use_lq": bool, "use_mobility": bool, "ideal_ranging": bool,
}
_NODE_KEYS = {"id", "position", "path", "speed", "is_reference", "heading_deg"}
_RADIO_KEYS = {f.name for f in fields(ChannelParams)}


def _point(v: Any, where: str, problems: list[str]) -> Point2 | None:
    if (
        isinstance(v, (list, tuple)) and len(v) == 2
        and all(isinstance(c, (int, float)) and not isinstance(c, bool) and math.isfinite(c) for c in v)
    ):
        return Point2(float(v[0]), float(v[1]))
    problems.append(f"{where} must be a pair of finite numbers, got {v!r}")
    return None


def _number(v: Any, where: str, problems: list[str], kind=float):
    if kind is bool:
        if isinstance(v, bool):
            return v
    elif kind is int:
        if isinstance(v, int) and not isinstance(v, bool):
            return v
    elif kind is str:
        if isinstance(v, str):
            return v
    elif isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v):
        return float(v)
    problems.append(f"{where} must be {kind.__name__}, got {v!r}")
    return None


def scenario_from_dict(raw: dict) -> Scenario:
    """Build a Scenario from parsed TOML, collecting every problem with its field path."""
    problems: list[str] = []
    for key in raw:
        if key not in ("arena", "walls", "nodes", "radio", "run"):
            problems.append(f"{key}: unknown section")
    arena = raw.get("arena", {})
    width = _number(arena.get("width"), "arena.width", problems)
    height = _number(arena.get("height"), "arena.height", problems)

    walls = []
    for k, w in enumerate(raw.get("walls", [])):
        a = _point(w.get("a"), f"walls[{k}].a", problems)
        b = _point(w.get("b"), f"walls[{k}].b", problems)
        if a is not None and b is not None:
            if a == b:
                problems.append(f"walls[{k}] has zero length")
            walls.append((a, b))

    nodes = []
    raw_nodes = raw.get("nodes", [])
    if not raw_nodes:
        problems.append("nodes: at least one node required")
    for k, n in enumerate(raw_nodes):
        for key in n:
            if key not in _NODE_KEYS:
                problems.append(f"nodes[{k}].{key}: unknown field")
        nid = _number(n.get("id"), f"nodes[{k}].id", problems, int)
        pos = _point(n.get("position"), f"nodes[{k}].position", problems)
        path = tuple(
            q for q in (_point(v, f"nodes[{k}].path[{j}]", problems) for j, v in enumerate(n.get("path", [])))
            if q is not None
        )
        speed = _number(n.get("speed", 0.0), f"nodes[{k}].speed", problems)
        ref = _number(n.get("is_reference", False), f"nodes[{k}].is_reference", problems, bool)
        hd = n.get("heading_deg")
        heading = None
        if hd is not None:
            hd = _number(hd, f"nodes[{k}].heading_deg", problems)
            heading = None if hd is None else math.radians(hd) % (2 * math.pi)
        if pos is not None and width and height:
            for label, q in [("position", pos)] + [(f"path[{j}]", q) for j, q in enumerate(path)]:
                if not (0 <= q.x <= width and 0 <= q.y <= height):
                    problems.append(f"nodes[{k}].{label} ({q.x:g}, {q.y:g}) outside arena")
        if None not in (nid, pos, speed, ref):
            nodes.append(NodeSpec(nid, pos, path, speed, ref, heading))

    radio_kw = {}
    for key, v in raw.get("radio", {}).items():
        if key not in _RADIO_KEYS:
            problems.append(f"radio.{key}: unknown field")
            continue
        val = _number(v, f"radio.{key}", problems)
        if val is not None:
            if val <= 0:
                problems.append(f"radio.{key} must be positive, got {val:g}")
            radio_kw[key] = val

    run_kw = {}
    for key, v in raw.get("run", {}).items():
        if key not in _RUN_KEYS:
            problems.append(f"run.{key}: unknown field")
            continue
        val = _number(v, f"run.{key}", problems, _RUN_KEYS[key])
        if val is not None:
            run_kw[key] = val

    try:
        radio = ChannelParams(**radio_kw)
    except ValueError as e:
        problems.append(str(e))
        radio = ChannelParams()
    try:
        s = Scenario(width, height, tuple(walls), tuple(nodes), radio, **run_kw)
    except ScenarioError as e:
        problems += [p for p in e.problems if p not in problems]
    except TypeError:
        pass  # a required field is already reported as malformed
    if problems:
        raise ScenarioError(problems)
    return s


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError([f"{path}: {e}"]) from None
    return scenario_from_dict(raw)


DEFAULT_WALLS = (
    (Point2(15, 0), Point2(15, 16)),
    (Point2(15, 24), Point2(15, 40)),
    (Point2(35, 0), Point2(35, 16)),
    (Point2(35, 24), Point2(35, 40)),
    (Point2(0, 20), Point2(10, 20)),
    (Point2(40, 20), Point2(50, 20)),
)


def generate_scenario(
    n_nodes: int = 12,
    mobile_fraction: float = 0.5,
    speed: float = 1.0,
    seed: int = 0,
    width: float = 50.0,
    height: float = 40.0,
    walls: tuple = DEFAULT_WALLS,
    waypoints: int = 4,
    margin: float = 2.0,
    **run_kw,
) -> Scenario:
    """Random layout: node 1 is a static reference, a fraction of the rest loop
    through random waypoints at ``speed``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5CE4]))

    def rand_point():
        return Point2(float(rng.uniform(margin, width - margin)), float(rng.uniform(margin, height - margin)))

    n_mobile = int(round(mobile_fraction * (n_nodes - 1)))
    mobile_ids = set(2 + k for k in rng.permutation(n_nodes - 1)[:n_mobile].tolist())
    nodes = []
    for nid in range(1, n_nodes + 1):
        pos = rand_point()
        if nid in mobile_ids:
            path = tuple(rand_point() for _ in range(waypoints))
            nodes.append(NodeSpec(nid, pos, path, speed, False))
        else:
            nodes.append(NodeSpec(nid, pos, (), 0.0, nid == 1))
    return Scenario(width, height, tuple(walls), tuple(nodes), seed=seed, **run_kw)


def scenario_to_dict(s: Scenario) -> dict:
    """Plain-data form, suitable for TOML or JSON."""
    return {
        "arena": {"width": s.width, "height": s.height},
        "walls": [{"a": list(a.as_tuple()), "b": list(b.as_tuple())} for a, b in s.walls],
        "nodes": [
            {
                "id": n.id, "position": list(n.position.as_tuple()),
                "path": [list(q.as_tuple()) for q in n.path], "speed": n.speed,
                "is_reference": n.is_reference,
                **({"heading_deg": math.degrees(n.heading)} if n.heading is not None else {}),
            }
            for n in s.nodes
        ],
        "radio": {f.name: getattr(s.radio, f.name) for f in fields(ChannelParams)},
        "run": {
            k: getattr(s, k) for k in _RUN_KEYS if getattr(s, k) is not None
        },
    }
