"""Global placement of relative embeddings.

Frame: +x East, +y North. Headings are compass angles, clockwise from North,
so a heading h points along (sin h, cos h).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .geometry import Point2, RigidTransform, apply_transform, circular_mean, procrustes_align
from .relloc import RelativeEmbedding

MIN_HEADING_SPEED = 0.3


class RotationUnresolvable(ValueError):
    pass


class ReferenceMissing(ValueError):
    pass


@dataclass
class AbsoluteFrame:
    reference_node: int
    reference_position: Point2
    transforms: dict[int, RigidTransform] = field(default_factory=dict)


def implied_positions_from_headings(
    ref_pos: Point2, ranges_to_ref: Mapping[int, float], headings: Mapping[int, float]
) -> dict[int, Point2]:
    """Positions implied by a range to the reference and a heading taken as the edge bearing."""
    return {
        n: ref_pos + Point2(math.sin(headings[n]), math.cos(headings[n])).scale(r)
        for n, r in ranges_to_ref.items()
        if n in headings
    }


def _flip(p: Point2, flipped: bool) -> Point2:
    return Point2(p.x, -p.y) if flipped else p


def rotation_from_headings(
    embedding: RelativeEmbedding,
    implied: Mapping[int, Point2],
    pairs: Iterable[tuple[int, int]] | None = None,
    flipped: bool = False,
) -> float:
    """Angle that turns relative edge directions into globally implied ones.

    Each usable edge contributes (global slope - relative slope); the
    contributions are combined by a circular mean weighted by edge length
    in both frames.
    """
    common = sorted(n for n in implied if n in embedding.coordinates)
    if len(common) < 2:
        raise RotationUnresolvable("rotation unresolvable")
    if pairs is None:
        pairs = itertools.combinations(common, 2)
    angles, weights = [], []
    for i, j in pairs:
        if i not in implied or j not in implied or i not in embedding.coordinates or j not in embedding.coordinates:
            continue
        rel = _flip(embedding.coordinates[j], flipped) - _flip(embedding.coordinates[i], flipped)
        glob = implied[j] - implied[i]
        lr, lg = rel.norm(), glob.norm()
        if lr < 1e-9 or lg < 1e-9:
            continue
        angles.append(math.atan2(glob.y, glob.x) - math.atan2(rel.y, rel.x))
        weights.append(lr * lg)
    if not angles:
        raise RotationUnresolvable("rotation unresolvable")
    return circular_mean(angles, weights)


def flip_correction(
    embedding: RelativeEmbedding, implied: Mapping[int, Point2], min_margin: float = 0.2
) -> tuple[bool, bool]:
    """(flip_needed, confident) from the turning order of nodes about the centroid.

    For every node pair the sense of rotation from one to the other around
    the centroid is compared between the relative and implied layouts; a
    weighted majority of disagreements means the embedding is mirrored.
    """
    common = sorted(n for n in implied if n in embedding.coordinates)
    if len(common) < 3:
        return False, False
    rel = [embedding.coordinates[n] for n in common]
    imp = [implied[n] for n in common]

    def centred(pts):
        cx = sum(p.x for p in pts) / len(pts)
        cy = sum(p.y for p in pts) / len(pts)
        return [(p.x - cx, p.y - cy) for p in pts]

    r, g = centred(rel), centred(imp)
    agree = disagree = 0.0
    scale_r = max(x * x + y * y for x, y in r) or 1.0
    scale_g = max(x * x + y * y for x, y in g) or 1.0
    for a, b in itertools.combinations(range(len(common)), 2):
        cr = (r[a][0] * r[b][1] - r[a][1] * r[b][0]) / scale_r
        cg = (g[a][0] * g[b][1] - g[a][1] * g[b][0]) / scale_g
        w = abs(cr) * abs(cg)
        if w < 1e-12:
            continue
        if (cr > 0) == (cg > 0):
            agree += w
        else:
            disagree += w
    total = agree + disagree
    if total < 1e-9:
        return False, False
    flip = disagree > agree
    return flip, abs(agree - disagree) / total >= min_margin


def to_absolute(
    embedding: RelativeEmbedding,
    reference_node: int,
    reference_position: Point2,
    theta: float,
    flip: bool,
) -> tuple[dict[int, Point2], RigidTransform]:
    """Flip, rotate by ``theta``, then translate so the reference lands on its known position."""
    if reference_node not in embedding.coordinates:
        raise ReferenceMissing(f"reference node {reference_node} not in component")
    partial = RigidTransform(theta, Point2(0.0, 0.0), flip)
    moved = apply_transform(partial, embedding.coordinates[reference_node])
    t = RigidTransform(theta, reference_position - moved, flip)
    return {n: apply_transform(t, p) for n, p in embedding.coordinates.items()}, t


def rotation_from_motion(
    previous: RelativeEmbedding,
    current: RelativeEmbedding,
    headings: Mapping[int, float],
    min_step: float = 0.3,
) -> tuple[float, bool]:
    """(theta, flip) from how moving nodes shifted between two embeddings.

    ``headings`` holds the moving nodes. The previous embedding is aligned
    onto the current one using the other nodes (all of them when fewer than
    three stayed put); each moving node's displacement in the current frame
    is compared with its heading. Both mirror states are tried and the more
    self-consistent one kept.
    """
    common = sorted(n for n in current.coordinates if n in previous.coordinates)
    if len(common) < 3:
        raise RotationUnresolvable("rotation unresolvable")
    # fit on the nodes not reported as moving, when there are enough of them
    still = [n for n in common if n not in headings]
    if len(still) < 3:
        still = common
    t, _ = procrustes_align(
        [previous.coordinates[n] for n in still], [current.coordinates[n] for n in still]
    )
    steps = {}
    for n in common:
        if n in headings:
            d = current.coordinates[n] - apply_transform(t, previous.coordinates[n])
            if d.norm() >= min_step:
                steps[n] = d
    if len(steps) < 2:
        raise RotationUnresolvable("rotation unresolvable")
    best = None
    for flip in (False, True):
        angles, weights = [], []
        for n, d in steps.items():
            d = _flip(d, flip)
            u = Point2(math.sin(headings[n]), math.cos(headings[n]))
            angles.append(math.atan2(u.y, u.x) - math.atan2(d.y, d.x))
            weights.append(d.norm())
        s = sum(w * math.sin(a) for a, w in zip(angles, weights))
        c = sum(w * math.cos(a) for a, w in zip(angles, weights))
        resultant = math.hypot(s, c) / sum(weights)
        if best is None or resultant > best[0]:
            best = (resultant, math.atan2(s, c), flip)
    return best[1], best[2]
