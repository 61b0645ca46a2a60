"""Domain types shared by every stage of the planner.

Lengths are meters, the table plane is ``z = 0`` and every ``z`` refers to a
box center. Poses are restricted to a Manhattan world: a position plus a
quarter-turn class about the vertical axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence, Tuple

Vec3 = Tuple[float, float, float]

#: interpenetration tolerance used for scene validation and plan checks
PENETRATION_TOL = 1e-6


class Rect(NamedTuple):
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def contains(self, x: float, y: float, tol: float = 0.0) -> bool:
        return (self.xmin - tol <= x <= self.xmax + tol
                and self.ymin - tol <= y <= self.ymax + tol)


@dataclass(frozen=True)
class Primitive:
    id: str
    dims: Vec3
    label: str = ""

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != 3:
            raise ValueError(f"primitive {self.id!r}: dims must have 3 entries")
        if min(dims) <= 0:
            raise ValueError(f"primitive {self.id!r}: dims must be > 0, got {dims}")
        object.__setattr__(self, "dims", dims)

    def extents(self, rot: int = 0) -> Vec3:
        """Box extents after ``rot`` quarter-turns about z."""
        sx, sy, sz = self.dims
        return (sy, sx, sz) if rot % 2 else (sx, sy, sz)


@dataclass(frozen=True)
class Pose:
    position: Vec3
    rot: int = 0

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3:
            raise ValueError("pose position must have 3 entries")
        if self.rot not in (0, 1):
            raise ValueError(f"rotation class must be 0 or 1, got {self.rot!r}")
        object.__setattr__(self, "position", pos)

    @property
    def x(self) -> float:
        return self.position[0]

    @property
    def y(self) -> float:
        return self.position[1]

    @property
    def z(self) -> float:
        return self.position[2]

    def translated(self, offset: Sequence[float]) -> "Pose":
        return Pose(tuple(p + o for p, o in zip(self.position, offset)), self.rot)


def footprint(prim: Primitive, pose: Pose) -> Rect:
    sx, sy, _ = prim.extents(pose.rot)
    x, y, _ = pose.position
    return Rect(x - sx / 2, x + sx / 2, y - sy / 2, y + sy / 2)


def box_bounds(prim: Primitive, pose: Pose) -> Tuple[Vec3, Vec3]:
    ext = prim.extents(pose.rot)
    lo = tuple(c - e / 2 for c, e in zip(pose.position, ext))
    hi = tuple(c + e / 2 for c, e in zip(pose.position, ext))
    return lo, hi


def overlap_depths(a: Tuple[Primitive, Pose], b: Tuple[Primitive, Pose]) -> Vec3:
    """Signed overlap of the two boxes along x, y, z (negative means a gap)."""
    alo, ahi = box_bounds(*a)
    blo, bhi = box_bounds(*b)
    return tuple(min(ahi[k], bhi[k]) - max(alo[k], blo[k]) for k in range(3))


def boxes_interpenetrate(a: Tuple[Primitive, Pose], b: Tuple[Primitive, Pose],
                         tol: float = PENETRATION_TOL) -> bool:
    if tol < 0:
        raise ValueError("tol must be >= 0")
    return all(d > tol for d in overlap_depths(a, b))


def interpenetrating_pairs(catalog: Sequence[Primitive], poses: Mapping[str, Pose],
                           tol: float = PENETRATION_TOL):
    """All ``(a_id, b_id)`` pairs (catalog order) whose boxes overlap by more than tol."""
    items = [(p, poses[p.id]) for p in catalog if p.id in poses]
    pairs = []
    for i, a in enumerate(items):
        for b in items[i + 1:]:
            if boxes_interpenetrate(a, b, tol):
                pairs.append((a[0].id, b[0].id))
    return pairs


@dataclass(frozen=True)
class Scene:
    catalog: Tuple[Primitive, ...]
    table_extent: Rect = Rect(-0.5, 0.5, -0.5, 0.5)
    placements: Mapping[str, Pose] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "catalog", tuple(self.catalog))
        object.__setattr__(self, "table_extent", Rect(*self.table_extent))
        ids = [p.id for p in self.catalog]
        if len(set(ids)) != len(ids):
            raise ValueError("primitive ids must be unique within a catalog")
        unknown = set(self.placements) - set(ids)
        if unknown:
            raise ValueError(f"placements reference unknown ids: {sorted(unknown)}")
        bad = interpenetrating_pairs(self.catalog, self.placements)
        if bad:
            raise ValueError(f"ground-truth boxes interpenetrate: {bad}")

    def primitive(self, pid: str) -> Primitive:
        return self.by_id[pid]

    @property
    def by_id(self) -> dict:
        return {p.id: p for p in self.catalog}

    @property
    def ids(self) -> Tuple[str, ...]:
        return tuple(p.id for p in self.catalog)


@dataclass(frozen=True)
class Observation:
    """Detections produced by the vision stage.

    ``detections`` may contain hallucinated entries. Those whose id is not a
    catalog id are ignored by the planner; catalog-shaped hallucinations that
    took a catalog id stay in the visible set.
    """

    detections: Mapping[str, Pose] = field(default_factory=dict)
    confidence: Mapping[str, float] = field(default_factory=dict)
    false_positives: Tuple[Tuple[Primitive, Pose], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "false_positives", tuple(self.false_positives))
        for pid, c in self.confidence.items():
            if not 0.0 <= c <= 1.0:
                raise ValueError(f"confidence of {pid!r} outside [0, 1]: {c}")

    def visible(self, catalog: Sequence[Primitive]) -> Tuple[str, ...]:
        """Catalog ids that were detected, in catalog order."""
        return tuple(p.id for p in catalog if p.id in self.detections)

    def filtered(self, threshold: float) -> "Observation":
        keep = {k: v for k, v in self.detections.items()
                if self.confidence.get(k, 1.0) >= threshold}
        return Observation(keep, {k: self.confidence.get(k, 1.0) for k in keep},
                           self.false_positives)

    def restricted(self, ids) -> "Observation":
        ids = set(ids)
        return Observation({k: v for k, v in self.detections.items() if k in ids},
                           {k: v for k, v in self.confidence.items() if k in ids},
                           tuple(fp for fp in self.false_positives if fp[0].id in ids))


@dataclass(frozen=True)
class PlanStep:
    id: str
    pick: Optional[Pose]
    place: Pose
    # reserved for downstream grasp planners; never set by the planner itself
    grasp_axis: Optional[str] = None


@dataclass(frozen=True)
class PlanResult:
    steps: Tuple[PlanStep, ...]
    solved_poses: Mapping[str, Pose]
    reward: float
    rollouts_used: int
    operator_sequence: tuple
    success: bool = True
    penetration_free: bool = True
    place_offset: Vec3 = (0.0, 0.0, 0.0)
    reward_trace: Tuple[float, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.reward <= 1.0:
            raise ValueError(f"reward outside [0, 1]: {self.reward}")
