"""Linear stability and penetration constraints for a STRIPS assembly sequence.

A terminal operator sequence fixes every object's support and rotation. That
pins all ``z`` coordinates through equality chains rooted at the table, and
leaves ``x``/``y`` free subject to linear inequalities. No constraint ever
couples ``x`` with ``y``, so pose recovery solves one small QP per axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import qp
from .scene import (PENETRATION_TOL, Observation, Pose, Primitive, Rect,
                    interpenetrating_pairs, overlap_depths)
from .strips import (PUT_ON, PUT_ON_ALONG_X, PUT_ON_ALONG_Y, ROTATE, TABLE,
                     Operator)

LE = "le"
EQ = "eq"

BRIDGE_OVERLAP = 0.2
HIDDEN_REGULARIZATION = 1e-4
# relative weight of a hidden object's pull toward the visible objects it carries
CARRY_WEIGHT = 0.1
MAX_PENETRATION_ITERS = 10

_AXES = ("x", "y")


@dataclass(frozen=True)
class LinearConstraint:
    """``sum coeffs * vars  (<= | =)  bound``; variables are ``(id, axis)``."""

    coeffs: Tuple[Tuple[Tuple[str, str], float], ...]
    bound: float
    kind: str = LE
    label: str = ""

    def __post_init__(self):
        coeffs = tuple((k, float(v)) for k, v in self.coeffs if v != 0)
        if not coeffs:
            raise ValueError("constraint needs at least one nonzero coefficient")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def axis(self) -> str:
        return self.coeffs[0][0][1]

    def residual(self, values: Mapping[Tuple[str, str], float]) -> float:
        """Amount by which the constraint is violated (0 when satisfied)."""
        lhs = sum(c * values[k] for k, c in self.coeffs)
        return abs(lhs - self.bound) if self.kind == EQ else max(0.0, lhs - self.bound)

    def __str__(self):
        terms = []
        for (pid, ax), c in self.coeffs:
            sign = "-" if c < 0 else "+"
            mag = "" if abs(c) == 1 else f"{abs(c):g}*"
            terms.append(f"{sign} {mag}{ax}[{pid}]")
        lhs = " ".join(terms).lstrip("+ ")
        op = "=" if self.kind == EQ else "<="
        return f"{lhs} {op} {self.bound:.6g}" + (f"    # {self.label}" if self.label else "")


def _le(terms, bound, label=""):
    return LinearConstraint(tuple(terms), bound, LE, label)


@dataclass(frozen=True)
class ConstraintSystem:
    constraints: Tuple[LinearConstraint, ...] = ()
    z: Mapping[str, float] = field(default_factory=dict)
    rotations: Mapping[str, int] = field(default_factory=dict)
    # id -> (operator kind, support ids); TABLE supports are ()
    supports: Mapping[str, Tuple[str, Tuple[str, ...]]] = field(default_factory=dict)
    feasible: bool = True
    reason: str = ""
    separations: frozenset = frozenset()

    @property
    def inequalities(self) -> List[LinearConstraint]:
        return [c for c in self.constraints if c.kind == LE]

    def residual(self, poses: Mapping[str, Pose]) -> float:
        """Worst violation of any constraint (equalities use the poses' z)."""
        values = {}
        for pid, pose in poses.items():
            values[(pid, "x")], values[(pid, "y")], values[(pid, "z")] = pose.position
        return max((c.residual(values) for c in self.constraints), default=0.0)

    def dump(self) -> str:
        lines = []
        if not self.feasible:
            lines.append(f"# infeasible: {self.reason}")
        lines.extend(str(c) for c in self.constraints)
        return "\n".join(lines)


def _infeasible(reason: str) -> ConstraintSystem:
    return ConstraintSystem(feasible=False, reason=reason)


def stability_constraints(seq: Iterable[Operator], catalog: Sequence[Primitive],
                          table_extent: Optional[Rect] = None,
                          bridge_overlap: float = BRIDGE_OVERLAP) -> ConstraintSystem:
    """Constraint system implied by a terminal operator sequence.

    The footprint condition of a stacked object is applied against its
    declared support(s) only. Bridging placements require the bridged object's
    center between the two supports and an overlap with each support of at
    least ``bridge_overlap`` of that support's extent along the bridging axis.
    """
    prims = {p.id: p for p in catalog}
    rot: Dict[str, int] = {}
    z: Dict[str, float] = {}
    supports = {}
    cons: List[LinearConstraint] = []

    def ext(pid):
        return prims[pid].extents(rot.get(pid, 0))

    for op in seq:
        kind, args = op
        a = args[0]
        if a not in prims:
            return _infeasible(f"unknown primitive {a!r} in {op}")
        if a in z:
            return _infeasible(f"{a} placed twice")
        if kind == ROTATE:
            rot[a] = 1 - rot.get(a, 0)
            continue
        sa = ext(a)
        if kind == PUT_ON:
            b = args[1]
            supports[a] = (kind, () if b == TABLE else (b,))
            if b == TABLE:
                z[a] = sa[2] / 2
                cons.append(LinearConstraint((((a, "z"), 1.0),), z[a], EQ, f"{op}"))
                continue
            if b not in z:
                return _infeasible(f"{op}: support {b} not placed")
            sb = ext(b)
            z[a] = z[b] + (sb[2] + sa[2]) / 2
            cons.append(LinearConstraint((((a, "z"), 1.0), ((b, "z"), -1.0)),
                                         (sb[2] + sa[2]) / 2, EQ, f"{op}"))
            for k, ax in enumerate(_AXES):
                cons.append(_le((((a, ax), 1.0), ((b, ax), -1.0)), sb[k] / 2, f"{op} com"))
                cons.append(_le((((b, ax), 1.0), ((a, ax), -1.0)), sb[k] / 2, f"{op} com"))
        elif kind in (PUT_ON_ALONG_X, PUT_ON_ALONG_Y):
            b, c = args[1], args[2]
            supports[a] = (kind, (b, c))
            if b not in z or c not in z:
                return _infeasible(f"{op}: supports not placed")
            sb, sc = ext(b), ext(c)
            top_b, top_c = z[b] + sb[2] / 2, z[c] + sc[2] / 2
            if abs(top_b - top_c) > 1e-9:
                return _infeasible(f"{op}: support tops disagree ({top_b:.6g} vs {top_c:.6g}), "
                                   "the stack is unfeasible")
            z[a] = top_b + sa[2] / 2
            cons.append(LinearConstraint((((a, "z"), 1.0), ((b, "z"), -1.0)),
                                         (sb[2] + sa[2]) / 2, EQ, f"{op}"))
            k = 0 if kind == PUT_ON_ALONG_X else 1
            ax, other = _AXES[k], _AXES[1 - k]
            # center of mass between the supports, b on the low side
            cons.append(_le((((b, ax), 1.0), ((a, ax), -1.0)), 0.0, f"{op} between"))
            cons.append(_le((((a, ax), 1.0), ((c, ax), -1.0)), 0.0, f"{op} between"))
            cons.append(_le((((a, ax), 1.0), ((b, ax), -1.0)),
                            sb[k] / 2 + sa[k] / 2 - bridge_overlap * sb[k], f"{op} overlap"))
            cons.append(_le((((c, ax), 1.0), ((a, ax), -1.0)),
                            sc[k] / 2 + sa[k] / 2 - bridge_overlap * sc[k], f"{op} overlap"))
            j = 1 - k
            for s, ss in ((b, sb), (c, sc)):
                cons.append(_le((((a, other), 1.0), ((s, other), -1.0)), ss[j] / 2, f"{op} com"))
                cons.append(_le((((s, other), 1.0), ((a, other), -1.0)), ss[j] / 2, f"{op} com"))
        else:
            return _infeasible(f"unknown operator {kind!r}")

    missing = [p.id for p in catalog if p.id not in z]
    if missing:
        return _infeasible(f"sequence is not terminal, unplaced: {missing}")

    if table_extent is not None:
        t = Rect(*table_extent)
        for p in catalog:
            sx, sy, _ = ext(p.id)
            cons.append(_le((((p.id, "x"), -1.0),), -(t.xmin + sx / 2), "table"))
            cons.append(_le((((p.id, "x"), 1.0),), t.xmax - sx / 2, "table"))
            cons.append(_le((((p.id, "y"), -1.0),), -(t.ymin + sy / 2), "table"))
            cons.append(_le((((p.id, "y"), 1.0),), t.ymax - sy / 2, "table"))

    rotations = {p.id: rot.get(p.id, 0) for p in catalog}
    return ConstraintSystem(tuple(cons), z, rotations, supports)


def penetration_constraints(current_poses: Mapping[str, Pose], catalog: Sequence[Primitive],
                            existing: ConstraintSystem,
                            tol: float = PENETRATION_TOL) -> ConstraintSystem:
    """Add one separating constraint per interpenetrating pair.

    The pair is separated along the horizontal axis of least overlap (ties go
    to x), keeping the current left/right ordering of the two centers.
    """
    prims = {p.id: p for p in catalog}
    added = []
    seps = set(existing.separations)
    for a, b in interpenetrating_pairs(catalog, current_poses, tol):
        pa, pb = current_poses[a], current_poses[b]
        dx, dy, _ = overlap_depths((prims[a], pa), (prims[b], pb))
        k = 0 if dx <= dy else 1
        ax = _AXES[k]
        lo, hi = (a, b) if pa.position[k] <= pb.position[k] else (b, a)
        if (lo, hi, ax) in seps:
            continue
        seps.add((lo, hi, ax))
        slo = prims[lo].extents(current_poses[lo].rot)[k]
        shi = prims[hi].extents(current_poses[hi].rot)[k]
        added.append(_le((((lo, ax), 1.0), ((hi, ax), -1.0)), -(slo + shi) / 2,
                         f"separate {lo} | {hi}"))
    if not added:
        return existing
    return replace(existing, constraints=existing.constraints + tuple(added),
                   separations=frozenset(seps))


def build_axis_qp(system: ConstraintSystem, catalog: Sequence[Primitive],
                  observed: Mapping[str, Pose], axis: str,
                  table_extent: Optional[Rect] = None,
                  reg: float = HIDDEN_REGULARIZATION) -> qp.QpProblem:
    """QP over one horizontal axis.

    Visible objects are pulled to their observed coordinate with unit weight.
    Hidden objects are pulled with weight ``reg`` toward the center of their
    support footprint, and with weight ``CARRY_WEIGHT * reg`` toward the
    visible objects they carry. The weaker carry pull keeps hidden blocks
    away from support edges. A hidden ground object that carries something
    visible drops the pull toward the table center, which would only drag it
    sideways into its neighbours.
    """
    ids = [p.id for p in catalog]
    idx = {pid: i for i, pid in enumerate(ids)}
    n = len(ids)
    k = _AXES.index(axis)
    H = np.zeros((n, n))
    g = np.zeros(n)
    const = 0.0
    if table_extent is not None:
        t = Rect(*table_extent)
        center = (t.xmin + t.xmax) / 2 if k == 0 else (t.ymin + t.ymax) / 2
    else:
        center = 0.0
    carried = {pid: [] for pid in ids}
    for pid, (_, sup) in system.supports.items():
        if pid in observed:
            for s in sup:
                carried[s].append(pid)

    def pull(v, c, w=reg):
        nonlocal H, g, const
        H += 2 * w * np.outer(v, v)
        g -= 2 * w * c * v
        const += w * c * c

    for pid in ids:
        i = idx[pid]
        if pid in observed:
            target = observed[pid].position[k]
            H[i, i] += 2.0
            g[i] -= 2.0 * target
            const += target * target
            continue
        for a in carried[pid]:
            v = np.zeros(n)
            v[i], v[idx[a]] = 1.0, -1.0
            pull(v, 0.0, CARRY_WEIGHT * reg)
        _, sup = system.supports.get(pid, (PUT_ON, ()))
        if not sup and carried[pid]:
            continue
        v = np.zeros(n)
        v[i] = 1.0
        for s in sup:
            v[idx[s]] -= 1.0 / len(sup)
        pull(v, center if not sup else 0.0)

    rows, rhs = [], []
    for con in system.constraints:
        if con.kind != LE or con.axis != axis:
            continue
        row = np.zeros(n)
        for (pid, _), coef in con.coeffs:
            row[idx[pid]] += coef
        rows.append(row)
        rhs.append(con.bound)
    A = np.array(rows) if rows else np.zeros((0, n))
    names = tuple(f"{axis}[{pid}]" for pid in ids)
    return qp.QpProblem(H, g, A, np.array(rhs), names, const)


@dataclass(frozen=True)
class PoseRecovery:
    poses: Dict[str, Pose]
    feasible: bool
    system: ConstraintSystem
    iterations: int = 0
    status: str = qp.OPTIMAL
    penetration_free: bool = True


def solve_system(system: ConstraintSystem, catalog: Sequence[Primitive],
                 observed: Mapping[str, Pose], table_extent: Optional[Rect] = None,
                 reg: float = HIDDEN_REGULARIZATION):
    """Solve both axis QPs; returns ``(poses, status)`` with poses None unless optimal."""
    coords = {}
    for axis in _AXES:
        sol = qp.solve(build_axis_qp(system, catalog, observed, axis, table_extent, reg))
        if not sol.optimal:
            return None, sol.status
        coords[axis] = sol.values
    poses = {}
    for i, p in enumerate(catalog):
        poses[p.id] = Pose((float(coords["x"][i]), float(coords["y"][i]), system.z[p.id]),
                           system.rotations[p.id])
    return poses, qp.OPTIMAL


def recover_poses(seq: Sequence[Operator], catalog: Sequence[Primitive],
                  observed: Mapping[str, Pose], enabled: bool = True,
                  table_extent: Optional[Rect] = None,
                  max_iter: int = MAX_PENETRATION_ITERS,
                  reg: float = HIDDEN_REGULARIZATION,
                  bridge_overlap: float = BRIDGE_OVERLAP) -> PoseRecovery:
    """Solve for all poses, adding separation constraints until penetration-free."""
    system = stability_constraints(seq, catalog, table_extent, bridge_overlap)
    if not system.feasible:
        return PoseRecovery({}, False, system, 0, qp.INFEASIBLE, False)
    for it in range(max_iter + 1):
        poses, status = solve_system(system, catalog, observed, table_extent, reg)
        if poses is None:
            return PoseRecovery({}, False, system, it, status, False)
        pairs = interpenetrating_pairs(catalog, poses)
        if not enabled or not pairs:
            return PoseRecovery(poses, True, system, it, status, not pairs)
        augmented = penetration_constraints(poses, catalog, system)
        if augmented is system:
            break
        system = augmented
    return PoseRecovery({}, False, system, max_iter, "penetration_unresolved", False)


def solve_with_penetration_removal(seq: Sequence[Operator], catalog: Sequence[Primitive],
                                   observed, enabled: bool = True,
                                   table_extent: Optional[Rect] = None,
                                   max_iter: int = MAX_PENETRATION_ITERS):
    """Returns ``(poses, feasible)``; ``observed`` is an Observation or an id->Pose map."""
    if isinstance(observed, Observation):
        ids = {p.id for p in catalog}
        observed = {k: v for k, v in observed.detections.items() if k in ids}
    res = recover_poses(seq, catalog, observed, enabled, table_extent, max_iter)
    return res.poses, res.feasible
