"""STRIPS predicates and the four assembly operators.

Predicates are plain tuples, e.g. ``("On", "a", "b")`` or ``("Clear", "b")``.
The table is a distinguished support that is always clear, so ``PutOn(a,
TABLE)`` is the single code path for ground placements and its visible effect
is ``OnTable(a)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Mapping, NamedTuple, Sequence, Tuple

from .scene import Primitive

TABLE = "TABLE"

PUT_ON = "PutOn"
PUT_ON_ALONG_X = "PutOnAlongX"
PUT_ON_ALONG_Y = "PutOnAlongY"
ROTATE = "Rotate"
OPERATOR_KINDS = (PUT_ON, PUT_ON_ALONG_X, PUT_ON_ALONG_Y, ROTATE)

PLACEMENT_PREDICATES = ("OnTable", "On", "OnAlongX", "OnAlongY")

HEIGHT_TOL = 1e-9


class InapplicableOperator(ValueError):
    pass


class Operator(NamedTuple):
    kind: str
    args: Tuple[str, ...]

    @property
    def actor(self) -> str:
        return self.args[0]

    def __str__(self):
        return f"{self.kind}({', '.join(self.args)})"

    def to_dict(self) -> dict:
        return {"op": self.kind, "args": list(self.args)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Operator":
        kind = d["op"]
        if kind not in OPERATOR_KINDS:
            raise ValueError(f"unknown operator {kind!r}")
        return cls(kind, tuple(d["args"]))


def put_on(a, b=TABLE):
    return Operator(PUT_ON, (a, b))


def put_on_along_x(a, b, c):
    return Operator(PUT_ON_ALONG_X, (a, b, c))


def put_on_along_y(a, b, c):
    return Operator(PUT_ON_ALONG_Y, (a, b, c))


def rotate(a):
    return Operator(ROTATE, (a,))


def sequence_to_json(seq: Iterable[Operator]) -> list:
    return [op.to_dict() for op in seq]


def sequence_from_json(data: Iterable[Mapping]) -> List[Operator]:
    return [Operator.from_dict(d) for d in data]


@dataclass(frozen=True)
class StripsState:
    predicates: frozenset
    moved: frozenset
    unmoved: frozenset
    # symbolic top height of every placed object; derived, so not compared
    tops: Mapping[str, float] = field(default_factory=dict, compare=False, hash=False)

    def holds(self, *pred) -> bool:
        return tuple(pred) in self.predicates

    def is_clear(self, b: str) -> bool:
        return b == TABLE or ("Clear", b) in self.predicates

    def is_rotated(self, a: str) -> bool:
        return ("Rot", a) in self.predicates

    def placement_of(self, a: str):
        for p in self.predicates:
            if p[0] in PLACEMENT_PREDICATES and p[1] == a:
                return p
        return None


class StripsDomain:
    """Operator semantics over a fixed catalog of box primitives."""

    def __init__(self, catalog: Sequence[Primitive]):
        self.catalog = tuple(catalog)
        self.ids = tuple(p.id for p in self.catalog)
        self.order = {pid: i for i, pid in enumerate(self.ids)}
        self.height = {p.id: p.dims[2] for p in self.catalog}
        if TABLE in self.order:
            raise ValueError(f"{TABLE!r} is reserved and cannot be a primitive id")

    def initial_state(self) -> StripsState:
        return StripsState(frozenset(), frozenset(), frozenset(self.ids), {})

    def is_terminal(self, state: StripsState) -> bool:
        return not state.unmoved

    def _sorted(self, ids):
        return sorted(ids, key=self.order.__getitem__)

    def applicable_operators(self, state: StripsState) -> List[Operator]:
        """Every operator whose preconditions hold, in a deterministic order."""
        if not state.unmoved:
            return []
        clear = [b for b in self._sorted(state.moved) if ("Clear", b) in state.predicates]
        pairs = []
        for i, b in enumerate(clear):
            for c in clear[i + 1:]:
                if abs(state.tops[b] - state.tops[c]) <= HEIGHT_TOL:
                    pairs.append((b, c))
        ops = []
        for a in self._sorted(state.unmoved):
            ops.append(Operator(PUT_ON, (a, TABLE)))
            for b in clear:
                ops.append(Operator(PUT_ON, (a, b)))
            # the first support is the one at lower coordinate along the axis
            for kind in (PUT_ON_ALONG_X, PUT_ON_ALONG_Y):
                for b, c in pairs:
                    ops.append(Operator(kind, (a, b, c)))
                    ops.append(Operator(kind, (a, c, b)))
            if ("Rot", a) not in state.predicates:
                ops.append(Operator(ROTATE, (a,)))
        return ops

    def is_applicable(self, state: StripsState, op: Operator) -> bool:
        kind, args = op
        if kind not in OPERATOR_KINDS or not args or args[0] not in state.unmoved:
            return False
        a = args[0]
        if kind == ROTATE:
            return len(args) == 1 and ("Rot", a) not in state.predicates
        if kind == PUT_ON:
            if len(args) != 2:
                return False
            b = args[1]
            return b == TABLE or (b in state.moved and state.is_clear(b))
        if len(args) != 3:
            return False
        b, c = args[1], args[2]
        if b == c or TABLE in (b, c):
            return False
        if not (b in state.moved and c in state.moved):
            return False
        if not (state.is_clear(b) and state.is_clear(c)):
            return False
        return abs(state.tops[b] - state.tops[c]) <= HEIGHT_TOL

    def apply(self, state: StripsState, op: Operator) -> StripsState:
        if not self.is_applicable(state, op):
            raise InapplicableOperator(f"{op} is not applicable")
        kind, args = op
        a = args[0]
        preds = set(state.predicates)
        if kind == ROTATE:
            preds.add(("Rot", a))
            return StripsState(frozenset(preds), state.moved, state.unmoved, state.tops)
        tops = dict(state.tops)
        if kind == PUT_ON:
            b = args[1]
            if b == TABLE:
                preds.add(("OnTable", a))
                tops[a] = self.height[a]
            else:
                preds.discard(("Clear", b))
                preds.add(("On", a, b))
                tops[a] = tops[b] + self.height[a]
        else:
            b, c = args[1], args[2]
            preds.discard(("Clear", b))
            preds.discard(("Clear", c))
            name = "OnAlongX" if kind == PUT_ON_ALONG_X else "OnAlongY"
            preds.add((name, a, b, c))
            tops[a] = tops[b] + self.height[a]
        preds.add(("Clear", a))
        return StripsState(frozenset(preds), state.moved | {a}, state.unmoved - {a}, tops)

    def replay(self, seq: Iterable[Operator], state: StripsState = None) -> StripsState:
        state = self.initial_state() if state is None else state
        for op in seq:
            state = self.apply(state, op)
        return state

    def check_invariants(self, state: StripsState) -> List[str]:
        """Violated state invariants, as human-readable strings (empty if none)."""
        errors = []
        if state.moved | state.unmoved != set(self.ids):
            errors.append("moved and unmoved do not cover the catalog")
        if state.moved & state.unmoved:
            errors.append("moved and unmoved overlap")
        covered = set()
        for p in state.predicates:
            if p[0] in ("OnAlongX", "OnAlongY"):
                if p[2] == p[3]:
                    errors.append(f"{p} uses the same support twice")
                covered.update(p[2:])
            elif p[0] == "On":
                covered.add(p[2])
        for pid in self.ids:
            n = sum(1 for p in state.predicates
                    if p[0] in PLACEMENT_PREDICATES and p[1] == pid)
            if n > 1:
                errors.append(f"{pid} has {n} placement predicates")
            if (n == 1) != (pid in state.moved):
                errors.append(f"{pid} placement does not match moved set")
            clear = ("Clear", pid) in state.predicates
            if pid in state.moved and clear == (pid in covered):
                errors.append(f"Clear({pid}) inconsistent with supports")
            if pid in state.unmoved and clear:
                errors.append(f"unmoved {pid} is marked Clear")
        return errors


def applicable_operators(state: StripsState, domain: StripsDomain) -> List[Operator]:
    return domain.applicable_operators(state)


def apply(state: StripsState, op: Operator, domain: StripsDomain) -> StripsState:
    return domain.apply(state, op)


def is_terminal(state: StripsState) -> bool:
    return not state.unmoved
