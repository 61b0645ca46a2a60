import random

import pytest

from stackcopy.scene import Primitive
from stackcopy.strips import (PUT_ON, ROTATE, TABLE, InapplicableOperator, Operator,
                              StripsDomain, applicable_operators, apply, is_terminal, put_on,
                              put_on_along_x, put_on_along_y, rotate, sequence_from_json,
                              sequence_to_json)

CUBE = (0.04, 0.04, 0.04)


def domain(n=3, dims=CUBE):
    return StripsDomain([Primitive(c, dims) for c in "abcdefgh"[:n]])


def test_initial_operators_of_three_primitives():
    d = domain()
    ops = applicable_operators(d.initial_state(), d)
    expected = {put_on(a) for a in "abc"} | {rotate(a) for a in "abc"}
    assert len(ops) == 6 and set(ops) == expected


def test_operators_after_one_placement():
    d = domain()
    s = apply(d.initial_state(), put_on("a"), d)
    ops = set(applicable_operators(s, d))
    for op in (put_on("b", "a"), put_on("b"), rotate("b"), rotate("c"), put_on("c", "a"),
               put_on("c")):
        assert op in ops
    assert all(op.actor in "bc" for op in ops)


def test_terminal_state_has_no_operators():
    d = domain(2)
    s = d.replay([put_on("a"), put_on("b")])
    assert is_terminal(s) and applicable_operators(s, d) == []


def test_put_on_table_effects():
    d = domain()
    s = apply(d.initial_state(), put_on("a"), d)
    assert s.holds("OnTable", "a") and s.holds("Clear", "a") and "a" in s.moved


def test_put_on_retracts_clear():
    d = domain()
    s = d.replay([put_on("a"), put_on("b", "a")])
    assert s.holds("On", "b", "a") and s.holds("Clear", "b") and not s.holds("Clear", "a")


def test_rotate_twice_rejected():
    d = domain()
    s = apply(d.initial_state(), rotate("a"), d)
    assert s.is_rotated("a")
    with pytest.raises(InapplicableOperator):
        apply(s, rotate("a"), d)


def test_is_terminal_cases():
    d = domain()
    assert not is_terminal(d.initial_state())
    assert is_terminal(d.replay([put_on("a"), put_on("b"), put_on("c")]))
    assert is_terminal(StripsDomain([]).initial_state())


def test_bridge_requires_equal_tops():
    d = StripsDomain([Primitive("p", (0.04, 0.04, 0.08)), Primitive("q", CUBE),
                      Primitive("l", (0.16, 0.04, 0.02))])
    s = d.replay([put_on("p"), put_on("q")])
    assert not d.is_applicable(s, put_on_along_x("l", "p", "q"))
    d2 = domain(3)
    s2 = d2.replay([put_on("a"), put_on("b")])
    assert d2.is_applicable(s2, put_on_along_x("c", "a", "b"))
    assert d2.is_applicable(s2, put_on_along_y("c", "b", "a"))
    s3 = d2.apply(s2, put_on_along_x("c", "a", "b"))
    assert not s3.holds("Clear", "a") and not s3.holds("Clear", "b")
    assert s3.tops["c"] == pytest.approx(0.08)


def test_table_is_always_clear_and_reserved():
    d = domain(3)
    s = d.replay([put_on("a"), put_on("b")])
    assert s.is_clear(TABLE)
    with pytest.raises(ValueError):
        StripsDomain([Primitive(TABLE, CUBE)])


def test_malformed_operators_not_applicable():
    d = domain(3)
    s = d.initial_state()
    assert not d.is_applicable(s, Operator("Fly", ("a",)))
    assert not d.is_applicable(s, Operator(PUT_ON, ("a", "b")))  # b not placed
    assert not d.is_applicable(s, Operator(ROTATE, ("a", "b")))
    s2 = d.replay([put_on("a")])
    assert not d.is_applicable(s2, put_on("a"))
    assert not d.is_applicable(s2, put_on_along_x("b", "a", "a"))


def test_sequence_json_round_trip():
    seq = [put_on("a"), rotate("b"), put_on_along_y("c", "a", "b")]
    assert sequence_from_json(sequence_to_json(seq)) == seq
    with pytest.raises(ValueError):
        sequence_from_json([{"op": "Jump", "args": ["a"]}])


def test_successor_invariants_fuzz():
    """Random applicable sequences never violate a state invariant."""
    rng = random.Random(1234)
    sizes = [(0.04, 0.04, 0.04), (0.04, 0.04, 0.08), (0.16, 0.04, 0.02), (0.08, 0.04, 0.02)]
    violations = []
    for trial in range(10_000):
        n = rng.randint(1, 6)
        d = StripsDomain([Primitive(f"p{i}", rng.choice(sizes)) for i in range(n)])
        s = d.initial_state()
        while True:
            assert not d.check_invariants(s)
            ops = d.applicable_operators(s)
            if not ops:
                break
            op = rng.choice(ops)
            s = d.apply(s, op)
            errs = d.check_invariants(s)
            if errs:
                violations.append((trial, op, errs))
                break
        assert d.is_terminal(s)
    assert violations == []
