import pytest

from stackcopy.constraints import (EQ, ConstraintSystem, LinearConstraint, build_axis_qp,
                                   penetration_constraints, recover_poses,
                                   solve_with_penetration_removal, stability_constraints)
from stackcopy.scene import Observation, Pose, Primitive, Rect, interpenetrating_pairs
from stackcopy.strips import put_on, put_on_along_x, rotate
from stackcopy import qp


def _has(system, coeffs, bound, kind="le"):
    want = {k: v for k, v in coeffs}
    for c in system.constraints:
        if c.kind == kind and dict(c.coeffs) == want and c.bound == pytest.approx(bound):
            return True
    return False


def test_put_on_cube_heights_and_containment():
    cat = [Primitive("i", (0.1, 0.1, 0.1)), Primitive("j", (0.1, 0.1, 0.1))]
    sys_ = stability_constraints([put_on("i"), put_on("j", "i")], cat)
    assert sys_.z["i"] == pytest.approx(0.05) and sys_.z["j"] == pytest.approx(0.15)
    assert _has(sys_, [(("i", "z"), 1.0)], 0.05, EQ)
    # x_i - 0.05 <= x_j <= x_i + 0.05
    assert _has(sys_, [(("j", "x"), 1.0), (("i", "x"), -1.0)], 0.05)
    assert _has(sys_, [(("i", "x"), 1.0), (("j", "x"), -1.0)], 0.05)


def test_rotated_object_uses_swapped_extents():
    cat = [Primitive("i", (0.1, 0.1, 0.1)), Primitive("j", (0.06, 0.02, 0.02))]
    sys_ = stability_constraints([put_on("i"), rotate("j"), put_on("j", "i")], cat,
                                 Rect(-1, 1, -1, 1))
    assert sys_.rotations["j"] == 1
    # table rows use the rotated footprint: |x_j| <= 1 - 0.01, |y_j| <= 1 - 0.03
    assert _has(sys_, [(("j", "x"), 1.0)], 1 - 0.01)
    assert _has(sys_, [(("j", "y"), 1.0)], 1 - 0.03)


def test_ground_object_only_bounded_by_table():
    cat = [Primitive("a", (0.04, 0.04, 0.08))]
    free = stability_constraints([put_on("a")], cat)
    assert free.z["a"] == pytest.approx(0.04)
    assert free.inequalities == []
    boxed = stability_constraints([put_on("a")], cat, Rect(-0.3, 0.3, -0.3, 0.3))
    assert len(boxed.inequalities) == 4


def test_bridge_rows():
    cat = [Primitive(c, (0.04, 0.04, 0.08)) for c in "bc"] + [Primitive("a", (0.16, 0.04, 0.02))]
    sys_ = stability_constraints([put_on("b"), put_on("c"), put_on_along_x("a", "b", "c")], cat)
    assert sys_.z["a"] == pytest.approx(0.09)
    assert _has(sys_, [(("b", "x"), 1.0), (("a", "x"), -1.0)], 0.0)
    assert _has(sys_, [(("a", "x"), 1.0), (("c", "x"), -1.0)], 0.0)
    # x_a - x_b <= hb + ha - 0.2 * 2hb = 0.02 + 0.08 - 0.008
    assert _has(sys_, [(("a", "x"), 1.0), (("b", "x"), -1.0)], 0.092)


def test_non_terminal_or_bad_sequences_infeasible():
    cat = [Primitive("a", (0.04,) * 3), Primitive("b", (0.04,) * 3)]
    assert not stability_constraints([put_on("a")], cat).feasible
    assert not stability_constraints([put_on("a"), put_on("a")], cat).feasible
    assert not stability_constraints([put_on("b", "a"), put_on("a")], cat).feasible


CUBES = [Primitive("a", (0.06, 0.06, 0.06)), Primitive("b", (0.06, 0.06, 0.06))]


def test_separation_row_for_overlapping_cubes():
    base = stability_constraints([put_on("a"), put_on("b")], CUBES)
    poses = {"a": Pose((0.0, 0, 0.03)), "b": Pose((0.04, 0, 0.03))}
    aug = penetration_constraints(poses, CUBES, base)
    assert _has(aug, [(("a", "x"), 1.0), (("b", "x"), -1.0)], -0.06)
    assert len(aug.constraints) == len(base.constraints) + 1


def test_no_penetration_returns_same_system():
    base = stability_constraints([put_on("a"), put_on("b")], CUBES)
    poses = {"a": Pose((0.0, 0, 0.03)), "b": Pose((0.2, 0, 0.03))}
    assert penetration_constraints(poses, CUBES, base) is base


def test_least_overlap_axis_chosen():
    base = stability_constraints([put_on("a"), put_on("b")], CUBES)
    poses = {"a": Pose((0.0, 0.0, 0.03)), "b": Pose((0.01, 0.05, 0.03))}
    aug = penetration_constraints(poses, CUBES, base)
    assert _has(aug, [(("a", "y"), 1.0), (("b", "y"), -1.0)], -0.06)


def test_two_cube_separation_worked_example():
    obs = {"a": Pose((0.0, 0, 0.03)), "b": Pose((0.04, 0, 0.03))}
    res = recover_poses([put_on("a"), put_on("b")], CUBES, obs)
    assert res.feasible and res.iterations == 1 and res.penetration_free
    assert res.poses["a"].x == pytest.approx(-0.01, abs=1e-9)
    assert res.poses["b"].x == pytest.approx(0.05, abs=1e-9)
    assert res.poses["a"].y == pytest.approx(0.0, abs=1e-12)


def test_removal_disabled_keeps_overlap():
    obs = {"a": Pose((0.0, 0, 0.03)), "b": Pose((0.04, 0, 0.03))}
    res = recover_poses([put_on("a"), put_on("b")], CUBES, obs, enabled=False)
    assert res.feasible and not res.penetration_free
    assert interpenetrating_pairs(CUBES, res.poses)


def test_penetration_free_observation_single_solve():
    obs = Observation({"a": Pose((0.0, 0, 0.03)), "b": Pose((0.1, 0, 0.03))})
    poses, feasible = solve_with_penetration_removal([put_on("a"), put_on("b")], CUBES, obs)
    poses_off, _ = solve_with_penetration_removal([put_on("a"), put_on("b")], CUBES, obs, False)
    assert feasible and poses == poses_off
    assert poses["b"].x == pytest.approx(0.1)


def test_contradictory_separations_infeasible():
    cat = CUBES + [Primitive("c", (0.06, 0.06, 0.06))]
    base = stability_constraints([put_on("a"), put_on("b"), put_on("c")], cat)
    # a left of b and b left of a cannot both hold
    extra = (LinearConstraint(((("a", "x"), 1.0), (("b", "x"), -1.0)), -0.06),
             LinearConstraint(((("b", "x"), 1.0), (("a", "x"), -1.0)), -0.06))
    system = ConstraintSystem(base.constraints + extra, base.z, base.rotations, base.supports)
    prob = build_axis_qp(system, cat, {"a": Pose((0, 0, 0.03))}, "x")
    assert qp.solve(prob).status == qp.INFEASIBLE


def test_hidden_object_centered_on_its_support():
    cat = [Primitive("p", (0.04, 0.04, 0.08)), Primitive("h", (0.04, 0.04, 0.04))]
    res = recover_poses([put_on("p"), put_on("h", "p")], cat, {"p": Pose((0.1, 0.2, 0.04))})
    assert res.poses["h"].x == pytest.approx(0.1, abs=1e-9)
    assert res.poses["h"].y == pytest.approx(0.2, abs=1e-9)
    assert res.poses["h"].z == pytest.approx(0.10)


def test_constraint_residual_and_dump():
    c = LinearConstraint(((("a", "x"), 1.0), (("b", "x"), -1.0)), -0.06, label="sep")
    assert c.residual({("a", "x"): 0.0, ("b", "x"): 0.04}) == pytest.approx(0.02)
    assert "x[a]" in str(c) and "sep" in str(c)
    with pytest.raises(ValueError):
        LinearConstraint(((("a", "x"), 0.0),), 1.0)
    sys_ = stability_constraints([put_on("a"), put_on("b")], CUBES)
    assert "z[a]" in sys_.dump()
