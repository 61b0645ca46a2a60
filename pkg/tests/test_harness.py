import csv
import io
import json
import statistics

import pytest

from stackcopy import formats
from stackcopy.harness import (JSON, STEP_LIST, BUNDLED, export_plan, format_removal_table,
                               format_search_table, load_scenario, margin_warnings, plan_seed,
                               resting_supports, run_ablation_matrix, run_scenario,
                               support_closed_subset)
from stackcopy.scene import PlanResult, PlanStep, Pose, Primitive
from stackcopy.strips import put_on


def test_bundled_scenarios_validate(scenarios):
    assert set(scenarios) == set(BUNDLED)
    for s in scenarios.values():
        assert set(s.layout) == set(s.scene.ids)


def test_scenario_from_directory(tmp_path, scenarios):
    import shutil
    from importlib import resources
    src = resources.files("stackcopy") / "scenarios" / "B"
    dst = tmp_path / "B"
    shutil.copytree(str(src), dst)
    assert load_scenario(str(dst)).scene == scenarios["B"].scene


def test_scenario_missing_reference(tmp_path):
    (tmp_path / "scenario.json").write_text(json.dumps({"name": "x", "scene": "nope.json"}))
    with pytest.raises(formats.FormatError, match="does not exist"):
        load_scenario(str(tmp_path))


def test_scenario_bad_search_key(tmp_path, scenarios):
    formats.save_scene(str(tmp_path / "scene.json"), scenarios["A"].scene)
    (tmp_path / "scenario.json").write_text(json.dumps(
        {"name": "x", "scene": "scene.json", "search": {"budget": 5}}))
    with pytest.raises(formats.FormatError, match="unknown keys"):
        load_scenario(str(tmp_path / "scenario.json"))


def test_run_report_aggregates_recomputable(scenarios):
    rep = run_scenario(scenarios["B"], range(6))
    rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
    ro = [int(r["rollouts_used"]) for r in rows]
    agg = rep.aggregates()
    assert agg["rollouts_used"]["mean"] == pytest.approx(statistics.mean(ro))
    assert agg["rollouts_used"]["std"] == pytest.approx(statistics.stdev(ro))
    wt = [float(r["wall_time_s"]) for r in rows]
    assert agg["wall_time"]["mean"] == pytest.approx(statistics.mean(wt))
    assert agg["success_rate"] == 1.0
    data = json.loads(rep.dumps())
    assert len(data["records"]) == 6
    assert all(len(r["reward_trajectory"]) == r["rollouts_used"] for r in data["records"])


def test_report_is_deterministic_without_timing(scenarios):
    a = run_scenario(scenarios["C"], range(3), record_time=False).dumps()
    b = run_scenario(scenarios["C"], range(3), record_time=False).dumps()
    assert a == b


def test_parallel_matches_serial(scenarios):
    a = run_scenario(scenarios["B"], range(4), record_time=False)
    b = run_scenario(scenarios["B"], range(4), record_time=False, workers=2)
    assert a.dumps() == b.dumps()


def test_report_files(tmp_path, scenarios):
    rep = run_scenario(scenarios["A"], range(2))
    paths = rep.write(str(tmp_path), trace=True)
    assert {p.rsplit("/", 1)[1] for p in paths} == {"report.json", "report.csv", "trace.csv"}
    trace = (tmp_path / "trace.csv").read_text().splitlines()
    assert trace[0] == "seed,rollout,reward,feasible,length" and len(trace) == 3


def test_ablation_on_fully_visible(scenarios):
    res = run_ablation_matrix(scenarios["A"], range(3))
    assert len(res.rows) == 8
    for r in res.rows:
        agg = r.report.aggregates()
        assert agg["rollouts_used"]["mean"] == 1 and agg["rollouts_used"]["std"] == 0
    text = format_search_table([res])
    assert "R.S." in text and "inverted" in text and "1±0" in text
    assert "off" in format_removal_table([res])
    assert res.to_csv().count("\n") == 9


def test_removal_off_on_overlap_scenario(scenarios):
    s = scenarios["overlap"]
    off = run_scenario(s, range(3), {"penetration_removal": False})
    on = run_scenario(s, range(3))
    assert not any(r.penetration_free for r in off.records)
    assert all(r.penetration_free and r.success for r in on.records)


def _plan(n, success=True):
    steps = tuple(PlanStep(f"o{i}", Pose((i * 0.1, -0.4, 0.02)), Pose((0.01 * i, 0, 0.02)))
                  for i in range(n))
    return PlanResult(steps, {s.id: s.place for s in steps}, 1.0 if success else 0.4, 3,
                      tuple(put_on(s.id) for s in steps), success)


def test_step_list_export():
    text = export_plan(_plan(5), STEP_LIST)
    lines = text.strip().splitlines()
    assert len(lines) == 5
    assert lines[0].startswith("1. o0: pick (0.0000, -0.4000) → place (0.0000, 0.0000, 0.0200, 0)")


def test_failed_plan_flagged():
    text = export_plan(_plan(2, success=False), STEP_LIST)
    assert text.splitlines()[0].startswith("# best-effort plan")


def test_empty_plan_exports(tmp_path):
    p = tmp_path / "empty.json"
    export_plan(_plan(0), JSON, str(p))
    assert formats.load_plan(str(p)).steps == ()
    assert export_plan(_plan(0), STEP_LIST) == ""
    with pytest.raises(ValueError):
        export_plan(_plan(0), "yaml")


def test_offset_applied_to_places(scenarios):
    _, plan = plan_seed(scenarios["A"], 0, {"place_offset": (0.5, 0.0, 0.0)})
    for step in plan.steps:
        assert step.place.x == pytest.approx(plan.solved_poses[step.id].x + 0.5)


def test_margin_warning():
    cat = [Primitive("b", (0.04, 0.04, 0.08)), Primitive("a", (0.04, 0.04, 0.04))]
    poses = {"b": Pose((0, 0, 0.04)), "a": Pose((0.019, 0, 0.10))}
    plan = PlanResult((), poses, 1.0, 1, (put_on("b"), put_on("a", "b")))
    w = margin_warnings(plan, cat)
    assert len(w) == 1 and "a on b" in w[0]
    centered = PlanResult((), {**poses, "a": Pose((0, 0, 0.10))}, 1.0, 1,
                          plan.operator_sequence)
    assert margin_warnings(centered, cat) == []


def test_support_closed_subsets(scenarios):
    sc = scenarios["B"]
    sup = resting_supports(sc.scene)
    assert sup["lintel"] == ("h1", "h2") and sup["h1"] == ("b1",) and sup["b1"] == ()
    sub = support_closed_subset(sc.scene, 4, ["h1", "h2"])
    assert set(sub) == {"b1", "h1", "b2", "h2"}
    for pid in sub:
        assert set(sup[pid]) <= set(sub)


def test_restricted_scenario_keeps_occlusion(scenarios):
    sc = scenarios["B"]
    sub = sc.restricted(["b1", "h1"])
    obs = sub.observe(0)
    assert set(obs.detections) == {"b1"}
