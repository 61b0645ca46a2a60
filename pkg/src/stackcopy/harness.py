"""Experiment runner: bundled scenarios, seeded batches, ablations and export."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from . import formats
from .planner import (DENSE, INVERTED, MCTS, RANDOM, SPARSE, STANDARD, MctsPlanner,
                      PlanningError, SearchConfig)
from .scene import Observation, PlanResult, Pose, Scene, footprint
from .strips import PUT_ON, PUT_ON_ALONG_X, PUT_ON_ALONG_Y, TABLE
from .vision import VisionConfig, observe

BUNDLED = ("A", "B", "C", "overlap")
MARGIN_WARNING = 0.003

RUN_CSV_HEADER = ("seed", "success", "rollouts_used", "wall_time_s", "reward",
                  "penetration_free", "visible", "mean_rollout_reward", "error")
TRACE_CSV_HEADER = ("seed", "rollout", "reward", "feasible", "length")


# -- scenarios ---------------------------------------------------------------

def _config(cls, data: Mapping, path: Optional[str], what: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise formats.FormatError(f"{path or '<data>'}: $[{what!r}]: unknown keys {unknown}")
    kw = dict(data)
    for key in ("camera_dir", "place_offset", "forced_hidden"):
        if key in kw:
            kw[key] = tuple(kw[key])
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise formats.FormatError(f"{path or '<data>'}: $[{what!r}]: {exc}") from None


@dataclass(frozen=True)
class Scenario:
    name: str
    scene: Scene
    layout: Mapping[str, Pose] = field(default_factory=dict)
    vision: VisionConfig = VisionConfig()
    search: Mapping = field(default_factory=dict)
    # a fixed, authored observation replaces the vision simulator when present
    observation: Optional[Observation] = None
    description: str = ""
    # what the camera sees; differs from ``scene`` for restricted scenarios, so
    # boxes keep the occlusion they had in the full structure
    camera_scene: Optional[Scene] = None

    @property
    def catalog(self):
        return self.scene.catalog

    def observe(self, seed: int) -> Observation:
        if self.observation is not None:
            return self.observation
        obs = observe(self.camera_scene or self.scene, replace(self.vision, seed=seed))
        if self.camera_scene is not None:
            obs = obs.restricted(self.scene.ids)
        return obs

    def search_config(self, seed: int, overrides: Optional[Mapping] = None) -> SearchConfig:
        kw = {**self.search, **(overrides or {}), "seed": seed}
        return _config(SearchConfig, kw, None, "search")

    def restricted(self, ids: Sequence[str]) -> "Scenario":
        """The same scenario over a subset of the catalog."""
        keep = set(ids)
        scene = Scene([p for p in self.catalog if p.id in keep], self.scene.table_extent,
                      {k: v for k, v in self.scene.placements.items() if k in keep})
        obs = self.observation.restricted(keep) if self.observation is not None else None
        return replace(self, name=f"{self.name}[{','.join(p.id for p in scene.catalog)}]",
                       scene=scene, layout={k: v for k, v in self.layout.items() if k in keep},
                       observation=obs, camera_scene=self.camera_scene or self.scene)


def load_scenario(source: str) -> Scenario:
    """Load a scenario by bundled name (``A``, ``B``, ``C``, ``overlap``) or file path."""
    if source in BUNDLED and not os.path.exists(source):
        path = str(resources.files("stackcopy") / "scenarios" / source / "scenario.json")
    elif os.path.isdir(source):
        path = os.path.join(source, "scenario.json")
    else:
        path = source
    data = formats.load_scenario_json(path)
    base = os.path.dirname(path)

    def ref(key):
        p = os.path.join(base, data[key])
        if not os.path.exists(p):
            raise formats.FormatError(f"{path}: $[{key!r}]: referenced file {p} does not exist")
        return p

    scene = formats.load_scene(ref("scene"))
    layout = formats.load_layout(ref("layout")) if "layout" in data else {}
    obs = formats.load_observation(ref("observation")) if "observation" in data else None
    vision = _config(VisionConfig, data.get("vision", {}), path, "vision")
    search = dict(data.get("search", {}))
    _config(SearchConfig, search, path, "search")
    return Scenario(data["name"], scene, layout, vision, search, obs,
                    data.get("description", ""))


def bundled_scenarios() -> Dict[str, Scenario]:
    return {name: load_scenario(name) for name in BUNDLED}


def resting_supports(scene: Scene, tol: float = 1e-9) -> Dict[str, Tuple[str, ...]]:
    """Ground-truth support relation: what each placed box rests on (empty = table)."""
    out = {}
    prims = scene.by_id
    for pid, pose in scene.placements.items():
        p = prims[pid]
        bottom = pose.z - p.extents(pose.rot)[2] / 2
        fa = footprint(p, pose)
        sup = []
        if bottom > tol:
            for qid, q in scene.placements.items():
                if qid == pid:
                    continue
                top = q.z + prims[qid].extents(q.rot)[2] / 2
                fb = footprint(prims[qid], q)
                if (abs(top - bottom) <= 1e-7 and min(fa.xmax, fb.xmax) > max(fa.xmin, fb.xmin)
                        and min(fa.ymax, fb.ymax) > max(fa.ymin, fb.ymin)):
                    sup.append(qid)
        out[pid] = tuple(sup)
    return out


def support_closed_subset(scene: Scene, max_size: int = 4,
                          first: Sequence[str] = ()) -> Tuple[str, ...]:
    """Greedy subset in which every member's supports are members too.

    Candidates are tried in catalog order, except that ids in ``first`` are
    tried before the rest.
    """
    sup = resting_supports(scene)
    chosen: List[str] = []

    def closure(pid, acc):
        if pid in acc:
            return acc
        acc = acc | {pid}
        for s in sup.get(pid, ()):
            acc = closure(s, acc)
        return acc

    order = [i for i in first if i in sup] + [p.id for p in scene.catalog if p.id not in first]
    for pid in order:
        grown = closure(pid, frozenset(chosen))
        if len(grown) <= max_size:
            chosen = [q.id for q in scene.catalog if q.id in grown]
    return tuple(chosen)


# -- diagnostics -------------------------------------------------------------

def margin_warnings(plan: PlanResult, catalog, margin: float = MARGIN_WARNING) -> List[str]:
    """Placements whose center sits within ``margin`` of a support footprint edge.

    Stacked placements check both horizontal axes; bridges check the axis
    across the bridge, where the center must sit over each support.
    """
    prims = {p.id: p for p in catalog}
    poses = plan.solved_poses
    out = []
    for op in plan.operator_sequence:
        if op.kind == PUT_ON and op.args[1] != TABLE:
            axes = (0, 1)
        elif op.kind == PUT_ON_ALONG_X:
            axes = (1,)
        elif op.kind == PUT_ON_ALONG_Y:
            axes = (0,)
        else:
            continue
        a = op.args[0]
        if a not in poses:
            continue
        for s in op.args[1:]:
            fp = footprint(prims[s], poses[s])
            for k in axes:
                c = poses[a].position[k]
                lo, hi = (fp.xmin, fp.xmax) if k == 0 else (fp.ymin, fp.ymax)
                slack = min(c - lo, hi - c)
                if slack < margin:
                    out.append(f"{a} on {s}: center {slack * 1000:.2f} mm from the "
                               f"{'xy'[k]} edge of its support")
    return out


# -- batch runs --------------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    seed: int
    success: bool
    rollouts_used: int
    wall_time: float
    reward: float
    penetration_free: bool
    visible: int
    reward_trajectory: Tuple[float, ...] = ()
    warnings: Tuple[str, ...] = ()
    error: str = ""
    trace: Tuple[Tuple[int, float, bool, int], ...] = field(default=(), compare=False)

    @property
    def mean_rollout_reward(self) -> float:
        t = self.reward_trajectory
        return sum(t) / len(t) if t else 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("trace")
        d["reward_trajectory"] = list(self.reward_trajectory)
        d["warnings"] = list(self.warnings)
        return d


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation (0 for fewer than two values)."""
    if not values:
        return math.nan, math.nan
    m = statistics.fmean(values)
    return m, (statistics.stdev(values) if len(values) > 1 else 0.0)


@dataclass(frozen=True)
class RunReport:
    scenario: str
    search: Mapping
    records: Tuple[RunRecord, ...]

    @property
    def success_rate(self) -> float:
        return sum(r.success for r in self.records) / len(self.records) if self.records else 0.0

    def aggregates(self) -> dict:
        recs = self.records
        agg = {"seeds": len(recs), "success_rate": self.success_rate}
        for key, vals in (("rollouts_used", [r.rollouts_used for r in recs]),
                          ("wall_time", [r.wall_time for r in recs]),
                          ("mean_rollout_reward", [r.mean_rollout_reward for r in recs])):
            m, s = mean_std(vals)
            agg[key] = {"mean": m, "std": s}
        agg["rollouts_used"]["median"] = (statistics.median([r.rollouts_used for r in recs])
                                          if recs else math.nan)
        return agg

    def to_json(self) -> dict:
        return {"scenario": self.scenario, "search": dict(self.search),
                "aggregates": self.aggregates(),
                "records": [r.to_json() for r in self.records]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RUN_CSV_HEADER)
        for r in self.records:
            w.writerow([r.seed, int(r.success), r.rollouts_used, repr(r.wall_time),
                        repr(r.reward), int(r.penetration_free), r.visible,
                        repr(r.mean_rollout_reward), r.error])
        return buf.getvalue()

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_CSV_HEADER)
        for r in self.records:
            for i, reward, feasible, length in r.trace:
                w.writerow([r.seed, i, repr(reward), int(feasible), length])
        return buf.getvalue()

    def write(self, out_dir: str, trace: bool = False) -> List[str]:
        os.makedirs(out_dir, exist_ok=True)
        written = []
        for name, text in (("report.json", self.dumps() + "\n"), ("report.csv", self.to_csv()),
                           ("trace.csv", self.trace_csv() if trace else None)):
            if text is None:
                continue
            p = os.path.join(out_dir, name)
            with open(p, "w", encoding="utf-8") as fh:
                fh.write(text)
            written.append(p)
        return written


def plan_seed(scenario: Scenario, seed: int, overrides: Optional[Mapping] = None,
              record_time: bool = True) -> Tuple[RunRecord, Optional[PlanResult]]:
    obs = scenario.observe(seed)
    cfg = scenario.search_config(seed, overrides)
    t0 = time.perf_counter()
    try:
        planner = MctsPlanner(scenario.catalog, obs, scenario.layout, cfg,
                              scenario.scene.table_extent)
        result = planner.run()
    except PlanningError as exc:
        wall = time.perf_counter() - t0 if record_time else 0.0
        return RunRecord(seed, False, 0, wall, 0.0, False, len(obs.visible(scenario.catalog)),
                         error=str(exc)), None
    wall = time.perf_counter() - t0 if record_time else 0.0
    return RunRecord(
        seed=seed, success=result.success, rollouts_used=result.rollouts_used,
        wall_time=wall, reward=result.reward, penetration_free=result.penetration_free,
        visible=len(planner.visible), reward_trajectory=result.reward_trace,
        warnings=tuple(margin_warnings(result, scenario.catalog)),
        trace=tuple(planner.trace)), result


def _plan_seed_job(args):
    return plan_seed(*args)[0]


def run_scenario(scenario: Scenario, seeds: Sequence[int], overrides: Optional[Mapping] = None,
                 record_time: bool = True, workers: int = 1) -> RunReport:
    """Observe, plan and record once per seed.

    With ``record_time=False`` wall times are recorded as 0, which makes the
    report a pure function of scenario, seeds and overrides.
    """
    seeds = list(seeds)
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_plan_seed_job,
                                    [(scenario, s, overrides, record_time) for s in seeds]))
    else:
        records = [plan_seed(scenario, s, overrides, record_time)[0] for s in seeds]
    search = {**scenario.search, **(overrides or {})}
    return RunReport(scenario.name, search, tuple(records))


# -- ablations ---------------------------------------------------------------

SEARCH_ROWS = (
    ("R.S.", RANDOM, DENSE),
    ("MCTS", MCTS, SPARSE),
    ("MCTS", MCTS, DENSE),
)


@dataclass(frozen=True)
class AblationRow:
    method: str
    reward: str
    guided: bool
    removal: bool
    uct_variant: str
    report: RunReport

    @property
    def key(self):
        return (self.method, self.reward, self.guided, self.removal, self.uct_variant)


@dataclass(frozen=True)
class AblationResult:
    scenario: str
    rows: Tuple[AblationRow, ...]

    def row(self, method: str, reward: str, guided: bool, removal: bool = True,
            uct_variant: str = STANDARD) -> AblationRow:
        if method == "R.S.":
            reward = DENSE
        for r in self.rows:
            if r.key == (method, reward, guided, removal, uct_variant):
                return r
        raise KeyError((method, reward, guided, removal, uct_variant))

    def to_json(self) -> dict:
        return {"scenario": self.scenario, "rows": [
            {"method": r.method, "reward": r.reward if r.method != "R.S." else None,
             "guided": r.guided, "penetration_removal": r.removal,
             "uct_variant": r.uct_variant, "report": r.report.to_json()}
            for r in self.rows]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ABLATION_CSV_HEADER)
        for r in self.rows:
            agg = r.report.aggregates()
            w.writerow([self.scenario, r.method, r.reward if r.method != "R.S." else "",
                        int(r.guided), int(r.removal), r.uct_variant,
                        repr(agg["success_rate"]), repr(agg["rollouts_used"]["mean"]),
                        repr(agg["rollouts_used"]["std"]), repr(agg["rollouts_used"]["median"]),
                        repr(agg["wall_time"]["mean"]), repr(agg["wall_time"]["std"])])
        return buf.getvalue()


ABLATION_CSV_HEADER = ("scenario", "method", "reward", "guided", "penetration_removal",
                       "uct_variant", "success_rate", "rollouts_mean", "rollouts_std",
                       "rollouts_median", "wall_time_mean", "wall_time_std")


def run_ablation_matrix(scenario: Scenario, seeds: Sequence[int],
                        overrides: Optional[Mapping] = None, record_time: bool = True,
                        workers: int = 1, uct_variants: Sequence[str] = (STANDARD, INVERTED)
                        ) -> AblationResult:
    """Search-method matrix, removal on/off pair and UCT variants for one scenario.

    The six {R.S., MCTS-sparse, MCTS-dense} x {guided, unguided} rows use
    removal on and standard UCT. The removal pair and the extra UCT variants
    are measured on MCTS-dense with guidance.
    """
    base = dict(overrides or {})
    rows = []

    def add(method, search, reward, guided, removal=True, variant=STANDARD):
        ov = {**base, "search": search, "reward_mode": reward, "guided": guided,
              "penetration_removal": removal, "uct_variant": variant}
        rep = run_scenario(scenario, seeds, ov, record_time, workers)
        rows.append(AblationRow(method, reward, guided, removal, variant, rep))

    for guided in (False, True):
        for method, search, reward in SEARCH_ROWS:
            add(method, search, reward, guided)
    add("MCTS", MCTS, DENSE, True, removal=False)
    for v in uct_variants:
        if v != STANDARD:
            add("MCTS", MCTS, DENSE, True, variant=v)
    return AblationResult(scenario.name, tuple(rows))


def _pm(mean, std, digits=0):
    if math.isnan(mean):
        return "-"
    return f"{mean:.{digits}f}±{std:.{digits}f}"


def _table(header: Sequence[str], body: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *body]) for i in range(len(header))]
    line = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), sep, *map(line, body)])


def format_search_table(results: Sequence[AblationResult]) -> str:
    """Rollouts (mean±std, median, success) per search method, one column per scenario."""
    header = ["method", "reward", "guided", "uct"] + [r.scenario for r in results]
    body = []
    keys = [r.key for r in results[0].rows if r.removal] if results else []
    for key in keys:
        method, reward, guided, _, variant = key
        cells = [method, "---" if method == "R.S." else reward, "yes" if guided else "no",
                 variant]
        for res in results:
            try:
                agg = res.row(method, reward, guided, True, variant).report.aggregates()
            except KeyError:
                cells.append("-")
                continue
            ro = agg["rollouts_used"]
            cells.append(f"{_pm(ro['mean'], ro['std'])} (med {ro['median']:g}, "
                         f"{100 * agg['success_rate']:.0f}%)")
        body.append(cells)
    return _table(header, body)


def format_removal_table(results: Sequence[AblationResult]) -> str:
    """Success rate, rollouts and wall time with penetration removal off and on."""
    header = ["metric", "removal"] + [r.scenario for r in results]
    body = []
    for metric in ("success rate (%)", "rollouts", "time (s)"):
        for removal in (False, True):
            cells = [metric, "on" if removal else "off"]
            for res in results:
                agg = res.row("MCTS", DENSE, True, removal).report.aggregates()
                if metric.startswith("success"):
                    cells.append(f"{100 * agg['success_rate']:.0f}")
                elif metric == "rollouts":
                    cells.append(_pm(agg["rollouts_used"]["mean"], agg["rollouts_used"]["std"]))
                else:
                    cells.append(_pm(agg["wall_time"]["mean"], agg["wall_time"]["std"], 2))
            body.append(cells)
    return _table(header, body)


# -- plan export -------------------------------------------------------------

JSON, STEP_LIST = "json", "step-list"


def format_step_list(plan: PlanResult) -> str:
    """Numbered pick/place lines; place poses already include the global offset."""
    lines = []
    if not plan.success:
        lines.append(f"# best-effort plan: no exact match found (reward {plan.reward:.3f})")
    for i, s in enumerate(plan.steps, 1):
        pick = f"({s.pick.x:.4f}, {s.pick.y:.4f})" if s.pick is not None else "(layout n/a)"
        q = s.place
        lines.append(f"{i}. {s.id}: pick {pick} → place "
                     f"({q.x:.4f}, {q.y:.4f}, {q.z:.4f}, {q.rot})")
    return "\n".join(lines) + ("\n" if lines else "")


def export_plan(plan: PlanResult, fmt: str = JSON, path: Optional[str] = None) -> str:
    """Render ``plan`` as JSON or a step list; writes ``path`` when given."""
    if fmt == JSON:
        text = json.dumps(formats.plan_to_json(plan), indent=2) + "\n"
    elif fmt == STEP_LIST:
        text = format_step_list(plan)
    else:
        raise ValueError(f"unknown export format {fmt!r}; use {JSON!r} or {STEP_LIST!r}")
    if path is not None:
        d = os.path.dirname(path)
        if d:
            os.makedirs(d, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
