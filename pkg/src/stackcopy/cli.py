"""Command-line entry point: ``stackcopy <verb> ...``.

Exit codes: 0 success, 1 planning failure (no exact match within budget, or a
verification that does not hold), 2 input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from . import formats, qp
from .constraints import build_axis_qp, recover_poses
from .harness import (BUNDLED, JSON, STEP_LIST, export_plan, format_removal_table,
                      format_search_table, load_scenario, margin_warnings, run_ablation_matrix,
                      run_scenario)
from .planner import (DENSE, INVERTED, MCTS, RANDOM, SPARSE, STANDARD, MctsPlanner,
                      PlanningError, SearchConfig)
from .scene import PENETRATION_TOL, interpenetrating_pairs
from .vision import VisionConfig, observe

EXIT_OK, EXIT_PLAN_FAILED, EXIT_INPUT = 0, 1, 2

log = logging.getLogger("stackcopy")


class InputError(Exception):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _floats(n):
    def parse(s):
        parts = [float(p) for p in s.replace(",", " ").split()]
        if len(parts) != n:
            raise argparse.ArgumentTypeError(f"expected {n} numbers, got {s!r}")
        return tuple(parts)
    return parse


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("search (SearchConfig fields)")
    g.add_argument("--exploration", type=float)
    g.add_argument("--reward-mode", choices=(DENSE, SPARSE))
    g.add_argument("--guided", type=_bool, metavar="BOOL")
    g.add_argument("--rollout-budget", type=int)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--uct-variant", choices=(STANDARD, INVERTED))
    g.add_argument("--penetration-removal", type=_bool, metavar="BOOL")
    g.add_argument("--search", choices=(MCTS, RANDOM))
    g.add_argument("--place-offset", type=_floats(3), metavar="X,Y,Z")
    g.add_argument("--max-penetration-iters", type=int)
    g.add_argument("--bridge-overlap", type=float)
    g.add_argument("--observation-filter", type=_bool, metavar="BOOL")


_SEARCH_KEYS = ("exploration", "reward_mode", "guided", "rollout_budget", "epsilon",
                "uct_variant", "penetration_removal", "search", "place_offset",
                "max_penetration_iters", "bridge_overlap", "observation_filter")


def _search_overrides(args) -> dict:
    return {k: getattr(args, k) for k in _SEARCH_KEYS if getattr(args, k, None) is not None}


def _add_vision_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("vision (VisionConfig fields)")
    g.add_argument("--camera-dir", type=_floats(3), metavar="X,Y,Z")
    g.add_argument("--occlusion-threshold", type=float)
    g.add_argument("--pos-noise-sigma", type=float)
    g.add_argument("--false-positive-rate", type=float)
    g.add_argument("--confidence-threshold", type=float)
    g.add_argument("--forced-hidden", nargs="*", metavar="ID")


_VISION_KEYS = ("camera_dir", "occlusion_threshold", "pos_noise_sigma", "false_positive_rate",
                "confidence_threshold", "forced_hidden")


def _seeds(text: str) -> List[int]:
    """``20`` means seeds 0..19; ``3,5,8`` and ``10-14`` list seeds explicitly."""
    try:
        if text.isdigit():
            return list(range(int(text)))
        out = []
        for part in text.split(","):
            if "-" in part:
                a, b = part.split("-")
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
        return out
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


# -- verbs -------------------------------------------------------------------

def cmd_generate_observation(args) -> int:
    scene = formats.load_scene(args.scene)
    kw = {k: getattr(args, k) for k in _VISION_KEYS if getattr(args, k) is not None}
    try:
        cfg = VisionConfig(seed=args.seed, **kw)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    obs = observe(scene, cfg)
    formats.save_observation(args.output, obs)
    log.info("detected %d of %d objects", len(obs.visible(scene.catalog)), len(scene.catalog))
    return EXIT_OK


def cmd_plan(args) -> int:
    scene = formats.load_scene(args.scene)
    obs = formats.load_observation(args.observation)
    layout = formats.load_layout(args.layout) if args.layout else {}
    try:
        cfg = SearchConfig(seed=args.seed, **_search_overrides(args))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    try:
        planner = MctsPlanner(scene.catalog, obs, layout, cfg, scene.table_extent)
    except PlanningError as exc:
        raise InputError(str(exc)) from None
    result = planner.run()
    formats.save_plan(args.output, result)
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write("rollout,reward,feasible,length\n")
            for i, r, f, n in planner.trace:
                fh.write(f"{i},{r!r},{int(f)},{n}\n")
    if args.dump_constraints and result.operator_sequence:
        rec = recover_poses(result.operator_sequence, scene.catalog, planner.observed,
                            cfg.penetration_removal, scene.table_extent,
                            cfg.max_penetration_iters, bridge_overlap=cfg.bridge_overlap)
        print(rec.system.dump(), file=sys.stderr)
    for w in margin_warnings(result, scene.catalog):
        log.warning("margin: %s", w)
    log.info("%s after %d rollouts, reward %.3f", "solved" if result.success else "no exact match",
             result.rollouts_used, result.reward)
    return EXIT_OK if result.success else EXIT_PLAN_FAILED


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    report = run_scenario(scenario, args.seeds, _search_overrides(args), workers=args.workers)
    paths = report.write(args.out_dir, trace=args.verbose > 0)
    agg = report.aggregates()
    ro = agg["rollouts_used"]
    print(f"{scenario.name}: success {100 * agg['success_rate']:.0f}%, rollouts "
          f"{ro['mean']:.1f}±{ro['std']:.1f} (median {ro['median']:g})")
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK if agg["success_rate"] == 1.0 else EXIT_PLAN_FAILED


def cmd_ablate(args) -> int:
    results = []
    for name in args.scenario:
        scenario = load_scenario(name)
        log.info("ablating %s", scenario.name)
        results.append(run_ablation_matrix(scenario, args.seeds, _search_overrides(args),
                                           workers=args.workers))
    text = ("search method and reward\n" + format_search_table(results) +
            "\n\npenetration removal (MCTS, dense, guided)\n" + format_removal_table(results))
    print(text)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "ablation.txt"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        with open(os.path.join(args.out_dir, "ablation.json"), "w", encoding="utf-8") as fh:
            json.dump([r.to_json() for r in results], fh, indent=2)
        with open(os.path.join(args.out_dir, "ablation.csv"), "w", encoding="utf-8") as fh:
            for i, r in enumerate(results):
                csv_text = r.to_csv()
                fh.write(csv_text if i == 0 else csv_text.split("\n", 1)[1])
    return EXIT_OK


def cmd_verify(args) -> int:
    """Re-derive the constraint system of a plan and certify its poses."""
    scene = formats.load_scene(args.scene)
    obs = formats.load_observation(args.observation)
    plan = formats.load_plan(args.plan)
    ids = set(scene.ids)
    observed = {k: v for k, v in obs.detections.items() if k in ids}
    if not plan.operator_sequence:
        print("plan is empty: nothing to verify")
        return EXIT_PLAN_FAILED
    rec = recover_poses(plan.operator_sequence, scene.catalog, observed,
                        args.penetration_removal, scene.table_extent)
    if not rec.feasible:
        print(f"constraint system infeasible ({rec.status})")
        return EXIT_PLAN_FAILED
    poses = plan.solved_poses
    missing = ids - set(poses)
    if missing:
        raise InputError(f"{args.plan}: solved_poses lacks {sorted(missing)}")
    ok = True
    resid = rec.system.residual(poses)
    print(f"stability residual {resid:.3e}")
    ok &= resid <= 1e-6
    for axis in ("x", "y"):
        prob = build_axis_qp(rec.system, scene.catalog, observed, axis, scene.table_extent)
        k = "xy".index(axis)
        x = [poses[p.id].position[k] for p in scene.catalog]
        kkt = qp.check_kkt(prob, x)
        print(f"{axis}: stationarity {kkt.stationarity:.3e} primal {kkt.primal:.3e} "
              f"dual {kkt.dual:.3e} complementarity {kkt.complementarity:.3e}")
        ok &= kkt.max <= qp.KKT_TOL
    pairs = interpenetrating_pairs(scene.catalog, poses, PENETRATION_TOL)
    if pairs:
        print(f"interpenetrating pairs: {pairs}")
    ok &= not pairs
    print("verified" if ok else "verification failed")
    return EXIT_OK if ok else EXIT_PLAN_FAILED


def cmd_export(args) -> int:
    plan = formats.load_plan(args.plan)
    text = export_plan(plan, args.format, args.output)
    if args.output is None:
        sys.stdout.write(text)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stackcopy", description=__doc__.splitlines()[0])
    verbosity = argparse.ArgumentParser(add_help=False)
    verbosity.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS,
                           help="more logging; with run, also write per-rollout trace.csv")
    ap.add_argument("-v", "--verbose", action="count", default=0,
                    help="more logging; with run, also write per-rollout trace.csv")
    sub = ap.add_subparsers(dest="verb", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[verbosity], **kw)

    p = add("generate-observation", help="simulate detections for a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_vision_flags(p)
    p.set_defaults(func=cmd_generate_observation)

    p = add("plan", help="search for an assembly plan")
    p.add_argument("--scene", required=True, help="scene file providing catalog and table")
    p.add_argument("--observation", required=True)
    p.add_argument("--layout")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", metavar="CSV", help="per-rollout trace log")
    p.add_argument("--dump-constraints", action="store_true",
                   help="print the final constraint system to stderr")
    _add_search_flags(p)
    p.set_defaults(func=cmd_plan)

    p = add("run", help="seeded batch run of one scenario")
    p.add_argument("--scenario", required=True, help=f"bundled name {BUNDLED} or path")
    p.add_argument("--seeds", type=_seeds, default=list(range(20)))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1)
    _add_search_flags(p)
    p.set_defaults(func=cmd_run)

    p = add("ablate", help="search-method and penetration-removal ablations")
    p.add_argument("--scenario", action="append", required=True)
    p.add_argument("--seeds", type=_seeds, default=list(range(20)))
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int, default=1)
    _add_search_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = add("verify", help="check a plan's poses: constraints, KKT, penetration")
    p.add_argument("--scene", required=True)
    p.add_argument("--observation", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--penetration-removal", type=_bool, default=True, metavar="BOOL")
    p.set_defaults(func=cmd_verify)

    p = add("export", help="render a plan as JSON or a numbered step list")
    p.add_argument("--plan", required=True)
    p.add_argument("--format", choices=(JSON, STEP_LIST), default=STEP_LIST)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_export)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (formats.FormatError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
