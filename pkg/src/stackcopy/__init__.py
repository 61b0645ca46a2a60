"""Rebuild a block assembly from a partial set of detections.

Pipeline: a simulated detector yields poses for the visible boxes, a Monte
Carlo tree search over STRIPS pick-and-place operators proposes assembly
sequences, and a small QP per axis recovers physically consistent poses for
every box, hidden ones included.
"""
from .scene import Observation, PlanResult, PlanStep, Pose, Primitive, Rect, Scene
from .strips import Operator, StripsDomain, StripsState
from .qp import QpProblem, QpSolution, check_kkt, solve
from .constraints import recover_poses, stability_constraints
from .planner import MctsPlanner, PlanningError, SearchConfig, plan
from .vision import VisionConfig, observe
from .harness import Scenario, load_scenario, run_ablation_matrix, run_scenario, export_plan
from .estimators import AssemblyPlanner, VisionSimulator

__all__ = [
    "Observation", "PlanResult", "PlanStep", "Pose", "Primitive", "Rect", "Scene",
    "Operator", "StripsDomain", "StripsState", "QpProblem", "QpSolution", "check_kkt",
    "solve", "recover_poses", "stability_constraints", "MctsPlanner", "PlanningError",
    "SearchConfig", "plan", "VisionConfig", "observe", "Scenario", "load_scenario",
    "run_ablation_matrix", "run_scenario", "export_plan", "AssemblyPlanner", "VisionSimulator",
]
