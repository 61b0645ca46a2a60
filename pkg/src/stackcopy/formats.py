"""JSON file formats for scenes, observations, layouts, plans and scenarios.

Every loader validates against a JSON schema before building objects, and
reports problems as ``FormatError`` naming the file and the offending
location (line/column for malformed JSON, a JSON path for schema errors).
"""
from __future__ import annotations

import json
import os
from typing import Any, Dict, List, Mapping, Optional, Sequence

import jsonschema

from .scene import Observation, PlanResult, PlanStep, Pose, Primitive, Rect, Scene
from .strips import Operator, sequence_from_json, sequence_to_json

_NUM = {"type": "number"}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_ID = {"type": "string", "minLength": 1}

POSE = {
    "type": "object",
    "properties": {"pos": _VEC3, "rot": {"enum": [0, 1]}},
    "required": ["pos", "rot"],
    "additionalProperties": False,
}
PRIMITIVE = {
    "type": "object",
    "properties": {
        "id": _ID,
        "label": {"type": "string"},
        "dims": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                 "minItems": 3, "maxItems": 3},
    },
    "required": ["id", "dims"],
    "additionalProperties": False,
}
PLACED = {
    "type": "object",
    "properties": {"id": _ID, "pose": POSE},
    "required": ["id", "pose"],
    "additionalProperties": False,
}
OPERATOR = {
    "type": "object",
    "properties": {
        "op": {"enum": ["PutOn", "PutOnAlongX", "PutOnAlongY", "Rotate"]},
        "args": {"type": "array", "items": _ID, "minItems": 1, "maxItems": 3},
    },
    "required": ["op", "args"],
    "additionalProperties": False,
}

SCENE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "catalog": {"type": "array", "items": PRIMITIVE},
        "table_extent": {"type": "array", "items": _NUM, "minItems": 4, "maxItems": 4},
        "placements": {"type": "array", "items": PLACED},
    },
    "required": ["catalog"],
    "additionalProperties": False,
}
OBSERVATION_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "observations": {"type": "array", "items": {
            "type": "object",
            "properties": {"id": _ID, "pose": POSE,
                           "confidence": {"type": "number", "minimum": 0, "maximum": 1}},
            "required": ["id", "pose"],
            "additionalProperties": False,
        }},
        "false_positives": {"type": "array", "items": {
            "type": "object",
            "properties": {"primitive": PRIMITIVE, "pose": POSE},
            "required": ["primitive", "pose"],
            "additionalProperties": False,
        }},
    },
    "required": ["observations"],
    "additionalProperties": False,
}
LAYOUT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {"picks": {"type": "array", "items": PLACED}},
    "required": ["picks"],
    "additionalProperties": False,
}
SEQUENCE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {"sequence": {"type": "array", "items": OPERATOR}},
    "required": ["sequence"],
    "additionalProperties": False,
}
_OPT_POSE = {"anyOf": [POSE, {"type": "null"}]}
PLAN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "success": {"type": "boolean"},
        "reward": {"type": "number", "minimum": 0, "maximum": 1},
        "rollouts_used": {"type": "integer", "minimum": 0},
        "penetration_free": {"type": "boolean"},
        "place_offset": _VEC3,
        "operator_sequence": {"type": "array", "items": OPERATOR},
        "steps": {"type": "array", "items": {
            "type": "object",
            "properties": {"id": _ID, "pick": _OPT_POSE, "place": POSE,
                           "grasp_axis": {"anyOf": [{"enum": ["x", "y"]}, {"type": "null"}]}},
            "required": ["id", "place"],
            "additionalProperties": False,
        }},
        "solved_poses": {"type": "array", "items": PLACED},
        "reward_trace": {"type": "array", "items": _NUM},
    },
    "required": ["success", "reward", "rollouts_used", "operator_sequence", "steps",
                 "solved_poses"],
    "additionalProperties": False,
}
SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "name": _ID,
        "description": {"type": "string"},
        "scene": {"type": "string"},
        "layout": {"type": "string"},
        "observation": {"type": "string"},
        "vision": {"type": "object"},
        "search": {"type": "object"},
    },
    "required": ["name", "scene"],
    "additionalProperties": False,
}


class FormatError(ValueError):
    """A file failed to parse or validate; the message names file and location."""


def _where(path: Optional[str]) -> str:
    return path or "<data>"


def read_json(path: str) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    except OSError as exc:
        raise FormatError(f"{path}: cannot read: {exc.strerror}") from None


def write_json(path: str, data: Any) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def validate(data: Any, schema: dict, path: Optional[str] = None) -> None:
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(data),
                    key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        loc = "$" + "".join(f"[{p!r}]" if isinstance(p, str) else f"[{p}]"
                            for p in e.absolute_path)
        more = f" (+{len(errors) - 1} more)" if len(errors) > 1 else ""
        raise FormatError(f"{_where(path)}: {loc}: {e.message}{more}")


# -- pose and primitive ------------------------------------------------------

def pose_to_json(pose: Pose) -> dict:
    return {"pos": [float(v) for v in pose.position], "rot": int(pose.rot)}


def pose_from_json(d: Mapping) -> Pose:
    return Pose(tuple(float(v) for v in d["pos"]), int(d["rot"]))


def primitive_to_json(p: Primitive) -> dict:
    return {"id": p.id, "label": p.label, "dims": [float(v) for v in p.dims]}


def primitive_from_json(d: Mapping) -> Primitive:
    return Primitive(d["id"], tuple(float(v) for v in d["dims"]), d.get("label", ""))


def _placed(d: Mapping[str, Pose], order: Sequence[str] = ()) -> List[dict]:
    ids = [i for i in order if i in d] + sorted(set(d) - set(order))
    return [{"id": i, "pose": pose_to_json(d[i])} for i in ids]


def _unplaced(items, path) -> Dict[str, Pose]:
    out = {}
    for i, item in enumerate(items):
        if item["id"] in out:
            raise FormatError(f"{_where(path)}: entry {i}: duplicate id {item['id']!r}")
        out[item["id"]] = pose_from_json(item["pose"])
    return out


# -- scene -------------------------------------------------------------------

def scene_to_json(scene: Scene) -> dict:
    return {
        "catalog": [primitive_to_json(p) for p in scene.catalog],
        "table_extent": [float(v) for v in scene.table_extent],
        "placements": _placed(scene.placements, scene.ids),
    }


def scene_from_json(data: Any, path: Optional[str] = None) -> Scene:
    validate(data, SCENE_SCHEMA, path)
    catalog = [primitive_from_json(p) for p in data["catalog"]]
    kw = {}
    if "table_extent" in data:
        kw["table_extent"] = Rect(*data["table_extent"])
    try:
        return Scene(catalog, placements=_unplaced(data.get("placements", []), path), **kw)
    except ValueError as exc:
        raise FormatError(f"{_where(path)}: {exc}") from None


def load_scene(path: str) -> Scene:
    return scene_from_json(read_json(path), path)


def save_scene(path: str, scene: Scene) -> None:
    write_json(path, scene_to_json(scene))


# -- observation -------------------------------------------------------------

def observation_to_json(obs: Observation) -> dict:
    return {
        "observations": [
            {"id": i, "pose": pose_to_json(obs.detections[i]),
             "confidence": float(obs.confidence.get(i, 1.0))}
            for i in obs.detections
        ],
        "false_positives": [
            {"primitive": primitive_to_json(p), "pose": pose_to_json(q)}
            for p, q in obs.false_positives
        ],
    }


def observation_from_json(data: Any, path: Optional[str] = None) -> Observation:
    validate(data, OBSERVATION_SCHEMA, path)
    det = _unplaced(data["observations"], path)
    conf = {o["id"]: float(o.get("confidence", 1.0)) for o in data["observations"]}
    fps = tuple((primitive_from_json(f["primitive"]), pose_from_json(f["pose"]))
                for f in data.get("false_positives", []))
    return Observation(det, conf, fps)


def load_observation(path: str) -> Observation:
    return observation_from_json(read_json(path), path)


def save_observation(path: str, obs: Observation) -> None:
    write_json(path, observation_to_json(obs))


# -- layout ------------------------------------------------------------------

def layout_to_json(picks: Mapping[str, Pose]) -> dict:
    return {"picks": _placed(picks)}


def layout_from_json(data: Any, path: Optional[str] = None) -> Dict[str, Pose]:
    validate(data, LAYOUT_SCHEMA, path)
    return _unplaced(data["picks"], path)


def load_layout(path: str) -> Dict[str, Pose]:
    return layout_from_json(read_json(path), path)


# -- operator sequences ------------------------------------------------------

def load_sequence(path: str) -> List[Operator]:
    data = read_json(path)
    validate(data, SEQUENCE_SCHEMA, path)
    return sequence_from_json(data["sequence"])


def save_sequence(path: str, seq: Sequence[Operator]) -> None:
    write_json(path, {"sequence": sequence_to_json(seq)})


# -- plan --------------------------------------------------------------------

def plan_to_json(plan: PlanResult) -> dict:
    return {
        "success": bool(plan.success),
        "reward": float(plan.reward),
        "rollouts_used": int(plan.rollouts_used),
        "penetration_free": bool(plan.penetration_free),
        "place_offset": [float(v) for v in plan.place_offset],
        "operator_sequence": sequence_to_json(plan.operator_sequence),
        "steps": [
            {"id": s.id, "pick": pose_to_json(s.pick) if s.pick is not None else None,
             "place": pose_to_json(s.place), "grasp_axis": s.grasp_axis}
            for s in plan.steps
        ],
        "solved_poses": _placed(plan.solved_poses, [s.id for s in plan.steps]),
        "reward_trace": [float(r) for r in plan.reward_trace],
    }


def plan_from_json(data: Any, path: Optional[str] = None) -> PlanResult:
    validate(data, PLAN_SCHEMA, path)
    steps = tuple(
        PlanStep(s["id"], pose_from_json(s["pick"]) if s.get("pick") else None,
                 pose_from_json(s["place"]), s.get("grasp_axis"))
        for s in data["steps"]
    )
    return PlanResult(
        steps=steps,
        solved_poses=_unplaced(data["solved_poses"], path),
        reward=float(data["reward"]),
        rollouts_used=int(data["rollouts_used"]),
        operator_sequence=tuple(sequence_from_json(data["operator_sequence"])),
        success=bool(data["success"]),
        penetration_free=bool(data.get("penetration_free", True)),
        place_offset=tuple(data.get("place_offset", (0.0, 0.0, 0.0))),
        reward_trace=tuple(data.get("reward_trace", ())),
    )


def load_plan(path: str) -> PlanResult:
    return plan_from_json(read_json(path), path)


def save_plan(path: str, plan: PlanResult) -> None:
    write_json(path, plan_to_json(plan))


# -- scenario ----------------------------------------------------------------

def load_scenario_json(path: str) -> dict:
    data = read_json(path)
    validate(data, SCENARIO_SCHEMA, path)
    return data
