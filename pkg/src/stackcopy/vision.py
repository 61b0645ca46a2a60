"""Synthetic detector: occlusion-driven misses, pose noise and hallucinations.

Boxes are projected orthographically along the camera direction and each
projection is approximated by its bounding rectangle in the image plane, so
visible areas reduce to exact rectangle-union arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .scene import Observation, Pose, Primitive, Scene, box_bounds


@dataclass(frozen=True)
class VisionConfig:
    camera_dir: Tuple[float, float, float] = (0.0, 1.0, 0.0)
    occlusion_threshold: float = 0.7
    pos_noise_sigma: float = 0.003
    false_positive_rate: float = 0.0
    confidence_threshold: float = 0.95
    forced_hidden: Tuple[str, ...] = ()
    seed: int = 0
    # maps visible-area fraction to a detection score in [0, 1]
    confidence_model: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        for name in ("occlusion_threshold", "confidence_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.pos_noise_sigma < 0:
            raise ValueError("pos_noise_sigma must be >= 0")
        if self.false_positive_rate < 0:
            raise ValueError("false_positive_rate must be >= 0")
        object.__setattr__(self, "forced_hidden", tuple(self.forced_hidden))
        object.__setattr__(self, "camera_dir", tuple(float(v) for v in self.camera_dir))


def _image_basis(camera_dir):
    d = np.asarray(camera_dir, dtype=float)
    norm = np.linalg.norm(d)
    if d.shape != (3,) or norm < 1e-12:
        raise ValueError("camera_dir must be a non-zero 3-vector")
    d = d / norm
    u = np.cross(d, [0.0, 0.0, 1.0])
    if np.linalg.norm(u) < 1e-9:
        u = np.array([1.0, 0.0, 0.0])
    u /= np.linalg.norm(u)
    v = np.cross(u, d)
    return d, u, v


def _projection(prim: Primitive, pose: Pose, d, u, v):
    lo, hi = box_bounds(prim, pose)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    pu, pv = corners @ u, corners @ v
    return (pu.min(), pu.max(), pv.min(), pv.max()), float(np.asarray(pose.position) @ d)


def union_area(rects) -> float:
    """Exact area of a union of axis-aligned rectangles ``(x0, x1, y0, y1)``."""
    rects = [r for r in rects if r[1] > r[0] and r[3] > r[2]]
    if not rects:
        return 0.0
    xs = sorted({r[0] for r in rects} | {r[1] for r in rects})
    area = 0.0
    for x0, x1 in zip(xs, xs[1:]):
        spans = sorted((r[2], r[3]) for r in rects if r[0] <= x0 and r[1] >= x1)
        covered, cur_lo, cur_hi = 0.0, None, None
        for lo, hi in spans:
            if cur_hi is None or lo > cur_hi:
                if cur_hi is not None:
                    covered += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            else:
                cur_hi = max(cur_hi, hi)
        if cur_hi is not None:
            covered += cur_hi - cur_lo
        area += covered * (x1 - x0)
    return area


def visible_fraction(target: str, scene: Scene, camera_dir=(0.0, 1.0, 0.0)) -> float:
    d, u, v = _image_basis(camera_dir)
    prims = scene.by_id
    rect, depth = _projection(prims[target], scene.placements[target], d, u, v)
    total = (rect[1] - rect[0]) * (rect[3] - rect[2])
    clipped = []
    for pid, pose in scene.placements.items():
        if pid == target:
            continue
        r, dep = _projection(prims[pid], pose, d, u, v)
        if dep >= depth - 1e-9:
            continue
        clipped.append((max(r[0], rect[0]), min(r[1], rect[1]),
                        max(r[2], rect[2]), min(r[3], rect[3])))
    hidden = union_area(clipped)
    return float(min(1.0, max(0.0, 1.0 - hidden / total)))


def observe(scene: Scene, cfg: VisionConfig = VisionConfig()) -> Observation:
    _image_basis(cfg.camera_dir)
    rng = np.random.default_rng(cfg.seed)
    catalog = scene.catalog
    # one noise draw per catalog entry keeps draws independent of which objects survive
    noise = rng.normal(0.0, cfg.pos_noise_sigma, size=(len(catalog), 3)) \
        if cfg.pos_noise_sigma > 0 else np.zeros((len(catalog), 3))
    to_conf = cfg.confidence_model or (lambda f: f)
    hidden = set(cfg.forced_hidden)
    detections, confidence = {}, {}
    for i, prim in enumerate(catalog):
        pose = scene.placements.get(prim.id)
        if pose is None or prim.id in hidden:
            continue
        frac = visible_fraction(prim.id, scene, cfg.camera_dir)
        if frac < cfg.occlusion_threshold:
            continue
        conf = float(to_conf(frac))
        if conf < cfg.confidence_threshold:
            continue
        pos = tuple(float(p + e) for p, e in zip(pose.position, noise[i]))
        detections[prim.id] = Pose(pos, pose.rot)
        confidence[prim.id] = conf

    false_positives = []
    n_fp = int(rng.poisson(cfg.false_positive_rate)) if cfg.false_positive_rate > 0 else 0
    t = scene.table_extent
    for j in range(n_fp):
        shape = catalog[int(rng.integers(len(catalog)))]
        rot = int(rng.integers(2))
        sx, sy, sz = shape.extents(rot)
        x = rng.uniform(t.xmin + sx / 2, t.xmax - sx / 2)
        y = rng.uniform(t.ymin + sy / 2, t.ymax - sy / 2)
        conf = float(rng.uniform(cfg.confidence_threshold, 1.0))
        if shape.id in detections or shape.id in hidden:
            shape = Primitive(f"fp{j}", shape.dims, shape.label)
        pose = Pose((float(x), float(y), sz / 2), rot)
        detections[shape.id] = pose
        confidence[shape.id] = conf
        false_positives.append((shape, pose))
    return Observation(detections, confidence, tuple(false_positives))
