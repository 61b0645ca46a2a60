"""Monte Carlo tree search over STRIPS assembly sequences.

Each rollout descends the tree with UCT, expands one operator, completes the
sequence with random operators, recovers poses with the constraint QP, and
backs up the fraction of visible objects matched by the recovered structure.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from .constraints import (BRIDGE_OVERLAP, MAX_PENETRATION_ITERS, PoseRecovery,
                          recover_poses)
from .scene import (Observation, PlanResult, PlanStep, Pose, Primitive, Rect,
                    footprint)
from .strips import (PUT_ON, PUT_ON_ALONG_X, ROTATE, TABLE,
                     Operator, StripsDomain, StripsState)

DENSE = "dense"
SPARSE = "sparse"
STANDARD = "standard"
INVERTED = "inverted"
MCTS = "mcts"
RANDOM = "random"
OPS_CACHE_SIZE = 200_000


class PlanningError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    exploration: float = math.sqrt(2)
    reward_mode: str = DENSE
    guided: bool = True
    rollout_budget: int = 20000
    epsilon: float = 0.01
    uct_variant: str = STANDARD
    seed: int = 0
    penetration_removal: bool = True
    search: str = MCTS
    place_offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    max_penetration_iters: int = MAX_PENETRATION_ITERS
    bridge_overlap: float = BRIDGE_OVERLAP
    protect_claims: bool = False
    # prune operators that contradict the observation; off = search the whole domain
    observation_filter: bool = True

    def __post_init__(self):
        if not self.exploration > 0:
            raise ValueError("exploration constant C must be > 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.rollout_budget < 1:
            raise ValueError("rollout_budget must be >= 1")
        if self.reward_mode not in (DENSE, SPARSE):
            raise ValueError(f"reward_mode must be {DENSE!r} or {SPARSE!r}")
        if self.uct_variant not in (STANDARD, INVERTED):
            raise ValueError(f"uct_variant must be {STANDARD!r} or {INVERTED!r}")
        if self.search not in (MCTS, RANDOM):
            raise ValueError(f"search must be {MCTS!r} or {RANDOM!r}")


class SearchNode:
    __slots__ = ("state", "op", "n", "R", "children", "untried", "ops", "exhausted")

    def __init__(self, state: StripsState, ops: List[Operator], op: Optional[Operator] = None):
        self.state = state
        self.op = op
        self.n = 0
        self.R = 0.0
        self.children: Dict[Operator, "SearchNode"] = {}
        # filtered applicable operators; their position is the tie-break index
        self.ops = ops
        self.untried = list(ops)
        # every completion below this node has already been scored
        self.exhausted = False

    @property
    def Q(self) -> float:
        return self.R / self.n if self.n else 0.0

    def __repr__(self):
        return f"SearchNode(op={self.op}, n={self.n}, R={self.R:.3f})"


def uct_score(node: SearchNode, op: Operator, cfg: SearchConfig) -> float:
    child = node.children[op]
    q = child.R / child.n
    if cfg.uct_variant == STANDARD:
        return q + cfg.exploration * math.sqrt(math.log(node.n) / child.n)
    return q + cfg.exploration * math.sqrt(math.log(child.n) / node.n)


def backpropagate(path: Sequence[SearchNode], reward: float) -> None:
    for node in path:
        node.n += 1
        node.R += reward
    leaf = path[-1]
    if not leaf.ops:
        leaf.exhausted = True
    for node in reversed(path[:-1]):
        if node.untried or not all(c.exhausted for c in node.children.values()):
            break
        node.exhausted = True


@dataclass(frozen=True)
class Score:
    dense: float
    sparse: float
    feasible: bool
    poses: Mapping[str, Pose] = field(default_factory=dict)
    penetration_free: bool = False
    matched: Tuple[str, ...] = ()

    def reward(self, mode: str) -> float:
        return self.dense if mode == DENSE else self.sparse


DEAD_END = Score(0.0, 0.0, False)


def match_flags(poses: Mapping[str, Pose], observed: Mapping[str, Pose], eps: float):
    """Per visible id: solved position within eps of the observation and same rotation."""
    flags = {}
    for pid, obs in observed.items():
        sol = poses[pid]
        d = math.dist(sol.position, obs.position)
        flags[pid] = d <= eps and sol.rot == obs.rot
    return flags


class ObservationFilter:
    """Cheap pruning of operators that contradict the visible structure.

    Visible objects may only be placed at their observed height and rotation,
    onto supports whose possible footprint can contain their observed center.
    A hidden support's possible center is an interval propagated down its
    support chain to visible objects or the table. Rotating a hidden object
    with a square footprint is skipped as redundant. Bridges whose supports
    can never be close enough for the required overlap on both, or whose
    footprints never line up across the bridge, are rejected.
    With ``protect_claims``,
    hidden objects may also not cover a visible support that an unplaced
    visible object is observed resting on.
    """

    def __init__(self, catalog: Sequence[Primitive], observed: Mapping[str, Pose],
                 table_extent: Rect, tol: float, protect_claims: bool = False,
                 bridge_overlap: float = 0.2):
        self.prims = {p.id: p for p in catalog}
        self.bridge_overlap = bridge_overlap
        self.observed = dict(observed)
        self.table = Rect(*table_extent)
        self.tol = tol
        self.bottom = {}
        for pid, pose in self.observed.items():
            self.bottom[pid] = pose.z - self.prims[pid].dims[2] / 2
        self.claims = self._observed_support_claims() if protect_claims else {}

    def _observed_support_claims(self) -> Dict[str, frozenset]:
        """Visible supports each visible object is observed resting on."""
        claims = {}
        vis = list(self.observed)
        for w in vis:
            ow = self.observed[w]
            level = [s for s in vis if s != w and abs(self.bottom[s] + self.prims[s].dims[2]
                                                      - self.bottom[w]) <= self.tol]
            sup = {s for s in level
                   if footprint(self.prims[s], self.observed[s]).contains(ow.x, ow.y, self.tol)}
            for b in level:
                for c in level:
                    for k in (0, 1):
                        ob, oc = self.observed[b].position, self.observed[c].position
                        if b != c and ob[k] < ow.position[k] < oc[k]:
                            sup.update((b, c))
            claims[w] = frozenset(sup)
        return claims

    def center_bounds(self, state: StripsState, pid: str):
        """Box ``(xlo, xhi, ylo, yhi)`` that must contain ``pid``'s center."""
        obs = self.observed.get(pid)
        if obs is not None:
            return (obs.x, obs.x, obs.y, obs.y)
        pred = state.placement_of(pid)
        sx, sy, _ = self.prims[pid].extents(1 if state.is_rotated(pid) else 0)
        if pred is None or pred[0] == "OnTable":
            t = self.table
            return (t.xmin + sx / 2, t.xmax - sx / 2, t.ymin + sy / 2, t.ymax - sy / 2)
        if pred[0] == "On":
            lo_x, hi_x, lo_y, hi_y = self.center_bounds(state, pred[2])
            hx, hy = self._half(state, pred[2])
            return (lo_x - hx, hi_x + hx, lo_y - hy, hi_y + hy)
        b, c = pred[2], pred[3]
        bb, cb = self.center_bounds(state, b), self.center_bounds(state, c)
        (bhx, bhy), (chx, chy) = self._half(state, b), self._half(state, c)
        if pred[0] == "OnAlongX":
            return (bb[0], cb[1], max(bb[2] - bhy, cb[2] - chy), min(bb[3] + bhy, cb[3] + chy))
        return (max(bb[0] - bhx, cb[0] - chx), min(bb[1] + bhx, cb[1] + chx), bb[2], cb[3])

    def _half(self, state: StripsState, pid: str):
        sx, sy, _ = self.prims[pid].extents(1 if state.is_rotated(pid) else 0)
        return sx / 2, sy / 2

    def _bridge_reachable(self, state, a, b, c, k) -> bool:
        # summing both overlap rows bounds the support gap x_c - x_b
        f = self.bridge_overlap
        ha = self._half(state, a)[k]
        hb, hc = self._half(state, b)[k], self._half(state, c)[k]
        bb, cb = self.center_bounds(state, b), self.center_bounds(state, c)
        gap = cb[2 * k] - bb[2 * k + 1]
        if max(0.0, gap) > 2 * ha + (1 - 2 * f) * (hb + hc) + self.tol:
            return False
        # across the bridge the center must lie over both supports at once
        j = 1 - k
        hbj, hcj = self._half(state, b)[j], self._half(state, c)[j]
        lo = max(bb[2 * j] - hbj, cb[2 * j] - hcj)
        hi = min(bb[2 * j + 1] + hbj, cb[2 * j + 1] + hcj)
        return lo <= hi + self.tol

    def allowed(self, state: StripsState, op: Operator) -> bool:
        kind, args = op
        a = args[0]
        obs = self.observed.get(a)
        if kind == ROTATE:
            if obs is not None:
                return obs.rot == 1
            sx, sy, _ = self.prims[a].dims
            return sx != sy
        sups = () if args[1] == TABLE else args[1:]
        if kind != PUT_ON:
            b, c = sups
            k = 0 if kind == PUT_ON_ALONG_X else 1
            if b in self.observed and c in self.observed:
                if self.observed[b].position[k] >= self.observed[c].position[k]:
                    return False
            if not self._bridge_reachable(state, a, b, c, k):
                return False
        if obs is None:
            for w, claimed in self.claims.items():
                if w in state.unmoved and any(s in claimed for s in sups):
                    return False
            return True
        if (1 if state.is_rotated(a) else 0) != obs.rot:
            return False
        top = state.tops[sups[0]] if sups else 0.0
        if abs(top - self.bottom[a]) > self.tol:
            return False
        tol = self.tol
        if kind == PUT_ON:
            if not sups:
                return self.table.contains(obs.x, obs.y)
            lo_x, hi_x, lo_y, hi_y = self.center_bounds(state, sups[0])
            hx, hy = self._half(state, sups[0])
            return (lo_x - hx - tol <= obs.x <= hi_x + hx + tol
                    and lo_y - hy - tol <= obs.y <= hi_y + hy + tol)
        j = 1 - k
        bb, cb = self.center_bounds(state, b), self.center_bounds(state, c)
        p = obs.position
        if p[k] < bb[2 * k] - tol or p[k] > cb[2 * k + 1] + tol:
            return False
        for s, sb in ((b, bb), (c, cb)):
            h = self._half(state, s)[j]
            if not sb[2 * j] - h - tol <= p[j] <= sb[2 * j + 1] + h + tol:
                return False
        return True


def _always(state, op) -> bool:
    return True


class MctsPlanner:
    """One planning problem: catalog, visible poses, layout and search settings."""

    def __init__(self, catalog: Sequence[Primitive], observation: Observation,
                 layout: Optional[Mapping[str, Pose]] = None,
                 cfg: SearchConfig = SearchConfig(),
                 table_extent: Rect = Rect(-0.5, 0.5, -0.5, 0.5)):
        self.catalog = tuple(catalog)
        self.domain = StripsDomain(self.catalog)
        ids = set(self.domain.ids)
        # hallucinations without catalog identity never enter the visible set
        self.observed = {k: v for k, v in observation.detections.items() if k in ids}
        if not self.observed:
            raise PlanningError("no visible objects: the match reward is undefined")
        self.visible = frozenset(self.observed)
        self.layout = dict(layout or {})
        self.cfg = cfg
        self.table_extent = Rect(*table_extent)
        self.filter = ObservationFilter(self.catalog, self.observed, self.table_extent,
                                        cfg.epsilon, cfg.protect_claims, cfg.bridge_overlap)
        self.rng = random.Random(cfg.seed)
        self._cache: Dict[frozenset, Score] = {}
        self._cand_cache: Dict[StripsState, List[Operator]] = {}
        self.trace: List[Tuple[int, float, bool, int]] = []
        self.root = None

    # -- operator generation -------------------------------------------------

    def _candidates(self, state: StripsState) -> List[Operator]:
        """Applicable operators that survive the observation filter.

        In guided mode only the preferred subset is kept: visible-actor
        operators when any survive, otherwise the hidden-actor ones.
        """
        hit = self._cand_cache.get(state)
        if hit is not None:
            return hit
        allowed = self.filter.allowed if self.cfg.observation_filter else _always
        ops = self.domain.applicable_operators(state)
        if self.cfg.guided:
            vis = [op for op in ops if op.args[0] in self.visible and allowed(state, op)]
            out = vis or [op for op in ops if op.args[0] not in self.visible
                          and allowed(state, op)]
        else:
            out = [op for op in ops if allowed(state, op)]
        if len(self._cand_cache) >= OPS_CACHE_SIZE:
            self._cand_cache.clear()
        self._cand_cache[state] = out
        return out

    def operators(self, state: StripsState) -> List[Operator]:
        return self._candidates(state)

    def new_node(self, state: StripsState, op: Optional[Operator] = None) -> SearchNode:
        return SearchNode(state, list(self._candidates(state)), op)

    # -- the four MCTS phases ------------------------------------------------

    def select_and_expand(self, root: SearchNode) -> List[SearchNode]:
        path = [root]
        node = root
        cfg = self.cfg
        while True:
            if cfg.search == RANDOM:
                if not node.ops:
                    return path
                op = self.rng.choice(node.ops)
                if op in node.children:
                    node = node.children[op]
                    path.append(node)
                    continue
            elif node.untried:
                op = self.rng.choice(node.untried)
            elif node.children:
                best, best_score = None, -math.inf
                for op in node.ops:
                    if node.children[op].exhausted:
                        continue
                    s = uct_score(node, op, cfg)
                    if s > best_score:
                        best, best_score = op, s
                if best is None:
                    return path
                node = node.children[best]
                path.append(node)
                continue
            else:
                return path
            node.untried.remove(op)
            child = self.new_node(self.domain.apply(node.state, op), op)
            node.children[op] = child
            path.append(child)
            return path

    def rollout(self, leaf: SearchNode) -> Tuple[List[Operator], bool]:
        """Random completion from ``leaf``; returns ``(suffix, reached_terminal)``."""
        state = leaf.state
        suffix = []
        while state.unmoved:
            ops = self._candidates(state)
            if not ops:
                return suffix, False
            op = self.rng.choice(ops)
            suffix.append(op)
            state = self.domain.apply(state, op)
        return suffix, True

    def score_sequence(self, seq: Sequence[Operator]) -> Score:
        state = self.domain.replay(seq)
        if state.unmoved:
            return DEAD_END
        return self._score_terminal(state, seq)

    def _score_terminal(self, state: StripsState, seq: Sequence[Operator]) -> Score:
        key = state.predicates
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        res: PoseRecovery = recover_poses(seq, self.catalog, self.observed,
                                          self.cfg.penetration_removal, self.table_extent,
                                          self.cfg.max_penetration_iters,
                                          bridge_overlap=self.cfg.bridge_overlap)
        if not res.feasible:
            score = Score(0.0, 0.0, False)
        else:
            flags = match_flags(res.poses, self.observed, self.cfg.epsilon)
            matched = tuple(k for k, ok in flags.items() if ok)
            dense = len(matched) / len(flags)
            score = Score(dense, 1.0 if len(matched) == len(flags) else 0.0, True,
                          res.poses, res.penetration_free, matched)
        self._cache[key] = score
        return score

    # -- driver --------------------------------------------------------------

    def run(self, on_rollout: Optional[Callable] = None) -> PlanResult:
        cfg = self.cfg
        self.root = root = self.new_node(self.domain.initial_state())
        if not self.domain.is_terminal(root.state) and not root.ops:
            raise PlanningError("every operator is pruned at the root; "
                                "the observation is inconsistent with the catalog")
        best: Optional[Tuple[Score, List[Operator]]] = None
        rewards = []
        success = False
        used = 0
        for i in range(cfg.rollout_budget):
            if root.exhausted and cfg.search != RANDOM:
                break
            used = i + 1
            path = self.select_and_expand(root)
            prefix = [node.op for node in path[1:]]
            suffix, complete = self.rollout(path[-1])
            seq = prefix + suffix
            score = self._score_terminal(self.domain.replay(suffix, path[-1].state), seq) \
                if complete else DEAD_END
            reward = score.reward(cfg.reward_mode)
            backpropagate(path, reward)
            rewards.append(reward)
            self.trace.append((i, reward, score.feasible, len(seq)))
            if on_rollout is not None:
                on_rollout(i, reward, score, seq)
            if score.feasible and (best is None or score.dense > best[0].dense):
                best = (score, seq)
            if score.feasible and score.sparse == 1.0:
                success = True
                break
        return self._result(best, used, success, rewards)

    def _result(self, best, used, success, rewards) -> PlanResult:
        offset = tuple(self.cfg.place_offset)
        if best is None:
            return PlanResult((), {}, 0.0, used, (), False, False, offset, tuple(rewards))
        score, seq = best
        steps = []
        for op in seq:
            if op.kind == ROTATE:
                continue
            pid = op.args[0]
            steps.append(PlanStep(pid, self.layout.get(pid),
                                  score.poses[pid].translated(offset)))
        return PlanResult(tuple(steps), dict(score.poses), score.reward(self.cfg.reward_mode),
                          used, tuple(seq), success, score.penetration_free, offset,
                          tuple(rewards))


def plan(catalog: Sequence[Primitive], observation: Observation,
         layout: Optional[Mapping[str, Pose]] = None, cfg: SearchConfig = SearchConfig(),
         table_extent: Rect = Rect(-0.5, 0.5, -0.5, 0.5)) -> PlanResult:
    return MctsPlanner(catalog, observation, layout, cfg, table_extent).run()


def tree_nodes(root: SearchNode):
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(node.children.values())
