"""scikit-learn style wrappers around the vision simulator and the planner.

Nothing here is learned; ``fit`` runs the search once for a given
observation, the way a clustering estimator fits a single dataset.
"""
from __future__ import annotations

from dataclasses import fields
from typing import Optional, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .planner import DENSE, MCTS, STANDARD, MctsPlanner, SearchConfig
from .scene import Observation, Primitive, Rect, Scene
from .vision import VisionConfig, observe


def check_observation(observation, catalog: Sequence[Primitive]) -> Observation:
    """Validate that ``observation`` is an Observation sharing ids with ``catalog``."""
    if not isinstance(observation, Observation):
        raise TypeError(f"expected an Observation, got {type(observation).__name__}")
    if not observation.visible(catalog):
        raise ValueError("observation contains no catalog object")
    return observation


class VisionSimulator(TransformerMixin, BaseEstimator):
    """Maps ground-truth scenes to simulated observations."""

    def __init__(self, camera_dir=(0.0, 1.0, 0.0), occlusion_threshold=0.7,
                 pos_noise_sigma=0.003, false_positive_rate=0.0, confidence_threshold=0.95,
                 forced_hidden=(), seed=0):
        self.camera_dir = camera_dir
        self.occlusion_threshold = occlusion_threshold
        self.pos_noise_sigma = pos_noise_sigma
        self.false_positive_rate = false_positive_rate
        self.confidence_threshold = confidence_threshold
        self.forced_hidden = forced_hidden
        self.seed = seed

    def config(self) -> VisionConfig:
        return VisionConfig(**self.get_params())

    def fit(self, X=None, y=None):
        self.config_ = self.config()
        return self

    def transform(self, X):
        """One Observation per Scene; a single Scene gives a single Observation."""
        check_is_fitted(self, "config_")
        if isinstance(X, Scene):
            return observe(X, self.config_)
        return [observe(s, self.config_) for s in X]


class AssemblyPlanner(BaseEstimator):
    """Plans an assembly for a fixed catalog from one observation.

    After ``fit``: ``plan_`` (PlanResult), ``poses_``, ``reward_``,
    ``n_rollouts_`` and ``success_``.
    """

    def __init__(self, catalog=(), table_extent=(-0.5, 0.5, -0.5, 0.5), layout=None,
                 exploration=2 ** 0.5, reward_mode=DENSE, guided=True, rollout_budget=20000,
                 epsilon=0.01, uct_variant=STANDARD, seed=0, penetration_removal=True,
                 search=MCTS, place_offset=(0.0, 0.0, 0.0), observation_filter=True):
        self.catalog = catalog
        self.table_extent = table_extent
        self.layout = layout
        self.exploration = exploration
        self.reward_mode = reward_mode
        self.guided = guided
        self.rollout_budget = rollout_budget
        self.epsilon = epsilon
        self.uct_variant = uct_variant
        self.seed = seed
        self.penetration_removal = penetration_removal
        self.search = search
        self.place_offset = place_offset
        self.observation_filter = observation_filter

    def search_config(self) -> SearchConfig:
        names = {f.name for f in fields(SearchConfig)}
        return SearchConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def fit(self, X: Observation, y=None):
        catalog = tuple(self.catalog)
        check_observation(X, catalog)
        planner = MctsPlanner(catalog, X, self.layout, self.search_config(),
                              Rect(*self.table_extent))
        self.plan_ = planner.run()
        self.poses_ = dict(self.plan_.solved_poses)
        self.reward_ = self.plan_.reward
        self.n_rollouts_ = self.plan_.rollouts_used
        self.success_ = self.plan_.success
        self.visible_ = tuple(sorted(planner.visible))
        return self

    def predict(self, X: Optional[Observation] = None):
        """Plan steps for ``X`` (refitting) or for the observation already fitted."""
        if X is not None:
            self.fit(X)
        check_is_fitted(self, "plan_")
        return list(self.plan_.steps)

    def score(self, X: Observation, y=None) -> float:
        """Dense match reward of the plan found for ``X``."""
        return self.fit(X).reward_
