"""Linear reward model fit to pairwise trajectory preferences.

P(A preferred over B) = exp(R_A) / (exp(R_A) + exp(R_B)) with
R_X = sum over steps of weights . features(obs, action).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .trajectory import Trajectory

Featurizer = Callable[[tuple, "int | tuple"], np.ndarray]

A_PREFERRED = "A"
B_PREFERRED = "B"


class DegenerateFeaturesWarning(UserWarning):
    """All pairs have identical feature sums; the loss gradient is zero."""


@dataclass
class LinearRewardModel:
    weights: np.ndarray
    feature_dim: int
    featurizer: Featurizer = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.feature_dim,):
            raise ValueError(f"weights must have shape ({self.feature_dim},)")

    def trajectory_features(self, traj: Trajectory) -> np.ndarray:
        total = np.zeros(self.feature_dim)
        for step in traj.steps:
            total += self.featurizer(step.observation, step.action)
        return total

    def trajectory_return(self, traj: Trajectory) -> float:
        return float(self.weights @ self.trajectory_features(traj))

    def state_dict(self) -> dict:
        return {"weights": [float(w) for w in self.weights],
                "feature_dim": self.feature_dim}


def tabular_featurizer(index: dict, feature_dim: int) -> Featurizer:
    """One-hot over (observation tuple, action); unseen pairs map to zero."""
    def features(obs, action) -> np.ndarray:
        vec = np.zeros(feature_dim)
        i = index.get((tuple(obs), action))
        if i is not None:
            vec[i] = 1.0
        return vec
    return features


def build_tabular_featurizer(trajectories: Sequence) -> tuple:
    """Index every (obs, action) in the trajectories; returns (featurizer, dim)."""
    index: dict = {}
    for traj in trajectories:
        for step in traj.steps:
            key = (tuple(step.observation), step.action)
            if key not in index:
                index[key] = len(index)
    dim = max(len(index), 1)
    return tabular_featurizer(index, dim), dim


def _pair_margin(model: LinearRewardModel, pair: tuple, label: str) -> tuple:
    """(preferred minus other return, preferred minus other feature sums)."""
    a, b = pair
    fa = model.trajectory_features(a)
    fb = model.trajectory_features(b)
    if label == A_PREFERRED:
        diff = fa - fb
    elif label == B_PREFERRED:
        diff = fb - fa
    else:
        raise ValueError(f"label must be {A_PREFERRED!r} or {B_PREFERRED!r}")
    return float(model.weights @ diff), diff


def bt_negative_log_likelihood(model: LinearRewardModel, pair: tuple, label: str) -> float:
    """-log P(preferred | model), computed as log(1 + exp(-margin))."""
    margin, _ = _pair_margin(model, pair, label)
    return float(np.logaddexp(0.0, -margin))


def bt_gradient(model: LinearRewardModel, pair: tuple, label: str) -> np.ndarray:
    """Gradient of the negative log likelihood with respect to the weights."""
    margin, diff = _pair_margin(model, pair, label)
    # d/dw log(1+exp(-w.diff)) = -sigmoid(-margin) * diff
    sig = 1.0 / (1.0 + np.exp(margin)) if margin > -30 else 1.0
    return -sig * diff


def fit_reward_model(pairs: Sequence, featurizer: Featurizer, feature_dim: int,
                     steps: int = 200, learning_rate: float = 0.5) -> LinearRewardModel:
    """Full-batch gradient descent from zero weights; deterministic.

    pairs: (Trajectory, Trajectory, label) triples. Emits
    DegenerateFeaturesWarning when every pair has identical feature sums.
    """
    if not pairs:
        raise ValueError("need at least one labeled pair")
    model = LinearRewardModel(weights=np.zeros(feature_dim), feature_dim=feature_dim,
                              featurizer=featurizer)
    diffs = []
    for a, b, label in pairs:
        _, diff = _pair_margin(LinearRewardModel(np.zeros(feature_dim), feature_dim,
                                                 featurizer), (a, b), label)
        diffs.append(diff)
    if all(not np.any(d) for d in diffs):
        warnings.warn("all pairs have identical feature sums; nothing to fit",
                      DegenerateFeaturesWarning)
        return model
    diffs_arr = np.stack(diffs)
    for _ in range(steps):
        margins = diffs_arr @ model.weights
        sig = 1.0 / (1.0 + np.exp(np.clip(margins, -500, 500)))
        grad = -(sig[:, None] * diffs_arr).mean(axis=0)
        model.weights = model.weights - learning_rate * grad
    return model


def pairs_from_ranking(items: Sequence, ranking: Sequence) -> list:
    """Adjacent ranks become labeled pairs: (higher, lower, A_PREFERRED)."""
    by_id = {item_id: traj for item_id, traj in items}
    out = []
    for better, worse in zip(ranking, ranking[1:]):
        out.append((by_id[better], by_id[worse], A_PREFERRED))
    return out
