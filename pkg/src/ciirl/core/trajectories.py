"""
Trajectory data model, simulated multi-setting experts and feature statistics.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np

from ..exceptions import InvalidInputError
from ..utils import derive_seed
from .mdp import cell_to_state

logger = logging.getLogger(__name__)

SETTING_SEED_STRIDE = 1000
BODY_TEXT_SIZES = (40, 10, 1)
CAPTION_SIZES = (400, 25, 3)


@dataclass(frozen=True)
class Trajectory:
    states: Tuple[int, ...]
    actions: Tuple[int, ...]
    setting_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        if not self.states:
            raise InvalidInputError("A trajectory needs at least one step.")
        if len(self.states) != len(self.actions):
            raise InvalidInputError(
                f"Trajectory has {len(self.states)} states but {len(self.actions)} actions.")

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True)
class PreferenceIntervention:
    """An expert preference: extra reward on ``bonus_cells``."""
    bonus_cells: Tuple[Tuple[int, int], ...] = ()
    bonus_magnitude: float = 0.04
    n_trajectories: int = 1
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "bonus_cells", tuple((int(x), int(y)) for x, y in self.bonus_cells))

    def validate(self, layout):
        if self.n_trajectories < 1:
            raise InvalidInputError(f"n_trajectories must be >= 1, got {self.n_trajectories}.")
        for cell in self.bonus_cells:
            if not layout.in_bounds(cell):
                raise InvalidInputError(f"Bonus cell {cell} is outside the grid.")
        return self

    def bonus(self, mdp):
        bonus = np.zeros(mdp.n_states)
        for cell in self.bonus_cells:
            bonus[cell_to_state(mdp.layout, cell)] = self.bonus_magnitude
        return bonus

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "bonus_cells" in data:
            data["bonus_cells"] = tuple(tuple(c) for c in data["bonus_cells"])
        return cls(**data)

    def to_dict(self):
        return {
            "bonus_cells": [list(c) for c in self.bonus_cells],
            "bonus_magnitude": self.bonus_magnitude,
            "n_trajectories": self.n_trajectories,
            "label": self.label,
        }


@dataclass(frozen=True, eq=False)
class SettingDataset:
    setting_id: int
    trajectories: Tuple[Trajectory, ...]
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if not self.trajectories:
            raise InvalidInputError(f"Setting {self.setting_id} has no trajectories.")
        foreign = {t.setting_id for t in self.trajectories} - {self.setting_id}
        if foreign:
            raise InvalidInputError(
                f"Setting {self.setting_id} holds trajectories labelled {sorted(foreign)}.")

    def __len__(self):
        return len(self.trajectories)


def validate_trajectory(traj, mdp):
    """Checks index ranges and that every step is possible under ``mdp``."""
    if max(traj.states) >= mdp.n_states or min(traj.states) < 0:
        raise InvalidInputError(f"Trajectory visits a state outside [0, {mdp.n_states}).")
    if max(traj.actions) >= mdp.n_actions or min(traj.actions) < 0:
        raise InvalidInputError(f"Trajectory uses an action outside [0, {mdp.n_actions}).")
    if mdp.initial_dist[traj.states[0]] <= 0:
        raise InvalidInputError(f"Trajectory starts in state {traj.states[0]}, which has no initial mass.")
    for t in range(len(traj) - 1):
        s, a, nxt = traj.states[t], traj.actions[t], traj.states[t + 1]
        if mdp.transition[s, a, nxt] <= 0:
            raise InvalidInputError(f"Impossible transition {s} -{a}-> {nxt} at step {t}.")
    return traj


def _generate_setting(mdp, truth, intervention, temperature, seed, setting_id):
    from .solver import CAUSAL, rollout, soft_value_iteration

    reward = (np.asarray(truth, dtype=float) + intervention.bonus(mdp)) / temperature
    policy = soft_value_iteration(mdp, reward, backup=CAUSAL)
    result = rollout(mdp, policy, intervention.n_trajectories, seed, setting_id=setting_id)
    provenance = dict(intervention.to_dict(), temperature=temperature, seed=seed)
    return SettingDataset(setting_id, result.trajectories, provenance)


def gen_expert_settings(mdp, truth, interventions, temperature=0.05, seed=0, jobs=1):
    """
    One dataset per intervention: experts act with the causal soft policy of
    ``(truth + bonus) / temperature``. Setting ``i`` samples with seed
    ``seed + 1000 * i``.
    """
    interventions = list(interventions)
    if not interventions:
        raise InvalidInputError("gen_expert_settings needs at least one intervention.")
    if temperature <= 0:
        raise InvalidInputError(f"temperature must be positive, got {temperature}.")
    if mdp.layout is not None:
        for intervention in interventions:
            intervention.validate(mdp.layout)

    seeds = [derive_seed(seed, SETTING_SEED_STRIDE * i) for i in range(len(interventions))]
    jobs_args = [(mdp, truth, iv, temperature, s, i) for i, (iv, s) in enumerate(zip(interventions, seeds))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            settings = list(pool.map(_generate_setting, *zip(*jobs_args)))
    else:
        settings = [_generate_setting(*args) for args in jobs_args]
    for ds in settings:
        logger.info("Setting %d: %d trajectories.", ds.setting_id, len(ds))
    return settings


def trajectory_features(traj, features, discount=None):
    """Sum of per-state feature rows ``features[s]`` along the trajectory."""
    features = np.asarray(features, dtype=float)
    rows = features[list(traj.states)]
    if discount is None:
        return rows.sum(axis=0)
    weights = discount ** np.arange(len(traj))
    return weights @ rows


def visitation_counts(ds, n_states):
    """Mean number of visits per state over the dataset's trajectories."""
    trajectories = getattr(ds, "trajectories", ds)
    if len(trajectories) == 0:
        raise InvalidInputError("Cannot compute visitation counts of an empty dataset.")
    visited = np.concatenate([np.asarray(t.states, dtype=int) for t in trajectories])
    return np.bincount(visited, minlength=n_states) / len(trajectories)


def empirical_feature_expectation(ds, features):
    features = np.asarray(features, dtype=float)
    return visitation_counts(ds, features.shape[0]) @ features


def _line(start, stop):
    step = 1 if stop >= start else -1
    return range(start, stop + step, step)


def three_corridor_interventions(spec, sizes=BODY_TEXT_SIZES, magnitude=0.04):
    """
    Three experts with the same start and goal preferring different paths:
    up then right, right then up, and a diagonal staircase.
    """
    (sx, sy), (gx, gy) = spec.start_cells[0], spec.goal_cells[0]
    up_right = [(sx, y) for y in _line(sy, gy)] + [(x, gy) for x in _line(sx, gx)]
    right_up = [(x, sy) for x in _line(sx, gx)] + [(gx, y) for y in _line(sy, gy)]
    staircase = []
    x, y = sx, sy
    while (x, y) != (gx, gy):
        staircase.append((x, y))
        if x != gx and (len(staircase) % 2 == 1 or y == gy):
            x += 1 if gx > x else -1
        else:
            y += 1 if gy > y else -1
    staircase.append((gx, gy))

    blocked = set(spec.obstacles)
    labels = ("up-right", "right-up", "staircase")
    return [
        PreferenceIntervention(tuple(c for c in dict.fromkeys(path) if c not in blocked), magnitude, n, label)
        for path, n, label in zip((up_right, right_up, staircase), sizes, labels)
    ]


def horizontal_band_interventions(spec, n_bands=5, n_per_band=50, magnitude=0.04):
    """Experts crossing the grid left to right, each preferring its own row."""
    rows = np.linspace(0, spec.height - 1, n_bands + 2)[1:-1].round().astype(int)
    blocked = set(spec.obstacles)
    return [
        PreferenceIntervention(
            tuple((x, int(y)) for x in range(spec.width) if (x, int(y)) not in blocked),
            magnitude, n_per_band, f"band-{int(y)}")
        for y in rows
    ]
