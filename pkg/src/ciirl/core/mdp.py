"""
Tabular MDPs, the gridworld builder and dynamics perturbations.

States of a gridworld are indexed row-major, ``state = y * width + x``, with
``y`` growing upwards. This indexing is part of the dataset and render file
formats and must not change.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional, Tuple

import numpy as np

from ..exceptions import InvalidPerturbationError, InvalidSpecError

logger = logging.getLogger(__name__)

ACTIONS = ("up", "down", "left", "right", "stay")
MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0), (0, 0))
ROW_TOL = 1e-12

ADD_OBSTACLES = "add-obstacles"
CHANGE_SLIP = "change-slip"
SHIFT_INITIAL = "shift-initial"
PERTURBATION_KINDS = (ADD_OBSTACLES, CHANGE_SLIP, SHIFT_INITIAL)


def _cells(cells):
    return tuple(sorted({(int(c[0]), int(c[1])) for c in cells}))


@dataclass(frozen=True)
class GridworldSpec:
    width: int = 16
    height: int = 16
    obstacles: Tuple[Tuple[int, int], ...] = ()
    start_cells: Tuple[Tuple[int, int], ...] = ((0, 0),)
    goal_cells: Tuple[Tuple[int, int], ...] = ((15, 15),)
    slip_prob: float = 0.1
    goal_reward: float = 1.0
    step_reward: float = -0.05
    horizon: int = 40
    discount: float = 0.95

    def __post_init__(self):
        for name in ("obstacles", "start_cells", "goal_cells"):
            object.__setattr__(self, name, _cells(getattr(self, name)))

    @property
    def n_states(self):
        return self.width * self.height

    def in_bounds(self, cell):
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def validate(self):
        if self.width < 1 or self.height < 1:
            raise InvalidSpecError(f"Grid dimensions must be positive, got {self.width}x{self.height}.")
        for name in ("obstacles", "start_cells", "goal_cells"):
            for cell in getattr(self, name):
                if not self.in_bounds(cell):
                    raise InvalidSpecError(f"Cell {cell} in '{name}' is outside the {self.width}x{self.height} grid.")
        if not self.start_cells:
            raise InvalidSpecError("At least one start cell is required.")
        obstacles, starts, goals = set(self.obstacles), set(self.start_cells), set(self.goal_cells)
        for a, b, label in ((obstacles, starts, "obstacles/start_cells"),
                            (obstacles, goals, "obstacles/goal_cells"),
                            (starts, goals, "start_cells/goal_cells")):
            if a & b:
                raise InvalidSpecError(f"Cell sets {label} overlap at {sorted(a & b)}.")
        if not 0.0 <= self.slip_prob < 1.0:
            raise InvalidSpecError(f"slip_prob must lie in [0, 1), got {self.slip_prob}.")
        if self.horizon < 1:
            raise InvalidSpecError(f"horizon must be >= 1, got {self.horizon}.")
        if not 0.0 < self.discount < 1.0:
            raise InvalidSpecError(f"discount must lie in (0, 1), got {self.discount}.")
        return self

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for name in ("obstacles", "start_cells", "goal_cells"):
            if name in data:
                data[name] = _cells(data[name])
        return cls(**data)

    def to_dict(self):
        return {
            "width": self.width,
            "height": self.height,
            "obstacles": [list(c) for c in self.obstacles],
            "start_cells": [list(c) for c in self.start_cells],
            "goal_cells": [list(c) for c in self.goal_cells],
            "slip_prob": self.slip_prob,
            "goal_reward": self.goal_reward,
            "step_reward": self.step_reward,
            "horizon": self.horizon,
            "discount": self.discount,
        }


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """
    A finite MDP with transition tensor ``transition[s, a, s']``.

    Terminal states end a trajectory on arrival (the trajectory model and
    rollouts stop there); hard value iteration treats them as ordinary
    absorbing states. Arrays are stored read-only.
    """
    transition: np.ndarray
    initial_dist: np.ndarray
    discount: float
    horizon: int
    terminal: frozenset = frozenset()
    layout: Optional[GridworldSpec] = None

    def __post_init__(self):
        transition = np.array(self.transition, dtype=float)
        initial = np.array(self.initial_dist, dtype=float)
        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise InvalidSpecError(f"transition must have shape (S, A, S), got {transition.shape}.")
        n_states = transition.shape[0]
        if initial.shape != (n_states,):
            raise InvalidSpecError(f"initial_dist must have shape ({n_states},), got {initial.shape}.")
        if np.any(transition < 0) or np.any(np.abs(transition.sum(axis=2) - 1.0) > ROW_TOL):
            raise InvalidSpecError("Every transition row must be a probability distribution.")
        if np.any(initial < 0) or abs(initial.sum() - 1.0) > ROW_TOL:
            raise InvalidSpecError("initial_dist must be a probability distribution.")
        if not 0.0 < self.discount < 1.0:
            raise InvalidSpecError(f"discount must lie in (0, 1), got {self.discount}.")
        if int(self.horizon) < 1:
            raise InvalidSpecError(f"horizon must be >= 1, got {self.horizon}.")
        terminal = frozenset(int(s) for s in self.terminal)
        if any(not 0 <= s < n_states for s in terminal):
            raise InvalidSpecError("terminal states must be valid state indices.")
        transition.setflags(write=False)
        initial.setflags(write=False)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "initial_dist", initial)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "terminal", terminal)

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    @cached_property
    def terminal_mask(self):
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.terminal)] = True
        mask.setflags(write=False)
        return mask

    @cached_property
    def successors(self):
        """
        Sparse view of the dynamics: ``(index, prob)`` arrays of shape
        ``(S, A, K)`` listing the K possible next states of every pair.
        Padding entries carry probability 0.
        """
        nonzero = self.transition > 0
        width = max(1, int(nonzero.sum(axis=2).max()))
        order = np.argsort(~nonzero, axis=2, kind="stable")[:, :, :width]
        probs = np.take_along_axis(self.transition, order, axis=2)
        order.setflags(write=False)
        probs.setflags(write=False)
        return order, probs


@dataclass(frozen=True)
class Perturbation:
    kind: str
    cells: Tuple[Tuple[int, int], ...] = ()
    slip_prob: Optional[float] = None
    initial_dist: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise InvalidPerturbationError(f"Unknown perturbation kind '{self.kind}'.")
        object.__setattr__(self, "cells", _cells(self.cells))
        if self.initial_dist is not None:
            object.__setattr__(self, "initial_dist", tuple(float(p) for p in self.initial_dist))

    @classmethod
    def identity(cls):
        return cls(ADD_OBSTACLES)

    def describe(self):
        if self.kind == ADD_OBSTACLES:
            if not self.cells:
                return "identity"
            return "add-obstacles:" + "|".join(f"{x},{y}" for x, y in self.cells)
        if self.kind == CHANGE_SLIP:
            return f"change-slip:{self.slip_prob!r}"
        if self.cells:
            return "shift-initial:" + "|".join(f"{x},{y}" for x, y in self.cells)
        return "shift-initial:dist"

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "cells" in data:
            data["cells"] = _cells(data["cells"])
        return cls(**data)

    def to_dict(self):
        data = {"kind": self.kind}
        if self.cells:
            data["cells"] = [list(c) for c in self.cells]
        if self.slip_prob is not None:
            data["slip_prob"] = self.slip_prob
        if self.initial_dist is not None:
            data["initial_dist"] = list(self.initial_dist)
        return data


def cell_to_state(layout, cell):
    return int(cell[1]) * layout.width + int(cell[0])


def state_to_cell(layout, state):
    return int(state) % layout.width, int(state) // layout.width


def _grid_transition(spec):
    width, height = spec.width, spec.height
    blocked = set(spec.obstacles)
    absorbing = blocked | set(spec.goal_cells)
    transition = np.zeros((spec.n_states, len(MOVES), spec.n_states))

    def step(x, y, move):
        nx, ny = x + move[0], y + move[1]
        if not (0 <= nx < width and 0 <= ny < height) or (nx, ny) in blocked:
            return y * width + x
        return ny * width + nx

    for y in range(height):
        for x in range(width):
            s = y * width + x
            if (x, y) in absorbing:
                transition[s, :, s] = 1.0
                continue
            for a, move in enumerate(MOVES):
                transition[s, a, step(x, y, move)] += 1.0 - spec.slip_prob
                if spec.slip_prob > 0:
                    for slip_move in MOVES[:4]:
                        transition[s, a, step(x, y, slip_move)] += spec.slip_prob / 4.0
    transition /= transition.sum(axis=2, keepdims=True)
    return transition


def _uniform_over(layout, cells):
    initial = np.zeros(layout.n_states)
    for cell in cells:
        initial[cell_to_state(layout, cell)] = 1.0
    return initial / initial.sum()


def build_gridworld(spec):
    """
    Builds the gridworld MDP and its ground-truth state reward.

    Actions are up/down/left/right/stay. With probability ``slip_prob`` the
    agent moves in one of the four directions chosen uniformly instead of the
    intended one; blocked moves are self-transitions. Goal cells are terminal.
    """
    spec.validate()
    transition = _grid_transition(spec)
    goal_states = frozenset(cell_to_state(spec, c) for c in spec.goal_cells)
    mdp = TabularMDP(
        transition=transition,
        initial_dist=_uniform_over(spec, spec.start_cells),
        discount=spec.discount,
        horizon=spec.horizon,
        terminal=goal_states,
        layout=spec,
    )
    truth = np.full(spec.n_states, float(spec.step_reward))
    truth[sorted(goal_states)] = float(spec.goal_reward)
    logger.debug("Built %dx%d gridworld with %d obstacles, slip %.3f.",
                 spec.width, spec.height, len(spec.obstacles), spec.slip_prob)
    return mdp, truth


def _require_layout(mdp, kind):
    if mdp.layout is None:
        raise InvalidPerturbationError(f"Perturbation '{kind}' needs a gridworld layout.")
    return mdp.layout


def apply_perturbation(mdp, perturbation):
    """Returns a new MDP with perturbed dynamics or start distribution."""
    kind = perturbation.kind
    if kind == ADD_OBSTACLES:
        if not perturbation.cells:
            return mdp
        layout = _require_layout(mdp, kind)
        cells = set(perturbation.cells)
        outside = [c for c in cells if not layout.in_bounds(c)]
        if outside:
            raise InvalidPerturbationError(f"Obstacle cells {sorted(outside)} are outside the grid.")
        on_goal = cells & set(layout.goal_cells)
        if on_goal:
            raise InvalidPerturbationError(f"Cannot place obstacles on goal cells {sorted(on_goal)}.")
        occupied = [c for c in cells if mdp.initial_dist[cell_to_state(layout, c)] > 0]
        if occupied or cells & set(layout.start_cells):
            raise InvalidPerturbationError(f"Cannot place obstacles on start cells {sorted(occupied) or sorted(cells & set(layout.start_cells))}.")
        new_layout = replace(layout, obstacles=tuple(set(layout.obstacles) | cells))
        return replace(mdp, transition=_grid_transition(new_layout), layout=new_layout)

    if kind == CHANGE_SLIP:
        layout = _require_layout(mdp, kind)
        slip = perturbation.slip_prob
        if slip is None or not 0.0 <= slip < 1.0:
            raise InvalidPerturbationError(f"change-slip needs slip_prob in [0, 1), got {slip}.")
        new_layout = replace(layout, slip_prob=float(slip))
        return replace(mdp, transition=_grid_transition(new_layout), layout=new_layout)

    # shift-initial
    if perturbation.cells:
        layout = _require_layout(mdp, kind)
        outside = [c for c in perturbation.cells if not layout.in_bounds(c)]
        if outside:
            raise InvalidPerturbationError(f"Start cells {outside} are outside the grid.")
        initial = _uniform_over(layout, perturbation.cells)
    elif perturbation.initial_dist is not None:
        initial = np.asarray(perturbation.initial_dist, dtype=float)
        if initial.shape != (mdp.n_states,) or np.any(initial < 0) or abs(initial.sum() - 1.0) > ROW_TOL:
            raise InvalidPerturbationError("shift-initial needs a probability vector over all states.")
    else:
        raise InvalidPerturbationError("shift-initial needs either cells or initial_dist.")
    support = set(np.flatnonzero(initial > 0).tolist())
    if support & mdp.terminal:
        raise InvalidPerturbationError("The initial distribution may not put mass on terminal states.")
    new_layout = mdp.layout
    if new_layout is not None:
        blocked = {cell_to_state(new_layout, c) for c in new_layout.obstacles}
        if support & blocked:
            raise InvalidPerturbationError("The initial distribution may not put mass on obstacles.")
        new_layout = replace(new_layout, start_cells=tuple(state_to_cell(new_layout, s) for s in sorted(support)))
    return replace(mdp, initial_dist=initial, layout=new_layout)


def encode_states(mdp, kind="coordinates"):
    """Input table for feature networks: one row per state."""
    if kind == "one-hot":
        return np.eye(mdp.n_states)
    if kind == "coordinates":
        layout = mdp.layout
        if layout is None:
            raise InvalidSpecError("Coordinate encoding needs a gridworld layout.")
        states = np.arange(mdp.n_states)
        xs = (states % layout.width) / max(layout.width - 1, 1)
        ys = (states // layout.width) / max(layout.height - 1, 1)
        return np.stack([xs, ys], axis=1)
    raise InvalidSpecError(f"Unknown input encoding '{kind}'.")


def encode_state_actions(mdp, kind="one-hot", state_only=False):
    """Input table over flat pair indices ``s * A + a`` (or states when state_only)."""
    state_table = encode_states(mdp, kind)
    if state_only:
        return state_table
    action_table = np.eye(mdp.n_actions)
    rows = np.repeat(state_table, mdp.n_actions, axis=0)
    cols = np.tile(action_table, (mdp.n_states, 1))
    return np.concatenate([rows, cols], axis=1)


def goal_distance(mdp):
    """Manhattan distance from every cell to its nearest goal cell."""
    layout = mdp.layout
    if layout is None or not layout.goal_cells:
        raise InvalidSpecError("goal_distance needs a gridworld layout with goal cells.")
    states = np.arange(mdp.n_states)
    xs, ys = states % layout.width, states // layout.width
    goals = np.asarray(layout.goal_cells)
    dists = np.abs(xs[:, None] - goals[None, :, 0]) + np.abs(ys[:, None] - goals[None, :, 1])
    return dists.min(axis=1)
