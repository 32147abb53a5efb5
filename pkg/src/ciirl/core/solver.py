"""
Exact planners on tabular MDPs.

``value_iteration`` solves the discounted control problem with hard max
backups. ``soft_value_iteration`` runs the finite-horizon, undiscounted
soft backup of the maximum-entropy trajectory model. Two backups are offered:

- ``gibbs``: ``Q = r + log sum_s' p(s'|s,a) exp V'``, whose policy reproduces
  the Gibbs trajectory distribution exactly, also on stochastic dynamics.
- ``causal``: ``Q = r + sum_s' p(s'|s,a) V'``, the maximum-causal-entropy
  policy. Used for simulated experts and the adversarial agent.

Both coincide on deterministic dynamics.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from ..exceptions import InvalidInputError
from .trajectories import Trajectory

logger = logging.getLogger(__name__)

GIBBS = "gibbs"
CAUSAL = "causal"
BACKUPS = (GIBBS, CAUSAL)


def as_state_action_reward(mdp, reward):
    """Validates a reward of shape (S,) or (S, A) and returns it as (S, A)."""
    reward = np.asarray(reward, dtype=float)
    if reward.shape == (mdp.n_states,):
        reward = np.repeat(reward[:, None], mdp.n_actions, axis=1)
    elif reward.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidInputError(
            f"Reward must have shape ({mdp.n_states},) or ({mdp.n_states}, {mdp.n_actions}), got {reward.shape}.")
    if not np.all(np.isfinite(reward)):
        raise InvalidInputError("Reward contains non-finite entries.")
    return reward


@dataclass(frozen=True, eq=False)
class SoftPolicy:
    """Time-indexed stochastic policy ``probs[t, s, a]`` with its soft values."""
    probs: np.ndarray
    soft_values: np.ndarray
    soft_q: np.ndarray
    reward: np.ndarray
    backup: str = GIBBS

    @property
    def horizon(self):
        return self.probs.shape[0]

    def log_partition(self, initial_dist):
        """``log sum_s mu0(s) exp V(0, s)``; the exact log Z under the gibbs backup."""
        return float(logsumexp(self.soft_values[0], b=np.asarray(initial_dist)))

    def action_probs(self, t, states):
        return self.probs[t, states]


@dataclass(frozen=True, eq=False)
class HardPolicy:
    action: np.ndarray
    values: np.ndarray
    q: np.ndarray
    residuals: Tuple[float, ...] = ()
    converged: bool = True

    def action_probs(self, t, states):
        probs = np.zeros((len(states), self.q.shape[1]))
        probs[np.arange(len(states)), self.action[states]] = 1.0
        return probs


def greedy_actions(q, tie_tol=1e-9):
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - tie_tol * np.maximum(1.0, np.abs(best)), axis=1)


def value_iteration(mdp, reward, tol=1e-8, max_iters=100_000, tie_tol=1e-9):
    """
    Discounted value iteration. Terminal states are treated as ordinary
    absorbing states. Returns once the sup-norm Bellman residual of the
    returned values is at most ``tol``; greedy ties (Q within ``tie_tol``
    relative of the best) go to the lowest action.
    """
    if tol <= 0:
        raise InvalidInputError(f"tol must be positive, got {tol}.")
    r = as_state_action_reward(mdp, reward)
    gamma = mdp.discount
    values = np.zeros(mdp.n_states)
    residuals = []
    converged = False
    for _ in range(max_iters):
        q = r + gamma * (mdp.transition @ values)
        updated = q.max(axis=1)
        residual = float(np.max(np.abs(updated - values)))
        residuals.append(residual)
        if residual <= tol:
            converged = True
            break
        values = updated
    else:
        logger.warning("value_iteration stopped after %d iterations with residual %.3e.", max_iters, residuals[-1])
    q = r + gamma * (mdp.transition @ values)
    return HardPolicy(
        action=greedy_actions(q, tie_tol),
        values=values,
        q=q,
        residuals=tuple(residuals),
        converged=converged,
    )


def soft_value_iteration(mdp, reward, backup=GIBBS, horizon=None):
    """
    Finite-horizon soft backup over t = T-1 ... 0 with V(T, .) = 0.

    A trajectory ends at its first terminal state, after drawing one action
    there, so terminal states get ``Q(t, s, a) = r(s, a)``.
    """
    if backup not in BACKUPS:
        raise InvalidInputError(f"Unknown soft backup '{backup}'.")
    r = as_state_action_reward(mdp, reward)
    horizon = mdp.horizon if horizon is None else int(horizon)
    n_states, n_actions = r.shape
    terminal = mdp.terminal_mask

    probs = np.empty((horizon, n_states, n_actions))
    soft_q = np.empty((horizon, n_states, n_actions))
    soft_values = np.empty((horizon, n_states))
    succ, succ_probs = mdp.successors
    with np.errstate(divide="ignore"):
        succ_log_probs = np.log(succ_probs)
    next_values = np.zeros(n_states)
    for t in range(horizon - 1, -1, -1):
        if backup == GIBBS:
            future = logsumexp(next_values[succ] + succ_log_probs, axis=2)
        else:
            future = np.sum(succ_probs * next_values[succ], axis=2)
        future[terminal] = 0.0
        q = r + future
        v = logsumexp(q, axis=1)
        soft_q[t] = q
        soft_values[t] = v
        probs[t] = np.exp(q - v[:, None])
        next_values = v
    return SoftPolicy(probs=probs, soft_values=soft_values, soft_q=soft_q, reward=r, backup=backup)


@dataclass(frozen=True, eq=False)
class RolloutResult:
    trajectories: Tuple[Trajectory, ...]
    returns: Optional[np.ndarray] = None

    @property
    def mean_return(self):
        if self.returns is None:
            return None
        return float(np.mean(self.returns))


def sample_rows(probs, rng):
    """Inverse-CDF sampling of one index per row; zero-probability entries are never chosen."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(cdf.shape[0]) * cdf[:, -1]
    return np.argmax(cdf > u[:, None], axis=1)


def _collect(states, actions, lengths, setting_id):
    return tuple(
        Trajectory(tuple(states[i, :lengths[i]].tolist()), tuple(actions[i, :lengths[i]].tolist()), setting_id)
        for i in range(states.shape[0])
    )


def rollout(mdp, policy, n, seed, truth=None, setting_id=0, horizon=None):
    """
    Samples ``n`` trajectories under the real dynamics. Trajectories stop at
    the horizon or right after acting in a terminal state. The return of a
    trajectory is the undiscounted sum of ``truth`` over its visited states.
    """
    if n < 1:
        raise InvalidInputError(f"rollout needs n >= 1, got {n}.")
    horizon = mdp.horizon if horizon is None else int(horizon)
    if isinstance(policy, SoftPolicy):
        horizon = min(horizon, policy.horizon)
    rng = np.random.default_rng(seed)
    terminal = mdp.terminal_mask

    states = np.zeros((n, horizon), dtype=int)
    actions = np.zeros((n, horizon), dtype=int)
    lengths = np.full(n, horizon)
    alive = np.ones(n, dtype=bool)
    current = sample_rows(np.broadcast_to(mdp.initial_dist, (n, mdp.n_states)), rng)
    for t in range(horizon):
        chosen = sample_rows(policy.action_probs(t, current), rng)
        states[:, t] = current
        actions[:, t] = chosen
        done = alive & terminal[current]
        lengths[done] = t + 1
        alive &= ~done
        if not alive.any():
            break
        current = sample_rows(mdp.transition[current, chosen], rng)

    returns = None
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        mask = np.arange(horizon)[None, :] < lengths[:, None]
        returns = np.where(mask, truth[states], 0.0).sum(axis=1)
    return RolloutResult(trajectories=_collect(states, actions, lengths, setting_id), returns=returns)


def trajectory_log_prob(mdp, policy, traj):
    """Log density of a trajectory under the policy and the real dynamics."""
    with np.errstate(divide="ignore"):
        total = np.log(mdp.initial_dist[traj.states[0]])
        for t, (s, a) in enumerate(zip(traj.states, traj.actions)):
            total += np.log(policy.action_probs(t, np.array([s]))[0, a])
            if t + 1 < len(traj.states):
                total += np.log(mdp.transition[s, a, traj.states[t + 1]])
    return float(total)
