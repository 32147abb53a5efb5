"""
Brute-force reference computations used to verify the production paths.

Everything here is deliberately naive and exponential where it has to be.
Nothing in this module calls into the solver, maxent or features code.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..exceptions import InvalidInputError, TooLargeError
from .trajectories import Trajectory

ENUMERATION_LIMIT = 10 ** 6


@dataclass(frozen=True, eq=False)
class EnumeratedModel:
    trajectories: Tuple[Trajectory, ...]
    log_probs: np.ndarray
    log_Z: float

    def probs(self):
        return np.exp(self.log_probs)


def _reward_table(mdp, reward):
    values = reward.reward() if hasattr(reward, "reward") else reward
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = np.repeat(values[:, None], mdp.n_actions, axis=1)
    return values


def enumerate_gibbs(mdp, reward, horizon=None):
    """
    Lists every trajectory with nonzero dynamics probability and its exact
    probability under ``p(xi) ∝ mu0 prod p(s'|s,a) exp(sum r)``. A
    trajectory stops after acting in a terminal state or at the horizon.
    """
    horizon = mdp.horizon if horizon is None else horizon
    r = _reward_table(mdp, reward)
    branching = mdp.n_actions * int((mdp.transition > 0).sum(axis=2).max())
    starts = [s for s in range(mdp.n_states) if mdp.initial_dist[s] > 0]
    if len(starts) * branching ** horizon > ENUMERATION_LIMIT:
        raise TooLargeError(
            f"Enumerating {len(starts)} * {branching}^{horizon} trajectories exceeds {ENUMERATION_LIMIT}.")

    terminal = set(int(s) for s in mdp.terminal)
    found = []

    def extend(states, actions, log_weight):
        s, t = states[-1], len(states) - 1
        for a in range(mdp.n_actions):
            weight = log_weight + r[s, a]
            if s in terminal or t == horizon - 1:
                found.append((tuple(states), tuple(actions + [a]), weight))
                continue
            for nxt in range(mdp.n_states):
                p = mdp.transition[s, a, nxt]
                if p > 0:
                    extend(states + [nxt], actions + [a], weight + math.log(p))

    for s in starts:
        extend([s], [], math.log(mdp.initial_dist[s]))

    weights = np.array([w for _, _, w in found])
    top = weights.max()
    log_z = float(top + math.log(np.sum(np.exp(weights - top))))
    trajectories = tuple(Trajectory(states, actions) for states, actions, _ in found)
    return EnumeratedModel(trajectories, weights - log_z, log_z)


def enumerated_visitation(model, n_states, horizon):
    """Per-step state occupancy ``svf[t, s]`` of an enumerated model."""
    svf = np.zeros((horizon, n_states))
    for traj, log_p in zip(model.trajectories, model.log_probs):
        p = math.exp(log_p)
        for t, s in enumerate(traj.states):
            svf[t, s] += p
    return svf


def finite_diff(loss_fn, params, h=1e-5):
    """
    Central differences of ``loss_fn(params)``. ``params`` may be a float,
    an array, a list of arrays or a dict of arrays; arrays are perturbed in
    place and restored.
    """
    if h <= 0:
        raise InvalidInputError(f"Step size must be positive, got {h}.")
    if isinstance(params, (int, float)):
        return (loss_fn(params + h) - loss_fn(params - h)) / (2 * h)
    if isinstance(params, dict):
        return dict(zip(params.keys(), _diff_arrays(lambda: loss_fn(params), list(params.values()), h)))
    if isinstance(params, (list, tuple)):
        return _diff_arrays(lambda: loss_fn(params), list(params), h)
    return _diff_arrays(lambda: loss_fn(params), [params], h)[0]


def _diff_arrays(evaluate, arrays, h):
    grads = []
    for array in arrays:
        grad = np.zeros(array.shape)
        for idx in np.ndindex(array.shape):
            original = array[idx]
            array[idx] = original + h
            up = evaluate()
            array[idx] = original - h
            down = evaluate()
            array[idx] = original
            grad[idx] = (up - down) / (2 * h)
        grads.append(grad)
    return grads


def discrete_js(p, q):
    """Jensen-Shannon divergence with weights 1/2, in nats."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return float(np.sum(a[mask] * np.log(a[mask] / b[mask])))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def policy_evaluation(mdp, reward, actions):
    """Discounted values of a deterministic stationary policy by a linear solve."""
    r = _reward_table(mdp, reward)
    states = np.arange(mdp.n_states)
    p_pi = mdp.transition[states, actions]
    r_pi = r[states, actions]
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * p_pi, r_pi)


def jacobi_singular_values(matrix, max_sweeps=60, tol=1e-15):
    """Singular values by one-sided Jacobi rotations, largest first."""
    a = np.array(matrix, dtype=float)
    n = a.shape[1]
    for _ in range(max_sweeps):
        worst = 0.0
        for i, j in itertools.combinations(range(n), 2):
            alpha = a[:, i] @ a[:, i]
            beta = a[:, j] @ a[:, j]
            gamma = a[:, i] @ a[:, j]
            if alpha == 0 or beta == 0:
                continue
            worst = max(worst, abs(gamma) / math.sqrt(alpha * beta))
            if abs(gamma) <= tol * math.sqrt(alpha * beta):
                continue
            zeta = float((beta - alpha) / (2 * gamma))
            t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
            c = 1 / math.sqrt(1 + t * t)
            s = c * t
            col_i = a[:, i].copy()
            a[:, i] = c * col_i - s * a[:, j]
            a[:, j] = s * col_i + c * a[:, j]
        if worst <= tol:
            break
    return np.sort(np.linalg.norm(a, axis=0))[::-1]


def relative_error(actual, expected):
    """Max absolute difference over the larger max-norm of the two."""
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    scale = max(np.max(np.abs(actual), initial=0.0), np.max(np.abs(expected), initial=0.0), 1e-300)
    return float(np.max(np.abs(actual - expected), initial=0.0) / scale)
