import numpy as np

from src.ciirl.core.mdp import GridworldSpec, TabularMDP, build_gridworld


def random_mdp(seed, n_states=3, n_actions=2, horizon=3, terminal=()):
    """Small MDP with dense random dynamics; every transition is possible."""
    rng = np.random.default_rng(seed)
    transition = rng.random((n_states, n_actions, n_states)) + 0.05
    transition /= transition.sum(axis=2, keepdims=True)
    initial = rng.random(n_states) + 0.05
    initial /= initial.sum()
    return TabularMDP(transition, initial, 0.9, horizon, frozenset(terminal))


def chain_mdp(n_states=3, horizon=4, terminal=(2,)):
    """Deterministic chain starting in state 0: action 0 stays, action 1 moves right."""
    transition = np.zeros((n_states, 2, n_states))
    for s in range(n_states):
        transition[s, 0, s] = 1.0
        transition[s, 1, min(s + 1, n_states - 1)] = 1.0
    initial = np.zeros(n_states)
    initial[0] = 1.0
    return TabularMDP(transition, initial, 0.9, horizon, frozenset(terminal))


def small_grid(width=3, height=3, slip_prob=0.0, horizon=6, **kwargs):
    spec = GridworldSpec(width=width, height=height, start_cells=((0, 0),),
                         goal_cells=((width - 1, height - 1),), slip_prob=slip_prob,
                         horizon=horizon, **kwargs)
    return build_gridworld(spec)
