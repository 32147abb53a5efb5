"""
Maximum-entropy IRL in feature-matching form, with the causal-invariance
penalty.

The trajectory model is the Gibbs distribution
``p(xi) ∝ mu0(s_0) prod p(s_t+1 | s_t, a_t) exp(sum_t r(s_t))`` over
trajectories that stop at the horizon or at their first terminal state. Its
exact marginals come from the gibbs soft backup; see ``expected_svf``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from ..exceptions import InvalidInputError, TrainingDivergedError
from .features import FeatureNet, NetworkConfig, RMSProp, RewardModel
from .mdp import encode_states
from .regularizers import (PenaltyReport, PowerIterationState, irm_scalar_penalty,
                           l2_penalty, spectral_norm_penalty)
from .solver import GIBBS, RolloutResult, as_state_action_reward, sample_rows, soft_value_iteration
from .trajectories import Trajectory, visitation_counts

logger = logging.getLogger(__name__)

SUM_OVER_SETTINGS = "sum-over-settings"
ROUND_ROBIN = "round-robin"
SETTING_MODES = (SUM_OVER_SETTINGS, ROUND_ROBIN)
EXACT = "exact"
CLOSED_FORM = "closed-form"
POOLED = "pooled"
UNIFORM = "uniform"
LOGIT = "logit"
LOG_D = "log-d"
AGENT_REWARDS = (LOGIT, LOG_D)


@dataclass(frozen=True)
class TrainConfig:
    lambda_ci: float = 0.0
    lambda_l2: float = 0.0
    lambda_lip: float = 0.0
    lr: float = 1e-3
    iters: int = 300
    seed: int = 0
    setting_mode: str = SUM_OVER_SETTINGS
    setting_weights: str = POOLED
    ci_gradient: str = EXACT
    grad_tol: float = 1e-5
    spectral_iters: int = 10
    rms_decay: float = 0.99
    rms_eps: float = 1e-8
    log_every: int = 50
    network: NetworkConfig = field(default_factory=NetworkConfig)
    # adversarial loop only
    buffer_size: int = 32
    gp_batch: int = 64
    state_only: bool = False
    disc_steps: int = 1
    agent_reward: str = LOGIT
    entropy_weight: float = 1.0

    def __post_init__(self):
        for name in ("lambda_ci", "lambda_l2", "lambda_lip"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be >= 0, got {getattr(self, name)}.")
        if self.setting_mode not in SETTING_MODES:
            raise InvalidInputError(f"Unknown setting_mode '{self.setting_mode}'.")
        if self.setting_weights not in (POOLED, UNIFORM):
            raise InvalidInputError(f"Unknown setting_weights '{self.setting_weights}'.")
        if self.ci_gradient not in (EXACT, CLOSED_FORM):
            raise InvalidInputError(f"Unknown ci_gradient '{self.ci_gradient}'.")
        if self.lr <= 0 or self.iters < 1:
            raise InvalidInputError("lr must be positive and iters >= 1.")
        if self.disc_steps < 1:
            raise InvalidInputError(f"disc_steps must be >= 1, got {self.disc_steps}.")
        if self.agent_reward not in AGENT_REWARDS:
            raise InvalidInputError(f"Unknown agent_reward '{self.agent_reward}'.")
        if self.entropy_weight <= 0:
            raise InvalidInputError(f"entropy_weight must be positive, got {self.entropy_weight}.")

    def active_regularizers(self):
        names = {"ci": self.lambda_ci, "l2": self.lambda_l2, "lipschitz": self.lambda_lip}
        return tuple(name for name, lam in names.items() if lam > 0)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "network" in data:
            data["network"] = NetworkConfig.from_dict(data["network"])
        return cls(**data)

    def to_dict(self):
        data = {name: getattr(self, name) for name in self.__dataclass_fields__}
        data["network"] = self.network.to_dict()
        return data


@dataclass(frozen=True, eq=False)
class ModelExpectation:
    svf: np.ndarray
    state_marginal: np.ndarray
    log_partition: float
    feature_expectation: Optional[np.ndarray] = None


def _successor_kernel(mdp, policy, t):
    """
    ``K[s, a, k]``: probability of taking ``a`` and landing in successor ``k``
    from state ``s`` at step ``t`` under the trajectory model. Terminal rows
    are zero because trajectories end there.
    """
    succ, probs = mdp.successors
    if policy.backup == GIBBS:
        continuation = policy.soft_q[t] - policy.reward
        with np.errstate(divide="ignore"):
            log_probs = np.log(probs)
        probs = np.exp(log_probs + policy.soft_values[t + 1][succ] - continuation[:, :, None])
    kernel = policy.probs[t][:, :, None] * probs
    kernel[mdp.terminal_mask] = 0.0
    return kernel


def _start_distribution(mdp, policy):
    if policy.backup == GIBBS:
        log_start = policy.soft_values[0] - policy.log_partition(mdp.initial_dist)
        return mdp.initial_dist * np.exp(log_start)
    return np.array(mdp.initial_dist)


def _propagate(mdp, mass, kernel):
    succ, _ = mdp.successors
    flows = mass[:, None, None] * kernel
    return np.bincount(succ.ravel(), weights=flows.ravel(), minlength=mdp.n_states)


def expected_svf(mdp, policy):
    """
    Per-step state occupancy ``svf[t, s]`` of the trajectory model defined by
    ``policy``. Rows sum to the probability that the trajectory is still
    running at step t.
    """
    if policy.horizon != mdp.horizon:
        raise InvalidInputError(f"Policy horizon {policy.horizon} != MDP horizon {mdp.horizon}.")
    svf = np.zeros((mdp.horizon, mdp.n_states))
    svf[0] = _start_distribution(mdp, policy)
    for t in range(mdp.horizon - 1):
        svf[t + 1] = _propagate(mdp, svf[t], _successor_kernel(mdp, policy, t))
    return ModelExpectation(svf, svf.sum(axis=0), policy.log_partition(mdp.initial_dist))


def model_expectation(mdp, reward, features=None):
    """Solves the gibbs backup for ``reward`` and returns its visitation statistics."""
    policy = soft_value_iteration(mdp, reward, backup=GIBBS)
    expectation = expected_svf(mdp, policy)
    if features is not None:
        expectation = replace(expectation, feature_expectation=expectation.state_marginal @ np.asarray(features))
    return expectation, policy


def visitation_covariance(mdp, policy, g):
    """
    ``Cov(N_s, h)`` for every state s, where ``N_s`` counts visits to s and
    ``h = sum_t g(s_t)``, under the trajectory model of ``policy``.
    """
    g = np.asarray(g, dtype=float)
    succ, _ = mdp.successors
    horizon = mdp.horizon
    kernels = [_successor_kernel(mdp, policy, t) for t in range(horizon - 1)]

    svf = np.zeros((horizon, mdp.n_states))
    forward = np.zeros((horizon, mdp.n_states))
    svf[0] = _start_distribution(mdp, policy)
    for t in range(horizon - 1):
        svf[t + 1] = _propagate(mdp, svf[t], kernels[t])
        forward[t + 1] = _propagate(mdp, forward[t] + g * svf[t], kernels[t])

    backward = np.zeros((horizon, mdp.n_states))
    for t in range(horizon - 2, -1, -1):
        ahead = g[succ] + backward[t + 1][succ]
        backward[t] = np.sum(kernels[t] * ahead, axis=(1, 2))

    joint = np.sum(forward + svf * (g[None, :] + backward), axis=0)
    marginal = svf.sum(axis=0)
    return joint - marginal * (marginal @ g)


def dynamics_log_prob(mdp, traj):
    """``log mu0(s_0) + sum_t log p(s_t+1 | s_t, a_t)``."""
    with np.errstate(divide="ignore"):
        total = np.log(mdp.initial_dist[traj.states[0]])
        states, actions = np.asarray(traj.states), np.asarray(traj.actions)
        total += np.sum(np.log(mdp.transition[states[:-1], actions[:-1], states[1:]]))
    return float(total)


def gibbs_log_prob(mdp, reward, traj, log_partition):
    """Exact log density of a trajectory under the Gibbs model of ``reward``."""
    r = as_state_action_reward(mdp, reward)
    return dynamics_log_prob(mdp, traj) + float(np.sum(r[list(traj.states), list(traj.actions)])) - log_partition


def _log_likelihood(mdp, reward, ds, log_partition):
    trajectories = getattr(ds, "trajectories", ds)
    if len(trajectories) == 0:
        raise InvalidInputError("Cannot evaluate the likelihood of an empty dataset.")
    return float(np.mean([gibbs_log_prob(mdp, reward, t, log_partition) for t in trajectories]))


def mle_loss(mdp, reward_model, ds):
    """Mean log-likelihood of the dataset's trajectories under the Gibbs model."""
    reward = reward_model.reward()
    policy = soft_value_iteration(mdp, reward, backup=GIBBS)
    return _log_likelihood(mdp, reward, ds, policy.log_partition(mdp.initial_dist))


def mle_gradient_psi(mdp, reward_model, ds):
    """``C = E_data[phi(xi)] - E_model[phi(xi)]``, the gradient of ``mle_loss`` in the head."""
    phi = reward_model.features()
    expectation, _ = model_expectation(mdp, phi @ reward_model.head)
    return (visitation_counts(ds, mdp.n_states) - expectation.state_marginal) @ phi


def mle_gradient(mdp, reward_model, ds):
    """Gradient of ``mle_loss`` with respect to every parameter of the reward model."""
    phi = reward_model.features()
    expectation, _ = model_expectation(mdp, phi @ reward_model.head)
    diff = visitation_counts(ds, mdp.n_states) - expectation.state_marginal
    grads = reward_model.net.backward(diff[:, None] * reward_model.head[None, :])
    return grads + [diff @ phi]


def ci_penalty(c):
    c = np.asarray(c, dtype=float)
    return float(c @ c)


def ci_penalty_feature_grad(c, phi, visitation_diff):
    """
    Closed-form upstream for the penalty under a linear reward: each state's
    features get ``2 ||C||^2 phi(s)`` times its visitation difference
    ``rho_data(s) - rho_model(s)``.
    """
    phi = np.asarray(phi, dtype=float)
    return 2.0 * ci_penalty(c) * np.asarray(visitation_diff, dtype=float)[:, None] * phi


class GibbsScaleLoss:
    """
    Log-likelihood of the Gibbs model with reward ``features @ w``, as a
    function of the predictor ``w``. ``dw(w)`` is the feature-matching
    residual C.
    """

    def __init__(self, mdp, features, expert_visits, policy=None, at_w=None):
        self.mdp = mdp
        self.features = np.asarray(features, dtype=float)
        self.expert_visits = np.asarray(expert_visits, dtype=float)
        self._solved = {}
        if policy is not None:
            self._solved[self._key(1.0 if at_w is None else at_w)] = policy

    def _key(self, w):
        return tuple(np.broadcast_to(np.asarray(w, dtype=float), (self.features.shape[1],)).tolist())

    def _solve(self, w):
        key = self._key(w)
        if key not in self._solved:
            self._solved[key] = soft_value_iteration(self.mdp, self.features @ np.asarray(key), backup=GIBBS)
        return self._solved[key]

    def value(self, w=1.0):
        policy = self._solve(w)
        reward = self.features @ np.asarray(self._key(w))
        return float(self.expert_visits @ reward - policy.log_partition(self.mdp.initial_dist))

    def visitation_diff(self, w=1.0):
        return self.expert_visits - expected_svf(self.mdp, self._solve(w)).state_marginal

    def dw(self, w=1.0):
        return self.visitation_diff(w) @ self.features

    def penalty_upstream(self, w, dl_dw):
        """Gradient of ``||C||^2`` with respect to every row of ``features``."""
        w = np.asarray(self._key(w))
        cov = visitation_covariance(self.mdp, self._solve(w), self.features @ dl_dw)
        return 2.0 * self.visitation_diff(w)[:, None] * dl_dw[None, :] - 2.0 * cov[:, None] * w[None, :]


def ci_penalty_gradient(mdp, reward_model, expert_visits, policy=None, mode=EXACT):
    """
    The penalty ``||C||^2`` at head = 1 with the head folded into the
    features, and its gradients: upstream on ``phi`` (S, d) and on the head.
    """
    phi = reward_model.features()
    head = reward_model.head
    scaled = phi * head[None, :]
    ones = np.ones_like(head)
    loss = GibbsScaleLoss(mdp, scaled, expert_visits, policy=policy, at_w=ones)
    penalty = irm_scalar_penalty(loss, at_w=ones)
    if mode == EXACT:
        d_scaled = penalty.upstream()
    else:
        d_scaled = ci_penalty_feature_grad(penalty.dl_dw, scaled, loss.visitation_diff(ones))
    return penalty.value, penalty.dl_dw, d_scaled * head[None, :], np.sum(d_scaled * phi, axis=0)


def sample_gibbs(mdp, policy, n, seed, setting_id=0):
    """Samples trajectories from the trajectory model of ``policy`` (exact Gibbs samples for the gibbs backup)."""
    if n < 1:
        raise InvalidInputError(f"sample_gibbs needs n >= 1, got {n}.")
    rng = np.random.default_rng(seed)
    succ, _ = mdp.successors
    horizon = policy.horizon
    states = np.zeros((n, horizon), dtype=int)
    actions = np.zeros((n, horizon), dtype=int)
    lengths = np.full(n, horizon)
    alive = np.ones(n, dtype=bool)
    current = sample_rows(np.broadcast_to(_start_distribution(mdp, policy), (n, mdp.n_states)), rng)
    for t in range(horizon):
        chosen = sample_rows(policy.probs[t, current], rng)
        states[:, t] = current
        actions[:, t] = chosen
        done = alive & mdp.terminal_mask[current]
        lengths[done] = t + 1
        alive &= ~done
        if t == horizon - 1 or not alive.any():
            break
        kernel = _successor_kernel(mdp, policy, t)[current, chosen]
        picked = sample_rows(np.where(alive[:, None], kernel, 1.0), rng)
        current = succ[current, chosen, picked]
    trajectories = tuple(
        Trajectory(tuple(states[i, :lengths[i]].tolist()), tuple(actions[i, :lengths[i]].tolist()), setting_id)
        for i in range(n)
    )
    return RolloutResult(trajectories=trajectories)


@dataclass
class TrainResult:
    model: RewardModel
    trace: List[PenaltyReport]
    iterations: int
    early_stopped: bool = False
    config: Optional[TrainConfig] = None


def default_reward_model(mdp, network, seed):
    inputs = encode_states(mdp, network.encoding)
    return RewardModel(FeatureNet.from_config(inputs, network, seed=seed))


def _setting_weights(settings, cfg):
    if cfg.setting_weights == UNIFORM:
        return [1.0] * len(settings)
    total = sum(len(ds) for ds in settings)
    return [len(ds) * len(settings) / total for ds in settings]


def train_ci_fmirl(mdp, settings, cfg, model=None):
    """
    Feature-matching training with the causal-invariance penalty.

    Minimizes ``sum_e w_e (-L_e) + lambda_ci * ||C_e||^2`` plus the optional
    L2 penalty on the state features and the spectral-norm penalty on the
    network, using RMSProp. ``w_e`` pools the settings by size (so
    ``lambda_ci = 0`` is plain MaxEnt on the pooled data) unless
    ``setting_weights`` is ``uniform``.
    """
    settings = list(settings)
    if not settings:
        raise InvalidInputError("train_ci_fmirl needs at least one setting.")
    model = model or default_reward_model(mdp, cfg.network, cfg.seed)
    optimizer = RMSProp(model.parameters(), lr=cfg.lr, decay=cfg.rms_decay, eps=cfg.rms_eps)
    power_state = PowerIterationState(seed=cfg.seed)
    expert_visits = [visitation_counts(ds, mdp.n_states) for ds in settings]
    dynamics_terms = [np.mean([dynamics_log_prob(mdp, t) for t in ds.trajectories]) for ds in settings]
    weights = _setting_weights(settings, cfg)

    trace = []
    early_stopped = False
    iteration = 0
    for iteration in range(cfg.iters):
        phi = model.features()
        head = model.head
        reward = phi @ head
        if not np.all(np.isfinite(reward)):
            raise TrainingDivergedError(f"Reward became non-finite at iteration {iteration}.", trace)
        policy = soft_value_iteration(mdp, reward, backup=GIBBS)
        log_z = policy.log_partition(mdp.initial_dist)
        model_visits = expected_svf(mdp, policy).state_marginal

        if cfg.setting_mode == ROUND_ROBIN:
            active = [iteration % len(settings)]
            scale = {active[0]: 1.0}
        else:
            active = range(len(settings))
            scale = dict(enumerate(weights))

        upstream = np.zeros_like(phi)
        head_grad = np.zeros_like(head)
        rows = []
        for e in active:
            diff = expert_visits[e] - model_visits
            c = diff @ phi
            loss = float(expert_visits[e] @ reward - log_z + dynamics_terms[e])
            upstream -= scale[e] * diff[:, None] * head[None, :]
            head_grad -= scale[e] * c
            if cfg.lambda_ci > 0:
                value, _, d_phi, d_head = ci_penalty_gradient(
                    mdp, model, expert_visits[e], policy=policy, mode=cfg.ci_gradient)
                upstream += cfg.lambda_ci * d_phi
                head_grad += cfg.lambda_ci * d_head
                grad_norm = float(np.sqrt(np.sum(d_phi ** 2) + np.sum(d_head ** 2)))
            else:
                value, grad_norm = ci_penalty(head * c), 0.0
            rows.append((e, loss, value, grad_norm))

        if cfg.lambda_l2 > 0:
            _, d_l2 = l2_penalty(phi, cfg.lambda_l2)
            upstream += d_l2
        grads = model.net.backward(upstream) + [head_grad]
        if cfg.lambda_lip > 0:
            _, spectral_grads = spectral_norm_penalty(model.net, cfg.spectral_iters, power_state)
            for g, s in zip(grads, spectral_grads):
                g += cfg.lambda_lip * s

        total_norm = float(np.sqrt(sum(np.sum(g ** 2) for g in grads)))
        reports = [PenaltyReport(iteration, e, loss, value, grad_norm, cfg.lambda_ci, total_norm)
                   for e, loss, value, grad_norm in rows]
        if not all(r.is_finite() for r in reports):
            raise TrainingDivergedError(f"Training loss became non-finite at iteration {iteration}.", trace)
        trace.extend(reports)
        if cfg.log_every and iteration % cfg.log_every == 0:
            logger.info("iter %d: loss %.5f, ci %.5f, |grad| %.3e", iteration,
                        sum(r.base_loss for r in reports), sum(r.penalty_value for r in reports), total_norm)
        if total_norm < cfg.grad_tol:
            early_stopped = True
            logger.warning("Stopping early at iteration %d: gradient norm %.3e below %.1e.",
                           iteration, total_norm, cfg.grad_tol)
            break
        optimizer.step(grads)

    return TrainResult(model=model, trace=trace, iterations=iteration + 1, early_stopped=early_stopped, config=cfg)
