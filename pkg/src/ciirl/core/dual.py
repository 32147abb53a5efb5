"""
The adversarial side: a logistic discriminator between expert and policy
transitions, its causal-invariance penalty, the importance-sampled dual
gradient and a tabular adversarial IRL loop.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from ..exceptions import InvalidInputError, TrainingDivergedError
from ..utils import derive_seed
from .features import Adam, FeatureNet, RewardModel
from .maxent import LOGIT, gibbs_log_prob, model_expectation
from .mdp import encode_state_actions
from .regularizers import (LogisticScaleLoss, input_gradient_penalty, interpolate_inputs,
                           irm_scalar_penalty)
from .solver import CAUSAL, rollout, soft_value_iteration
from .trajectories import visitation_counts

logger = logging.getLogger(__name__)

LOG2 = float(np.log(2.0))
LOG4 = float(np.log(4.0))
SATURATION_LOGIT = 20.0
MIN_EFFECTIVE_SAMPLES = 5.0
MONTE_CARLO = "monte-carlo"
ENUMERATION = "enumeration"


class Discriminator:
    """
    Logit ``z(item) = head . phi(item)`` over transition items ``s * A + a``
    (or plain states when ``state_only``).
    """

    def __init__(self, model, n_actions, state_only=False):
        self.model = model
        self.n_actions = n_actions
        self.state_only = state_only

    @classmethod
    def for_mdp(cls, mdp, network, seed=0, state_only=False):
        inputs = encode_state_actions(mdp, network.encoding, state_only=state_only)
        net = FeatureNet.from_config(inputs, network, seed=seed)
        return cls(RewardModel(net), mdp.n_actions, state_only)

    @property
    def net(self):
        return self.model.net

    @property
    def head(self):
        return self.model.head

    def items(self, trajectories):
        """Flat item indices of every (s, a) step in the trajectories."""
        states = np.concatenate([np.asarray(t.states, dtype=int) for t in trajectories])
        if self.state_only:
            return states
        actions = np.concatenate([np.asarray(t.actions, dtype=int) for t in trajectories])
        return states * self.n_actions + actions

    def logits(self, items=None):
        return self.model.reward(items)

    def probs(self, items=None):
        return expit(self.logits(items))

    def logit_table(self, n_states):
        """Logits as an (S, A) reward table for the agent."""
        z = self.logits()
        if self.state_only:
            return np.repeat(z[:, None], self.n_actions, axis=1)
        return z.reshape(n_states, self.n_actions)


@dataclass
class BceResult:
    objective: float
    js_estimate: float
    grads: List[np.ndarray]
    expert_logits: np.ndarray
    policy_logits: np.ndarray


@dataclass
class PenaltyResult:
    value: float
    dl_dw: float
    grads: List[np.ndarray]


def _chain_to_params(disc, expert_items, policy_items, d_expert, d_policy):
    """Pushes per-logit derivatives through the head and the network."""
    items = np.concatenate([expert_items, policy_items]).astype(int)
    d_logits = np.concatenate([d_expert, d_policy])
    phi = disc.net.forward(items)
    upstream = d_logits[:, None] * disc.head[None, :]
    return disc.net.backward(upstream, items) + [d_logits @ phi]


def _logistic_loss(disc, expert_items, policy_items, expert_weights, policy_weights):
    expert_items = np.asarray(expert_items, dtype=int)
    policy_items = np.asarray(policy_items, dtype=int)
    if expert_items.size == 0 and policy_items.size == 0:
        raise InvalidInputError("The discriminator needs at least one example.")
    z_e = disc.logits(expert_items) if expert_items.size else np.zeros(0)
    z_p = disc.logits(policy_items) if policy_items.size else np.zeros(0)
    return expert_items, policy_items, LogisticScaleLoss(z_e, z_p, expert_weights, policy_weights)


def bce_loss(disc, expert_items, policy_items, expert_weights=None, policy_weights=None):
    """
    ``mean_E log g(x) + mean_pi log(1 - g(x))`` with ``g = sigmoid(z)``.

    ``grads`` are the gradients of the negated objective (the loss to
    minimize), in ``disc.model.parameters()`` order. ``js_estimate`` is
    ``(objective + log 4) / 2`` clipped to ``[0, log 2]``.
    """
    expert_items, policy_items, loss = _logistic_loss(disc, expert_items, policy_items,
                                                      expert_weights, policy_weights)
    if expert_items.size == 0 or policy_items.size == 0:
        raise InvalidInputError("bce_loss needs non-empty expert and policy batches.")
    objective = -loss.value(1.0)
    js = float(np.clip((objective + LOG4) / 2.0, 0.0, LOG2))
    d_e, d_p = loss.logit_grads(1.0)
    grads = _chain_to_params(disc, expert_items, policy_items, d_e, d_p)
    return BceResult(objective, js, grads, loss.z_e, loss.z_p)


def ci_bce_penalty(disc, expert_items, policy_items, setting_id=0, expert_weights=None, policy_weights=None):
    """``(d BCE / dw)^2`` at ``w = 1`` for logits scaled by ``w``, with parameter gradients."""
    expert_items, policy_items, loss = _logistic_loss(disc, expert_items, policy_items,
                                                      expert_weights, policy_weights)
    penalty = irm_scalar_penalty(loss, at_w=1.0)
    u_e, u_p = penalty.upstream()
    grads = _chain_to_params(disc, expert_items, policy_items, u_e, u_p)
    logger.debug("Setting %d: CI penalty %.6f.", setting_id, penalty.value)
    return PenaltyResult(penalty.value, float(penalty.dl_dw), grads)


@dataclass(frozen=True, eq=False)
class SamplerEstimate:
    """
    Samples from q with their densities under q and under the Gibbs model p.
    ``weights = p / q``; ``masses`` are ``1/N`` for Monte-Carlo samples and
    ``q(xi)`` for an exhaustive enumeration.
    """
    samples: Tuple[Any, ...]
    log_q: np.ndarray
    log_p: np.ndarray
    weights: np.ndarray
    masses: np.ndarray
    kind: str = MONTE_CARLO

    def effective_sample_size(self):
        w = self.weights * self.masses
        return float(w.sum() ** 2 / np.sum(w ** 2))

    def entropy(self):
        """Entropy of q: exact for enumerations, a Monte-Carlo estimate otherwise."""
        return float(-(self.masses @ self.log_q))


def build_sampler(mdp, reward_model, trajectories, log_q):
    """Monte-Carlo sampler from draws of q and their log densities under q."""
    trajectories = tuple(trajectories)
    log_q = np.asarray(log_q, dtype=float)
    if len(trajectories) == 0 or log_q.shape != (len(trajectories),):
        raise InvalidInputError("build_sampler needs one log density per sample.")
    log_p = _model_log_probs(mdp, reward_model, trajectories)
    return SamplerEstimate(trajectories, log_q, log_p, np.exp(log_p - log_q),
                           np.full(len(trajectories), 1.0 / len(trajectories)), MONTE_CARLO)


def enumerated_sampler(mdp, reward_model, trajectories, log_q):
    """Sampler over an exhaustive list of trajectories, weighted by their q mass."""
    trajectories = tuple(trajectories)
    log_q = np.asarray(log_q, dtype=float)
    log_p = _model_log_probs(mdp, reward_model, trajectories)
    return SamplerEstimate(trajectories, log_q, log_p, np.exp(log_p - log_q), np.exp(log_q), ENUMERATION)


def _model_log_probs(mdp, reward_model, trajectories):
    reward = reward_model.reward()
    expectation, _ = model_expectation(mdp, reward)
    return np.array([gibbs_log_prob(mdp, reward, t, expectation.log_partition) for t in trajectories])


@dataclass
class DualGradient:
    gradient: np.ndarray
    effective_sample_size: float
    status: str = "ok"


def dual_gradient_is(reward_model, expert_ds, sampler, normalize=True):
    """
    ``E_data[phi(xi)] - E_p[phi(xi)]`` with the model expectation estimated
    from the sampler's q-draws reweighted by ``p / q``.
    """
    phi = reward_model.features()
    empirical = visitation_counts(expert_ds, phi.shape[0]) @ phi
    coef = sampler.weights * sampler.masses
    if normalize:
        coef = coef / coef.sum()
    model_term = np.zeros(phi.shape[1])
    for c, traj in zip(coef, sampler.samples):
        model_term += c * phi[list(traj.states)].sum(axis=0)

    status = "ok"
    ess = sampler.effective_sample_size()
    if sampler.kind == MONTE_CARLO and ess < MIN_EFFECTIVE_SAMPLES:
        status = "degenerate"
        logger.warning("Importance sampler is degenerate: effective sample size %.2f.", ess)
    return DualGradient(empirical - model_term, ess, status)


@dataclass
class AirlResult:
    discriminator: Discriminator
    agent: Any
    trace: List[Dict[str, Any]] = field(default_factory=list)
    config: Optional[Any] = None

    @property
    def model(self):
        return self.discriminator.model


def _add(grads, extra, scale):
    for g, e in zip(grads, extra):
        g += scale * e


def agent_reward_table(disc, n_states, form=LOGIT, entropy_weight=1.0):
    """
    ``(S, A)`` reward the agent plans on: the logit ``log g - log(1 - g)`` or
    ``log g``, divided by the entropy weight. ``log g`` is never positive, so
    the agent gains nothing by postponing a terminal state.
    """
    z = disc.logit_table(n_states)
    reward = z if form == LOGIT else -np.logaddexp(0.0, -z)
    return reward / entropy_weight


def _discriminator_step(disc, optimizer, expert_items, policy_items, cfg, rng, setting_id, iteration, trace):
    bce = bce_loss(disc, expert_items, policy_items)
    grads = bce.grads
    if cfg.lambda_ci > 0:
        penalty = ci_bce_penalty(disc, expert_items, policy_items, setting_id)
        ci_value = penalty.value
        _add(grads, penalty.grads, cfg.lambda_ci)
    else:
        ci_value = irm_scalar_penalty(LogisticScaleLoss(bce.expert_logits, bce.policy_logits)).value
    if cfg.lambda_lip > 0:
        inputs = disc.net.inputs
        mixed = interpolate_inputs(inputs[expert_items], inputs[policy_items], rng, cfg.gp_batch)
        _, gp_grads, gp_head = input_gradient_penalty(disc.net, disc.head, mixed)
        _add(grads, gp_grads + [gp_head], cfg.lambda_lip)

    if not (np.isfinite(bce.objective) and np.isfinite(ci_value)):
        raise TrainingDivergedError(f"Discriminator loss became non-finite at iteration {iteration}.", trace)
    saturated = bool(np.all(np.abs(np.concatenate([bce.expert_logits, bce.policy_logits])) > SATURATION_LOGIT))
    if saturated:
        logger.warning("Discriminator saturated at iteration %d, setting %d.", iteration, setting_id)
    optimizer.step(grads)
    return bce, ci_value, saturated


def train_ci_airl_toy(mdp, settings, cfg, truth=None, discriminator=None):
    """
    Adversarial IRL on a tabular MDP. Each outer iteration collects one
    policy buffer shared by all settings; then, per setting,
    ``cfg.disc_steps`` discriminator steps (logistic loss + CI penalty +
    input-gradient penalty, Adam) are followed by one agent update, the
    causal soft policy of ``agent_reward_table``.
    """
    settings = list(settings)
    if not settings:
        raise InvalidInputError("train_ci_airl_toy needs at least one setting.")
    disc = discriminator or Discriminator.for_mdp(mdp, cfg.network, cfg.seed, cfg.state_only)
    optimizer = Adam(disc.model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(derive_seed(cfg.seed, 7))
    expert_items = [disc.items(ds.trajectories) for ds in settings]

    def plan():
        reward = agent_reward_table(disc, mdp.n_states, cfg.agent_reward, cfg.entropy_weight)
        return soft_value_iteration(mdp, reward, backup=CAUSAL)

    agent = plan()
    trace = []
    for iteration in range(cfg.iters):
        buffer = rollout(mdp, agent, cfg.buffer_size, derive_seed(cfg.seed, iteration + 1), truth=truth)
        policy_items = disc.items(buffer.trajectories)
        agent_return = buffer.mean_return if truth is not None else float("nan")
        for e, ds in enumerate(settings):
            for _ in range(cfg.disc_steps):
                bce, ci_value, saturated = _discriminator_step(disc, optimizer, expert_items[e], policy_items,
                                                               cfg, rng, ds.setting_id, iteration, trace)
            agent = plan()
            trace.append({
                "iteration": iteration,
                "setting_id": ds.setting_id,
                "bce": -bce.objective,
                "ci_penalty": ci_value,
                "js": bce.js_estimate,
                "agent_return": agent_return,
                "saturated": saturated,
            })
        if cfg.log_every and iteration % cfg.log_every == 0:
            logger.info("iter %d: bce %.5f, js %.5f, agent return %.4f",
                        iteration, trace[-1]["bce"], trace[-1]["js"], agent_return)
    return AirlResult(disc, agent, trace, cfg)
