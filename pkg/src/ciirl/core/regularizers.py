"""
Penalties shared by the feature-matching and adversarial trainers.

``irm_scalar_penalty`` works on any loss family that exposes the derivative
of the loss with respect to a multiplier ``w`` on its predictor, and knows how
to push the penalty's gradient back onto its own inputs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, List, Optional

import numpy as np
from scipy.special import expit, log_expit

from ..exceptions import InvalidInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PenaltyReport:
    iteration: int
    setting_id: int
    base_loss: float
    penalty_value: float
    penalty_grad_norm: float
    lam: float
    total_grad_norm: float = 0.0

    def is_finite(self):
        return all(np.isfinite([self.base_loss, self.penalty_value, self.penalty_grad_norm, self.total_grad_norm]))

    def to_row(self):
        return {
            "iteration": self.iteration,
            "setting_id": self.setting_id,
            "loss": self.base_loss,
            "ci_penalty": self.penalty_value,
            "penalty_grad_norm": self.penalty_grad_norm,
            "lambda": self.lam,
            "total_grad_norm": self.total_grad_norm,
        }


@dataclass
class ScalarPenalty:
    """``||dL/dw||^2`` at ``w = at_w`` together with the loss that produced it."""
    value: float
    dl_dw: np.ndarray
    loss: Any
    at_w: Any

    def upstream(self):
        """Gradient of the penalty with respect to the loss family's inputs."""
        return self.loss.penalty_upstream(self.at_w, self.dl_dw)


def irm_scalar_penalty(loss, at_w=1.0):
    """
    Squared gradient of ``loss`` with respect to the predictor multiplier.

    ``loss`` provides ``value(w)``, ``dw(w)`` and ``penalty_upstream(w, dl_dw)``.
    """
    dl_dw = np.asarray(loss.dw(at_w), dtype=float)
    return ScalarPenalty(float(np.sum(dl_dw ** 2)), dl_dw, loss, at_w)


class LogisticScaleLoss:
    """
    Binary logistic loss with logits scaled by ``w``, in minimization form:
    ``-mean_E log sigmoid(w z_E) - mean_pi log sigmoid(-w z_pi)``.

    Optional per-example weights replace the uniform means.
    """

    def __init__(self, expert_logits, policy_logits, expert_weights=None, policy_weights=None):
        self.z_e = np.asarray(expert_logits, dtype=float)
        self.z_p = np.asarray(policy_logits, dtype=float)
        self.m_e = self._weights(expert_weights, self.z_e)
        self.m_p = self._weights(policy_weights, self.z_p)

    @staticmethod
    def _weights(weights, logits):
        if weights is None:
            return np.full(logits.shape, 1.0 / logits.size) if logits.size else np.zeros(0)
        weights = np.asarray(weights, dtype=float)
        if weights.shape != logits.shape:
            raise InvalidInputError("Example weights must match the logits.")
        return weights

    def value(self, w=1.0):
        return float(-(self.m_e @ log_expit(w * self.z_e)) - self.m_p @ log_expit(-w * self.z_p))

    def dw(self, w=1.0):
        return float(-(self.m_e @ (expit(-w * self.z_e) * self.z_e)) + self.m_p @ (expit(w * self.z_p) * self.z_p))

    def dw_dlogits(self, w=1.0):
        """Derivatives of ``dw(w)`` with respect to each expert and policy logit."""
        wz_e, wz_p = w * self.z_e, w * self.z_p
        d_e = -expit(-wz_e) * (1.0 - wz_e * expit(wz_e))
        d_p = expit(wz_p) * (1.0 + wz_p * expit(-wz_p))
        return self.m_e * d_e, self.m_p * d_p

    def logit_grads(self, w=1.0):
        """Derivatives of ``value(w)`` with respect to the logits."""
        return -self.m_e * w * expit(-w * self.z_e), self.m_p * w * expit(w * self.z_p)

    def penalty_upstream(self, w, dl_dw):
        d_e, d_p = self.dw_dlogits(w)
        return 2.0 * dl_dw * d_e, 2.0 * dl_dw * d_p


def l2_penalty(values, lam):
    values = np.asarray(values, dtype=float)
    return float(lam * np.sum(values ** 2)), 2.0 * lam * values


@dataclass
class PowerIterationState:
    """Warm-started right singular vectors, one per weight matrix."""
    seed: int = 0
    vectors: List[Optional[np.ndarray]] = field(default_factory=list)

    def vector(self, index, n_cols):
        while len(self.vectors) <= index:
            self.vectors.append(None)
        v = self.vectors[index]
        if v is None or v.shape != (n_cols,):
            v = np.random.default_rng(self.seed + index).standard_normal(n_cols)
            v /= max(np.linalg.norm(v), 1e-12)
        return v


def power_iteration(matrix, iters, v0):
    """
    Top singular triple of ``matrix`` by power iteration from ``v0``.
    Returns ``(sigma, u, v, history)`` where history holds ``||W v_k||``.
    """
    v = np.asarray(v0, dtype=float)
    history = []
    u = np.zeros(matrix.shape[0])
    for _ in range(iters):
        wv = matrix @ v
        u = wv / max(np.linalg.norm(wv), 1e-12)
        wtu = matrix.T @ u
        v = wtu / max(np.linalg.norm(wtu), 1e-12)
        history.append(float(np.linalg.norm(matrix @ v)))
    sigma = float(u @ matrix @ v)
    return sigma, u, v, history


def spectral_norm_penalty(net, iters=10, state=None):
    """
    Sum over layers of the squared top singular value, with gradients in
    ``net.parameters()`` order (biases get zeros).
    """
    if iters < 1:
        raise InvalidInputError(f"Power iteration needs iters >= 1, got {iters}.")
    state = state if state is not None else PowerIterationState()
    total = 0.0
    grads = []
    for index, (w, b) in enumerate(zip(net.weights, net.biases)):
        sigma, u, v, _ = power_iteration(w, iters, state.vector(index, w.shape[1]))
        state.vectors[index] = v
        total += sigma ** 2
        grads.extend([2.0 * sigma * np.outer(u, v), np.zeros_like(b)])
    return total, grads


def interpolate_inputs(expert_inputs, policy_inputs, rng, n=None):
    """Random convex combinations of expert and policy input rows."""
    expert_inputs = np.atleast_2d(expert_inputs)
    policy_inputs = np.atleast_2d(policy_inputs)
    n = n or max(len(expert_inputs), len(policy_inputs))
    e = expert_inputs[rng.integers(len(expert_inputs), size=n)]
    p = policy_inputs[rng.integers(len(policy_inputs), size=n)]
    eps = rng.random((n, 1))
    return eps * e + (1.0 - eps) * p


def input_gradient_penalty(net, head, inputs):
    """
    ``mean_n (||d (head . phi(x_n)) / dx|| - 1)^2`` with exact gradients for
    the network parameters and the head.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    grads_x = net.input_gradient(inputs, head)
    norms = np.linalg.norm(grads_x, axis=1)
    value = float(np.mean((norms - 1.0) ** 2))
    scale = np.divide(2.0 * (norms - 1.0), norms, out=np.zeros_like(norms), where=norms > 0)
    direction = scale[:, None] * grads_x / len(inputs)
    param_grads, head_grad = net.directional_param_grad(inputs, direction, head)
    return value, param_grads, head_grad
