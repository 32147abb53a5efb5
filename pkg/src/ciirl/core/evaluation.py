"""
Transfer evaluation of recovered rewards.

A recovered reward is standardized, planned on with hard value iteration
inside a perturbed MDP and the resulting policy is scored with the
ground-truth reward.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Union

import numpy as np
from scipy.stats import spearmanr

from ..exceptions import CiIrlError, InvalidInputError
from .dual import train_ci_airl_toy
from .maxent import CLOSED_FORM, ROUND_ROBIN, UNIFORM, train_ci_fmirl
from .mdp import apply_perturbation, cell_to_state, goal_distance
from .solver import rollout, value_iteration

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ("method", "lambda", "perturbation", "seed", "return_mean", "return_std", "n_rollouts")
CI_GRID = (0.0, 0.1, 1.0, 10.0, 100.0)
LIPSCHITZ_GRID = (0.0, 1.0, 10.0)
DEFAULT_L2 = 1e-3


@dataclass(frozen=True)
class TransferResult:
    method_label: str
    lambda_used: float
    perturbation: str
    seed: Union[int, str]
    ground_truth_return: float
    return_std: float
    n_rollouts: int

    def to_row(self):
        return {
            "method": self.method_label,
            "lambda": self.lambda_used,
            "perturbation": self.perturbation,
            "seed": self.seed,
            "return_mean": self.ground_truth_return,
            "return_std": self.return_std,
            "n_rollouts": self.n_rollouts,
        }


def method_label(cfg):
    """
    ``erm`` for the unregularized run, otherwise named after the active
    regularizer. Non-default setting schedules, setting weights and CI
    gradients add a suffix so that checkpoints of different runs never
    share a file name.
    """
    if cfg.lambda_ci > 0:
        label = f"ci-{cfg.lambda_ci:g}"
        if cfg.ci_gradient == CLOSED_FORM:
            label += "-cf"
    elif cfg.lambda_l2 > 0:
        label = "erm-l2"
    elif cfg.lambda_lip > 0:
        label = "erm-lipschitz"
    else:
        label = "erm"
    if cfg.setting_mode == ROUND_ROBIN:
        label += "-rr"
    if cfg.setting_weights == UNIFORM:
        label += "-uniform"
    return label


def method_lambda(cfg):
    for lam in (cfg.lambda_ci, cfg.lambda_l2, cfg.lambda_lip):
        if lam > 0:
            return lam
    return 0.0


def reward_vector(recovered):
    values = recovered.reward() if hasattr(recovered, "reward") else np.asarray(recovered, dtype=float)
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("Recovered reward contains non-finite values.")
    return values


def standardize(reward):
    reward = np.asarray(reward, dtype=float)
    centered = reward - reward.mean()
    std = centered.std()
    return centered / std if std > 0 else centered


def transfer_policy(reward, mdp, perturbation, standardized=True):
    perturbed = apply_perturbation(mdp, perturbation)
    reward = standardize(reward) if standardized else np.asarray(reward, dtype=float)
    return perturbed, value_iteration(perturbed, reward)


def transfer_eval(recovered, base_mdp, truth, perturbation, n_rollouts=10, seed=0,
                  label="", lam=0.0, standardized=True):
    if n_rollouts < 1:
        raise InvalidInputError(f"n_rollouts must be >= 1, got {n_rollouts}.")
    perturbed, policy = transfer_policy(reward_vector(recovered), base_mdp, perturbation, standardized)
    result = rollout(perturbed, policy, n_rollouts, seed, truth=truth)
    return TransferResult(label, float(lam), perturbation.describe(), seed,
                          result.mean_return, float(np.std(result.returns)), n_rollouts)


@dataclass
class SweepTable:
    rows: List[TransferResult]
    aggregates: List[TransferResult]
    failures: List[dict]

    def all_rows(self):
        return [r.to_row() for r in self.rows + self.aggregates]


def aggregate(rows):
    """Mean and sample standard deviation over seeds per (method, lambda, perturbation)."""
    groups = {}
    for row in rows:
        groups.setdefault((row.method_label, row.lambda_used, row.perturbation), []).append(row)
    out = []
    for (label, lam, pert), members in groups.items():
        returns = np.array([m.ground_truth_return for m in members])
        std = float(np.std(returns, ddof=1)) if len(returns) > 1 else 0.0
        out.append(TransferResult(label, lam, pert, "all", float(returns.mean()), std,
                                  sum(m.n_rollouts for m in members)))
    return out


def _recover(method, seed, mdp, truth, settings, pipeline):
    _, spec, *rest = method
    if not hasattr(spec, "lambda_ci"):
        return spec, float(rest[0]) if rest else 0.0
    cfg = replace(spec, seed=seed)
    if pipeline == "airl-toy":
        result = train_ci_airl_toy(mdp, settings, cfg, truth=truth)
        return result.discriminator.logit_table(mdp.n_states), method_lambda(cfg)
    return train_ci_fmirl(mdp, settings, cfg).model, method_lambda(cfg)


def _run_cell(method, seed, mdp, truth, settings, perturbations, n_rollouts, pipeline, standardized):
    label = method[0]
    try:
        recovered, lam = _recover(method, seed, mdp, truth, settings, pipeline)
        rewards = reward_vector(recovered)
    except CiIrlError as e:
        return [], [{"method": label, "seed": seed, "perturbation": "*", "error": str(e)}]
    rows, failures = [], []
    for pert in perturbations:
        try:
            rows.append(transfer_eval(rewards, mdp, truth, pert, n_rollouts, seed, label, lam, standardized))
        except CiIrlError as e:
            failures.append({"method": label, "seed": seed, "perturbation": pert.describe(), "error": str(e)})
    return rows, failures


def sweep(methods, perturbations, seeds, mdp, truth, settings=None, n_rollouts=10,
          pipeline="fmirl", standardized=True, jobs=1):
    """
    Runs every (method, seed) cell and evaluates it under every perturbation.

    A method is ``(label, TrainConfig)`` (trained per seed on ``settings``)
    or ``(label, reward)`` for an already recovered reward. Failed cells are
    recorded and the sweep continues. Rows come back in input order.
    """
    methods, perturbations, seeds = list(methods), list(perturbations), list(seeds)
    if not perturbations:
        raise InvalidInputError("sweep needs at least one perturbation.")
    cells = [(m, s) for m in methods for s in seeds]
    args = [(m, s, mdp, truth, settings, perturbations, n_rollouts, pipeline, standardized) for m, s in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_cell, *zip(*args)))
    else:
        outputs = [_run_cell(*a) for a in args]

    rows, failures = [], []
    for cell_rows, cell_failures in outputs:
        rows.extend(cell_rows)
        failures.extend(cell_failures)
    for failure in failures:
        logger.warning("Sweep cell failed: %s", failure)
    return SweepTable(rows, aggregate(rows), failures)


def write_results_csv(fileobj, rows):
    writer = csv.DictWriter(fileobj, fieldnames=RESULT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.to_row() if isinstance(row, TransferResult) else row)


def reward_shape_score(reward, mdp, cells):
    """Spearman correlation between the reward and negative goal distance over ``cells``."""
    states = sorted({cell_to_state(mdp.layout, c) for c in cells})
    if len(states) < 2:
        raise InvalidInputError("reward_shape_score needs at least two cells.")
    reward = np.asarray(reward, dtype=float)
    rho, _ = spearmanr(reward[states], -goal_distance(mdp)[states])
    return float(rho)
