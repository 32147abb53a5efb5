import csv
import io
import logging

import numpy as np

from ..exceptions import TrainingDivergedError, VerificationError
from ..utils import derive_seed
from .dual import Discriminator, agent_reward_table, bce_loss, train_ci_airl_toy
from .evaluation import method_label, method_lambda, reward_shape_score, sweep, write_results_csv
from .features import load_checkpoint, save_checkpoint
from .maxent import default_reward_model, mle_gradient, mle_loss, train_ci_fmirl
from .mdp import build_gridworld
from .oracles import finite_diff, relative_error
from .parser import DatasetParser, format_dataset
from .solver import CAUSAL, rollout, soft_value_iteration
from .storage import ArtifactStore
from .trajectories import gen_expert_settings

logger = logging.getLogger(__name__)

AIRL_TOY = "airl-toy"
VERIFY_TOLERANCE = 1e-4
SCORE_COLUMNS = ("method", "lambda", "seed", "spearman")
MID_GRAY = 128


def reward_grid(values, layout):
    """State rewards as a (height, width) matrix; row ``y`` holds cells ``(x, y)``."""
    return np.asarray(values, dtype=float).reshape(layout.height, layout.width)


def render_pgm(matrix):
    """
    Plain-text graymap of a reward matrix, min-max scaled to [0, 255] and
    rounded. A constant matrix renders as uniform mid-gray.
    """
    matrix = np.asarray(matrix, dtype=float)
    low, high = matrix.min(), matrix.max()
    if high > low:
        pixels = np.rint((matrix - low) / (high - low) * 255).astype(int)
    else:
        pixels = np.full(matrix.shape, MID_GRAY, dtype=int)
    lines = ["P2", f"{matrix.shape[1]} {matrix.shape[0]}", "255"]
    lines += [" ".join(str(p) for p in row) for row in pixels]
    return "\n".join(lines) + "\n"


def format_matrix_csv(matrix):
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in np.asarray(matrix, dtype=float))


def parse_matrix_csv(text):
    return np.array([[float(v) for v in row] for row in csv.reader(io.StringIO(text)) if row])


def state_rewards(recovered, n_states):
    """Per-state reward of a recovered model; state-action tables take the best action."""
    values = np.asarray(recovered, dtype=float)
    if values.ndim == 2:
        return values.max(axis=1)
    if values.size != n_states:
        return values.reshape(n_states, -1).max(axis=1)
    return values


class PipelineEngine:
    """
    Runs experiment commands against one output directory.

    Commands are dicts with a ``'type'`` key (``GEN_EXPERTS``, ``TRAIN``,
    ``RENDER``, ``EVAL``, ``REPRO_FIG2``). All randomness flows from the
    configuration's master seed.
    """

    def __init__(self, config, store=None, jobs=1):
        self.config = config
        self.store = store or ArtifactStore(config.output_dir)
        self.jobs = jobs
        self.parser = DatasetParser()
        self.mdp, self.truth = build_gridworld(config.gridworld)

    def execute(self, command):
        command_type = command.get('type')
        with self.store.transaction():
            return self._dispatch_command(command_type, command)

    def _dispatch_command(self, command_type, command):
        if command_type == 'GEN_EXPERTS':
            return self._execute_gen_experts()
        if command_type == 'TRAIN':
            return [self._execute_train(self.config.train, command.get('verify', False))]
        if command_type == 'RENDER':
            return self._execute_render(command.get('labels') or self._trained_labels())
        if command_type == 'EVAL':
            return self._execute_eval(command.get('labels') or self.config.eval.checkpoints
                                      or self._trained_labels())
        if command_type == 'REPRO_FIG2':
            return self._execute_repro(command.get('verify', False))
        raise ValueError(f"Unsupported command type: {command_type}")

    def _execute_gen_experts(self):
        cfg = self.config
        settings = gen_expert_settings(self.mdp, self.truth, cfg.interventions, cfg.temperature,
                                       cfg.seed, self.jobs)
        entries, rows = [], []
        for ds in settings:
            name = self.store.dataset_name(ds.setting_id)
            text = format_dataset(ds, self.mdp.n_states, self.mdp.n_actions,
                                  cfg.gridworld.width, cfg.gridworld.height)
            self.store.write_text(name, text)
            entries.append({"setting_id": ds.setting_id, "file": name,
                            "n_trajectories": len(ds), "provenance": ds.provenance})
            rows.append({"setting": ds.setting_id, "label": ds.provenance.get("label", ""),
                         "trajectories": len(ds), "file": name})
        self.store.update_manifest(seed=cfg.seed, config=cfg.to_dict(), datasets=entries)
        return rows

    def load_settings(self):
        entries = self.store.load_manifest().get("datasets", [])
        if not entries:
            raise FileNotFoundError(f"No expert datasets in {self.store.output_dir}; run gen-experts first.")
        settings = []
        for entry in entries:
            if self.store.checksum(entry["file"]) != entry["sha256"]:
                logger.warning("Dataset %s does not match its manifest checksum.", entry["file"])
            settings.append(self.parser.load(self.store.read_text(entry["file"]), self.mdp))
        return settings

    def verify_gradient(self, ds, train_cfg):
        """
        Checks the analytic gradient of the objective the configured pipeline
        trains (the likelihood, or the discriminator loss for airl-toy)
        against central differences before training.
        """
        if self.config.pipeline == AIRL_TOY:
            model, analytic, loss, what = self._discriminator_check(ds, train_cfg)
        else:
            model = default_reward_model(self.mdp, train_cfg.network, train_cfg.seed)
            analytic = mle_gradient(self.mdp, model, ds)
            loss, what = (lambda: mle_loss(self.mdp, model, ds)), "Likelihood"
        numeric = finite_diff(lambda _: loss(), model.parameters())
        error = max(relative_error(a, n) for a, n in zip(analytic, numeric))
        logger.info("%s gradient check on setting %d: relative error %.3e.", what, ds.setting_id, error)
        if error > VERIFY_TOLERANCE:
            raise VerificationError(
                f"{what} gradient disagrees with finite differences (relative error {error:.3e}).")
        return error

    def _discriminator_check(self, ds, train_cfg):
        # same initial discriminator and first policy buffer as train_ci_airl_toy
        disc = Discriminator.for_mdp(self.mdp, train_cfg.network, train_cfg.seed, train_cfg.state_only)
        reward = agent_reward_table(disc, self.mdp.n_states, train_cfg.agent_reward, train_cfg.entropy_weight)
        agent = soft_value_iteration(self.mdp, reward, backup=CAUSAL)
        buffer = rollout(self.mdp, agent, train_cfg.buffer_size, derive_seed(train_cfg.seed, 1))
        expert_items, policy_items = disc.items(ds.trajectories), disc.items(buffer.trajectories)
        analytic = bce_loss(disc, expert_items, policy_items).grads
        return disc.model, analytic, (lambda: -bce_loss(disc, expert_items, policy_items).objective), "Discriminator"

    def _execute_train(self, train_cfg, verify=False, settings=None):
        settings = settings or self.load_settings()
        if verify:
            self.verify_gradient(settings[0], train_cfg)
        label = method_label(train_cfg)
        trace_name = self.store.trace_name(label)
        extra = {"label": label, "lambda": method_lambda(train_cfg), "pipeline": self.config.pipeline}
        try:
            if self.config.pipeline == AIRL_TOY:
                result = train_ci_airl_toy(self.mdp, settings, train_cfg, truth=self.truth)
                rows = result.trace
                kind, iterations, early_stopped = "discriminator", train_cfg.iters, False
                extra["state_only"] = train_cfg.state_only
            else:
                result = train_ci_fmirl(self.mdp, settings, train_cfg)
                rows = [r.to_row() for r in result.trace]
                kind, iterations, early_stopped = "reward-model", result.iterations, result.early_stopped
        except TrainingDivergedError as e:
            self._write_trace(trace_name, [r if isinstance(r, dict) else r.to_row() for r in e.trace])
            raise
        extra.update(iterations=iterations, early_stopped=early_stopped)

        buffer = io.StringIO()
        save_checkpoint(buffer, result.model, kind, extra)
        checkpoint_name = self.store.checkpoint_name(label)
        self.store.write_text(checkpoint_name, buffer.getvalue())
        self._write_trace(trace_name, rows)
        self.store.update_manifest(artifacts=[checkpoint_name, trace_name])
        if early_stopped:
            logger.warning("Run '%s' stopped early after %d iterations.", label, iterations)
        return {"method": label, "iterations": iterations, "early_stopped": early_stopped,
                "checkpoint": checkpoint_name}

    def _write_trace(self, name, rows):
        if rows:
            self.store.write_csv(name, list(rows[0].keys()), rows)

    def _trained_labels(self):
        prefix, suffix = "checkpoint-", ".json"
        names = self.store.load_manifest().get("artifacts", {})
        return sorted(n[len(prefix):-len(suffix)] for n in names if n.startswith(prefix) and n.endswith(suffix))

    def load_recovered(self, label):
        """The reward a checkpoint recovers: state rewards, or the (S, A) logit table of a discriminator."""
        name = self.store.checkpoint_name(label)
        if not self.store.exists(name):
            raise FileNotFoundError(f"No checkpoint for method '{label}' ({name}).")
        model, kind, extra = load_checkpoint(io.StringIO(self.store.read_text(name)))
        if kind == "discriminator":
            disc = Discriminator(model, self.mdp.n_actions, extra.get("state_only", False))
            return disc.logit_table(self.mdp.n_states), extra
        return model.reward(), extra

    def _execute_render(self, labels):
        rows = []
        for label in labels:
            recovered, _ = self.load_recovered(label)
            matrix = reward_grid(state_rewards(recovered, self.mdp.n_states), self.config.gridworld)
            pgm_name, csv_name = self.store.render_names(label)
            self.store.write_text(pgm_name, render_pgm(matrix))
            self.store.write_text(csv_name, format_matrix_csv(matrix))
            self.store.update_manifest(artifacts=[pgm_name, csv_name])
            rows.append({"method": label, "image": pgm_name, "matrix": csv_name,
                         "min": float(matrix.min()), "max": float(matrix.max())})
        return rows

    def _execute_eval(self, labels):
        cfg = self.config
        methods = []
        for label in labels:
            recovered, extra = self.load_recovered(label)
            methods.append((label, recovered, extra.get("lambda", 0.0)))
        seeds = [cfg.seed + i for i in range(cfg.eval.n_seeds)]
        table = sweep(methods, cfg.perturbations, seeds, self.mdp, self.truth,
                      n_rollouts=cfg.eval.n_rollouts, pipeline=cfg.pipeline,
                      standardized=cfg.eval.standardized, jobs=self.jobs)
        buffer = io.StringIO()
        write_results_csv(buffer, table.rows + table.aggregates)
        self.store.write_text("results.csv", buffer.getvalue())
        self.store.update_manifest(artifacts=["results.csv"])
        return table.all_rows()

    def _execute_repro(self, verify=False):
        cfg = self.config
        self._execute_gen_experts()
        settings = self.load_settings()
        cells = sorted({c for iv in cfg.interventions for c in iv.bonus_cells})
        scores = []
        for panel in cfg.panels:
            train_cfg = panel.apply(cfg.train)
            summary = self._execute_train(train_cfg, verify, settings)
            label = summary["method"]
            self._execute_render([label])
            recovered, _ = self.load_recovered(label)
            rho = reward_shape_score(state_rewards(recovered, self.mdp.n_states), self.mdp, cells)
            logger.info("Panel '%s': reward-shape score %.4f.", label, rho)
            scores.append({"method": label, "lambda": method_lambda(train_cfg), "seed": cfg.seed, "spearman": rho})
        self.store.write_csv("scores.csv", SCORE_COLUMNS, scores)
        self.store.update_manifest(artifacts=["scores.csv"])
        return scores

