import os
import shutil
import tempfile
import unittest
from unittest import mock

import numpy as np

from src.ciirl.config import AIRL_TOY, EvalConfig, ExperimentConfig, Panel
from src.ciirl.core.features import NetworkConfig
from src.ciirl.core.maxent import TrainConfig
from src.ciirl.core.mdp import CHANGE_SLIP, GridworldSpec, Perturbation
from src.ciirl.core import pipeline as pipeline_module
from src.ciirl.core.pipeline import (PipelineEngine, format_matrix_csv, parse_matrix_csv, render_pgm,
                                     reward_grid, state_rewards)
from src.ciirl.core.trajectories import PreferenceIntervention
from src.ciirl.exceptions import VerificationError


def small_config(output_dir, **kwargs):
    spec = GridworldSpec(width=4, height=4, start_cells=((0, 0),), goal_cells=((3, 3),), horizon=8)
    defaults = dict(
        gridworld=spec,
        interventions=(PreferenceIntervention(((0, 1), (0, 2), (0, 3)), 0.05, 4, "up"),
                       PreferenceIntervention(((1, 0), (2, 0), (3, 0)), 0.05, 2, "right")),
        train=TrainConfig(iters=3, grad_tol=0.0, log_every=0, lr=1e-2,
                          network=NetworkConfig(hidden=(4,), output_dim=2)),
        perturbations=(Perturbation.identity(), Perturbation(CHANGE_SLIP, slip_prob=0.2)),
        output_dir=output_dir,
        seed=2,
        eval=EvalConfig(n_seeds=2, n_rollouts=2),
        panels=(Panel(), Panel(lambda_ci=0.1)),
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults).validate()


class TestRendering(unittest.TestCase):

    def test_pgm_scales_to_full_range(self):
        self.assertEqual(render_pgm([[0.0, 1.0], [2.0, 3.0]]), "P2\n2 2\n255\n0 85\n170 255\n")

    def test_constant_matrix_is_mid_gray(self):
        self.assertEqual(render_pgm(np.full((1, 3), 0.7)), "P2\n3 1\n255\n128 128 128\n")

    def test_csv_round_trip_is_exact(self):
        matrix = np.array([[0.1, -2.5e-7], [1.0 / 3.0, 4.0]])
        text = format_matrix_csv(matrix)
        parsed = parse_matrix_csv(text)
        np.testing.assert_array_equal(parsed, matrix)
        self.assertEqual(format_matrix_csv(parsed), text)

    def test_reward_grid_rows_follow_y(self):
        spec = GridworldSpec(width=3, height=2, goal_cells=((2, 1),))
        grid = reward_grid(np.arange(6.0), spec)
        np.testing.assert_array_equal(grid[1], [3.0, 4.0, 5.0])

    def test_state_rewards_take_the_best_action(self):
        table = np.array([[0.0, 2.0], [1.0, -1.0]])
        np.testing.assert_array_equal(state_rewards(table, 2), [2.0, 1.0])
        np.testing.assert_array_equal(state_rewards([3.0, 4.0], 2), [3.0, 4.0])


class TestPipelineEngine(unittest.TestCase):

    def setUp(self):
        self.output_dir = tempfile.mkdtemp(prefix="ciirl-pipeline-")
        self.engine = PipelineEngine(small_config(self.output_dir))

    def tearDown(self):
        shutil.rmtree(self.output_dir, ignore_errors=True)

    def test_gen_experts_is_deterministic(self):
        rows = self.engine.execute({'type': 'GEN_EXPERTS'})
        self.assertEqual([r['trajectories'] for r in rows], [4, 2])
        self.assertEqual([r['label'] for r in rows], ["up", "right"])
        other_dir = tempfile.mkdtemp(prefix="ciirl-pipeline-")
        try:
            PipelineEngine(small_config(other_dir)).execute({'type': 'GEN_EXPERTS'})
            for row in rows:
                with open(os.path.join(self.output_dir, row['file']), 'rb') as a, \
                        open(os.path.join(other_dir, row['file']), 'rb') as b:
                    self.assertEqual(a.read(), b.read())
        finally:
            shutil.rmtree(other_dir, ignore_errors=True)
        manifest = self.engine.store.load_manifest()
        self.assertEqual(manifest["seed"], 2)
        self.assertEqual(len(manifest["datasets"]), 2)

    def test_settings_round_trip_through_files(self):
        self.engine.execute({'type': 'GEN_EXPERTS'})
        settings = self.engine.load_settings()
        self.assertEqual([ds.setting_id for ds in settings], [0, 1])
        self.assertEqual(settings[0].provenance["label"], "up")

    def test_train_needs_datasets(self):
        with self.assertRaises(FileNotFoundError):
            self.engine.execute({'type': 'TRAIN'})

    def test_train_writes_checkpoint_and_trace(self):
        self.engine.execute({'type': 'GEN_EXPERTS'})
        (summary,) = self.engine.execute({'type': 'TRAIN', 'verify': True})
        self.assertEqual(summary['method'], "erm")
        self.assertEqual(summary['iterations'], 3)
        self.assertTrue(self.engine.store.exists("checkpoint-erm.json"))
        trace = self.engine.store.read_text("trace-erm.csv").splitlines()
        self.assertEqual(len(trace), 1 + 3 * 2)
        self.assertTrue(trace[0].startswith("iteration,setting_id,loss,ci_penalty"))
        self.assertEqual(self.engine.store.verify_manifest(), [])

    def test_render_and_eval(self):
        self.engine.execute({'type': 'GEN_EXPERTS'})
        self.engine.execute({'type': 'TRAIN'})
        (render,) = self.engine.execute({'type': 'RENDER'})
        self.assertEqual(render['method'], "erm")
        pgm = self.engine.store.read_text("reward-erm.pgm")
        self.assertTrue(pgm.startswith("P2\n4 4\n255\n"))
        matrix = parse_matrix_csv(self.engine.store.read_text("reward-erm.csv"))
        recovered, _ = self.engine.load_recovered("erm")
        np.testing.assert_array_equal(matrix.ravel(), recovered)

        rows = self.engine.execute({'type': 'EVAL'})
        self.assertEqual(len(rows), 2 * 2 + 2)
        self.assertEqual([r['seed'] for r in rows[:2]], [2, 2])
        self.assertEqual(rows[-1]['seed'], "all")
        results = self.engine.store.read_text("results.csv").splitlines()
        self.assertEqual(results[0], "method,lambda,perturbation,seed,return_mean,return_std,n_rollouts")
        self.assertEqual(len(results), 1 + len(rows))

    def test_eval_of_unknown_method(self):
        with self.assertRaises(FileNotFoundError):
            self.engine.execute({'type': 'EVAL', 'labels': ["ci-7"]})

    def test_reproduction_writes_scores(self):
        scores = self.engine.execute({'type': 'REPRO_FIG2'})
        self.assertEqual([s['method'] for s in scores], ["erm", "ci-0.1"])
        for s in scores:
            self.assertTrue(-1.0 <= s['spearman'] <= 1.0 or np.isnan(s['spearman']))
        text = self.engine.store.read_text("scores.csv")
        self.assertTrue(text.startswith("method,lambda,seed,spearman\n"))
        self.assertTrue(self.engine.store.exists("reward-ci-0.1.pgm"))

    def test_adversarial_pipeline(self):
        cfg = small_config(self.output_dir, pipeline=AIRL_TOY,
                           train=TrainConfig(iters=2, buffer_size=4, log_every=0, lr=1e-2,
                                             network=NetworkConfig(hidden=(4,), output_dim=1)))
        engine = PipelineEngine(cfg)
        engine.execute({'type': 'GEN_EXPERTS'})
        (summary,) = engine.execute({'type': 'TRAIN'})
        self.assertEqual(summary['iterations'], 2)
        recovered, extra = engine.load_recovered("erm")
        self.assertEqual(recovered.shape, (16, 5))
        self.assertEqual(extra["pipeline"], AIRL_TOY)
        (render,) = engine.execute({'type': 'RENDER'})
        self.assertEqual(render['image'], "reward-erm.pgm")

    def test_adversarial_verify_checks_the_discriminator(self):
        cfg = small_config(self.output_dir, pipeline=AIRL_TOY,
                           train=TrainConfig(iters=1, buffer_size=4, log_every=0, lr=1e-2,
                                             network=NetworkConfig(hidden=(4,), output_dim=1)))
        engine = PipelineEngine(cfg)
        engine.execute({'type': 'GEN_EXPERTS'})
        ds = engine.load_settings()[0]
        with self.assertLogs("src.ciirl.core.pipeline", level="INFO") as logs:
            error = engine.verify_gradient(ds, cfg.train)
        self.assertLess(error, 1e-4)
        self.assertIn("Discriminator gradient check", logs.output[0])

        real = pipeline_module.bce_loss

        def doubled(*args, **kwargs):
            result = real(*args, **kwargs)
            result.grads = [2.0 * g for g in result.grads]
            return result

        with mock.patch.object(pipeline_module, "bce_loss", doubled):
            with self.assertRaises(VerificationError):
                engine.verify_gradient(ds, cfg.train)

    def test_unknown_command(self):
        with self.assertRaises(ValueError):
            self.engine.execute({'type': 'DROP'})


if __name__ == '__main__':
    unittest.main()
