import unittest
from dataclasses import replace

import numpy as np
from scipy.special import expit

from src.ciirl.core.dual import (ENUMERATION, Discriminator, agent_reward_table, bce_loss, build_sampler,
                                 ci_bce_penalty, dual_gradient_is, enumerated_sampler, train_ci_airl_toy)
from src.ciirl.core.features import FeatureNet, NetworkConfig, RewardModel
from src.ciirl.core.maxent import LOG_D, TrainConfig, gibbs_log_prob, mle_gradient_psi, sample_gibbs
from src.ciirl.core.oracles import enumerate_gibbs, finite_diff, relative_error
from src.ciirl.core.solver import CAUSAL, GIBBS, rollout, soft_value_iteration, trajectory_log_prob
from src.ciirl.core.trajectories import PreferenceIntervention, SettingDataset, gen_expert_settings
from src.ciirl.exceptions import InvalidInputError
from tests.fixtures import random_mdp, small_grid


def make_discriminator(seed=0, n_states=3, n_actions=2):
    inputs = np.random.default_rng(seed).normal(size=(n_states * n_actions, 3))
    net = FeatureNet(inputs, hidden=(4,), output_dim=2, seed=seed)
    return Discriminator(RewardModel(net, [0.8, -1.1]), n_actions)


class TestDiscriminatorLosses(unittest.TestCase):

    def setUp(self):
        self.disc = make_discriminator()
        self.expert = np.array([0, 1, 3, 3, 5])
        self.policy = np.array([2, 4, 4, 1])

    def test_uninformative_discriminator_has_zero_divergence(self):
        self.disc.model.head[:] = 0.0
        result = bce_loss(self.disc, self.expert, self.policy)
        self.assertAlmostEqual(result.objective, -np.log(4.0))
        self.assertAlmostEqual(result.js_estimate, 0.0)

    def test_bce_gradients(self):
        result = bce_loss(self.disc, self.expert, self.policy)

        def loss(_):
            return -bce_loss(self.disc, self.expert, self.policy).objective

        numeric = finite_diff(loss, self.disc.model.parameters())
        for a, n in zip(result.grads, numeric):
            self.assertLess(relative_error(a, n), 1e-6)
        self.assertGreaterEqual(result.js_estimate, 0.0)
        self.assertLessEqual(result.js_estimate, np.log(2.0))

    def test_ci_penalty_gradients(self):
        result = ci_bce_penalty(self.disc, self.expert, self.policy, setting_id=2)

        def penalty(_):
            return ci_bce_penalty(self.disc, self.expert, self.policy).value

        numeric = finite_diff(penalty, self.disc.model.parameters())
        for a, n in zip(result.grads, numeric):
            self.assertLess(relative_error(a, n), 1e-6)
        self.assertAlmostEqual(result.value, result.dl_dw ** 2)

    def test_needs_both_batches(self):
        with self.assertRaises(InvalidInputError):
            bce_loss(self.disc, self.expert, [])
        with self.assertRaises(InvalidInputError):
            ci_bce_penalty(self.disc, [], [])

    def test_items_and_logit_table(self):
        traj = sample_gibbs(random_mdp(0), soft_value_iteration(random_mdp(0), np.zeros(3)), 1, seed=0)
        items = self.disc.items(traj.trajectories)
        first = traj.trajectories[0]
        self.assertEqual(items[0], first.states[0] * 2 + first.actions[0])
        table = self.disc.logit_table(3)
        self.assertEqual(table.shape, (3, 2))
        self.assertAlmostEqual(table[1, 1], self.disc.logits([3])[0])

    def test_agent_reward_table(self):
        z = self.disc.logit_table(3)
        np.testing.assert_array_equal(agent_reward_table(self.disc, 3), z)
        log_g = agent_reward_table(self.disc, 3, LOG_D)
        np.testing.assert_allclose(log_g, np.log(expit(z)), atol=1e-12)
        self.assertTrue(np.all(log_g < 0.0))
        np.testing.assert_allclose(agent_reward_table(self.disc, 3, LOG_D, entropy_weight=0.5), 2.0 * log_g)

    def test_state_only_items(self):
        mdp, _ = small_grid()
        disc = Discriminator.for_mdp(mdp, NetworkConfig(hidden=(2,)), state_only=True)
        self.assertEqual(disc.net.n_items, mdp.n_states)
        table = disc.logit_table(mdp.n_states)
        np.testing.assert_array_equal(table[:, 0], table[:, 4])


class TestImportanceSampledGradient(unittest.TestCase):

    def setUp(self):
        self.mdp = random_mdp(4, n_states=3, horizon=3)
        net = FeatureNet(np.eye(3), hidden=(3,), output_dim=2, seed=1)
        self.model = RewardModel(net, [0.6, -0.9])
        expert_policy = soft_value_iteration(self.mdp, np.array([1.0, 0.0, -1.0]), backup=GIBBS)
        self.expert = SettingDataset(0, sample_gibbs(self.mdp, expert_policy, 10, seed=2).trajectories)

    def test_enumeration_with_q_equal_p_is_exact(self):
        enumerated = enumerate_gibbs(self.mdp, self.model.reward())
        sampler = enumerated_sampler(self.mdp, self.model, enumerated.trajectories, enumerated.log_probs)
        self.assertEqual(sampler.kind, ENUMERATION)
        np.testing.assert_allclose(sampler.weights, 1.0, atol=1e-10)
        result = dual_gradient_is(self.model, self.expert, sampler, normalize=False)
        np.testing.assert_allclose(result.gradient, mle_gradient_psi(self.mdp, self.model, self.expert),
                                   atol=1e-10)
        self.assertEqual(result.status, "ok")
        self.assertGreater(sampler.entropy(), 0.0)

    def test_monte_carlo_agrees_within_standard_errors(self):
        proposal = soft_value_iteration(self.mdp, np.zeros(3), backup=CAUSAL)
        draws = rollout(self.mdp, proposal, 4000, seed=3).trajectories
        log_q = [trajectory_log_prob(self.mdp, proposal, t) for t in draws]
        sampler = build_sampler(self.mdp, self.model, draws, log_q)
        result = dual_gradient_is(self.model, self.expert, sampler)

        phi = self.model.features()
        totals = np.array([phi[list(t.states)].sum(axis=0) for t in draws])
        w = sampler.weights / sampler.weights.sum()
        estimate = w @ totals
        stderr = np.sqrt((w ** 2) @ (totals - estimate) ** 2)
        exact = mle_gradient_psi(self.mdp, self.model, self.expert)
        self.assertTrue(np.all(np.abs(result.gradient - exact) <= 4.0 * stderr + 1e-9))
        self.assertEqual(result.status, "ok")

    def test_monte_carlo_from_the_model_itself(self):
        reward = self.model.reward()
        policy = soft_value_iteration(self.mdp, reward, backup=GIBBS)
        log_z = policy.log_partition(self.mdp.initial_dist)
        draws = sample_gibbs(self.mdp, policy, 4000, seed=9).trajectories
        log_q = [gibbs_log_prob(self.mdp, reward, t, log_z) for t in draws]
        sampler = build_sampler(self.mdp, self.model, draws, log_q)
        np.testing.assert_allclose(sampler.weights, 1.0, atol=1e-9)
        self.assertAlmostEqual(sampler.effective_sample_size(), 4000.0, places=3)
        result = dual_gradient_is(self.model, self.expert, sampler)

        phi = self.model.features()
        totals = np.array([phi[list(t.states)].sum(axis=0) for t in draws])
        stderr = totals.std(axis=0) / np.sqrt(len(draws))
        exact = mle_gradient_psi(self.mdp, self.model, self.expert)
        self.assertTrue(np.all(np.abs(result.gradient - exact) <= 3.5 * stderr), (result.gradient, exact))

    def test_few_samples_are_degenerate(self):
        draws = sample_gibbs(self.mdp, soft_value_iteration(self.mdp, np.zeros(3)), 3, seed=0).trajectories
        sampler = build_sampler(self.mdp, self.model, draws, np.full(3, -2.0))
        with self.assertLogs("src.ciirl.core.dual", level="WARNING"):
            result = dual_gradient_is(self.model, self.expert, sampler)
        self.assertEqual(result.status, "degenerate")

    def test_sampler_needs_matching_densities(self):
        with self.assertRaises(InvalidInputError):
            build_sampler(self.mdp, self.model, self.expert.trajectories, [0.0])


class TestAdversarialTraining(unittest.TestCase):

    def setUp(self):
        self.mdp, self.truth = small_grid(width=3, height=3, slip_prob=0.1, horizon=6)
        interventions = [
            PreferenceIntervention(((0, 1), (0, 2)), 0.05, 3, "up"),
            PreferenceIntervention(((1, 0), (2, 0)), 0.05, 3, "right"),
        ]
        self.settings = gen_expert_settings(self.mdp, self.truth, interventions, seed=1)
        self.cfg = TrainConfig(iters=2, lr=1e-2, buffer_size=4, gp_batch=8, lambda_ci=1.0, lambda_lip=0.1,
                               log_every=0, network=NetworkConfig(hidden=(4,), output_dim=1))

    def test_trace_and_determinism(self):
        a = train_ci_airl_toy(self.mdp, self.settings, self.cfg, truth=self.truth)
        b = train_ci_airl_toy(self.mdp, self.settings, self.cfg, truth=self.truth)
        self.assertEqual(len(a.trace), 4)
        self.assertEqual(set(a.trace[0]), {"iteration", "setting_id", "bce", "ci_penalty", "js",
                                           "agent_return", "saturated"})
        self.assertEqual([row["setting_id"] for row in a.trace], [0, 1, 0, 1])
        np.testing.assert_array_equal(a.discriminator.logit_table(self.mdp.n_states),
                                      b.discriminator.logit_table(self.mdp.n_states))
        self.assertIs(a.model, a.discriminator.model)

    def test_extra_discriminator_steps(self):
        one = train_ci_airl_toy(self.mdp, self.settings, self.cfg, truth=self.truth)
        cfg = replace(self.cfg, disc_steps=3, agent_reward=LOG_D, entropy_weight=0.5)
        three = train_ci_airl_toy(self.mdp, self.settings, cfg, truth=self.truth)
        self.assertEqual(len(three.trace), len(one.trace))
        self.assertFalse(np.allclose(three.discriminator.logit_table(self.mdp.n_states),
                                     one.discriminator.logit_table(self.mdp.n_states)))
        # the returned agent plans on the final discriminator
        expected = soft_value_iteration(self.mdp, agent_reward_table(three.discriminator, self.mdp.n_states,
                                                                     LOG_D, 0.5), backup=CAUSAL)
        np.testing.assert_allclose(three.agent.probs, expected.probs)

    def test_needs_settings(self):
        with self.assertRaises(InvalidInputError):
            train_ci_airl_toy(self.mdp, [], self.cfg)


if __name__ == '__main__':
    unittest.main()
