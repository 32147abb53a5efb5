import unittest

import numpy as np
from scipy.special import expit

from src.ciirl.core.features import FeatureNet
from src.ciirl.core.oracles import finite_diff, jacobi_singular_values, relative_error
from src.ciirl.core.regularizers import (LogisticScaleLoss, PenaltyReport, PowerIterationState,
                                         input_gradient_penalty, interpolate_inputs, irm_scalar_penalty,
                                         l2_penalty, power_iteration, spectral_norm_penalty)
from src.ciirl.exceptions import InvalidInputError


class TestLogisticScaleLoss(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.z_e = rng.normal(size=4)
        self.z_p = rng.normal(size=6)

    def test_dw_matches_finite_differences(self):
        loss = LogisticScaleLoss(self.z_e, self.z_p)
        for w in (0.5, 1.0, 2.0):
            self.assertAlmostEqual(loss.dw(w), finite_diff(loss.value, w), delta=1e-7)

    def test_single_expert_logit(self):
        z = 1.7
        loss = LogisticScaleLoss([z], [])
        self.assertAlmostEqual(loss.dw(1.0), -expit(-z) * z)

    def test_logit_grads(self):
        loss = LogisticScaleLoss(self.z_e, self.z_p)
        d_e, d_p = loss.logit_grads(1.3)

        def value(_):
            return LogisticScaleLoss(self.z_e, self.z_p).value(1.3)

        n_e, n_p = finite_diff(value, [self.z_e, self.z_p])
        np.testing.assert_allclose(d_e, n_e, atol=1e-8)
        np.testing.assert_allclose(d_p, n_p, atol=1e-8)

    def test_penalty_upstream(self):
        weights_e = np.linspace(0.1, 0.4, 4)
        weights_p = np.full(6, 1.0 / 6)

        def penalty(_):
            loss = LogisticScaleLoss(self.z_e, self.z_p, weights_e, weights_p)
            return irm_scalar_penalty(loss).value

        result = irm_scalar_penalty(LogisticScaleLoss(self.z_e, self.z_p, weights_e, weights_p))
        up_e, up_p = result.upstream()
        n_e, n_p = finite_diff(penalty, [self.z_e, self.z_p])
        np.testing.assert_allclose(up_e, n_e, atol=1e-8)
        np.testing.assert_allclose(up_p, n_p, atol=1e-8)
        self.assertAlmostEqual(result.value, result.dl_dw ** 2)

    def test_weights_must_match(self):
        with self.assertRaises(InvalidInputError):
            LogisticScaleLoss([0.0, 1.0], [0.0], expert_weights=[1.0])


class TestWeightPenalties(unittest.TestCase):

    def test_l2(self):
        value, grad = l2_penalty([1.0, -2.0], 0.5)
        self.assertEqual(value, 2.5)
        np.testing.assert_array_equal(grad, [1.0, -2.0])

    def test_power_iteration_on_diagonal(self):
        sigma, u, v, history = power_iteration(np.diag([3.0, 1.0]), 30, np.array([1.0, 1.0]))
        self.assertAlmostEqual(sigma, 3.0, places=8)
        self.assertAlmostEqual(abs(v[0]), 1.0, places=8)
        self.assertEqual(len(history), 30)
        self.assertTrue(all(b >= a - 1e-12 for a, b in zip(history, history[1:])))

    def test_spectral_norm_matches_jacobi(self):
        net = FeatureNet(np.eye(4), hidden=(5,), output_dim=3, seed=2)
        value, grads = spectral_norm_penalty(net, iters=200)
        expected = sum(jacobi_singular_values(w)[0] ** 2 for w in net.weights)
        self.assertAlmostEqual(value, expected, places=6)
        self.assertEqual([g.shape for g in grads], [p.shape for p in net.parameters()])
        np.testing.assert_array_equal(grads[1], 0.0)

    def test_spectral_gradient(self):
        net = FeatureNet(np.eye(3), hidden=(3,), output_dim=2, seed=5)
        _, grads = spectral_norm_penalty(net, iters=300)

        def value(_):
            return spectral_norm_penalty(net, iters=300, state=PowerIterationState(seed=9))[0]

        numeric = finite_diff(value, net.parameters())
        for a, n in zip(grads, numeric):
            np.testing.assert_allclose(a, n, atol=1e-5)

    def test_power_iteration_needs_steps(self):
        net = FeatureNet(np.eye(2), hidden=(2,), output_dim=1)
        with self.assertRaises(InvalidInputError):
            spectral_norm_penalty(net, iters=0)

    def test_warm_start_is_kept(self):
        net = FeatureNet(np.eye(3), hidden=(2,), output_dim=1)
        state = PowerIterationState()
        spectral_norm_penalty(net, iters=5, state=state)
        self.assertEqual(len(state.vectors), 2)
        self.assertEqual(state.vectors[0].shape, (3,))


class TestInputGradientPenalty(unittest.TestCase):

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        net = FeatureNet(rng.normal(size=(5, 2)), hidden=(4,), output_dim=2, seed=3)
        head = np.array([1.5, -0.5])
        inputs = rng.normal(size=(4, 2))

        def value(_):
            return input_gradient_penalty(net, head, inputs)[0]

        _, grads, head_grad = input_gradient_penalty(net, head, inputs)
        numeric = finite_diff(value, net.parameters() + [head])
        for a, n in zip(grads + [head_grad], numeric):
            self.assertLess(relative_error(a, n), 1e-5)

    def test_interpolation_stays_between_endpoints(self):
        rng = np.random.default_rng(0)
        expert = np.zeros((3, 2))
        policy = np.ones((2, 2))
        mixed = interpolate_inputs(expert, policy, rng, n=50)
        self.assertEqual(mixed.shape, (50, 2))
        self.assertTrue(np.all((mixed >= 0.0) & (mixed <= 1.0)))
        np.testing.assert_allclose(mixed[:, 0], mixed[:, 1])


class TestPenaltyReport(unittest.TestCase):

    def test_row(self):
        report = PenaltyReport(3, 1, 0.5, 0.25, 0.1, 10.0, 2.0)
        self.assertEqual(report.to_row(), {"iteration": 3, "setting_id": 1, "loss": 0.5, "ci_penalty": 0.25,
                                           "penalty_grad_norm": 0.1, "lambda": 10.0, "total_grad_norm": 2.0})
        self.assertTrue(report.is_finite())
        self.assertFalse(PenaltyReport(0, 0, np.nan, 0.0, 0.0, 0.0).is_finite())


if __name__ == '__main__':
    unittest.main()
