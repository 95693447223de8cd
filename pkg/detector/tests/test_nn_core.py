import numpy as np
from django.test import SimpleTestCase

from detector.exceptions import ConfigurationError, InternalError, NumericError, TrainingError
from detector.nn_core import AdamState, adam_step, as_tensor, init_mlp, mlp_backward, mlp_forward

from .utils import numerical_grads, relative_error


class AsTensorTests(SimpleTestCase):

    def test_single_row_promoted(self):
        self.assertEqual(as_tensor([1.0, 2.0, 3.0]).shape, (1, 3))

    def test_width_checked(self):
        with self.assertRaises(ConfigurationError):
            as_tensor(np.zeros((2, 3)), width=4)

    def test_non_finite_names_row(self):
        x = np.zeros((3, 2))
        x[2, 1] = np.nan
        with self.assertRaises(NumericError) as ctx:
            as_tensor(x)
        self.assertEqual(ctx.exception.sample_index, 2)


class MlpTests(SimpleTestCase):

    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.params = init_mlp([3, 5, 4, 2], self.rng, zero_last=False)
        self.x = self.rng.standard_normal((6, 3))
        self.w = self.rng.standard_normal((6, 2))

    def _loss(self):
        return float(np.sum(self.w * mlp_forward(self.params, self.x)[0]))

    def test_zero_last_layer_outputs_zero(self):
        params = init_mlp([3, 5, 2], self.rng)
        np.testing.assert_array_equal(mlp_forward(params, self.x)[0], 0.0)

    def test_parameter_gradients_match_finite_differences(self):
        _, cache = mlp_forward(self.params, self.x)
        _, grads = mlp_backward(cache, self.w)
        numeric = numerical_grads(self._loss, self.params.arrays())
        self.assertLess(relative_error(grads.arrays(), numeric), 1e-6)

    def test_input_gradient_matches_finite_differences(self):
        _, cache = mlp_forward(self.params, self.x)
        dx, _ = mlp_backward(cache, self.w)
        numeric = numerical_grads(self._loss, [self.x])
        self.assertLess(relative_error([dx], numeric), 1e-6)

    def test_mismatched_cache_rejected(self):
        _, cache = mlp_forward(self.params, self.x)
        with self.assertRaises(InternalError):
            mlp_backward(cache, np.zeros((6, 3)))


class AdamTests(SimpleTestCase):

    def test_first_step_moves_by_learning_rate(self):
        params = [np.array([1.0, -2.0, 3.0])]
        grads = [np.array([0.5, -4.0, 2.0])]
        state = AdamState.for_params(params, lr=0.01)
        adam_step(state, params, grads)
        np.testing.assert_allclose(params[0], [0.99, -1.99, 2.99], rtol=0, atol=1e-8)
        self.assertEqual(state.t, 1)

    def test_non_finite_gradient_leaves_parameters(self):
        params = [np.array([1.0, 2.0])]
        state = AdamState.for_params(params, lr=0.1)
        with self.assertRaises(TrainingError) as ctx:
            adam_step(state, params, [np.array([np.inf, 0.0])], batch_index=7)
        self.assertEqual(ctx.exception.batch_index, 7)
        np.testing.assert_array_equal(params[0], [1.0, 2.0])
        self.assertEqual(state.t, 0)

    def test_shape_mismatch_is_internal_error(self):
        params = [np.zeros(3)]
        state = AdamState.for_params(params)
        with self.assertRaises(InternalError):
            adam_step(state, params, [np.zeros(2)])

    def test_zero_gradient_from_fresh_state_is_a_no_op(self):
        params = [np.array([1.0, -2.0]), np.array([[0.5]])]
        before = [p.copy() for p in params]
        state = AdamState.for_params(params, lr=0.1)
        adam_step(state, params, [np.zeros(2), np.zeros((1, 1))])
        for p, b in zip(params, before):
            np.testing.assert_array_equal(p, b)
        self.assertEqual(state.t, 1)

    def test_first_moment_decays_under_zero_gradients(self):
        params = [np.array([1.0, 2.0])]
        state = AdamState.for_params(params, lr=0.01)
        adam_step(state, params, [np.array([1.0, -3.0])])
        for _ in range(3):
            previous = state.m[0].copy()
            adam_step(state, params, [np.zeros(2)])
            np.testing.assert_allclose(state.m[0], state.beta1 * previous, rtol=1e-15)

    def test_quadratic_decreases_every_step(self):
        w = [np.array([1.0])]
        state = AdamState.for_params(w, lr=0.05)
        losses = [float(w[0][0] ** 2)]
        for _ in range(10):
            adam_step(state, w, [2.0 * w[0]])
            losses.append(float(w[0][0] ** 2))
        self.assertTrue(all(b < a for a, b in zip(losses, losses[1:])), losses)
