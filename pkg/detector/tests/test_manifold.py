import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from detector import manifold
from detector.config import ExperimentConfig
from detector.data import gen_semicircle
from detector.exceptions import ConfigurationError, NumericError, TrainingError
from detector.flow import build_flow, log_prob
from detector.manifold import (
    LatentSplit, ManifoldFlowModel, PenaltySpec, build_model, huber_fn, load_model, loss_and_grads,
    penalty, project, reconstruct, save_model, train, training_loss,
)

from .utils import numerical_grads, randomize, relative_error


def random_model(D=4, d=2, seed=0, manifold_flow=False):
    config = ExperimentConfig(D=D, d=d, seed=seed, flow_blocks=2, flow_hidden=8,
                              manifold_flow_enabled=manifold_flow, manifold_flow_blocks=2)
    model = build_model(config)
    randomize(model.parameters(), np.random.default_rng(seed + 50), scale=0.1)
    return model


class PenaltyTests(SimpleTestCase):

    def test_huber_values(self):
        np.testing.assert_allclose(huber_fn(np.array([0.05, 0.3]), 0.1), [0.00125, 0.025], rtol=1e-12)

    def test_zero_iff_equal(self):
        x = np.array([[0.2, -0.4, 1.0]])
        for spec in (PenaltySpec('mse'), PenaltySpec('huber', delta=0.1)):
            self.assertEqual(penalty(x, x.copy(), spec)[0], 0.0)
            self.assertGreater(penalty(x, x + [[0.0, 1e-6, 0.0]], spec)[0], 0.0)

    def test_huber_monotone_and_sign_invariant(self):
        spec = PenaltySpec('huber', delta=0.1)
        zeros = np.zeros((1, 1))
        residuals = np.linspace(0.0, 2.0, 201)
        values = [penalty(np.array([[r]]), zeros, spec)[0] for r in residuals]
        self.assertTrue(np.all(np.diff(values) >= 0))
        for r in (0.05, 0.7):
            self.assertEqual(penalty(np.array([[r]]), zeros, spec)[0], penalty(np.array([[-r]]), zeros, spec)[0])

    def test_mse_is_mean_square(self):
        x = np.array([[1.0, 2.0]])
        self.assertEqual(penalty(x, np.zeros((1, 2)), PenaltySpec('mse'))[0], 2.5)

    def test_invalid_specs(self):
        with self.assertRaises(ConfigurationError):
            PenaltySpec('l1')
        with self.assertRaises(ConfigurationError):
            PenaltySpec('huber', delta=0.0)
        with self.assertRaises(ConfigurationError):
            LatentSplit(d=0, D=3)


class ReconstructionTests(SimpleTestCase):

    def test_project_zeroes_normal_coordinates(self):
        z = np.arange(8.0).reshape(2, 4)
        np.testing.assert_array_equal(project(z, LatentSplit(2, 4)), [[0, 1, 0, 0], [4, 5, 0, 0]])

    def test_reconstruction_is_pure(self):
        model = random_model()
        x = np.random.default_rng(1).standard_normal((5, 4))
        spec = PenaltySpec()
        first = penalty(x, reconstruct(model, x), spec)
        np.testing.assert_array_equal(first, penalty(x, reconstruct(model, x), spec))

    def test_reconstruction_lands_on_manifold(self):
        model = random_model()
        x = np.random.default_rng(2).standard_normal((5, 4))
        z = model.flow.forward(reconstruct(model, x))[0]
        self.assertLess(np.max(np.abs(z[:, 2:])), 1e-8)


class TrainingLossTests(SimpleTestCase):

    def test_full_dimension_loss_is_flow_nll(self):
        model = random_model(D=3, d=3)
        x = np.random.default_rng(3).standard_normal((6, 3))
        loss, decomposition = training_loss(model, x, PenaltySpec())
        np.testing.assert_array_equal(loss, -log_prob(model.flow, x))
        np.testing.assert_array_equal(decomposition['penalty'], 0.0)

    def _check_gradients(self, model, spec):
        x = np.random.default_rng(4).standard_normal((5, model.split.D))
        _, _, grads = loss_and_grads(model, x, spec)
        numeric = numerical_grads(lambda: loss_and_grads(model, x, spec)[0], model.parameters())
        return relative_error(grads, numeric)

    def test_gradients_include_reconstruction_path(self):
        for spec in (PenaltySpec('huber', delta=0.1, weight=1.0), PenaltySpec('mse', weight=2.0)):
            self.assertLess(self._check_gradients(random_model(), spec), 1e-3, spec.kind)

    def test_gradients_with_manifold_flow(self):
        model = random_model(manifold_flow=True, seed=1)
        self.assertLess(self._check_gradients(model, PenaltySpec('huber', delta=0.1)), 1e-3)

    def test_decomposition_keys(self):
        _, decomposition = training_loss(random_model(), np.zeros((2, 4)), PenaltySpec())
        self.assertEqual(set(decomposition), {'nll_u', 'nll_v', 'logdet', 'penalty'})


class TrainTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.data = np.random.default_rng(0).standard_normal((40, 2)) * [1.0, 0.1]

    def tearDown(self):
        self.tmp.cleanup()

    def _config(self, **overrides):
        values = dict(D=2, d=1, lr=1e-3, batch=16, epochs=3, seed=0, flow_blocks=2, flow_hidden=8)
        values.update(overrides)
        return ExperimentConfig(**values)

    def test_zero_epochs_leaves_model_unchanged(self):
        config = self._config(epochs=0)
        model = build_model(config)
        before = [p.copy() for p in model.parameters()]
        _, history = train(model, self.data, config)
        self.assertEqual(history, [])
        for a, b in zip(before, model.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_same_seed_same_parameters(self):
        config = self._config()
        first, _ = train(build_model(config), self.data, config)
        second, _ = train(build_model(config), self.data, config)
        for a, b in zip(first.parameters(), second.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_history_and_checkpoint(self):
        config = self._config()
        path = self.dir / 'model.ckpt'
        model, history = train(build_model(config), self.data, config, checkpoint_path=path)
        self.assertEqual([r.epoch for r in history], [1, 2, 3])
        self.assertTrue(all(np.isfinite(r.loss) for r in history))
        loaded, spec, _ = load_model(path)
        for a, b in zip(model.parameters(), loaded.parameters()):
            np.testing.assert_array_equal(a, b)
        self.assertEqual(spec, config.penalty_spec())

    def test_trained_density_integrates_to_one(self):
        config = self._config(lr=3e-3, batch=64, epochs=5)
        data = gen_semicircle(500, seed=0).values
        model, _ = train(build_model(config), data, config)
        step = 0.0125
        axis = np.arange(-5.0 + step / 2, 5.0, step)
        xs, ys = np.meshgrid(axis, axis, indexing='ij')
        points = np.stack([xs.ravel(), ys.ravel()], axis=1)
        mass = np.exp(log_prob(model.flow, points)).sum() * step * step
        self.assertGreater(mass, 0.98)
        self.assertLess(mass, 1.02)

    def test_divergence_rolls_back_to_last_epoch(self):
        config = self._config(epochs=3, batch=40)
        path = self.dir / 'model.ckpt'
        model = build_model(config)
        calls = {'n': 0}
        real = manifold.loss_and_grads

        def failing(*args, **kwargs):
            calls['n'] += 1
            if calls['n'] == 2:
                raise NumericError('overflow', layer_index=0, sample_index=0)
            return real(*args, **kwargs)

        snapshots = []
        real_save = manifold.save_model

        def recording_save(*args, **kwargs):
            snapshots.append([p.copy() for p in model.parameters()])
            return real_save(*args, **kwargs)

        with mock.patch.object(manifold, 'loss_and_grads', failing), \
                mock.patch.object(manifold, 'save_model', recording_save):
            with self.assertRaises(TrainingError) as ctx:
                train(model, self.data, config, checkpoint_path=path)
        self.assertEqual(ctx.exception.epoch, 2)
        self.assertEqual(ctx.exception.batch_index, 0)
        # epoch 1 checkpoint, then the rollback checkpoint
        self.assertEqual(len(snapshots), 2)
        for a, b in zip(snapshots[0], model.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_wrong_width_rejected(self):
        config = self._config()
        with self.assertRaises(ConfigurationError):
            train(build_model(config), np.zeros((4, 3)), config)


class ModelStorageTests(SimpleTestCase):

    def test_save_and_load_with_manifold_flow(self):
        model = random_model(manifold_flow=True)
        spec = PenaltySpec('mse', weight=0.5)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'm.ckpt'
            save_model(path, model, spec, meta={'run': 1})
            loaded, loaded_spec, meta = load_model(path)
        self.assertEqual(loaded_spec, spec)
        self.assertEqual(meta['run'], 1)
        self.assertIsNotNone(loaded.manifold_flow)
        x = np.random.default_rng(0).standard_normal((3, 4))
        np.testing.assert_array_equal(training_loss(loaded, x, spec)[0], training_loss(model, x, spec)[0])

    def test_dimension_mismatch(self):
        with self.assertRaises(ConfigurationError):
            ManifoldFlowModel(flow=build_flow(3, blocks=1), split=LatentSplit(1, 4))
