import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from deeplimit.exceptions import NumericalBlowupError, ShapeMismatchError
from deeplimit.services.functions import get_activation, get_classifier
from deeplimit.services.network import (
    HyperParams,
    TrainingSet,
    constant_params,
    forward_pass,
    loss_En,
    objective_En,
    readout_degeneracy_family,
    reg_R1n,
    reg_R2n,
    reg_R3,
    reg_R4,
    saturation_labels,
    tanh_saturation_family,
)
from deeplimit.services.spaces import DiscreteParamPath, ParamSet

IDENTITY = get_activation("identity")
TANH = get_activation("tanh")
H_ID = get_classifier("identity")


def random_params(rng, n=6, d=2, m=1, scale=0.5):
    return ParamSet(
        DiscreteParamPath(scale * rng.normal(size=(n, d, d))),
        DiscreteParamPath(scale * rng.normal(size=(n, d))),
        rng.normal(size=(m, d)),
        rng.normal(size=m),
    )


class ForwardPassTests(SimpleTestCase):
    def test_zero_parameters_keep_the_input(self):
        theta = constant_params(7, np.zeros((3, 3)), np.zeros(3), np.zeros((1, 3)), [0.0])
        x = np.array([0.3, -1.2, 4.0])
        for sigma in (TANH, IDENTITY, get_activation("relu"), get_activation("silu")):
            states = forward_pass(x, theta.K, theta.b, sigma).states
            for X in states:
                np.testing.assert_array_equal(X, x)

    def test_identity_closed_form(self):
        theta = constant_params(4, [[1.0]], [0.0], [[1.0]], [0.0])
        traj = forward_pass([1.0], theta.K, theta.b, IDENTITY)
        self.assertEqual(traj.n, 4)
        self.assertAlmostEqual(float(traj.final[0]), 2.44140625, places=14)

    def test_identity_power_law(self):
        for kappa, n in ((0.5, 10), (-1.5, 32), (2.0, 64)):
            theta = constant_params(n, [[kappa]], [0.0], [[1.0]], [0.0])
            got = float(forward_pass([1.3], theta.K, theta.b, IDENTITY).final[0])
            self.assertAlmostEqual(got, (1.0 + kappa / n) ** n * 1.3, places=12)

    def test_tanh_hand_recursion(self):
        theta = constant_params(2, [[1.0]], [0.0], [[1.0]], [0.0])
        x1 = 1.0 + math.tanh(1.0) / 2.0
        x2 = x1 + math.tanh(x1) / 2.0
        states = forward_pass([1.0], theta.K, theta.b, TANH).states
        self.assertAlmostEqual(float(states[1][0]), x1, places=13)
        self.assertAlmostEqual(float(states[2][0]), x2, places=13)

    def test_batch_matches_single_inputs(self):
        rng = np.random.default_rng(4)
        theta = random_params(rng)
        xs = rng.normal(size=(5, 2))
        batch = forward_pass(xs, theta.K, theta.b, TANH).final
        for s in range(5):
            np.testing.assert_allclose(batch[s], forward_pass(xs[s], theta.K, theta.b, TANH).final, rtol=1e-14)

    def test_shape_errors(self):
        theta = constant_params(3, np.eye(2), np.zeros(2), np.zeros((1, 2)), [0.0])
        with self.assertRaises(ShapeMismatchError):
            forward_pass(np.zeros(3), theta.K, theta.b, TANH)
        with self.assertRaises(ShapeMismatchError):
            forward_pass(np.zeros(2), theta.K, DiscreteParamPath(np.zeros((4, 2))), TANH)

    def test_blowup_detected(self):
        theta = constant_params(2, [[1e200]], [0.0], [[1.0]], [0.0])
        with np.errstate(over="ignore", invalid="ignore"):
            with self.assertRaises(NumericalBlowupError):
                forward_pass([1e200], theta.K, theta.b, IDENTITY)


class LossTests(SimpleTestCase):
    def test_zero_parameters(self):
        data = TrainingSet([[1.0], [2.0]], [[3.0], [-4.0]])
        theta = constant_params(5, [[0.0]], [0.0], [[0.0]], [0.0])
        self.assertEqual(loss_En(theta, data, TANH, H_ID), 25.0)

    def test_perfect_fit(self):
        rng = np.random.default_rng(8)
        theta = random_params(rng)
        xs = rng.normal(size=(4, 2))
        XN = forward_pass(xs, theta.K, theta.b, TANH).final
        data = TrainingSet(xs, XN @ theta.W.T + theta.c)
        self.assertAlmostEqual(loss_En(theta, data, TANH, H_ID), 0.0, places=24)

    def test_squared_closed_form(self):
        theta = constant_params(4, [[1.0]], [0.0], [[1.0]], [0.0])
        data = TrainingSet([[1.0]], [[0.0]])
        self.assertAlmostEqual(loss_En(theta, data, IDENTITY, H_ID), 1.25**8, places=12)

    def test_dimension_mismatch(self):
        theta = constant_params(4, [[1.0]], [0.0], [[1.0]], [0.0])
        with self.assertRaises(ShapeMismatchError):
            loss_En(theta, TrainingSet([[1.0, 2.0]], [[0.0]]), TANH, H_ID)


class RegulariserTests(SimpleTestCase):
    def test_constant_path(self):
        A = np.array([[1.0, 2.0], [0.0, -1.0]])
        K = DiscreteParamPath(np.repeat(A[None], 6, axis=0))
        self.assertAlmostEqual(reg_R1n(K, 0.7), 0.7 * 6.0, places=14)

    def test_ramp(self):
        for n in (1, 2, 5, 16):
            K = DiscreteParamPath((np.arange(n) / n)[:, None, None])
            self.assertAlmostEqual(reg_R1n(K, 3.0), (n - 1) / n, places=13)
            b = DiscreteParamPath((np.arange(n) / n)[:, None])
            self.assertAlmostEqual(reg_R2n(b, 3.0), (n - 1) / n, places=13)

    def test_single_layer_keeps_only_anchor(self):
        self.assertEqual(reg_R1n(DiscreteParamPath([[[2.0]]]), 0.5), 2.0)

    def test_zero(self):
        self.assertEqual(reg_R1n(DiscreteParamPath(np.zeros((4, 2, 2))), 1.0), 0.0)
        self.assertEqual(reg_R2n(DiscreteParamPath(np.zeros((4, 2))), 1.0), 0.0)

    def test_readout_norms(self):
        self.assertEqual(reg_R3(np.zeros((2, 3))), 0.0)
        self.assertEqual(reg_R3(np.eye(2)), 2.0)
        W = np.random.default_rng(1).normal(size=(3, 4))
        self.assertAlmostEqual(reg_R3(W), sum(w * w for w in W.ravel()), places=12)
        self.assertEqual(reg_R4(np.array([3.0, 4.0])), 25.0)


class ObjectiveTests(SimpleTestCase):
    def setUp(self):
        self.hyper = HyperParams((0.3, 0.2, 0.5, 0.7), (1.5, 0.25))

    def test_zero_parameters(self):
        data = TrainingSet([[1.0, 0.0], [0.0, 2.0]], [[1.0], [2.0]])
        theta = constant_params(3, np.zeros((2, 2)), np.zeros(2), np.zeros((1, 2)), [0.0])
        self.assertEqual(objective_En(theta, data, self.hyper, TANH, H_ID).total, 5.0)

    def test_terms_add_up(self):
        rng = np.random.default_rng(12)
        theta = random_params(rng, n=5, d=3, m=2)
        data = TrainingSet(rng.normal(size=(4, 3)), rng.normal(size=(4, 2)))
        out = objective_En(theta, data, self.hyper, TANH, H_ID)
        a1, a2, a3, a4 = self.hyper.alphas
        expected = (
            loss_En(theta, data, TANH, H_ID)
            + a1 * reg_R1n(theta.K, 1.5)
            + a2 * reg_R2n(theta.b, 0.25)
            + a3 * reg_R3(theta.W)
            + a4 * reg_R4(theta.c)
        )
        self.assertAlmostEqual(out.total, expected, places=12)
        self.assertGreaterEqual(out.total, a3 * reg_R3(theta.W))
        self.assertEqual(set(out.as_dict()), {"total", "loss", "r1", "r2", "r3", "r4"})

    def test_sample_order_does_not_matter(self):
        rng = np.random.default_rng(13)
        theta = random_params(rng)
        data = TrainingSet(rng.normal(size=(6, 2)), rng.normal(size=(6, 1)))
        base = objective_En(theta, data, self.hyper, TANH, H_ID).total
        shuffled = objective_En(theta, data.permuted([3, 1, 5, 0, 4, 2]), self.hyper, TANH, H_ID).total
        self.assertAlmostEqual(base, shuffled, places=12)

    def test_without_data(self):
        theta = constant_params(4, [[2.0]], [1.0], [[1.0]], [1.0])
        out = objective_En(theta, None, HyperParams(), TANH, H_ID)
        self.assertEqual(out.loss, 0.0)
        self.assertEqual(out.total, 4.0 + 1.0 + 1.0 + 1.0)

    def test_continuum_parameters_rejected(self):
        from deeplimit.services.spaces import ContinuumParamPath

        theta = ParamSet(ContinuumParamPath(np.zeros((3, 1, 1))), ContinuumParamPath(np.zeros((3, 1))), [[1.0]], [0.0])
        with self.assertRaises(ShapeMismatchError):
            objective_En(theta, None, HyperParams(), TANH, H_ID)


class HyperParamTests(SimpleTestCase):
    def test_rejects_non_positive(self):
        with self.assertRaises(ValueError):
            HyperParams((1.0, 0.0, 1.0, 1.0))
        with self.assertRaises(ValueError):
            HyperParams(taus=(1.0, -1.0))
        with self.assertRaises(ValueError):
            HyperParams((1.0, 1.0, 1.0))


class DegeneracyScenarioTests(SimpleTestCase):
    def test_readout_family_is_only_separated_by_readout_weights(self):
        hyper = HyperParams((1.0, 1.0, 0.4, 0.9), (1.0, 1.0))
        first, second = readout_degeneracy_family([1.0, 2.0], 4, hyper, IDENTITY, H_ID)
        self.assertEqual(first.loss, 0.0)
        self.assertEqual(second.loss, 0.0)
        self.assertAlmostEqual(first.total, 0.4, places=14)
        self.assertAlmostEqual(second.total, 0.4 * 4 + 0.9 * 1, places=14)

    def test_readout_family_grows_without_bound(self):
        hyper = HyperParams((1.0, 1.0, 0.1, 0.1), (1.0, 1.0))
        totals = [b.total for b in readout_degeneracy_family([1, 10, 100, 1000], 3, hyper, TANH, H_ID, x=0.5, samples=3)]
        self.assertTrue(all(b > a for a, b in zip(totals, totals[1:])))

    def test_saturation_family_loss_decreases(self):
        xs = np.array([[-1.0], [-0.4], [0.3], [0.9]])
        data = TrainingSet(xs, saturation_labels(xs))
        losses = tanh_saturation_family(data, [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0], 8, TANH)
        self.assertTrue(all(b < a for a, b in zip(losses, losses[1:])))
        self.assertLess(losses[-1], 0.05 * losses[0])

    def test_saturation_family_is_one_dimensional(self):
        data = TrainingSet([[1.0, 1.0]], [[1.0]])
        with self.assertRaises(ShapeMismatchError):
            tanh_saturation_family(data, [1.0], 4, TANH)


class TrainingSetTests(SimpleTestCase):
    def write(self, text):
        tmp = tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False, encoding="utf-8")
        tmp.write(text)
        tmp.close()
        self.addCleanup(Path(tmp.name).unlink)
        return tmp.name

    def test_from_csv(self):
        data = TrainingSet.from_csv(self.write("x0,x1,y0\r\n1,2,3\r\n4,5,6\r\n"))
        self.assertEqual((data.size, data.d, data.m), (2, 2, 1))
        np.testing.assert_array_equal(data.labels, [[3.0], [6.0]])

    def test_bundled_toy_data(self):
        data = TrainingSet.from_csv(Path(__file__).resolve().parents[2] / "data" / "toy_regression.csv")
        self.assertEqual((data.size, data.d, data.m), (8, 1, 1))

    def test_bad_files(self):
        for text in ("", "a,b\n1,2\n", "y0,x0\n1,2\n", "x0,y0\n", "x0,y0\n1,abc\n", "x0,y0\n1,2,3\n"):
            with self.subTest(text=text):
                with self.assertRaises(ValueError):
                    TrainingSet.from_csv(self.write(text))

    def test_mismatched_counts(self):
        with self.assertRaises(ShapeMismatchError):
            TrainingSet([[1.0], [2.0]], [[1.0]])
