import math

import numpy as np
from django.test import SimpleTestCase

from deeplimit.exceptions import ShapeMismatchError
from deeplimit.services.continuum import (
    OdeSolveConfig,
    gateaux_objective,
    gateaux_state,
    gradient_Einf,
    objective_Einf,
    ode_solve,
    reference_steps,
    reg_R1inf,
    reg_R2inf,
    trajectory_to_rows,
    value_and_gradient_Einf,
)
from deeplimit.services.functions import get_activation, get_classifier
from deeplimit.services.network import HyperParams, TrainingSet, forward_pass
from deeplimit.services.optimize import OptimizeConfig, minimize_params
from deeplimit.services.spaces import (
    ContinuumParamPath,
    DiscreteParamPath,
    ParamSet,
    continuum_from_function,
    extend_piecewise_constant,
)

TANH = get_activation("tanh")
IDENTITY = get_activation("identity")
H_ID = get_classifier("identity")
H_TANH = get_classifier("tanh")
HYPER = HyperParams((0.2, 0.3, 0.1, 0.15), (0.5, 0.8))


def constant_path(value, nodes=2):
    value = np.asarray(value, dtype=float)
    return ContinuumParamPath(np.repeat(value[None], nodes, axis=0))


def constant_theta(K, b, W, c, nodes=2):
    return ParamSet(constant_path(K, nodes), constant_path(b, nodes), np.atleast_2d(W), np.atleast_1d(c))


def random_theta(rng, nodes=9, d=2, m=1, scale=0.5):
    return ParamSet(
        ContinuumParamPath(scale * rng.normal(size=(nodes, d, d))),
        ContinuumParamPath(scale * rng.normal(size=(nodes, d))),
        rng.normal(size=(m, d)),
        rng.normal(size=m),
    )


def random_direction(rng, theta):
    v = rng.normal(size=theta.size)
    return theta.unflatten(v / np.linalg.norm(v))


class OdeSolveTests(SimpleTestCase):
    def test_zero_field_keeps_the_input(self):
        x = np.array([0.5, -2.0])
        for method in ("explicit-euler", "midpoint", "rk4"):
            traj = ode_solve(x, constant_path(np.zeros((2, 2))), constant_path(np.zeros(2)), TANH, OdeSolveConfig(method, 16))
            for X in traj.states:
                np.testing.assert_array_equal(X, x)

    def test_exponential_growth(self):
        traj = ode_solve([1.0], constant_path([[1.0]]), constant_path([0.0]), IDENTITY, OdeSolveConfig("rk4", 1024))
        self.assertAlmostEqual(float(traj.final[0]), math.e, delta=1e-8)
        self.assertEqual(traj.times[0], 0.0)
        self.assertEqual(traj.times[-1], 1.0)

    def test_constant_forcing(self):
        traj = ode_solve([0.0], constant_path([[0.0]]), constant_path([1.0]), IDENTITY, OdeSolveConfig("rk4", 64))
        self.assertAlmostEqual(float(traj.final[0]), 1.0, places=13)

    def test_explicit_euler_replays_the_network(self):
        rng = np.random.default_rng(0)
        for n in (1, 5, 16):
            K = DiscreteParamPath(rng.normal(size=(n, 3, 3)))
            b = DiscreteParamPath(rng.normal(size=(n, 3)))
            x = rng.normal(size=(4, 3))
            net = forward_pass(x, K, b, TANH).states
            ode = ode_solve(x, extend_piecewise_constant(K), extend_piecewise_constant(b), TANH, OdeSolveConfig("explicit-euler", n))
            np.testing.assert_array_equal(ode.states, net)

    def test_rk4_is_fourth_order(self):
        K = ContinuumParamPath([[[0.3, -0.8], [0.6, 0.2]], [[-0.5, 0.4], [0.9, -0.1]]])
        b = ContinuumParamPath([[0.2, -0.1], [-0.3, 0.4]])
        x = np.array([0.7, -0.4])
        reference = ode_solve(x, K, b, TANH, OdeSolveConfig("rk4", 4096)).final
        coarse = np.linalg.norm(ode_solve(x, K, b, TANH, OdeSolveConfig("rk4", 16)).final - reference)
        fine = np.linalg.norm(ode_solve(x, K, b, TANH, OdeSolveConfig("rk4", 32)).final - reference)
        self.assertGreater(coarse / fine, 12.0)
        self.assertLess(coarse / fine, 20.0)

    def test_euler_is_first_order(self):
        K = ContinuumParamPath([[[0.3]], [[-0.5]]])
        b = ContinuumParamPath([[0.2], [-0.3]])
        reference = ode_solve([0.7], K, b, TANH, OdeSolveConfig("rk4", 2048)).final
        coarse = abs(ode_solve([0.7], K, b, TANH, OdeSolveConfig("explicit-euler", 64)).final - reference)[0]
        fine = abs(ode_solve([0.7], K, b, TANH, OdeSolveConfig("explicit-euler", 128)).final - reference)[0]
        self.assertAlmostEqual(coarse / fine, 2.0, delta=0.3)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            ode_solve(np.zeros(3), constant_path(np.zeros((2, 2))), constant_path(np.zeros(2)), TANH, OdeSolveConfig())

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            OdeSolveConfig("heun", 8)
        with self.assertRaises(ValueError):
            OdeSolveConfig("rk4", 0)

    def test_reference_steps(self):
        self.assertEqual(reference_steps(4), 1024)
        self.assertEqual(reference_steps(256), 4096)
        self.assertEqual(reference_steps(48), 1056)
        self.assertEqual(reference_steps(48) % 48, 0)

    def test_trajectory_rows(self):
        traj = ode_solve(np.zeros((2, 1)), constant_path([[0.0]]), constant_path([1.0]), IDENTITY, OdeSolveConfig("rk4", 2))
        rows = trajectory_to_rows(traj)
        self.assertEqual(len(rows), 6)
        self.assertEqual(set(rows[0]), {"t", "sample", "x0"})
        self.assertEqual(rows[-1]["sample"], 1)
        self.assertAlmostEqual(rows[-1]["x0"], 1.0, places=14)


class ContinuumRegulariserTests(SimpleTestCase):
    def test_constant(self):
        A = np.array([[1.0, 2.0], [0.0, -1.0]])
        self.assertAlmostEqual(reg_R1inf(constant_path(A, 7), 0.7), 0.7 * 6.0, places=14)

    def test_ramp(self):
        K = continuum_from_function(lambda t: [[t]], 17, (1, 1))
        self.assertAlmostEqual(reg_R1inf(K, 5.0), 1.0, places=13)
        b = continuum_from_function(lambda t: [2.0 * t], 5, (1,))
        self.assertAlmostEqual(reg_R2inf(b, 5.0), 4.0, places=13)

    def test_sine(self):
        K = continuum_from_function(lambda t: [[math.sin(2 * math.pi * t)]], 1025, (1, 1))
        self.assertAlmostEqual(reg_R1inf(K, 1.0), 2 * math.pi**2, delta=2e-3 * math.pi**2)


class ContinuumObjectiveTests(SimpleTestCase):
    cfg = OdeSolveConfig("rk4", 1024)

    def test_zero_parameters(self):
        theta = constant_theta(np.zeros((2, 2)), np.zeros(2), np.zeros((1, 2)), [0.0])
        data = TrainingSet([[1.0, 2.0], [0.0, 1.0]], [[3.0], [4.0]])
        self.assertEqual(objective_Einf(theta, data, HYPER, TANH, H_ID, self.cfg).total, 25.0)

    def test_perfect_fit_leaves_regularisers(self):
        rng = np.random.default_rng(1)
        theta = random_theta(rng)
        xs = rng.normal(size=(3, 2))
        X1 = ode_solve(xs, theta.K, theta.b, TANH, self.cfg).final
        data = TrainingSet(xs, X1 @ theta.W.T + theta.c)
        out = objective_Einf(theta, data, HYPER, TANH, H_ID, self.cfg)
        self.assertAlmostEqual(out.loss, 0.0, places=20)
        a1, a2, a3, a4 = HYPER.alphas
        self.assertAlmostEqual(out.total, a1 * out.r1 + a2 * out.r2 + a3 * out.r3 + a4 * out.r4, places=12)

    def test_exponential_loss(self):
        theta = constant_theta([[1.0]], [0.0], [[1.0]], [0.0])
        out = objective_Einf(theta, TrainingSet([[1.0]], [[0.0]]), HYPER, IDENTITY, H_ID, self.cfg)
        self.assertAlmostEqual(out.loss, math.e**2, delta=1e-6)

    def test_discrete_parameters_rejected(self):
        theta = ParamSet(DiscreteParamPath(np.zeros((3, 1, 1))), DiscreteParamPath(np.zeros((3, 1))), [[1.0]], [0.0])
        with self.assertRaises(ShapeMismatchError):
            objective_Einf(theta, None, HYPER, TANH, H_ID, self.cfg)


class GateauxStateTests(SimpleTestCase):
    cfg = OdeSolveConfig("rk4", 1024)

    def unit_direction(self):
        return constant_theta([[1.0]], [0.0], [[0.0]], [0.0])

    def test_zero_direction(self):
        rng = np.random.default_rng(2)
        theta = random_theta(rng)
        np.testing.assert_array_equal(gateaux_state(theta, theta.zeros_like(), np.ones(2), TANH, self.cfg), np.zeros(2))

    def test_zero_kernel(self):
        theta = constant_theta([[0.0]], [0.0], [[1.0]], [0.0])
        self.assertAlmostEqual(float(gateaux_state(theta, self.unit_direction(), [1.0], IDENTITY, self.cfg)[0]), 1.0, places=13)

    def test_constant_kernel(self):
        theta = constant_theta([[0.5]], [0.0], [[1.0]], [0.0])
        for kernel in ("exponential", "ordered"):
            got = float(gateaux_state(theta, self.unit_direction(), [1.0], IDENTITY, self.cfg, kernel=kernel)[0])
            self.assertAlmostEqual(got, math.exp(0.5), delta=1e-4)

    def test_matches_state_difference_quotient(self):
        rng = np.random.default_rng(3)
        theta = random_theta(rng)
        xi = random_direction(rng, theta)
        x = rng.normal(size=2)
        r = 1e-6
        plus = ode_solve(x, theta.axpy(r, xi).K, theta.axpy(r, xi).b, TANH, self.cfg).final
        minus = ode_solve(x, theta.axpy(-r, xi).K, theta.axpy(-r, xi).b, TANH, self.cfg).final
        fd = (plus - minus) / (2 * r)
        np.testing.assert_allclose(gateaux_state(theta, xi, x, TANH, self.cfg, kernel="ordered"), fd, rtol=1e-4, atol=1e-7)

    def test_linear_in_direction(self):
        rng = np.random.default_rng(4)
        theta = random_theta(rng)
        xi1, xi2 = random_direction(rng, theta), random_direction(rng, theta)
        x = rng.normal(size=(2, 2))
        cfg = OdeSolveConfig("rk4", 64)
        combined = gateaux_state(theta, xi1.axpy(-1.5, xi2), x, TANH, cfg)
        separate = gateaux_state(theta, xi1, x, TANH, cfg) - 1.5 * gateaux_state(theta, xi2, x, TANH, cfg)
        np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-14)

    def test_unknown_kernel(self):
        theta = constant_theta([[0.5]], [0.0], [[1.0]], [0.0])
        with self.assertRaises(ValueError):
            gateaux_state(theta, self.unit_direction(), [1.0], IDENTITY, self.cfg, kernel="magnus")

    def test_direction_on_other_grid(self):
        rng = np.random.default_rng(5)
        with self.assertRaises(ShapeMismatchError):
            gateaux_state(random_theta(rng, nodes=5), random_theta(rng, nodes=9), np.ones(2), TANH, self.cfg)


class GateauxObjectiveTests(SimpleTestCase):
    cfg = OdeSolveConfig("rk4", 1024)

    def test_zero_direction(self):
        rng = np.random.default_rng(6)
        theta = random_theta(rng)
        data = TrainingSet(rng.normal(size=(3, 2)), rng.normal(size=(3, 1)))
        self.assertEqual(gateaux_objective(theta, theta.zeros_like(), data, HYPER, TANH, H_ID, self.cfg), 0.0)

    def test_matches_central_difference(self):
        rng = np.random.default_rng(7)
        for h in (H_ID, H_TANH):
            theta = random_theta(rng)
            xi = random_direction(rng, theta)
            data = TrainingSet(rng.normal(size=(3, 2)), rng.normal(size=(3, 1)))

            def f(p):
                return objective_Einf(p, data, HYPER, TANH, h, self.cfg).total

            r = 1e-5
            fd = (f(theta.axpy(r, xi)) - f(theta.axpy(-r, xi))) / (2 * r)
            analytic = gateaux_objective(theta, xi, data, HYPER, TANH, h, self.cfg)
            # relative to the gradient, since a random direction can be nearly orthogonal to it
            scale = np.linalg.norm(gradient_Einf(theta, data, HYPER, TANH, h, self.cfg).flatten())
            self.assertLessEqual(abs(analytic - fd), 1e-5 * scale)

    def test_regulariser_direction(self):
        nodes = 33
        K = continuum_from_function(lambda t: [[math.sin(2 * math.pi * t)]], nodes, (1, 1))
        L = continuum_from_function(lambda t: [[1.0 + t * t]], nodes, (1, 1))
        zero_b = constant_path([0.0], nodes)
        theta = ParamSet(K, zero_b, [[0.0]], [0.0])
        xi = ParamSet(L, zero_b, [[0.0]], [0.0])
        # difference quotients on sub-intervals that never straddle a node are exact slopes
        M = 64 * (nodes - 1)
        t = np.arange(M + 1) / M
        slope_K = np.diff(K.evaluate(t).ravel()) * M
        slope_L = np.diff(L.evaluate(t).ravel()) * M
        expected = 2.0 * float(np.sum(slope_K * slope_L)) / M
        got = gateaux_objective(theta, xi, None, HYPER, TANH, H_ID, self.cfg)
        self.assertAlmostEqual(got, HYPER.alphas[0] * expected, places=12)


class ContinuumGradientTests(SimpleTestCase):
    cfg = OdeSolveConfig("rk4", 256)

    def test_matches_gateaux_derivative(self):
        rng = np.random.default_rng(8)
        theta = random_theta(rng, nodes=9, d=2, m=2)
        data = TrainingSet(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))
        grad = gradient_Einf(theta, data, HYPER, TANH, H_TANH, self.cfg)
        scale = np.linalg.norm(grad.flatten())
        for _ in range(20):
            xi = random_direction(rng, theta)
            g = gateaux_objective(theta, xi, data, HYPER, TANH, H_TANH, self.cfg)
            self.assertLessEqual(abs(grad.dot(xi) - g), 1e-8 * scale)

    def test_matches_coordinate_differences(self):
        rng = np.random.default_rng(9)
        theta = random_theta(rng, nodes=5, d=1)
        data = TrainingSet(rng.normal(size=(3, 1)), rng.normal(size=(3, 1)))
        cfg = OdeSolveConfig("rk4", 1024)
        grad = gradient_Einf(theta, data, HYPER, TANH, H_ID, cfg).flatten()

        def f(v):
            return objective_Einf(theta.unflatten(v), data, HYPER, TANH, H_ID, cfg).total

        base = theta.flatten()
        step = 1e-5
        fd = np.zeros_like(base)
        for k in range(base.size):
            e = np.zeros_like(base)
            e[k] = step
            fd[k] = (f(base + e) - f(base - e)) / (2 * step)
        self.assertLessEqual(np.max(np.abs(grad - fd)), 1e-5 * np.max(np.abs(fd)))

    def test_regulariser_stiffness_on_four_nodes(self):
        K = ContinuumParamPath([[[1.0]], [[3.0]], [[2.0]], [[-1.0]]])
        b = ContinuumParamPath([[0.5], [0.0], [1.0], [2.0]])
        theta = ParamSet(K, b, [[2.0]], [1.0])
        grad = gradient_Einf(theta, None, HYPER, TANH, H_ID, self.cfg)
        stiffness = 3.0 * np.array([[1, -1, 0, 0], [-1, 2, -1, 0], [0, -1, 2, -1], [0, 0, -1, 1]], dtype=float)
        a1, a2, a3, a4 = HYPER.alphas
        tau1, tau2 = HYPER.taus
        k = K.values.ravel()
        expected_K = a1 * (2.0 * stiffness @ k + 2.0 * tau1 * np.array([k[0], 0, 0, 0]))
        bb = b.values.ravel()
        expected_b = a2 * (2.0 * stiffness @ bb + 2.0 * tau2 * np.array([bb[0], 0, 0, 0]))
        np.testing.assert_allclose(grad.K.values.ravel(), expected_K, rtol=1e-13)
        np.testing.assert_allclose(grad.b.values.ravel(), expected_b, rtol=1e-13)
        np.testing.assert_allclose(grad.W, 2.0 * a3 * theta.W)
        np.testing.assert_allclose(grad.c, 2.0 * a4 * theta.c)

    def test_vanishes_at_a_critical_point(self):
        data = TrainingSet([[-0.8], [0.1], [0.7]], [[-0.5], [0.3], [0.6]])
        theta0 = constant_theta([[0.1]], [0.0], [[0.5]], [0.0], nodes=5)
        cfg = OdeSolveConfig("rk4", 64)

        def fun(p):
            return value_and_gradient_Einf(p, data, HYPER, TANH, H_ID, cfg)

        result = minimize_params(fun, theta0, OptimizeConfig(max_iters=20000, grad_tol=1e-7, momentum=0.5))
        self.assertTrue(result.converged)
        self.assertLessEqual(np.linalg.norm(gradient_Einf(result.x, data, HYPER, TANH, H_ID, cfg).flatten()), 1e-6)
