import numpy as np
from django.test import SimpleTestCase

from deeplimit.exceptions import LineSearchError, NumericalBlowupError
from deeplimit.services.optimize import OptimizeConfig, minimize, multistart, parallel_map


def quadratic(A, b):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)

    def fun(x):
        return 0.5 * x @ A @ x - b @ x, A @ x - b

    return fun


def rosenbrock(x):
    a, c = x
    value = (1 - a) ** 2 + 100 * (c - a * a) ** 2
    grad = np.array([-2 * (1 - a) - 400 * a * (c - a * a), 200 * (c - a * a)])
    return value, grad


def double_well(x):
    # wells near -1 (about -0.15) and +1 (about +0.15)
    value = (x[0] ** 2 - 1) ** 2 + 0.15 * x[0]
    return value, np.array([4 * x[0] * (x[0] ** 2 - 1) + 0.15])


class MinimizeTests(SimpleTestCase):
    def test_quadratic(self):
        A = np.array([[4.0, 1.0], [1.0, 3.0]])
        b = np.array([1.0, 2.0])
        result = minimize(quadratic(A, b), np.zeros(2), OptimizeConfig(grad_tol=1e-10, max_iters=5000))
        self.assertTrue(result.converged)
        np.testing.assert_allclose(result.x, np.linalg.solve(A, b), atol=1e-9)

    def test_rosenbrock(self):
        cfg = OptimizeConfig(grad_tol=1e-7, max_iters=200000, momentum=0.9)
        result = minimize(rosenbrock, np.array([-1.2, 1.0]), cfg)
        self.assertTrue(result.converged)
        np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-5)

    def test_objective_history_never_increases(self):
        cfg = OptimizeConfig(grad_tol=1e-8, max_iters=3000, momentum=0.5)
        result = minimize(rosenbrock, np.array([-1.2, 1.0]), cfg)
        history = result.objective_history
        self.assertTrue(all(b <= a for a, b in zip(history, history[1:])))
        self.assertEqual(len(result.trace), result.iterations + 1)
        self.assertEqual(result.trace[0]["step"], 0.0)
        self.assertAlmostEqual(result.initial_objective, 24.2, places=12)

    def test_critical_start_returns_immediately(self):
        result = minimize(quadratic(np.eye(2), np.zeros(2)), np.zeros(2), OptimizeConfig())
        self.assertEqual(result.iterations, 0)
        self.assertTrue(result.converged)
        np.testing.assert_array_equal(result.x, np.zeros(2))

    def test_iteration_cap(self):
        result = minimize(rosenbrock, np.array([-1.2, 1.0]), OptimizeConfig(max_iters=3))
        self.assertEqual(result.iterations, 3)
        self.assertFalse(result.converged)

    def test_non_finite_start(self):
        with self.assertRaises(NumericalBlowupError):
            minimize(lambda x: (np.inf, np.zeros(1)), np.zeros(1), OptimizeConfig())

    def test_wrong_gradient_exhausts_backtracking(self):
        # the supplied gradient points uphill, so no step can satisfy the Armijo test
        def fun(x):
            return (float(x @ x), -2.0 * x)

        with self.assertRaises(LineSearchError):
            minimize(fun, np.ones(2), OptimizeConfig(max_backtracks=10))

    def test_deterministic(self):
        cfg = OptimizeConfig(grad_tol=1e-8, max_iters=500, momentum=0.3)
        first = minimize(rosenbrock, np.array([-1.2, 1.0]), cfg)
        second = minimize(rosenbrock, np.array([-1.2, 1.0]), cfg)
        np.testing.assert_array_equal(first.x, second.x)
        self.assertEqual(first.objective_history, second.objective_history)


class LbfgsTests(SimpleTestCase):
    def cfg(self, **kwargs):
        return OptimizeConfig(method="lbfgs", **kwargs)

    def test_quadratic(self):
        A = np.array([[4.0, 1.0], [1.0, 3.0]])
        b = np.array([1.0, 2.0])
        result = minimize(quadratic(A, b), np.zeros(2), self.cfg(grad_tol=1e-10, max_iters=200))
        self.assertTrue(result.converged)
        np.testing.assert_allclose(result.x, np.linalg.solve(A, b), atol=1e-6)

    def test_rosenbrock(self):
        result = minimize(rosenbrock, np.array([-1.2, 1.0]), self.cfg(grad_tol=1e-8, max_iters=1000))
        self.assertTrue(result.converged)
        self.assertLess(result.iterations, 1000)
        np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-3)

    def test_objective_history_never_increases(self):
        result = minimize(rosenbrock, np.array([-1.2, 1.0]), self.cfg(grad_tol=1e-8, max_iters=1000))
        history = result.objective_history
        self.assertGreater(len(history), 1)
        self.assertTrue(all(b <= a for a, b in zip(history, history[1:])))
        self.assertEqual(result.trace[0]["step"], 0.0)
        self.assertEqual(result.final_objective, rosenbrock(result.x)[0])

    def test_critical_start_returns_immediately(self):
        result = minimize(quadratic(np.eye(2), np.zeros(2)), np.zeros(2), self.cfg())
        self.assertEqual(result.iterations, 0)
        self.assertTrue(result.converged)

    def test_iteration_cap(self):
        result = minimize(rosenbrock, np.array([-1.2, 1.0]), self.cfg(max_iters=2))
        self.assertLessEqual(result.iterations, 2)
        self.assertFalse(result.converged)

    def test_deterministic(self):
        first = minimize(rosenbrock, np.array([-1.2, 1.0]), self.cfg(max_iters=50))
        second = minimize(rosenbrock, np.array([-1.2, 1.0]), self.cfg(max_iters=50))
        np.testing.assert_array_equal(first.x, second.x)
        self.assertEqual(first.objective_history, second.objective_history)


class ConfigTests(SimpleTestCase):
    def test_rejects_out_of_range(self):
        for kwargs in (
            {"grad_tol": 0.0},
            {"armijo_c1": 1.0},
            {"backtrack": 0.0},
            {"initial_step": -1.0},
            {"step_growth": 0.5},
            {"momentum": 1.0},
            {"max_backtracks": 0},
            {"multistart": 0},
            {"seed": -1},
            {"seed": 2**64},
            {"method": "newton"},
        ):
            with self.subTest(**kwargs):
                with self.assertRaises(ValueError):
                    OptimizeConfig(**kwargs)


class MultistartTests(SimpleTestCase):
    def sampler(self, rng):
        return rng.uniform(-2.0, 2.0, 1)

    def test_finds_the_lower_well(self):
        cfg = OptimizeConfig(grad_tol=1e-10, max_iters=5000, seed=3)
        out = multistart(double_well, self.sampler, 8, cfg)
        self.assertEqual(len(out.results), 8)
        self.assertLess(out.best.x[0], 0.0)
        self.assertEqual(out.best.final_objective, min(r.final_objective for r in out.results))
        self.assertIs(out.results[out.best_index], out.best)

    def test_same_seed_same_starts(self):
        cfg = OptimizeConfig(grad_tol=1e-10, max_iters=5000, seed=11)
        first = multistart(double_well, self.sampler, 4, cfg)
        second = multistart(double_well, self.sampler, 4, cfg)
        for a, b in zip(first.results, second.results):
            np.testing.assert_array_equal(a.x, b.x)
        self.assertEqual(first.best_index, second.best_index)

    def test_worker_count_does_not_change_the_result(self):
        cfg = OptimizeConfig(grad_tol=1e-10, max_iters=5000, seed=5)
        serial = multistart(double_well, self.sampler, 6, cfg)
        threaded = multistart(double_well, self.sampler, 6, cfg, workers=4)
        self.assertEqual(serial.best_index, threaded.best_index)
        for a, b in zip(serial.results, threaded.results):
            np.testing.assert_array_equal(a.x, b.x)
            self.assertEqual(a.objective_history, b.objective_history)

    def test_count_validation(self):
        with self.assertRaises(ValueError):
            multistart(double_well, self.sampler, 0, OptimizeConfig())


class ParallelMapTests(SimpleTestCase):
    def square(self, v):
        return v * v

    def test_keeps_input_order(self):
        self.assertEqual(parallel_map(self.square, range(10), workers=4), [v * v for v in range(10)])

    def test_serial_paths(self):
        self.assertEqual(parallel_map(self.square, [3], workers=8), [9])
        self.assertEqual(parallel_map(self.square, [], workers=2), [])
        self.assertEqual(parallel_map(self.square, [1, 2], workers=1), [1, 4])
