import math
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from utils.errors import ConfigError, ShapeError
from utils.layers import Parameter
from utils.optim import SGD, Adam, AdamState, adam_step, build_optimizer, cosine_warm_restart_lr


class TestAdam(unittest.TestCase):
    def test_zero_gradient_leaves_parameters(self):
        params = [np.arange(4.0), np.ones((2, 2))]
        updated, state = adam_step(params, [np.zeros(4), np.zeros((2, 2))], AdamState(), lr=0.1)
        for p, u in zip(params, updated):
            assert_array_equal(p, u)
        self.assertEqual(state.step, 1)

    def test_first_step_moves_by_lr(self):
        updated, _ = adam_step([np.array([1.0, -1.0])], [np.array([0.3, -5.0])], AdamState(), lr=0.01)
        assert_allclose(updated[0], [0.99, -0.99], rtol=1e-6)

    def test_inputs_are_not_modified(self):
        p, g = np.array([1.0]), np.array([2.0])
        state = AdamState()
        adam_step([p], [g], state, lr=0.1)
        assert_array_equal(p, [1.0])
        self.assertEqual(state.step, 0)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            adam_step([np.zeros(3)], [np.zeros(2)], AdamState(), lr=0.1)

    def test_minimizes_quadratic(self):
        x = Parameter(np.array(5.0))
        optimizer = Adam([x], lr=0.1)
        for _ in range(500):
            optimizer.zero_grad()
            ((x - 2.0) * (x - 2.0)).backward()
            optimizer.step()
        self.assertLess(((x.data - 2.0) ** 2).item(), 1e-6)

    def test_missing_gradient_counts_as_zero(self):
        x = Parameter(np.array([1.0, 2.0]))
        Adam([x], lr=0.5).step()
        assert_array_equal(x.data, [1.0, 2.0])


class TestSGD(unittest.TestCase):
    def test_momentum_accumulates(self):
        x = Parameter(np.array([0.0]))
        optimizer = SGD([x], lr=0.1, momentum=0.5)
        for _ in range(2):
            x.grad = np.array([1.0])
            optimizer.step()
        # velocity 1 then 1.5
        assert_allclose(x.data, [-0.25])

    def test_invalid_settings(self):
        with self.assertRaises(ConfigError):
            SGD([Parameter(np.zeros(1))], momentum=1.0)
        with self.assertRaises(ConfigError):
            build_optimizer("rmsprop", [], lr=0.1)
        with self.assertRaises(ConfigError):
            build_optimizer("adam", [], lr=0.0)


class TestCosineWarmRestarts(unittest.TestCase):
    def test_cycle_endpoints(self):
        self.assertEqual(cosine_warm_restart_lr(0, T_0=10, lr_max=1e-3), 1e-3)
        self.assertAlmostEqual(cosine_warm_restart_lr(5, T_0=10, lr_max=1e-3, eta_min=1e-5), (1e-3 + 1e-5) / 2)
        self.assertEqual(cosine_warm_restart_lr(10, T_0=10, lr_max=1e-3), 1e-3)

    def test_growing_cycles(self):
        # cycles of 4 then 8 steps: a restart lands at step 12
        self.assertEqual(cosine_warm_restart_lr(12, T_0=4, T_mult=2, lr_max=0.5), 0.5)
        self.assertLess(cosine_warm_restart_lr(11, T_0=4, T_mult=2, lr_max=0.5), 0.5)

    def test_stays_in_bounds_and_decreases_within_a_cycle(self):
        values = [cosine_warm_restart_lr(t / 4, T_0=7, lr_max=1e-2, eta_min=1e-4) for t in range(28)]
        self.assertTrue(all(1e-4 <= v <= 1e-2 for v in values))
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            cosine_warm_restart_lr(-1, T_0=10)
        with self.assertRaises(ConfigError):
            cosine_warm_restart_lr(0, T_0=10, T_mult=0.5)
        self.assertTrue(math.isfinite(cosine_warm_restart_lr(1e6, T_0=3, T_mult=1.5)))


if __name__ == '__main__':
    unittest.main()
