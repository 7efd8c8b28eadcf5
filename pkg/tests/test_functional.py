import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from utils import functional as F
from utils.errors import ShapeError
from utils.tensor import Tensor


class TestConv2d(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def _check(self, n, c_in, c_out, size, k, stride, padding, groups, bias):
        x = self.rng.normal(size=(n, c_in, size, size))
        w = self.rng.normal(size=(c_out, c_in // groups, k, k))
        b = self.rng.normal(size=c_out) if bias else None
        params = F.ConvParams(Tensor(w), Tensor(b) if bias else None, stride, padding, groups)
        out = F.conv2d(Tensor(x), params)
        assert_allclose(out.data, F.conv2d_reference(x, w, b, stride, padding, groups), rtol=1e-12, atol=1e-12)

    def test_matches_loop_reference(self):
        self._check(2, 3, 4, 6, 3, 1, 1, 1, True)
        self._check(1, 4, 6, 7, 3, 2, 0, 2, False)
        self._check(2, 8, 4, 5, 3, 1, 1, 4, True)
        self._check(1, 2, 3, 4, 1, 1, 0, 1, True)

    def test_output_size(self):
        self.assertEqual(F.conv_output_size(224, 3, 1, 1), 224)
        self.assertEqual(F.conv_output_size(7, 3, 2, 0), 3)

    def test_channel_mismatch(self):
        params = F.ConvParams(Tensor(np.zeros((4, 3, 3, 3))))
        with self.assertRaises(ShapeError):
            F.conv2d(Tensor(np.zeros((1, 2, 5, 5))), params)

    def test_groups_must_divide_outputs(self):
        with self.assertRaises(ShapeError):
            F.ConvParams(Tensor(np.zeros((5, 1, 3, 3))), groups=2)

    def test_kernel_larger_than_input(self):
        params = F.ConvParams(Tensor(np.zeros((1, 1, 3, 3))))
        with self.assertRaises(ShapeError):
            F.conv2d(Tensor(np.zeros((1, 1, 2, 2))), params)

    def test_grouped_conv_has_no_cross_group_path(self):
        x = Tensor(self.rng.normal(size=(1, 4, 5, 5)), requires_grad=True)
        w = Tensor(self.rng.normal(size=(4, 2, 3, 3)))
        out = F.conv2d(x, F.ConvParams(w, padding=1, groups=2))
        # gradient of group-0 outputs reaches input channels 0-1 only
        mask = np.zeros(out.shape)
        mask[:, :2] = 1.0
        (out * Tensor(mask)).sum().backward()
        assert_array_equal(x.grad[:, 2:], 0.0)
        self.assertTrue(np.any(x.grad[:, :2] != 0.0))


class TestPooling(unittest.TestCase):
    def test_maxpool_matches_reference(self):
        x = np.random.default_rng(1).normal(size=(2, 3, 6, 8))
        assert_array_equal(F.maxpool2d(Tensor(x)).data, F.maxpool2d_reference(x))

    def test_maxpool_odd_dims_rejected(self):
        with self.assertRaises(ShapeError):
            F.maxpool2d(Tensor(np.zeros((1, 1, 5, 4))))

    def test_maxpool_tie_routes_to_first_element(self):
        x = Tensor(np.ones((1, 1, 2, 4)), requires_grad=True)
        F.maxpool2d(x).sum().backward()
        expected = np.array([[[[1.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0]]]])
        assert_array_equal(x.grad, expected)

    def test_maxpool_is_not_invertible(self):
        a = np.array([[[[1.0, 0.0], [0.0, 0.0]]]])
        b = np.array([[[[1.0, 0.5], [-2.0, 0.0]]]])
        self.assertFalse(np.array_equal(a, b))
        assert_array_equal(F.maxpool2d(Tensor(a)).data, F.maxpool2d(Tensor(b)).data)

    def test_global_avg_pool(self):
        x = np.arange(2 * 3 * 4 * 5, dtype=float).reshape(2, 3, 4, 5)
        out = F.global_avg_pool(Tensor(x))
        self.assertEqual(out.shape, (2, 3, 1, 1))
        assert_allclose(out.data[..., 0, 0], x.mean(axis=(2, 3)))

    def test_global_avg_pool_small(self):
        out = F.global_avg_pool(Tensor(np.array([[[[1.0, 3.0], [5.0, 7.0]]]])))
        self.assertEqual(out.data.item(), 4.0)


class TestUpsample(unittest.TestCase):
    def test_matrix_for_two_pixels(self):
        expected = np.array([[1.0, 0.0], [0.75, 0.25], [0.25, 0.75], [0.0, 1.0]])
        assert_allclose(F.upsample_matrix(2), expected)

    def test_two_pixel_row(self):
        out = F.bilinear_upsample2x(Tensor(np.array([[[[0.0, 2.0]]]])))
        assert_allclose(out.data[0, 0, 0], [0.0, 0.5, 1.5, 2.0])
        assert_allclose(out.data[0, 0, 1], [0.0, 0.5, 1.5, 2.0])

    def test_rows_sum_to_one(self):
        for size in (1, 3, 7, 14):
            assert_allclose(F.upsample_matrix(size).sum(axis=1), 1.0)

    def test_constant_input_stays_constant(self):
        out = F.bilinear_upsample2x(Tensor(np.full((1, 2, 3, 5), 4.0)))
        self.assertEqual(out.shape, (1, 2, 6, 10))
        assert_allclose(out.data, 4.0)


class TestActivations(unittest.TestCase):
    def test_relu(self):
        assert_array_equal(F.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_sigmoid_is_finite_for_large_inputs(self):
        out = F.sigmoid(Tensor([-1000.0, 0.0, 1000.0])).data
        assert_allclose(out, [0.0, 0.5, 1.0])

    def test_softmax_sums_to_one(self):
        x = Tensor(np.random.default_rng(2).normal(size=(2, 4, 3, 3)) * 50)
        assert_allclose(F.softmax_channels(x).data.sum(axis=1), 1.0)

    def test_log_softmax_agrees_with_softmax(self):
        x = Tensor(np.random.default_rng(3).normal(size=(2, 3, 2, 2)))
        assert_allclose(np.exp(F.log_softmax_channels(x).data), F.softmax_channels(x).data)


class TestBatchNorm(unittest.TestCase):
    def setUp(self):
        self.x = np.random.default_rng(4).normal(loc=2.0, scale=3.0, size=(4, 2, 3, 3))
        self.gamma = Tensor(np.ones(2))
        self.beta = Tensor(np.zeros(2))

    def test_training_normalizes_and_updates_buffers(self):
        mean, var = np.zeros(2), np.ones(2)
        out = F.batchnorm2d(Tensor(self.x), self.gamma, self.beta, mean, var, training=True).data
        assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        assert_allclose(out.var(axis=(0, 2, 3)), 1.0, rtol=1e-4)
        assert_allclose(mean, 0.1 * self.x.mean(axis=(0, 2, 3)))
        assert_allclose(var, 0.9 + 0.1 * self.x.var(axis=(0, 2, 3), ddof=1))

    def test_eval_uses_running_statistics(self):
        mean, var = np.array([1.0, -1.0]), np.array([4.0, 0.25])
        out = F.batchnorm2d(Tensor(self.x), self.gamma, self.beta, mean, var, training=False).data
        expected = (self.x - mean.reshape(1, 2, 1, 1)) / np.sqrt(var.reshape(1, 2, 1, 1) + F.BN_EPS)
        assert_allclose(out, expected)
        assert_array_equal(mean, [1.0, -1.0])

    def test_training_output_follows_affine_parameters(self):
        x = np.random.default_rng(7).normal(loc=-3.0, scale=5.0, size=(16, 2, 16, 16))
        gamma, beta = Tensor(np.array([2.0, -0.5])), Tensor(np.array([1.0, 3.0]))
        out = F.batchnorm2d(Tensor(x), gamma, beta, np.zeros(2), np.ones(2), training=True).data
        assert_allclose(out.mean(axis=(0, 2, 3)), [1.0, 3.0], atol=1e-6)
        assert_allclose(out.std(axis=(0, 2, 3)), [2.0, 0.5], atol=1e-6)

    def test_parameter_length_checked(self):
        with self.assertRaises(ShapeError):
            F.batchnorm2d(Tensor(self.x), Tensor(np.ones(3)), self.beta, np.zeros(2), np.ones(2))


class TestChannelOps(unittest.TestCase):
    def test_conv1d_matches_reference(self):
        rng = np.random.default_rng(5)
        v, k = rng.normal(size=(3, 9)), rng.normal(size=5)
        assert_allclose(F.conv1d_channels(Tensor(v), Tensor(k)).data, F.conv1d_channels_reference(v, k))

    def test_conv1d_identity_and_boundary(self):
        ramp = Tensor(np.array([[1.0, 2.0, 3.0]]))
        assert_allclose(F.conv1d_channels(ramp, Tensor(np.array([0.0, 1.0, 0.0]))).data, ramp.data)
        # zero padding: 0 + 1 + 2 at the first position
        assert_allclose(F.conv1d_channels(ramp, Tensor(np.ones(3))).data, [[3.0, 6.0, 5.0]])

    def test_conv1d_even_kernel_rejected(self):
        with self.assertRaises(ShapeError):
            F.conv1d_channels(Tensor(np.zeros((1, 4))), Tensor(np.zeros(2)))

    def test_concat_order(self):
        a, b = np.zeros((1, 2, 2, 2)), np.ones((1, 3, 2, 2))
        out = F.concat_channels(Tensor(a), Tensor(b)).data
        self.assertEqual(out.shape, (1, 5, 2, 2))
        assert_array_equal(out[:, :2], 0.0)
        assert_array_equal(out[:, 2:], 1.0)

    def test_concat_spatial_mismatch(self):
        with self.assertRaises(ShapeError):
            F.concat_channels(Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.zeros((1, 2, 4, 4))))

    def test_add_weighted(self):
        a, b = np.full((1, 1, 2, 2), 2.0), np.full((1, 1, 2, 2), 4.0)
        out = F.add_weighted(Tensor(a), Tensor(b), Tensor(np.array(0.5)), Tensor(np.array(0.25)))
        assert_allclose(out.data, 2.0)

    def test_add_weighted_rejects_vector_weights(self):
        a = Tensor(np.zeros((1, 1, 2, 2)))
        with self.assertRaises(ShapeError):
            F.add_weighted(a, a, Tensor(np.ones(2)), Tensor(np.array(1.0)))

    def test_mul_channelwise_shape_checked(self):
        with self.assertRaises(ShapeError):
            F.mul_channelwise(Tensor(np.zeros((2, 3, 4, 4))), Tensor(np.zeros((2, 3))))

    def test_linear(self):
        rng = np.random.default_rng(6)
        v, w, b = rng.normal(size=(2, 4)), rng.normal(size=(3, 4)), rng.normal(size=3)
        assert_allclose(F.linear(Tensor(v), Tensor(w), Tensor(b)).data, v @ w.T + b)


if __name__ == '__main__':
    unittest.main()
