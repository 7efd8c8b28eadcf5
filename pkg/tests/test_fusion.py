import unittest

import numpy as np
from numpy.testing import assert_array_equal

from utils import functional as F
from utils.errors import ShapeError
from utils.fusion import (DownFuse, FeaturePyramid, FuseBlock, FusionMode, FusionModule, GroupFuseDown, GroupFuseUp,
                          ResampleMode, UpFuse, inverse_reorganize, reorganize)
from utils.tensor import Tensor, no_grad


def _pyramid(rng, channels, side, batch=1):
    levels = [Tensor(rng.normal(size=(batch, channels * 2 ** i, side // 2 ** i, side // 2 ** i)))
              for i in range(4)]
    return FeaturePyramid(levels)


class TestReorganize(unittest.TestCase):
    def test_index_formula(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 6, 4))
        out = reorganize(Tensor(x)).data
        self.assertEqual(out.shape, (2, 12, 3, 2))
        for c in range(3):
            for dy in range(2):
                for dx in range(2):
                    assert_array_equal(out[:, 4 * c + 2 * dy + dx], x[:, c, dy::2, dx::2])

    def test_bijection_is_exact(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            n, c = rng.integers(1, 3), rng.integers(1, 6)
            h, w = 2 * rng.integers(1, 6), 2 * rng.integers(1, 6)
            x = rng.normal(size=(n, c, h, w))
            assert_array_equal(inverse_reorganize(reorganize(Tensor(x))).data, x)
            y = rng.normal(size=(n, 4 * c, h, w))
            assert_array_equal(reorganize(inverse_reorganize(Tensor(y))).data, y)

    def test_odd_spatial_rejected(self):
        with self.assertRaises(ShapeError):
            reorganize(Tensor(np.zeros((1, 1, 3, 4))))

    def test_inverse_needs_multiple_of_four(self):
        with self.assertRaises(ShapeError):
            inverse_reorganize(Tensor(np.zeros((1, 6, 2, 2))))


class TestGroupFuse(unittest.TestCase):
    def _assert_isolated(self, module, in_per_group, out_per_group, channels, side):
        rng = np.random.default_rng(channels)
        x = rng.normal(size=(1, in_per_group * channels, side, side))
        base = module(Tensor(x)).data
        for g in (0, channels // 2, channels - 1):
            bumped = x.copy()
            bumped[:, g * in_per_group:(g + 1) * in_per_group] += 1.0
            delta = np.abs(module(Tensor(bumped)).data - base).sum(axis=(0, 2, 3))
            owned = np.zeros(delta.shape, dtype=bool)
            owned[g * out_per_group:(g + 1) * out_per_group] = True
            assert_array_equal(delta[~owned], 0.0)
            self.assertTrue(np.all(delta[owned] > 0.0))

    def test_down_groups_do_not_mix(self):
        for channels in (4, 8, 64):
            self._assert_isolated(GroupFuseDown(channels), 4, 2, channels, 4)

    def test_up_groups_do_not_mix(self):
        for channels in (4, 8, 64):
            self._assert_isolated(GroupFuseUp(channels), 2, 4, channels, 4)

    def test_down_group_sees_one_source_channel(self):
        fuse = DownFuse(4).resample
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 4, 8, 8))
        base = fuse(Tensor(x)).data
        bumped = x.copy()
        bumped[:, 2] += 1.0
        changed = np.abs(fuse(Tensor(bumped)).data - base).sum(axis=(0, 2, 3)) > 0
        assert_array_equal(np.flatnonzero(changed), [4, 5])

    def test_parameter_counts(self):
        c = 16
        self.assertEqual(GroupFuseDown(c).conv.weight.size, 2 * c * 4 * 9)
        self.assertEqual(GroupFuseUp(c).conv.weight.size, 4 * c * 2 * 9)
        self.assertEqual(sum(p.size for p in GroupFuseDown(64).parameters()), 4736)

    def test_wrong_channels(self):
        with self.assertRaises(ShapeError):
            GroupFuseDown(4)(Tensor(np.zeros((1, 12, 2, 2))))


class TestFuseUnits(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(4)

    def test_shapes(self):
        for mode in ResampleMode:
            shallow = Tensor(self.rng.normal(size=(2, 4, 8, 8)))
            deep = Tensor(self.rng.normal(size=(2, 8, 4, 4)))
            self.assertEqual(DownFuse(4, mode, self.rng)(shallow, deep).shape, deep.shape)
            self.assertEqual(UpFuse(4, mode, self.rng)(deep, shallow).shape, shallow.shape)

    def test_mix_weights_start_at_half(self):
        unit = DownFuse(4)
        self.assertEqual(unit.alpha.item(), 0.5)
        self.assertEqual(unit.beta.item(), 0.5)

    def test_down_fuse_ignores_shallow_input_when_alpha_is_zero(self):
        unit = DownFuse(4, rng=self.rng)
        unit.alpha.data = np.zeros_like(unit.alpha.data)
        shallow = Tensor(self.rng.normal(size=(2, 4, 8, 8)), requires_grad=True)
        deep = Tensor(self.rng.normal(size=(2, 8, 4, 4)), requires_grad=True)
        out = unit(shallow, deep)
        (out * Tensor(self.rng.normal(size=out.shape))).sum().backward()
        assert_array_equal(shallow.grad, 0.0)
        self.assertTrue(np.any(deep.grad != 0.0))
        other = unit(Tensor(self.rng.normal(size=(2, 4, 8, 8))), deep)
        assert_array_equal(other.data, out.data)

    def test_up_fuse_with_zero_mix_weights_zeroes_pre_attention_map(self):
        for mode in ResampleMode:
            unit = UpFuse(4, mode, self.rng)
            unit.alpha.data = np.zeros_like(unit.alpha.data)
            unit.beta.data = np.zeros_like(unit.beta.data)
            self.assertIsNone(unit.post.conv.bias)
            deep = Tensor(self.rng.normal(size=(2, 8, 4, 4)))
            shallow = Tensor(self.rng.normal(size=(2, 4, 8, 8)))
            mixed = F.add_weighted(unit.resample(deep), shallow, unit.alpha, unit.beta)
            assert_array_equal(unit.post(mixed).data, 0.0)
            assert_array_equal(unit(deep, shallow).data, 0.0)

    def test_non_adjacent_levels_rejected(self):
        shallow = Tensor(np.zeros((1, 4, 8, 8)))
        with self.assertRaises(ShapeError):
            DownFuse(4)(shallow, Tensor(np.zeros((1, 8, 2, 2))))
        with self.assertRaises(ShapeError):
            UpFuse(4)(Tensor(np.zeros((1, 4, 4, 4))), shallow)

    def test_pool_conv_has_more_parameters(self):
        for c in (8, 16, 64):
            reorganize_count = sum(p.size for p in DownFuse(c).resample.parameters())
            pool_count = sum(p.size for p in DownFuse(c, ResampleMode.POOL_CONV).resample.parameters())
            self.assertLess(reorganize_count, pool_count)


class TestFuseSchedule(unittest.TestCase):
    """Which output levels react to a change in which input levels."""

    def _sensitivity(self, mode):
        rng = np.random.default_rng(5)
        block = FuseBlock(2, mode, rng=rng).eval()
        pyramid = _pyramid(rng, 2, 16)
        with no_grad():
            base = [t.data.copy() for t in block(pyramid).t]
            reach = np.zeros((4, 4), dtype=bool)
            for j in range(4):
                levels = list(pyramid.t)
                levels[j] = Tensor(levels[j].data + rng.normal(size=levels[j].shape))
                out = block(FeaturePyramid(levels)).t
                for i in range(4):
                    reach[i, j] = not np.array_equal(out[i].data, base[i])
        return reach

    def test_both_rounds_connect_every_level(self):
        self.assertTrue(self._sensitivity(FusionMode.BOTH).all())

    def test_down_only_leaves_shallowest_level(self):
        reach = self._sensitivity(FusionMode.DOWN_ONLY)
        assert_array_equal(reach[0], [True, False, False, False])
        self.assertTrue(reach[3].all())
        # deeper levels never flow upward
        self.assertFalse(reach[1, 2] or reach[1, 3] or reach[2, 3])

    def test_up_only_leaves_deepest_level(self):
        reach = self._sensitivity(FusionMode.UP_ONLY)
        assert_array_equal(reach[3], [False, False, False, True])
        self.assertTrue(reach[0].all())
        self.assertFalse(reach[2, 0] or reach[2, 1] or reach[1, 0])

    def test_bottleneck_passes_through(self):
        rng = np.random.default_rng(6)
        pyramid = _pyramid(rng, 2, 16)
        pyramid.bottleneck = Tensor(rng.normal(size=(1, 32, 1, 1)))
        self.assertIs(FuseBlock(2, rng=rng)(pyramid).bottleneck, pyramid.bottleneck)


class TestFusionModule(unittest.TestCase):
    def test_none_is_identity(self):
        rng = np.random.default_rng(7)
        module = FusionModule(2, FusionMode.NONE, stack=3)
        self.assertEqual(module.blocks, [])
        self.assertEqual(module.parameters(), [])
        pyramid = _pyramid(rng, 2, 16)
        out = module(pyramid)
        for a, b in zip(out.t, pyramid.t):
            self.assertIs(a, b)

    def test_stack_depth(self):
        module = FusionModule(2, FusionMode.BOTH, stack=2)
        self.assertEqual(len(module.blocks), 2)
        out = module(_pyramid(np.random.default_rng(8), 2, 16, batch=2))
        self.assertEqual(out.shapes, [(2, 2, 16, 16), (2, 4, 8, 8), (2, 8, 4, 4), (2, 16, 2, 2)])

    def test_pyramid_validation(self):
        rng = np.random.default_rng(9)
        levels = _pyramid(rng, 2, 16).t
        with self.assertRaises(ShapeError):
            FeaturePyramid(levels[:3])
        with self.assertRaises(ShapeError):
            FeaturePyramid([levels[0], levels[2], levels[1], levels[3]])


if __name__ == '__main__':
    unittest.main()
