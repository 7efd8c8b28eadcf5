import tempfile
import unittest
from pathlib import Path

import numpy as np
from numpy.testing import assert_array_equal

from utils.cost import CostCounter
from utils.errors import CheckpointError, ConfigError, ShapeError
from utils.fusion import FusionMode, ResampleMode
from utils.model import FusionConfig, build, load_checkpoint, load_weights, save_checkpoint
from utils.tensor import Tensor, no_grad


def _tiny(**overrides):
    return FusionConfig(**{"base_width": 4, "input_side": 32, **overrides})


class TestFusionConfig(unittest.TestCase):
    def test_defaults_are_full_scale(self):
        config = FusionConfig()
        self.assertEqual((config.base_width, config.input_side), (64, 224))
        self.assertEqual(config.widths(), [64, 128, 256, 512, 1024])

    def test_presets(self):
        self.assertEqual(FusionConfig.preset("desk").base_width, 16)
        self.assertEqual(FusionConfig.preset("desk").precision, "float32")
        self.assertEqual(FusionConfig.preset("paper").precision, "float64")
        self.assertEqual(FusionConfig.preset("paper", n_classes=3).n_classes, 3)
        with self.assertRaises(ConfigError):
            FusionConfig.preset("huge")

    def test_invalid_values(self):
        for bad in (dict(input_side=40), dict(base_width=6), dict(n_classes=1), dict(fusion_mode="sideways"),
                    dict(resample_mode="nearest"), dict(fuse_stack=0), dict(precision="float16")):
            with self.assertRaises(ConfigError, msg=str(bad)):
                _tiny(**bad)

    def test_dict_round_trip(self):
        config = _tiny(fusion_mode="up_only", resample_mode="pool_conv")
        self.assertIs(config.fusion_mode, FusionMode.UP_ONLY)
        self.assertEqual(FusionConfig.from_dict(config.to_dict()), config)
        self.assertEqual(config.to_dict()["resample_mode"], "pool_conv")

    def test_unknown_keys(self):
        with self.assertRaises(ConfigError):
            FusionConfig.from_dict({"base_width": 4, "depth": 5})


class TestFusionUNet(unittest.TestCase):
    def test_forward_shape(self):
        model = build(_tiny(n_classes=3))
        x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 32, 32)))
        with no_grad():
            self.assertEqual(model(x).shape, (2, 3, 32, 32))

    def test_pyramid_shapes(self):
        shapes = build(_tiny()).pyramid_shapes(batch=2)
        self.assertEqual(shapes, [(2, 4, 32, 32), (2, 8, 16, 16), (2, 16, 8, 8), (2, 32, 4, 4), (2, 64, 2, 2)])

    def test_wrong_input_shape(self):
        model = build(_tiny())
        with self.assertRaises(ShapeError):
            model(Tensor(np.zeros((1, 3, 16, 16))))
        with self.assertRaises(ShapeError):
            model(Tensor(np.zeros((1, 1, 32, 32))))

    def test_build_is_deterministic(self):
        a, b = build(_tiny(), seed=7), build(_tiny(), seed=7)
        for x, y in zip(a.state_arrays(), b.state_arrays()):
            assert_array_equal(x, y)
        c = build(_tiny(), seed=8)
        self.assertFalse(np.array_equal(a.stem.first.conv.weight.data, c.stem.first.conv.weight.data))

    def test_single_precision_build(self):
        model = build(_tiny(precision="float32"))
        self.assertEqual(model.dtype, np.float32)
        self.assertTrue(all(a.dtype == np.float32 for a in model.state_arrays()))
        with no_grad():
            out = model(Tensor(np.zeros((1, 3, 32, 32))))
        self.assertEqual(out.dtype, np.float32)

    def test_fusion_arms_change_parameter_count(self):
        counts = {mode: sum(p.size for p in build(_tiny(base_width=8, fusion_mode=mode)).parameters())
                  for mode in FusionMode}
        self.assertLess(counts[FusionMode.NONE], counts[FusionMode.DOWN_ONLY])
        self.assertLess(counts[FusionMode.DOWN_ONLY], counts[FusionMode.BOTH])
        pool = build(_tiny(base_width=8, resample_mode=ResampleMode.POOL_CONV))
        self.assertGreater(sum(p.size for p in pool.parameters()), counts[FusionMode.BOTH])

    def test_gradients_reach_every_parameter(self):
        model = build(_tiny())
        x = Tensor(np.random.default_rng(1).normal(size=(2, 3, 32, 32)))
        (model(x) * Tensor(np.random.default_rng(2).normal(size=(2, 2, 32, 32)))).sum().backward()
        for name, p in model.named_parameters():
            self.assertIsNotNone(p.grad, name)


class TestShapeContract(unittest.TestCase):
    """Shape-only passes over every width, side and arm; no forward pass runs."""

    def test_every_width_side_and_arm(self):
        for width in (8, 16, 64):
            for fusion in FusionMode:
                for resample in ResampleMode:
                    model = build(FusionConfig(base_width=width, input_side=224, fusion_mode=fusion,
                                               resample_mode=resample, precision="float32"))
                    for side in (32, 64, 224):
                        with self.subTest(width=width, side=side, fusion=fusion.value, resample=resample.value):
                            counter = CostCounter()
                            levels = [model.stem.profile(counter, (2, 3, side, side))]
                            for block in model.down:
                                levels.append(block.profile(counter, levels[-1]))
                            expected = [(2, width * 2 ** i, side // 2 ** i, side // 2 ** i) for i in range(5)]
                            self.assertEqual(levels, expected)
                            self.assertEqual(model.fusion.profile(counter, levels[:4]), expected[:4])
                            self.assertEqual(model.profile(CostCounter(), (2, 3, side, side)), (2, 2, side, side))
                    self.assertEqual(model.pyramid_shapes(), [(1, width * 2 ** i, 224 // 2 ** i, 224 // 2 ** i)
                                                              for i in range(5)])


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / "model.funw"

    def test_round_trip_reproduces_outputs(self):
        model = build(_tiny(), seed=3).eval()
        model.down[0].block.first.norm.running_mean += 0.25
        save_checkpoint(model, self.path)
        restored = load_checkpoint(self.path).eval()
        x = Tensor(np.random.default_rng(4).normal(size=(1, 3, 32, 32)))
        with no_grad():
            assert_array_equal(model(x).data, restored(x).data)

    def test_expected_config_mismatch(self):
        save_checkpoint(build(_tiny()), self.path)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path, expected=_tiny(fusion_mode="none"))
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path, expected=_tiny(precision="float32"))

    def test_load_weights_into_other_architecture(self):
        save_checkpoint(build(_tiny()), self.path)
        with self.assertRaises(CheckpointError):
            load_weights(build(_tiny(resample_mode="pool_conv")), self.path)

    def test_corrupt_file(self):
        save_checkpoint(build(_tiny()), self.path)
        self.path.write_bytes(self.path.read_bytes()[:-10])
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)


if __name__ == '__main__':
    unittest.main()
