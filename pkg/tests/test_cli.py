import contextlib
import io
import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from fusion_unet_cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, build_parser, main
from tools.gradient_auditor import AuditResult
from utils.errors import NumericalError

TINY = {
    "model": {"base_width": 4, "input_side": 32},
    "train": {"epochs": 1, "batch_size": 2, "T_0": 1.0},
    "data": {"side": 32, "n_train": 2, "n_val": 2, "n_test": 2},
}


@mock.patch.dict(os.environ, {"FUSION_UNET_PROGRESS": "0", "FUSION_UNET_LOG_LEVEL": "WARNING"})
class TestCli(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)
        self.config = self.root / "run.json"
        self.config.write_text(json.dumps(TINY))

    def _main(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            try:
                code = main(list(argv))
            except SystemExit as e:
                code = e.code
        return code, out.getvalue(), err.getvalue()

    def test_unknown_flag_exits_usage(self):
        code, _, err = self._main("--bogus", "info")
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("usage", err)

    def test_missing_subcommand(self):
        self.assertEqual(self._main()[0], EXIT_USAGE)

    def test_bad_subcommand_choice(self):
        self.assertEqual(self._main("ablate", "--arms", "sideways")[0], EXIT_USAGE)

    def test_bad_log_level(self):
        self.assertEqual(self._main("--log-level", "chatty", "info", "--preset", "desk")[0], EXIT_USAGE)

    def test_info(self):
        code, out, _ = self._main("--out-dir", str(self.root / "info"), "info", "--preset", "desk")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("MODEL COST REPORT", out)
        saved = json.loads((self.root / "info" / "info.json").read_text())
        self.assertEqual(saved["model"]["config"]["base_width"], 16)

    def test_invalid_config_exits_usage(self):
        bad = self.root / "bad.json"
        bad.write_text(json.dumps({"model": {"depth": 9}}))
        self.assertEqual(self._main("--config", str(bad), "train")[0], EXIT_USAGE)
        self.assertEqual(self._main("--config", str(self.root / "missing.json"), "train")[0], EXIT_USAGE)
        bad.write_text("{not json")
        self.assertEqual(self._main("--config", str(bad), "gen-data")[0], EXIT_USAGE)

    def test_gen_data_then_train_then_eval(self):
        data_dir = self.root / "data"
        code, out, _ = self._main("--config", str(self.config), "--out-dir", str(data_dir), "gen-data", "--count", "3")
        self.assertEqual(code, EXIT_OK)
        self.assertTrue((data_dir / "manifest.json").exists())

        run_dir = self.root / "run"
        code, out, _ = self._main("--config", str(self.config), "--out-dir", str(run_dir), "train")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("TRAINING REPORT", out)

        code, out, _ = self._main("--config", str(self.config), "--out-dir", str(self.root / "ev"), "eval",
                                  str(run_dir / "best.funw"))
        self.assertEqual(code, EXIT_OK)
        self.assertIn("Dice", out)
        self.assertTrue((self.root / "ev" / "eval.json").exists())

    def test_corrupt_checkpoint_exits_usage(self):
        (self.root / "bad.funw").write_bytes(b"FUNW\x01")
        self.assertEqual(self._main("eval", str(self.root / "bad.funw"))[0], EXIT_USAGE)

    def test_zero_count(self):
        self.assertEqual(self._main("--config", str(self.config), "gen-data", "--count", "0")[0], EXIT_USAGE)

    def test_failed_audit_exits_numeric(self):
        failing = ([AuditResult("conv", 0.5, 0.0)], [])
        with mock.patch("fusion_unet_cli.GradientAuditor.run", return_value=failing):
            code, out, _ = self._main("gradcheck")
        self.assertEqual(code, EXIT_NUMERIC)
        self.assertIn("AUDIT FAILED", out)

    def test_training_divergence_exits_numeric(self):
        with mock.patch("fusion_unet_cli.train_from_config", side_effect=NumericalError("loss became nan")):
            code, _, _ = self._main("--config", str(self.config), "train")
        self.assertEqual(code, EXIT_NUMERIC)

    def test_parser_defaults(self):
        args = build_parser().parse_args(["crossval"])
        self.assertEqual((args.folds, args.repeats), (5, 1))
        self.assertIsNone(args.config)

    def test_shared_flags_before_or_after_subcommand(self):
        parser = build_parser()
        self.assertEqual(parser.parse_args(["--seed", "3", "train"]).seed, 3)
        self.assertEqual(parser.parse_args(["train", "--seed", "3"]).seed, 3)
        self.assertEqual(parser.parse_args(["--seed", "3", "train", "--seed", "5"]).seed, 5)
        args = parser.parse_args(["--config", "a.json", "eval", "m.funw", "--out-dir", "ev"])
        self.assertEqual((args.config, args.out_dir, args.checkpoint), ("a.json", "ev", "m.funw"))
        self.assertIsNone(parser.parse_args(["gradcheck"]).seed)

    def test_train_seed_after_subcommand_is_repeatable(self):
        first, second = self.root / "first", self.root / "second"
        code, _, err = self._main("--config", str(self.config), "--out-dir", str(first), "train", "--seed", "1")
        self.assertEqual(code, EXIT_OK, err)
        code, _, err = self._main("train", "--config", str(self.config), "--out-dir", str(second), "--seed", "1")
        self.assertEqual(code, EXIT_OK, err)
        self.assertEqual((first / "metrics.csv").read_bytes(), (second / "metrics.csv").read_bytes())


if __name__ == '__main__':
    unittest.main()
