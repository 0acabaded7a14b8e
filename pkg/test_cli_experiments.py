"""
End-to-end tests for the experiment CLI on a tiny synthetic configuration.
"""

import json
import shutil
import sys
import tempfile
import unittest
from pathlib import Path

import pandas as pd
from click.testing import CliRunner

# Add project root to path
sys.path.insert(0, '.')

from main import cli
from src.experiments import load_experiment_config, resolved_json
from src.utils.checkpoint import CHECKPOINT_MAGIC
from src.utils.errors import ConfigError, DataError, FormatError, NumericError, exit_code_for
from src.utils.feature_dump import read_feature_dump

TINY_CONFIG = {
    "model": "mini3",
    "dataset": {"name": "synthetic", "classes": 3, "per_class": 8, "test_per_class": 4},
    "train": {"lambda": 1.0, "epochs": 1, "batch_size": 8, "lr_initial": 0.05, "lr_drop_epochs": [], "seed": 0},
    "augmentation": {"enabled": False},
    "eval_batch_size": 12,
}


def write_config(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


class CliCase(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.root = Path(tempfile.mkdtemp(prefix="decorr-cli-"))
        cls.config = write_config(cls.root / "tiny.json", TINY_CONFIG)
        cls.runner = CliRunner()
        cls.run_dir = cls.root / "run"
        result = cls.runner.invoke(cli, ["--config", cls.config, "--out", str(cls.run_dir), "train"])
        if result.exit_code != 0:
            raise AssertionError(f"training failed ({result.exit_code}): {result.output}") from result.exception
        cls.checkpoint = str(cls.run_dir / "model.mfdckpt")

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.root, ignore_errors=True)

    def invoke(self, *args):
        return self.runner.invoke(cli, list(args))

    def assertExit(self, result, code):
        self.assertEqual(result.exit_code, code, msg=result.output)


class TestTrainCommand(CliCase):

    def test_artifacts(self):
        metrics = pd.read_csv(self.run_dir / "metrics.csv")
        self.assertEqual(list(metrics["split"]), ["train", "test"])
        for column in ["epoch", "softmax_loss", "total_loss", "accuracy", "wall_seconds",
                       "mfd_stage_0", "mfd_stage_2", "meanabscorr_stage_1"]:
            self.assertIn(column, metrics.columns)
        self.assertEqual((self.run_dir / "model.mfdckpt").read_bytes()[:8], CHECKPOINT_MAGIC)
        self.assertTrue((self.run_dir / "config.resolved.json").is_file())

    def test_resolved_config_reproduces_run(self):
        resolved = load_experiment_config(self.run_dir / "config.resolved.json")
        direct = load_experiment_config(self.config, {"output_dir": str(self.run_dir)})
        self.assertEqual(resolved_json(resolved), resolved_json(direct))

    def test_repeats_write_summary(self):
        out = self.root / "repeats"
        result = self.invoke("--config", self.config, "--out", str(out), "--repeats", "2", "train")
        self.assertExit(result, 0)
        self.assertTrue((out / "repeat_0" / "metrics.csv").is_file())
        seed = json.loads((out / "repeat_1" / "config.resolved.json").read_text())["train"]["seed"]
        self.assertEqual(seed, 1)
        summary = pd.read_csv(out / "summary.csv")
        self.assertEqual(int(summary["repeats"][0]), 2)
        self.assertIn("accuracy_mean", summary.columns)
        self.assertIn("accuracy_std", summary.columns)
        self.assertIn("meanabscorr_stage_0_mean", summary.columns)

    def test_identical_invocations_write_identical_artifacts(self):
        out = self.root / "again"
        self.assertExit(self.invoke("--config", self.config, "--out", str(out), "train"), 0)
        first = pd.read_csv(self.run_dir / "metrics.csv").drop(columns="wall_seconds")
        second = pd.read_csv(out / "metrics.csv").drop(columns="wall_seconds")
        pd.testing.assert_frame_equal(first, second, check_exact=True)
        self.assertEqual((out / "model.mfdckpt").read_bytes(), (self.run_dir / "model.mfdckpt").read_bytes())

    def test_unknown_key_is_config_error(self):
        bad = dict(TINY_CONFIG, train={"lamda": 1.0})
        path = write_config(self.root / "bad.json", bad)
        self.assertExit(self.invoke("--config", path, "--out", str(self.root / "bad"), "train"), 2)

    def test_invalid_json_is_config_error(self):
        path = self.root / "broken.json"
        path.write_text("{ not json", encoding="utf-8")
        self.assertExit(self.invoke("--config", str(path), "train"), 2)

    def test_missing_dataset_is_data_error(self):
        mnist = dict(TINY_CONFIG, dataset={"name": "mnist", "data_dir": str(self.root / "no-such-dir")})
        path = write_config(self.root / "mnist.json", mnist)
        self.assertExit(self.invoke("--config", path, "--out", str(self.root / "mnist"), "train"), 3)


class TestCheckpointCommands(CliCase):

    def test_eval_reproduces_final_test_row(self):
        out = self.root / "eval"
        self.assertExit(self.invoke("--out", str(out), "eval", "--checkpoint", self.checkpoint), 0)
        evaluated = pd.read_csv(out / "eval.csv")
        final = pd.read_csv(self.run_dir / "metrics.csv").iloc[-1]
        self.assertEqual(evaluated["accuracy"][0], final["accuracy"])
        self.assertAlmostEqual(evaluated["softmax_loss"][0], final["softmax_loss"], places=9)

    def test_corr_report(self):
        out = self.root / "corr"
        result = self.invoke("--out", str(out), "corr-report", "--checkpoint", self.checkpoint, "--stages", "0,2")
        self.assertExit(result, 0)
        report = pd.read_csv(out / "corr_report.csv")
        self.assertEqual(list(report["stage"]), [0, 2])
        self.assertEqual(list(report["channels"]), [8, 32])
        self.assertEqual(list(report["split"]), ["test", "test"])
        self.assertTrue(((report["mean_abs_corr"] >= 0) & (report["mean_abs_corr"] <= 1)).all())

    def test_corr_report_unknown_stage(self):
        result = self.invoke("--out", str(self.root / "x"), "corr-report", "--checkpoint", self.checkpoint,
                             "--stages", "9")
        self.assertExit(result, 2)

    def test_dump_features(self):
        out = self.root / "dump"
        result = self.invoke("--out", str(out), "dump-features", "--checkpoint", self.checkpoint,
                             "--stage", "0", "--samples", "2", "--max-channels", "2")
        self.assertExit(result, 0)
        dump = read_feature_dump(out / "features_stage0.mfdfmap")
        self.assertEqual(dump.stage_id, 0)
        self.assertEqual(dump.values.shape, (2, 8, 16, 16))
        images = sorted((out / "features_stage0_pgm").glob("*.pgm"))
        self.assertEqual([p.name for p in images], [
            "sample000_channel000.pgm", "sample000_channel001.pgm",
            "sample001_channel000.pgm", "sample001_channel001.pgm",
        ])
        self.assertTrue(images[0].read_bytes().startswith(b"P5"))

    def test_dump_features_without_pgm(self):
        out = self.root / "dump-raw"
        result = self.invoke("--out", str(out), "dump-features", "--checkpoint", self.checkpoint,
                             "--stage", "1", "--samples", "1", "--no-pgm")
        self.assertExit(result, 0)
        self.assertEqual(read_feature_dump(out / "features_stage1.mfdfmap").values.shape, (1, 16, 8, 8))
        self.assertFalse((out / "features_stage1_pgm").exists())

    def test_missing_checkpoint(self):
        result = self.invoke("--config", self.config, "eval", "--checkpoint", str(self.root / "none.mfdckpt"))
        self.assertExit(result, 3)

    def test_model_mismatch(self):
        path = write_config(self.root / "mini5.json", dict(TINY_CONFIG, model="mini5"))
        result = self.invoke("--config", path, "--out", str(self.root / "m5"), "eval", "--checkpoint", self.checkpoint)
        self.assertExit(result, 2)


class TestLambdaSweep(CliCase):

    def test_sweep_with_baseline(self):
        out = self.root / "sweep"
        result = self.invoke("--config", self.config, "--out", str(out), "lambda-sweep",
                             "--lambdas", "0.5", "--include-baseline")
        self.assertExit(result, 0)
        frame = pd.read_csv(out / "lambda_sweep.csv")
        self.assertEqual(list(frame["lambda"]), [0.0, 0.5])
        self.assertIn("accuracy_mean", frame.columns)
        self.assertIn("meanabscorr_stage_0_mean", frame.columns)
        self.assertTrue((out / "lambda_0" / "metrics.csv").is_file())
        self.assertTrue((out / "lambda_0.5" / "model.mfdckpt").is_file())

    def test_invalid_lambda_lists(self):
        out = str(self.root / "sweep-bad")
        self.assertExit(self.invoke("--config", self.config, "--out", out, "lambda-sweep", "--lambdas", "1,1"), 2)
        self.assertExit(self.invoke("--config", self.config, "--out", out, "lambda-sweep", "--lambdas", "1"), 2)
        self.assertExit(self.invoke("--config", self.config, "--out", out, "lambda-sweep", "--lambdas", "a,b"), 2)

    def test_heavy_penalty_costs_accuracy(self):
        out = self.root / "sweep-synthetic"
        config = str(Path(__file__).resolve().parent / "configs" / "synthetic_mini3.json")
        result = self.invoke("--config", config, "--out", str(out), "--repeats", "3", "lambda-sweep",
                             "--lambdas", "0.01,1,100")
        self.assertExit(result, 0)
        frame = pd.read_csv(out / "lambda_sweep.csv").set_index("lambda")
        self.assertEqual(list(frame.index), [0.01, 1.0, 100.0])
        self.assertLess(frame.loc[100.0, "accuracy_mean"], frame.loc[1.0, "accuracy_mean"])


class TestConfigResolution(unittest.TestCase):

    def test_overrides_win(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(Path(tmp) / "c.json", TINY_CONFIG)
            experiment = load_experiment_config(path, {"train.seed": 5, "repeats": 3, "train.precision": "f32"})
        self.assertEqual(experiment.train.seed, 5)
        self.assertEqual(experiment.repeats, 3)
        self.assertEqual(experiment.train.precision, "f32")
        self.assertEqual(experiment.train.lambda_, 1.0)

    def test_error_names_key_path(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_config(Path(tmp) / "c.json", dict(TINY_CONFIG, train={"lamda": 1.0}))
            with self.assertRaises(ConfigError) as ctx:
                load_experiment_config(path)
        self.assertIn("train.lamda", str(ctx.exception))

    def test_exit_codes(self):
        self.assertEqual(exit_code_for(ConfigError("x")), 2)
        self.assertEqual(exit_code_for(DataError("x")), 3)
        self.assertEqual(exit_code_for(FileNotFoundError("x")), 3)
        self.assertEqual(exit_code_for(NumericError("x", op="add")), 4)
        self.assertEqual(exit_code_for(FormatError("x")), 1)
        self.assertEqual(exit_code_for(RuntimeError("x")), 1)


if __name__ == "__main__":
    unittest.main(verbosity=2)
