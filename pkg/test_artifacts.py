"""
Tests for the feature-map dump container, PGM export and the CSV
artifact helpers.
"""

import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.testing import assert_array_equal
from PIL import Image

# Add project root to path
sys.path.insert(0, '.')

from src.models.spec_schema import MetricsRecord
from src.utils.artifacts import atomic_write_text, final_test_row, metrics_frame, summarize, write_metrics_csv
from src.utils.errors import FormatError
from src.utils.feature_dump import (
    FEATURE_MAGIC,
    FeatureDump,
    decode_feature_dump,
    encode_feature_dump,
    export_pgm,
    read_feature_dump,
    to_grayscale,
    write_feature_dump,
)


def record(epoch, split, accuracy, corr):
    return MetricsRecord(
        epoch=epoch, split=split, softmax_loss=1.0, total_loss=1.5, accuracy=accuracy,
        mfd_loss_per_stage={s: 0.1 for s in corr}, mean_abs_corr_per_stage=corr, wall_seconds=0.2,
    )


class TestFeatureDump(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_header_layout(self):
        values = np.random.default_rng(0).normal(size=(4, 8, 16, 16))
        data = encode_feature_dump(FeatureDump(stage_id=0, values=values))
        self.assertEqual(data[:8], FEATURE_MAGIC)
        header = np.frombuffer(data, dtype="<u4", count=5, offset=8)
        assert_array_equal(header, [0, 4, 8, 16, 16])
        self.assertEqual(len(data), 8 + 20 + 4 * 8 * 16 * 16 * 4)

    def test_file_round_trip_is_bit_exact(self):
        rng = np.random.default_rng(1)
        for index in range(10):
            shape = tuple(rng.integers(1, 5, size=4))
            dump = FeatureDump(stage_id=index, values=rng.normal(size=shape))
            path = write_feature_dump(self.dir / f"d{index}.mfdfmap", dump)
            restored = read_feature_dump(path)
            self.assertEqual(restored.stage_id, index)
            assert_array_equal(restored.values, dump.values)
            self.assertEqual(encode_feature_dump(restored), path.read_bytes())

    def test_malformed(self):
        data = encode_feature_dump(FeatureDump(stage_id=1, values=np.ones((1, 2, 2, 2))))
        with self.assertRaises(FormatError):
            decode_feature_dump(b"MFDCKPT1" + data[8:])
        with self.assertRaises(FormatError):
            decode_feature_dump(data[:-4])
        with self.assertRaises(FormatError):
            decode_feature_dump(data[:10])
        with self.assertRaises(FormatError):
            FeatureDump(stage_id=0, values=np.ones((2, 2)))

    def test_grayscale_scaling(self):
        gray = to_grayscale(np.array([[0.0, 0.5], [1.0, 0.25]]))
        assert_array_equal(gray, [[0, 128], [255, 64]])
        assert_array_equal(to_grayscale(np.zeros((3, 3))), np.full((3, 3), 128))

    def test_pgm_export(self):
        values = np.zeros((1, 3, 4, 5))
        values[0, 1] = np.arange(20).reshape(4, 5)
        files = export_pgm(FeatureDump(stage_id=2, values=values), self.dir / "pgm", max_channels=2)
        self.assertEqual([p.name for p in files], ["sample000_channel000.pgm", "sample000_channel001.pgm"])
        self.assertTrue(files[0].read_bytes().startswith(b"P5"))
        with Image.open(files[0]) as image:
            self.assertEqual(image.size, (5, 4))
            assert_array_equal(np.asarray(image), np.full((4, 5), 128))
        with Image.open(files[1]) as image:
            pixels = np.asarray(image)
        self.assertEqual((pixels.min(), pixels.max()), (0, 255))


class TestCsvArtifacts(unittest.TestCase):

    def setUp(self):
        self.records = [
            record(0, "train", 0.5, {0: 0.4, 1: 0.3}),
            record(0, "test", 0.6, {0: 0.35, 1: 0.25}),
        ]

    def test_metrics_columns(self):
        frame = metrics_frame(self.records)
        self.assertEqual(list(frame.columns), [
            "epoch", "split", "softmax_loss", "total_loss", "accuracy", "wall_seconds",
            "mfd_stage_0", "mfd_stage_1", "meanabscorr_stage_0", "meanabscorr_stage_1",
        ])
        self.assertEqual(list(frame["split"]), ["train", "test"])

    def test_metrics_csv_and_atomic_write(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_metrics_csv(Path(tmp) / "nested" / "metrics.csv", self.records)
            frame = pd.read_csv(path)
            atomic_write_text(path, "replaced\n")
            self.assertEqual(path.read_text(), "replaced\n")
            self.assertEqual(sorted(p.name for p in path.parent.iterdir()), ["metrics.csv"])
        self.assertEqual(len(frame), 2)
        self.assertAlmostEqual(frame["meanabscorr_stage_1"][1], 0.25)

    def test_final_test_row(self):
        row = final_test_row(self.records)
        self.assertEqual(row, {
            "accuracy": 0.6, "softmax_loss": 1.0, "meanabscorr_stage_0": 0.35, "meanabscorr_stage_1": 0.25,
        })
        self.assertEqual(final_test_row(self.records[:1]), {})

    def test_summarize(self):
        summary = summarize([{"accuracy": 0.5}, {"accuracy": 0.7}, {"accuracy": 0.6}])
        self.assertEqual(summary["repeats"], 3)
        self.assertAlmostEqual(summary["accuracy_mean"], 0.6)
        self.assertAlmostEqual(summary["accuracy_std"], np.std([0.5, 0.7, 0.6]))


if __name__ == "__main__":
    unittest.main(verbosity=2)
