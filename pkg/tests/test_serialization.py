import io
import struct
import tempfile
import unittest
from pathlib import Path

import numpy as np
from numpy.testing import assert_array_equal

from utils.errors import CheckpointError
from utils.serialization import (decode_checkpoint, encode_checkpoint, load_tensor, read_checkpoint, read_tensor,
                                 save_tensor, write_tensor)


class TestTensorRecord(unittest.TestCase):
    def test_header_layout(self):
        buffer = io.BytesIO()
        write_tensor(buffer, np.zeros((2, 3), dtype=np.float32))
        raw = buffer.getvalue()
        self.assertEqual(raw[:4], b"FTEN")
        self.assertEqual(struct.unpack('<III', raw[4:16]), (1, 1, 2))
        self.assertEqual(struct.unpack('<2Q', raw[16:32]), (2, 3))
        self.assertEqual(len(raw), 32 + 6 * 4)

    def test_dtypes_and_scalars_survive(self):
        rng = np.random.default_rng(0)
        for array in (rng.normal(size=(2, 3, 4)).astype(np.float32), rng.normal(size=5),
                      np.arange(7, dtype=np.int64), np.array(3.25)):
            buffer = io.BytesIO()
            write_tensor(buffer, array)
            buffer.seek(0)
            back = read_tensor(buffer)
            self.assertEqual(back.dtype, array.dtype)
            assert_array_equal(back, array)

    def test_unsupported_dtype(self):
        with self.assertRaises(CheckpointError):
            write_tensor(io.BytesIO(), np.zeros(2, dtype=np.uint8))

    def test_bad_magic(self):
        with self.assertRaises(CheckpointError):
            read_tensor(io.BytesIO(b"NOPE" + bytes(12)))

    def test_unknown_dtype_tag(self):
        with self.assertRaises(CheckpointError):
            read_tensor(io.BytesIO(b"FTEN" + struct.pack('<III', 1, 9, 0)))

    def test_truncated_values(self):
        buffer = io.BytesIO()
        write_tensor(buffer, np.ones(4))
        with self.assertRaises(CheckpointError):
            read_tensor(io.BytesIO(buffer.getvalue()[:-3]))

    def test_file_helpers(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "x.ften"
            save_tensor(np.eye(3), path)
            assert_array_equal(load_tensor(path), np.eye(3))


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.config = {"base_channels": 4, "mode": "both"}
        self.arrays = [np.arange(6.0).reshape(2, 3), np.ones(4, dtype=np.float32)]
        self.blob = encode_checkpoint(self.config, self.arrays)

    def test_round_trip(self):
        config, arrays = decode_checkpoint(self.blob)
        self.assertEqual(config, self.config)
        self.assertEqual(len(arrays), 2)
        for back, array in zip(arrays, self.arrays):
            self.assertEqual(back.dtype, array.dtype)
            assert_array_equal(back, array)

    def test_every_truncation_is_rejected(self):
        for cut in (0, 3, 7, 12, len(self.blob) // 2, len(self.blob) - 1):
            with self.assertRaises(CheckpointError, msg=f"cut at {cut}"):
                decode_checkpoint(self.blob[:cut])

    def test_wrong_magic(self):
        with self.assertRaises(CheckpointError):
            decode_checkpoint(b"XXXX" + self.blob[4:])

    def test_wrong_version(self):
        with self.assertRaises(CheckpointError):
            decode_checkpoint(self.blob[:4] + struct.pack('<I', 2) + self.blob[8:])

    def test_trailing_bytes(self):
        with self.assertRaises(CheckpointError):
            decode_checkpoint(self.blob + b"\x00")

    def test_config_must_be_json(self):
        blob = b"FUNW" + struct.pack('<II', 1, 3) + b"{{{" + struct.pack('<I', 0)
        with self.assertRaises(CheckpointError):
            decode_checkpoint(blob)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            read_checkpoint("/nonexistent/model.funw")


if __name__ == '__main__':
    unittest.main()
