"""HIFT container, checkpoints, and PNM frame IO."""

import json
import struct

import numpy as np
import pytest

from hif import hift
from hif import pnm


class TestHiftContainer:
    def test_header_layout(self):
        arr = np.arange(6, dtype=np.float32).reshape(2, 3)
        buf = hift.tensor_to_bytes(arr)
        assert buf[:4] == b"HIFT"
        assert buf[4] == 1  # version
        assert buf[5] == 0  # float32
        assert buf[6] == 2  # rank
        assert struct.unpack_from("<2Q", buf, 7) == (2, 3)
        assert len(buf) == 7 + 16 + 6 * 4

    def test_roundtrip_dtypes(self):
        rng = np.random.default_rng(0)
        for dtype in (np.float32, np.float64):
            arr = rng.standard_normal((3, 4, 5)).astype(dtype)
            out, end = hift.tensor_from_bytes(hift.tensor_to_bytes(arr))
            np.testing.assert_array_equal(out, arr)
            assert out.dtype == dtype

    def test_bad_magic(self):
        with pytest.raises(hift.ContainerError, match="magic"):
            hift.tensor_from_bytes(b"NOPE" + b"\x00" * 32)

    def test_truncated_payload(self):
        buf = hift.tensor_to_bytes(np.ones(10, dtype=np.float32))
        with pytest.raises(hift.ContainerError, match="truncated"):
            hift.tensor_from_bytes(buf[:-4])

    def test_int_input_rejected(self):
        with pytest.raises(hift.ContainerError, match="dtype"):
            hift.tensor_to_bytes(np.ones(3, dtype=np.int32))

    def test_file_roundtrip(self, tmp_path):
        arr = np.linspace(-1, 1, 24, dtype=np.float64).reshape(2, 3, 4)
        p = tmp_path / "t.hift"
        hift.write_tensor(p, arr)
        np.testing.assert_array_equal(hift.read_tensor(p), arr)


class TestCheckpoint:
    def _tensors(self, seed=0):
        rng = np.random.default_rng(seed)
        return {
            "backbone.w": rng.standard_normal((4, 4)).astype(np.float32),
            "expert.b": rng.standard_normal(4).astype(np.float32),
            "hindsight.cls": rng.standard_normal((1, 4)).astype(np.float32),
        }

    def test_roundtrip(self, tmp_path):
        p = tmp_path / "ck.hift"
        tensors = self._tensors()
        hift.save_checkpoint(p, tensors, {"lr": 0.001, "h": 8}, step=42)
        loaded, config, step = hift.load_checkpoint(p)
        assert step == 42
        assert config == {"lr": 0.001, "h": 8}
        assert set(loaded) == set(tensors)
        for name in tensors:
            np.testing.assert_array_equal(loaded[name], tensors[name])

    def test_save_load_save_byte_identical(self, tmp_path):
        p1, p2 = tmp_path / "a.hift", tmp_path / "b.hift"
        hift.save_checkpoint(p1, self._tensors(), {"seed": 3}, step=7)
        tensors, config, step = hift.load_checkpoint(p1)
        hift.save_checkpoint(p2, tensors, config, step)
        assert p1.read_bytes() == p2.read_bytes()

    def test_every_name_once_in_index(self, tmp_path):
        p = tmp_path / "ck.hift"
        hift.save_checkpoint(p, self._tensors(), {}, step=0)
        buf = p.read_bytes()
        (hlen,) = struct.unpack_from("<Q", buf, 0)
        header = json.loads(buf[8 : 8 + hlen])
        assert sorted(header["index"]) == sorted(self._tensors())

    def test_bad_header(self, tmp_path):
        p = tmp_path / "ck.hift"
        p.write_bytes(struct.pack("<Q", 4) + b"nope")
        with pytest.raises(hift.ContainerError):
            hift.load_checkpoint(p)


class TestPnm:
    def test_pgm_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, size=(32, 48), dtype=np.uint8)
        p = tmp_path / "f.pgm"
        pnm.write_pnm(p, img)
        np.testing.assert_array_equal(pnm.read_pnm(p), img)

    def test_ppm_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        p = tmp_path / "f.ppm"
        pnm.write_pnm(p, img)
        np.testing.assert_array_equal(pnm.read_pnm(p), img)

    def test_comment_in_header(self, tmp_path):
        img = np.arange(4, dtype=np.uint8).reshape(2, 2)
        p = tmp_path / "c.pgm"
        p.write_bytes(b"P5\n# a comment\n2 2\n255\n" + img.tobytes())
        np.testing.assert_array_equal(pnm.read_pnm(p), img)

    def test_corrupt_header(self, tmp_path):
        p = tmp_path / "bad.pgm"
        p.write_bytes(b"P5\nnot numbers\n")
        with pytest.raises(pnm.PnmError):
            pnm.read_pnm(p)

    def test_ascii_variant_rejected(self, tmp_path):
        p = tmp_path / "ascii.pgm"
        p.write_bytes(b"P2\n2 2\n255\n0 1 2 3\n")
        with pytest.raises(pnm.PnmError, match="P5/P6"):
            pnm.read_pnm(p)

    def test_truncated_pixels(self, tmp_path):
        p = tmp_path / "short.pgm"
        p.write_bytes(b"P5\n4 4\n255\n" + b"\x00" * 10)
        with pytest.raises(pnm.PnmError, match="pixel bytes"):
            pnm.read_pnm(p)

    def test_raw_planar(self, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        p = tmp_path / "f.raw"
        p.write_bytes(img.transpose(2, 0, 1).tobytes())
        np.testing.assert_array_equal(pnm.read_raw(p, 8, 8, 3), img)
