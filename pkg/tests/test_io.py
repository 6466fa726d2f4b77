import json
import os

import numpy as np
import pytest

from paircam import io as pcio
from paircam.exceptions import (
    DimensionMismatchError,
    FrameStackError,
    InvalidDistributionError,
)
from paircam.grid import PixelGrid, uniform_distribution
from paircam.selftest import random_distribution
from paircam.sensor import FrameKind

TEST_DIR = os.path.dirname(__file__)


class TestGammaCsv:
    def test_write_read(self, tmp_path):
        jd = random_distribution(5, np.random.default_rng(4))
        path = tmp_path / "gamma.csv"
        pcio.write_gamma(path, jd)
        loaded = pcio.read_gamma(path)
        np.testing.assert_array_equal(loaded.gamma, jd.gamma)
        assert loaded.grid == jd.grid
        with open(path.with_suffix(".json")) as f_in:
            assert json.load(f_in)["checksum"].startswith("sha256:")

    def test_layout(self, tmp_path):
        path = tmp_path / "gamma.csv"
        pcio.write_matrix_csv(path, np.array([[0.25, 0.5], [0.125, 0.125]]))
        assert path.read_text().splitlines() == ["0.25,0.5", "0.125,0.125"]

    def test_example_file(self):
        jd = pcio.read_gamma(os.path.join(TEST_DIR, "test_data/gamma_4x4.csv"))
        assert jd.n_pixels == 4
        assert jd.grid.pitch == 13.0

    def test_checksum_mismatch(self, tmp_path):
        path = tmp_path / "gamma.csv"
        pcio.write_gamma(path, uniform_distribution(PixelGrid(n_pixels=2)))
        path.write_text("0.5,0\n0,0.5\n")
        with pytest.raises(FrameStackError):
            pcio.read_gamma(path)

    def test_invalid_distribution(self, tmp_path):
        path = tmp_path / "gamma.csv"
        pcio.write_matrix_csv(path, np.array([[0.5, 0.5], [0.5, 0.5]]))
        with pytest.raises(InvalidDistributionError):
            pcio.read_gamma(path)

    def test_grid_mismatch(self, tmp_path):
        path = tmp_path / "gamma.csv"
        pcio.write_matrix_csv(path, np.full((2, 2), 0.25))
        with pytest.raises(DimensionMismatchError):
            pcio.read_gamma(path, grid=PixelGrid(n_pixels=3))


class TestFrameStack:
    @pytest.mark.parametrize("n_pixels", [5, 8, 13])
    def test_binary_stack(self, tmp_path, n_pixels):
        frames = np.random.default_rng(0).integers(0, 2, size=(37, n_pixels))
        path = tmp_path / "frames.ppfr"
        with pcio.FrameStackWriter(path, n_pixels, FrameKind.BINARY) as writer:
            writer.write(frames[:20])
            writer.write(frames[20])
            writer.write(frames[21:])
        reader = pcio.FrameStackReader(path)
        assert reader.kind == FrameKind.BINARY
        assert len(reader) == 37
        np.testing.assert_array_equal(reader.read_all(), frames)
        blocks = list(reader.iter_blocks(10))
        assert [len(b) for b in blocks] == [10, 10, 10, 7]
        np.testing.assert_array_equal(np.concatenate(blocks), frames)
        expected_size = pcio.STACK_HEADER.size + 37 * -(-n_pixels // 8)
        assert path.stat().st_size == expected_size

    def test_gray_stack(self, tmp_path):
        frames = np.random.default_rng(1).normal(500, 20, size=(9, 4))
        path = tmp_path / "frames.ppfr"
        with pcio.FrameStackWriter(path, 4, FrameKind.GRAY) as writer:
            writer.write(frames)
        reader = pcio.FrameStackReader(path)
        assert reader.kind == FrameKind.GRAY
        np.testing.assert_array_equal(reader.read_all(), frames)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "frames.ppfr"
        with pcio.FrameStackWriter(path, 3, FrameKind.GRAY) as writer:
            writer.write(np.zeros((2, 3)))
        header = path.read_bytes()[: pcio.STACK_HEADER.size]
        assert header[:4] == b"PPFR"
        assert pcio.STACK_HEADER.unpack(header) == (b"PPFR", 1, 3, 2, 1)

    def test_empty_stack(self, tmp_path):
        path = tmp_path / "frames.ppfr"
        pcio.FrameStackWriter(path, 3, FrameKind.GRAY).close()
        reader = pcio.FrameStackReader(path)
        assert len(reader) == 0
        assert reader.read_all().shape == (0, 3)

    def test_wrong_width(self, tmp_path):
        with pcio.FrameStackWriter(tmp_path / "f.ppfr", 3, FrameKind.GRAY) as writer:
            with pytest.raises(DimensionMismatchError):
                writer.write(np.zeros((2, 4)))

    def test_corrupt(self, tmp_path):
        path = tmp_path / "frames.ppfr"
        path.write_bytes(b"JUNK")
        with pytest.raises(FrameStackError):
            pcio.FrameStackReader(path)
        path.write_bytes(pcio.STACK_HEADER.pack(b"XXXX", 1, 3, 0, 1))
        with pytest.raises(FrameStackError):
            pcio.FrameStackReader(path)
        path.write_bytes(pcio.STACK_HEADER.pack(b"PPFR", 1, 3, 5, 1))
        with pytest.raises(FrameStackError):
            pcio.FrameStackReader(path)
        path.write_bytes(pcio.STACK_HEADER.pack(b"PPFR", 1, 3, 0, 7))
        with pytest.raises(FrameStackError):
            pcio.FrameStackReader(path)


def test_frames_csv(tmp_path):
    path = tmp_path / "frames.csv"
    pcio.write_frames_csv(path, np.array([[0, 1, 1], [1, 0, 0]], dtype=np.uint8))
    assert path.read_text().splitlines() == ["0,1,1", "1,0,0"]


def test_write_json(tmp_path):
    path = tmp_path / "report.json"
    pcio.write_json(path, {"b": 1, "a": [1.5]})
    assert json.loads(path.read_text()) == {"a": [1.5], "b": 1}
    assert path.read_text().index('"a"') < path.read_text().index('"b"')
