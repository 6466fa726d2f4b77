"""Readers and writers for Γ matrices, frame stacks and reports."""

import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np
import pandas as pd

from paircam.exceptions import (
    DimensionMismatchError,
    FrameStackError,
    InvalidDistributionError,
)
from paircam.grid import JointDistribution, PixelGrid, validate
from paircam.sensor import FrameKind

logger = logging.getLogger(__name__)

STACK_MAGIC = b"PPFR"
STACK_VERSION = 1
STACK_HEADER = struct.Struct("<4sHIQB")

PathLike = Union[str, Path]


def _sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f_in:
        for chunk in iter(lambda: f_in.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".json")


def write_matrix_csv(path: PathLike, matrix: np.ndarray) -> None:
    """N rows × N columns, no header, shortest round-trip float format."""
    pd.DataFrame(np.asarray(matrix)).to_csv(
        path, header=False, index=False, float_format="%.17g"
    )


def read_matrix_csv(path: PathLike) -> np.ndarray:
    return pd.read_csv(path, header=None, dtype=np.float64).to_numpy()


def write_gamma(path: PathLike, jd: JointDistribution) -> None:
    """Write Γ as CSV next to a JSON sidecar with the grid and a checksum."""
    write_matrix_csv(path, jd.gamma)
    sidecar = {
        "n_pixels": jd.grid.n_pixels,
        "pitch_um": jd.grid.pitch,
        "origin_um": jd.grid.origin,
        "checksum": "sha256:" + _sha256(path),
    }
    with open(sidecar_path(path), "wt") as f_out:
        json.dump(sidecar, f_out, indent=2)


def read_gamma(path: PathLike, grid: Optional[PixelGrid] = None) -> JointDistribution:
    """
    Load and validate a Γ CSV.

    The grid comes from the JSON sidecar when present, else from `grid`, else a
    default-pitch grid of the matrix size.

    Raises
    ------
    InvalidDistributionError
        If the matrix breaks any joint-distribution invariant.
    FrameStackError
        If the sidecar checksum does not match the CSV.

    """
    path = Path(path)
    matrix = read_matrix_csv(path)
    sidecar = sidecar_path(path)
    if sidecar.exists():
        with open(sidecar, "rt") as f_in:
            meta = json.load(f_in)
        checksum = meta.get("checksum")
        if checksum and checksum != "sha256:" + _sha256(path):
            raise FrameStackError(f"Checksum mismatch for {path}.")
        grid = PixelGrid(
            n_pixels=meta["n_pixels"], pitch=meta["pitch_um"], origin=meta["origin_um"]
        )
    elif grid is None:
        grid = PixelGrid(n_pixels=len(matrix))

    if matrix.shape != (grid.n_pixels, grid.n_pixels):
        raise DimensionMismatchError(
            f"Γ in {path} has shape {matrix.shape}, grid has {grid.n_pixels} pixels."
        )
    jd = JointDistribution(grid, matrix)
    violations = validate(jd)
    if violations:
        raise InvalidDistributionError(violations)
    return jd


class FrameStackWriter:
    def __init__(self, path: PathLike, n_pixels: int, kind: FrameKind) -> None:
        """
        Append frames to a binary stack file.

        The header frame count is rewritten on close; use as a context manager.
        """
        self.path = Path(path)
        self.n_pixels = int(n_pixels)
        self.kind = FrameKind(kind)
        self.n_frames = 0
        self._file = open(self.path, "wb")
        self._write_header()

    def _write_header(self) -> None:
        self._file.seek(0)
        self._file.write(
            STACK_HEADER.pack(
                STACK_MAGIC, STACK_VERSION, self.n_pixels, self.n_frames, int(self.kind)
            )
        )
        self._file.seek(0, 2)

    def write(self, frames: np.ndarray) -> None:
        """Append a (frames, pixels) block, or a single frame vector."""
        frames = np.atleast_2d(np.asarray(frames))
        if frames.shape[1] != self.n_pixels:
            raise DimensionMismatchError(
                f"Stack holds {self.n_pixels} pixels, got frames of {frames.shape[1]}."
            )
        if self.kind == FrameKind.BINARY:
            payload = np.packbits(frames.astype(np.uint8), axis=1, bitorder="little")
        else:
            payload = frames.astype("<f8")
        self._file.write(payload.tobytes())
        self.n_frames += len(frames)

    def close(self) -> None:
        if not self._file.closed:
            self._write_header()
            self._file.close()

    def __enter__(self) -> "FrameStackWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class FrameStackReader:
    def __init__(self, path: PathLike) -> None:
        """Memory-mapped view of a binary frame stack."""
        self.path = Path(path)
        with open(self.path, "rb") as f_in:
            raw = f_in.read(STACK_HEADER.size)
        if len(raw) < STACK_HEADER.size:
            raise FrameStackError(f"{self.path} is too short for a frame stack header.")
        magic, version, n_pixels, n_frames, kind = STACK_HEADER.unpack(raw)
        if magic != STACK_MAGIC:
            raise FrameStackError(
                f"{self.path} is not a frame stack (magic {magic!r})."
            )
        if version != STACK_VERSION:
            raise FrameStackError(f"Unsupported frame stack version {version}.")
        try:
            self.kind = FrameKind(kind)
        except ValueError:
            raise FrameStackError(f"Unknown frame kind {kind} in {self.path}.")
        self.n_pixels = n_pixels
        self.n_frames = n_frames

        if self.kind == FrameKind.BINARY:
            self._dtype, self._record = np.uint8, -(-n_pixels // 8)
        else:
            self._dtype, self._record = np.dtype("<f8"), n_pixels
        expected = STACK_HEADER.size + n_frames * self._record * np.dtype(
            self._dtype
        ).itemsize
        if self.path.stat().st_size != expected:
            raise FrameStackError(
                f"{self.path} holds {self.path.stat().st_size} bytes, "
                f"header promises {expected}."
            )

    def __len__(self) -> int:
        return self.n_frames

    def _records(self) -> np.ndarray:
        if self.n_frames == 0:
            return np.empty((0, self._record), dtype=self._dtype)
        return np.memmap(
            self.path,
            dtype=self._dtype,
            mode="r",
            offset=STACK_HEADER.size,
            shape=(self.n_frames, self._record),
        )

    def _decode(self, records: np.ndarray) -> np.ndarray:
        if self.kind == FrameKind.BINARY:
            bits = np.unpackbits(records, axis=1, bitorder="little")
            return bits[:, : self.n_pixels]
        return np.asarray(records, dtype=np.float64)

    def iter_blocks(self, block_size: int = 1024) -> Iterator[np.ndarray]:
        records = self._records()
        for start in range(0, self.n_frames, block_size):
            yield self._decode(records[start : start + block_size])

    def read_all(self) -> np.ndarray:
        return self._decode(self._records())


def write_frames_csv(path: PathLike, frames: np.ndarray) -> None:
    """One frame per row, for small runs."""
    frames = np.atleast_2d(np.asarray(frames))
    float_format = None if frames.dtype.kind in "ui" else "%.17g"
    pd.DataFrame(frames).to_csv(
        path, header=False, index=False, float_format=float_format
    )


def write_json(path: PathLike, document: dict) -> None:
    with open(path, "wt") as f_out:
        json.dump(document, f_out, indent=2, sort_keys=True)
        f_out.write("\n")


def file_checksum(path: PathLike) -> str:
    return "sha256:" + _sha256(path)
