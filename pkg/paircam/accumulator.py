"""Running sums for direct, correlation and successive-frame images."""

import json
import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from paircam.exceptions import (
    DimensionMismatchError,
    FrameStackError,
    InsufficientFramesError,
)
from paircam.sensor import Frame

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class MomentAccumulator:
    def __init__(
        self,
        n_pixels: int,
        rows: Optional[Tuple[Sequence[int], Sequence[int]]] = None,
    ) -> None:
        """
        Streaming accumulation of frame moments.

        Parameters
        ----------
        n_pixels: int
            Pixels per frame.
        rows: tuple of two index sequences, optional
            Restrict the correlation sums to the block rows[0] × rows[1]
            (two-row mode). Defaults to all pixels against all pixels.

        """
        self.n_pixels = int(n_pixels)
        if rows is None:
            self.rows = None
            self._left = self._right = np.arange(self.n_pixels)
        else:
            self.rows = tuple(np.asarray(r, dtype=np.int64) for r in rows)
            self._left, self._right = self.rows
            for index in self.rows:
                if index.size and (index.min() < 0 or index.max() >= self.n_pixels):
                    raise DimensionMismatchError("Row indices outside the frame.")

        shape = (len(self._left), len(self._right))
        self.n_frames = 0
        self.sum_x = np.zeros(self.n_pixels)
        self.sum_sq = np.zeros(self.n_pixels)
        self.sum_xx = np.zeros(shape)
        self.sum_x_next = np.zeros(shape)
        self.first_frame = None
        self.last_frame = None

    def __repr__(self) -> str:
        return "{}.{}({})".format(
            self.__class__.__module__,
            self.__class__.__qualname__,
            f"n_pixels={self.n_pixels}, n_frames={self.n_frames}",
        )

    @property
    def is_block(self) -> bool:
        return self.rows is not None

    def _check(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2 or values.shape[1] != self.n_pixels:
            raise DimensionMismatchError(
                f"Expected frames of {self.n_pixels} pixels, got shape {values.shape}."
            )
        return values

    def push(self, frame: Union[Frame, np.ndarray]) -> "MomentAccumulator":
        """Add one frame."""
        values = frame.values if isinstance(frame, Frame) else frame
        return self.push_block(self._check(values))

    def push_block(self, frames: np.ndarray) -> "MomentAccumulator":
        """Add consecutive frames given as a (frames, pixels) array."""
        frames = self._check(frames)
        if len(frames) == 0:
            return self
        if self.rows is None:
            left = right = frames
        else:
            left = frames[:, self._left]
            right = frames[:, self._right]
        self.sum_x += frames.sum(axis=0)
        self.sum_sq += (frames**2).sum(axis=0)
        self.sum_xx += left.T @ right
        if self.last_frame is not None:
            previous = self.last_frame[self._left]
            self.sum_x_next += np.outer(previous, right[0])
        if len(frames) > 1:
            self.sum_x_next += left[:-1].T @ right[1:]
        if self.first_frame is None:
            self.first_frame = frames[0].copy()
        self.last_frame = frames[-1].copy()
        self.n_frames += len(frames)
        return self

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        """Combine with an accumulator over the frames that follow this one's."""
        if other.n_pixels != self.n_pixels or other.sum_xx.shape != self.sum_xx.shape:
            raise DimensionMismatchError("Accumulators differ in shape.")
        if self.is_block != other.is_block or (
            self.is_block
            and not all(np.array_equal(a, b) for a, b in zip(self.rows, other.rows))
        ):
            raise DimensionMismatchError("Accumulators differ in rows.")

        merged = MomentAccumulator(self.n_pixels, rows=self.rows)
        merged.n_frames = self.n_frames + other.n_frames
        merged.sum_x = self.sum_x + other.sum_x
        merged.sum_sq = self.sum_sq + other.sum_sq
        merged.sum_xx = self.sum_xx + other.sum_xx
        merged.sum_x_next = self.sum_x_next + other.sum_x_next
        if self.last_frame is not None and other.first_frame is not None:
            merged.sum_x_next = merged.sum_x_next + np.outer(
                self.last_frame[self._left], other.first_frame[self._right]
            )
        merged.first_frame = _copy_or_none(
            self.first_frame if self.first_frame is not None else other.first_frame
        )
        merged.last_frame = _copy_or_none(
            other.last_frame if other.last_frame is not None else self.last_frame
        )
        return merged

    def _require(self, n_frames: int) -> None:
        if self.n_frames < n_frames:
            raise InsufficientFramesError(
                f"Need at least {n_frames} frame(s), accumulated {self.n_frames}."
            )

    def mean_direct(self) -> np.ndarray:
        self._require(1)
        return self.sum_x / self.n_frames

    def mean_square(self) -> np.ndarray:
        self._require(1)
        return self.sum_sq / self.n_frames

    def mean_corr(self) -> np.ndarray:
        self._require(1)
        return self.sum_xx / self.n_frames

    def mean_corr_successive(self) -> np.ndarray:
        """Σ_l x_i^(l) x_j^(l+1) / (M − 1); estimates the product of means."""
        self._require(2)
        return self.sum_x_next / (self.n_frames - 1)

    def row_means(self) -> Tuple[np.ndarray, np.ndarray]:
        """Direct-image means of the correlated row and column pixels."""
        mean = self.mean_direct()
        return mean[self._left], mean[self._right]

    def save(self, path: Union[str, Path]) -> None:
        """
        Write a checkpoint: a JSON header next to a float64 blob.

        The blob `<path>.bin` holds sum_x, sum_sq, sum_xx, sum_x_next, first and
        last frame, in that order.
        """
        path = Path(path)
        header = {
            "version": CHECKPOINT_VERSION,
            "n_pixels": self.n_pixels,
            "n_frames": self.n_frames,
            "rows": None if self.rows is None else [r.tolist() for r in self.rows],
            "has_frames": self.first_frame is not None,
        }
        blocks = [
            self.sum_x,
            self.sum_sq,
            self.sum_xx.ravel(),
            self.sum_x_next.ravel(),
        ]
        if self.first_frame is not None:
            blocks += [self.first_frame, self.last_frame]
        with open(path, "wt") as f_out:
            json.dump(header, f_out, indent=2)
        np.concatenate(blocks).astype("<f8").tofile(path.with_suffix(".bin"))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MomentAccumulator":
        path = Path(path)
        with open(path, "rt") as f_in:
            header = json.load(f_in)
        if header.get("version") != CHECKPOINT_VERSION:
            raise FrameStackError(f"Unsupported checkpoint version in {path}.")
        acc = cls(header["n_pixels"], rows=header["rows"])
        blob = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
        n, shape = acc.n_pixels, acc.sum_xx.shape
        sizes = [n, n, shape[0] * shape[1], shape[0] * shape[1]]
        if header["has_frames"]:
            sizes += [n, n]
        if blob.size != sum(sizes):
            raise FrameStackError(f"Checkpoint blob for {path} has the wrong size.")
        parts = np.split(blob, np.cumsum(sizes)[:-1])
        acc.n_frames = header["n_frames"]
        acc.sum_x, acc.sum_sq = parts[0], parts[1]
        acc.sum_xx = parts[2].reshape(shape)
        acc.sum_x_next = parts[3].reshape(shape)
        if header["has_frames"]:
            acc.first_frame, acc.last_frame = parts[4], parts[5]
        return acc


def _copy_or_none(values):
    return None if values is None else values.copy()
