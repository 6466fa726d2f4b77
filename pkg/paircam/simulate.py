"""
Monte Carlo forward simulation of pair frames.

Frames are generated in fixed blocks of `FRAMES_PER_BLOCK`. Block b draws from
its own generator seeded with SeedSequence(seed, spawn_key=(b,)), so any block
can be produced independently and in any order with identical results.
"""

import logging
from typing import Iterator

import numpy as np

from paircam.exceptions import DimensionMismatchError
from paircam.grid import JointDistribution
from paircam.sensor import (
    EmccdThresholdedMode,
    Frame,
    FrameKind,
    SensorConfig,
    SpcMode,
    detect_photoelectrons,
    emccd_readout,
    read_out,
    spc_readout,
)
from paircam.source import SourceConfig, as_counts

logger = logging.getLogger(__name__)

FRAMES_PER_BLOCK = 1024


def block_rng(seed: int, block_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(block_index,))
    )


def n_blocks(n_frames: int) -> int:
    return -(-n_frames // FRAMES_PER_BLOCK)


def sample_pair_count(source, rng: np.random.Generator, size=None):
    """Number of pairs in a frame (or `size` frames)."""
    return as_counts(source).sample(rng, size=size)


def sample_pair_positions(
    jd: JointDistribution, m: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw m ordered pixel pairs (i, j) independently from Γ; returns shape (m, 2)."""
    cells = np.searchsorted(jd.cdf, rng.random(int(m)), side="right")
    cells = np.minimum(cells, jd.n_pixels**2 - 1)
    return np.stack(np.divmod(cells, jd.n_pixels), axis=1)


def simulate_block(
    jd: JointDistribution,
    source: SourceConfig,
    sensor: SensorConfig,
    block_index: int,
    n_frames: int,
    seed: int,
) -> np.ndarray:
    """
    Generate one block of frames as a (frames, pixels) array.

    Parameters
    ----------
    jd: JointDistribution
        Ground-truth pair distribution.
    source: SourceConfig
    sensor: SensorConfig
    block_index: int
        Block number; the block covers frames from
        block_index * FRAMES_PER_BLOCK up to the total `n_frames`.
    n_frames: int
        Total number of frames in the run.
    seed: int

    """
    n_pixels = jd.n_pixels
    if sensor.grid.n_pixels != n_pixels:
        raise DimensionMismatchError(
            f"Sensor has {sensor.grid.n_pixels} pixels, Γ has {n_pixels}."
        )
    start = block_index * FRAMES_PER_BLOCK
    size = max(0, min(FRAMES_PER_BLOCK, n_frames - start))
    rng = block_rng(seed, block_index)

    pair_counts = np.asarray(sample_pair_count(source, rng, size=size), dtype=np.int64)
    pairs = sample_pair_positions(jd, pair_counts.sum(), rng)
    owner = np.repeat(np.arange(size), pair_counts)
    k = detect_photoelectrons(
        pairs, sensor.eta, rng, n_pixels, owner=owner, n_frames=size
    )

    frame_index = start + np.arange(size)
    return read_out(k, sensor, rng, frame_index=frame_index)


def simulate_frames(
    jd: JointDistribution,
    source: SourceConfig,
    sensor: SensorConfig,
    n_frames: int,
    seed: int,
) -> Iterator[Frame]:
    """Yield `n_frames` independent frames, reproducibly for a given seed."""
    kind = sensor.frame_kind
    for block_index in range(n_blocks(n_frames)):
        block = simulate_block(jd, source, sensor, block_index, n_frames, seed)
        for values in block:
            yield Frame(values, kind)


def simulate_single_frame(
    jd: JointDistribution,
    source: SourceConfig,
    sensor: SensorConfig,
    rng: np.random.Generator,
) -> Frame:
    """One frame through the per-frame operations, for inspection and tests."""
    m = sample_pair_count(source, rng)
    pairs = sample_pair_positions(jd, m, rng)
    k = detect_photoelectrons(pairs, sensor.eta, rng, jd.n_pixels)
    mode = sensor.mode
    if isinstance(mode, SpcMode):
        return spc_readout(k, mode.p10, rng)
    # gain drift is 1 at frame 0
    frame = emccd_readout(k, mode.noise, rng)
    if isinstance(mode, EmccdThresholdedMode):
        return Frame(
            (frame.values >= mode.threshold).astype(np.uint8), FrameKind.BINARY
        )
    return frame
