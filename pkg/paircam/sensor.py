"""Sensor configuration, frames and per-pixel readout."""

import logging
from enum import IntEnum
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, confloat, validator

from paircam.exceptions import DimensionMismatchError, DomainError, PixelIndexError
from paircam.grid import PixelGrid
from paircam.noise import EmccdNoiseParams
from paircam.response import (
    ResponseMoments,
    linear_response,
    spc_response,
    thresholded_response,
)

logger = logging.getLogger(__name__)


class FrameKind(IntEnum):
    BINARY = 0
    GRAY = 1


def _parse_noise(v):
    if isinstance(v, str):
        if v.lower() != "reference":
            raise ValueError(f"Unknown noise preset `{v}`; use `reference`.")
        return EmccdNoiseParams.reference_preset()
    return v


class SpcMode(BaseModel):
    """Single-photon-counting readout with dark-count probability p10."""

    kind: Literal["spc"] = "spc"
    p10: confloat(ge=0, le=1)

    class Config:
        allow_mutation = False

    @property
    def frame_kind(self) -> FrameKind:
        return FrameKind.BINARY

    def response(self, k_max: int = 64) -> ResponseMoments:
        return spc_response(self.p10)


class EmccdThresholdedMode(BaseModel):
    """EMCCD readout reduced to binary counts by a gray-value threshold."""

    kind: Literal["emccd_thresholded"] = "emccd_thresholded"
    noise: EmccdNoiseParams
    threshold: float

    class Config:
        allow_mutation = False

    _noise_preset = validator("noise", pre=True, allow_reuse=True)(_parse_noise)

    @property
    def frame_kind(self) -> FrameKind:
        return FrameKind.BINARY

    @property
    def p10(self) -> float:
        return self.noise.response_survival(0, self.threshold)

    def response(self, k_max: int = 64) -> ResponseMoments:
        return thresholded_response(self.noise, self.threshold, k_max)


class EmccdLinearMode(BaseModel):
    """EMCCD readout returning gray values."""

    kind: Literal["emccd_linear"] = "emccd_linear"
    noise: EmccdNoiseParams

    class Config:
        allow_mutation = False

    _noise_preset = validator("noise", pre=True, allow_reuse=True)(_parse_noise)

    @property
    def frame_kind(self) -> FrameKind:
        return FrameKind.GRAY

    def response(self, k_max: int = 64) -> ResponseMoments:
        return linear_response(self.noise.A, self.noise.x0, self.noise.sigma0_sq)


ReadoutMode = Union[SpcMode, EmccdThresholdedMode, EmccdLinearMode]


class GainDrift(BaseModel):
    """Slow sinusoidal modulation of the register gain across frames."""

    amplitude: confloat(ge=0, lt=1) = 0.05
    period: confloat(gt=0) = 10000.0

    class Config:
        allow_mutation = False

    def scale(self, frame_index) -> np.ndarray:
        phase = 2 * np.pi * np.asarray(frame_index, dtype=np.float64) / self.period
        return 1 + self.amplitude * np.sin(phase)


class SensorConfig(BaseModel):
    """Pixel grid, quantum efficiency and readout mode of the camera."""

    grid: PixelGrid
    eta: confloat(ge=0, le=1)
    mode: ReadoutMode = Field(..., discriminator="kind")
    gain_drift: Optional[GainDrift] = None

    class Config:
        allow_mutation = False

    @validator("gain_drift")
    def _drift_needs_register(cls, v, values):
        mode = values.get("mode")
        if v is not None and isinstance(mode, SpcMode):
            raise ValueError("Gain drift applies to EMCCD modes only.")
        return v

    @property
    def frame_kind(self) -> FrameKind:
        return self.mode.frame_kind


class Frame:
    def __init__(self, values, kind: FrameKind) -> None:
        """One acquisition: gray values or binary counts for every pixel."""
        self.kind = FrameKind(kind)
        dtype = np.uint8 if self.kind == FrameKind.BINARY else np.float64
        self.values = np.asarray(values).astype(dtype, copy=False)
        if self.values.ndim != 1:
            raise DimensionMismatchError("Frame values must be a vector.")
        if self.kind == FrameKind.BINARY and not np.isin(values, (0, 1)).all():
            raise DomainError("Binary frames may only hold 0 and 1.")

    def __repr__(self) -> str:
        return "{}.{}({})".format(
            self.__class__.__module__,
            self.__class__.__qualname__,
            f"kind={self.kind.name}, n_pixels={len(self.values)}",
        )

    def __len__(self) -> int:
        return len(self.values)


def detect_photoelectrons(
    pairs,
    eta: float,
    rng: np.random.Generator,
    n_pixels: int,
    *,
    owner=None,
    n_frames: Optional[int] = None,
) -> np.ndarray:
    """
    Thin both photons of every pair by the quantum efficiency.

    Parameters
    ----------
    pairs: array-like
        (m, 2) pixel indices of the pairs' photons.
    eta: float
        Probability that a photon produces a photoelectron.
    rng: numpy.random.Generator
    n_pixels: int
    owner: array-like, optional
        Frame number of each pair, for a block of `n_frames` frames.
    n_frames: int, optional

    Returns
    -------
    numpy.ndarray
        Photoelectron count per pixel, or a (frames, pixels) block when `owner`
        is given.

    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n_pixels):
        raise PixelIndexError(f"Pair positions outside [0, {n_pixels}).")
    detected = rng.random(pairs.shape) < eta
    if owner is None:
        return np.bincount(pairs[detected], minlength=n_pixels)

    owner = np.asarray(owner, dtype=np.int64)
    if n_frames is None:
        n_frames = int(owner.max()) + 1 if owner.size else 0
    cells = (owner[:, None] * n_pixels + pairs)[detected]
    return np.bincount(cells, minlength=n_frames * n_pixels).reshape(
        n_frames, n_pixels
    )


def spc_readout(k, p10: float, rng: np.random.Generator) -> Frame:
    """Binary count: any photoelectron fires the pixel, otherwise a dark count."""
    k = np.asarray(k)
    return Frame(spc_counts(k, p10, rng), FrameKind.BINARY)


def emccd_readout(k, noise: EmccdNoiseParams, rng: np.random.Generator) -> Frame:
    """Gray values from the full register noise chain."""
    return Frame(noise.sample(k, rng), FrameKind.GRAY)


def spc_counts(k: np.ndarray, p10: float, rng: np.random.Generator) -> np.ndarray:
    dark = rng.random(k.shape) < p10
    return ((k > 0) | dark).astype(np.uint8)


def read_out(
    k: np.ndarray,
    sensor: SensorConfig,
    rng: np.random.Generator,
    frame_index: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Apply the configured readout to a block of electron counts.

    Parameters
    ----------
    k: numpy.ndarray
        (frames, pixels) photoelectron counts.
    sensor: SensorConfig
    rng: numpy.random.Generator
    frame_index: numpy.ndarray, optional
        Global frame numbers of the block rows, for gain drift.

    """
    mode = sensor.mode
    if isinstance(mode, SpcMode):
        return spc_counts(k, mode.p10, rng)

    gain_scale = 1.0
    if sensor.gain_drift is not None and frame_index is not None:
        gain_scale = sensor.gain_drift.scale(frame_index)[:, None]
    gray = mode.noise.sample(k, rng, gain_scale=gain_scale)
    if isinstance(mode, EmccdThresholdedMode):
        return (gray >= mode.threshold).astype(np.uint8)
    return gray

