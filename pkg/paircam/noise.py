"""
EMCCD register noise model.

The gray value of a pixel holding k photoelectrons is

    X = offset + α (X_sig + X_par + X_ser + X_R)

with X_sig the Erlang(k, g) output of the multiplication register, X_par a
clock-induced-charge electron amplified through the full register with
probability p_par, X_ser the spurious electrons injected in the serial register
cells with probability p_ser each and amplified by the remaining cells, and X_R
Gaussian readout noise N(μ, σ_R). The total register gain is g = (1 + p_c)^L.

Besides sampling, the model is evaluated numerically on a lattice of
pre-scaling electron values: exponential and Erlang terms are binned by exact
CDF differences, combined in the Fourier domain (including the exact product
over all serial cells), and integrated against the Gaussian readout.
"""

import logging
from functools import lru_cache
from typing import Tuple

import numpy as np
from pydantic import BaseModel, confloat, conint
from scipy import optimize, special

from paircam.exceptions import DomainError

logger = logging.getLogger(__name__)

# Erlang signals up to this many electrons are drawn as sums of exponentials.
EXPONENTIAL_SUM_LIMIT = 16
TAIL_GAINS = 40

REFERENCE_REGISTER = {
    "register_cells": 506,
    "p_c": 1.37e-2,
    "alpha": 1 / 19,
    "p_ser": 3.35e-5,
    "p_par": 1.23e-2,
    "sigma_r": 12.2,
    "mu": 25.54,
}
REFERENCE_THRESHOLD = 516.0
REFERENCE_P10 = 0.015


class EmccdNoiseParams(BaseModel):
    """Electron-multiplying register, spurious charge and readout parameters."""

    register_cells: conint(ge=1) = 506
    p_c: confloat(gt=0, le=1)
    alpha: confloat(gt=0)
    p_ser: confloat(ge=0, le=1) = 0.0
    p_par: confloat(ge=0, le=1) = 0.0
    sigma_r: confloat(ge=0) = 0.0
    mu: float = 0.0
    offset: float = 0.0

    class Config:
        frozen = True

    @classmethod
    def reference_preset(cls) -> "EmccdNoiseParams":
        """
        Reference register parameters, bias calibrated to P(X ≥ 516 | 0) = 0.015.

        The calibrated bias gives x0 ≈ 510.7 gray values, not the ≈ 569 quoted
        alongside these register parameters; the five parameters alone cannot
        produce the quoted value. A ≈ 51.5 follows from α and the register gain.
        """
        return _reference_preset()

    @property
    def gain(self) -> float:
        """Mean register gain g = (1 + p_c)^L."""
        return (1 + self.p_c) ** self.register_cells

    @property
    def cell_gains(self) -> np.ndarray:
        """Gain (1 + p_c)^(L − l) seen by an electron injected at cell l = 1..L."""
        cells = np.arange(1, self.register_cells + 1)
        return (1 + self.p_c) ** (self.register_cells - cells)

    @property
    def A(self) -> float:
        """Gray values per photoelectron."""
        return self.alpha * self.gain

    @property
    def x0(self) -> float:
        """Mean gray value of a pixel without photoelectrons."""
        serial = self.p_ser * (self.gain - 1) / self.p_c
        return self.offset + self.alpha * (self.mu + self.p_par * self.gain + serial)

    @property
    def sigma0_sq(self) -> float:
        """Gray-value variance of a pixel without photoelectrons."""
        serial = np.sum(self.p_ser * self.cell_gains**2 * (2 - self.p_ser))
        parallel = self.p_par * self.gain**2 * (2 - self.p_par)
        return float(self.alpha**2 * (self.sigma_r**2 + parallel + serial))

    @property
    def noiseless(self) -> bool:
        return self.p_par == 0 and self.p_ser == 0 and self.sigma_r == 0

    def with_offset(self, offset: float) -> "EmccdNoiseParams":
        return self.copy(update={"offset": float(offset)})

    def sample(self, k, rng: np.random.Generator, gain_scale=1.0) -> np.ndarray:
        """
        Draw gray values for electron counts `k`.

        Parameters
        ----------
        k: array-like of int
            Photoelectrons per pixel; any shape.
        rng: numpy.random.Generator
        gain_scale: float or array-like
            Relative register gain, broadcast against `k` (gain drift).

        """
        k = np.asarray(k, dtype=np.int64)
        shape = k.shape
        flat = k.ravel()
        size = flat.size
        g = self.gain

        signal = np.zeros(size)
        small = np.where(flat <= EXPONENTIAL_SUM_LIMIT, flat, 0)
        draws = rng.exponential(g, int(small.sum()))
        owners = np.repeat(np.arange(size), small)
        signal += np.bincount(owners, weights=draws, minlength=size)
        large = flat > EXPONENTIAL_SUM_LIMIT
        if large.any():
            signal[large] = rng.gamma(flat[large], g)

        cic = np.where(rng.random(size) < self.p_par, rng.exponential(g, size), 0.0)

        injections = rng.binomial(self.register_cells, self.p_ser, size)
        n_injected = int(injections.sum())
        cells = rng.integers(1, self.register_cells + 1, n_injected)
        amplified = rng.exponential(
            (1 + self.p_c) ** (self.register_cells - cells), n_injected
        )
        owners = np.repeat(np.arange(size), injections)
        serial = np.bincount(owners, weights=amplified, minlength=size)

        readout = rng.normal(self.mu, self.sigma_r, size)
        register = (signal + cic + serial).reshape(shape)
        return self.offset + self.alpha * (
            np.asarray(gain_scale) * register + readout.reshape(shape)
        )

    def _lattice(self, k_max: int) -> Tuple[float, int]:
        """Bin width (electrons) and power-of-two lattice size covering k_max."""
        g = self.gain
        if self.sigma_r > 0:
            step = max(min(self.sigma_r / 4, g / 50), g / 4000)
        else:
            step = g / 200
        extent = g * (k_max + TAIL_GAINS)
        size = 1 << int(np.ceil(np.log2(extent / step + 1)))
        return step, size

    def register_pmf(self, k: int, k_max: int = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        Lattice distribution of the amplified charge X_sig + X_par + X_ser.

        Returns the lattice points (electrons, before α scaling) and their masses.
        """
        if k < 0:
            raise DomainError(f"Electron count must be non-negative, got {k}.")
        step, size = self._lattice(max(k, k_max or 0))
        spectrum = _dark_spectrum(self, step, size) * _erlang_spectrum(
            k, self.gain, step, size
        )
        pmf = np.clip(np.fft.irfft(spectrum, n=size), 0, None)
        return step * np.arange(size), pmf

    def _survival_from_pmf(self, support, pmf, threshold) -> float:
        level = (threshold - self.offset) / self.alpha - self.mu
        if self.sigma_r > 0:
            tail = special.ndtr((support - level) / self.sigma_r)
        else:
            tail = (support >= level).astype(float)
        return float(np.dot(pmf, tail))

    def response_survival(self, k: int, threshold: float) -> float:
        """P(X ≥ threshold | k photoelectrons)."""
        support, pmf = self.register_pmf(k)
        return self._survival_from_pmf(support, pmf, threshold)

    def survival_table(self, threshold: float, k_max: int) -> np.ndarray:
        """P(X ≥ threshold | k) for k = 0..k_max on one shared lattice."""
        return np.array(
            [
                self._survival_from_pmf(*self.register_pmf(k, k_max), threshold)
                for k in range(k_max + 1)
            ]
        )

    def dark_pdf(self, x) -> np.ndarray:
        """Gray-value density P(x | k = 0), for comparison with dark histograms."""
        if self.sigma_r <= 0:
            raise DomainError("The dark density needs a positive readout noise.")
        support, pmf = self.register_pmf(0)
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        level = (x - self.offset) / self.alpha - self.mu
        density = np.empty_like(level)
        for start in range(0, len(level), 64):
            chunk = level[start : start + 64]
            z = (chunk[:, None] - support[None, :]) / self.sigma_r
            density[start : start + 64] = np.exp(-0.5 * z**2) @ pmf
        return density / (np.sqrt(2 * np.pi) * self.sigma_r * self.alpha)

    def calibrate_offset(self, threshold: float, p10: float) -> "EmccdNoiseParams":
        """Return a copy whose bias gives P(X ≥ threshold | 0) = p10."""
        if not 0 < p10 < 1:
            raise DomainError(f"Dark-count probability must be in (0, 1), got {p10}.")
        support, pmf = self.register_pmf(0)
        spread = 10 * max(self.sigma_r, 1.0)

        def excess(offset):
            shifted = self.with_offset(offset)
            return shifted._survival_from_pmf(support, pmf, threshold) - p10

        high = threshold - self.alpha * (self.mu - spread)
        low = threshold - self.alpha * (self.mu + support[-1] + spread)
        offset = optimize.brentq(excess, low, high, xtol=1e-10)
        logger.debug(f"Calibrated bias offset {offset:.6f} for threshold {threshold}.")
        return self.with_offset(offset)

    def effective_spc(self, eta: float, threshold: float) -> Tuple[float, float]:
        """
        Effective (η, p10) of the thresholded camera seen as an SPC camera.

        p10 is the dark-count probability P(X ≥ threshold | 0); η is reduced by
        the probability that a single electron stays below threshold.
        """
        p10, p1 = self.survival_table(threshold, 1)
        if p10 >= 1:
            raise DomainError(f"Threshold {threshold} fires on every dark pixel.")
        return eta * (p1 - p10) / (1 - p10), float(p10)


def _exponential_spectrum(mean: float, step: float, size: int) -> np.ndarray:
    """Real FFT of an exponential density binned on the lattice, in closed form."""
    ratio = np.exp(-step / mean)
    zero_mass = -np.expm1(-step / (2 * mean))
    scale = np.exp(step / (2 * mean)) * (1 - ratio)
    z = ratio * np.exp(-2j * np.pi * np.arange(size // 2 + 1) / size)
    return zero_mass + scale * z * (1 - z ** (size - 1)) / (1 - z)


def _erlang_spectrum(k: int, gain: float, step: float, size: int) -> np.ndarray:
    if k == 0:
        return np.ones(size // 2 + 1, dtype=complex)
    edges = np.clip((np.arange(size + 1) - 0.5) * step, 0, None)
    mass = np.diff(special.gammainc(k, edges / gain))
    return np.fft.rfft(mass)


@lru_cache(maxsize=16)
def _dark_spectrum(noise: EmccdNoiseParams, step: float, size: int) -> np.ndarray:
    """Spectrum of the CIC and serial-register charge."""
    spectrum = (1 - noise.p_par) + noise.p_par * _exponential_spectrum(
        noise.gain, step, size
    )
    if noise.p_ser > 0:
        for cell_gain in noise.cell_gains:
            injected = _exponential_spectrum(cell_gain, step, size)
            spectrum = spectrum * (1 - noise.p_ser + noise.p_ser * injected)
    return spectrum


@lru_cache(maxsize=None)
def _reference_preset() -> EmccdNoiseParams:
    noise = EmccdNoiseParams(**REFERENCE_REGISTER)
    return noise.calibrate_offset(REFERENCE_THRESHOLD, REFERENCE_P10)
