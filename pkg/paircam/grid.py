"""Pixel grids, joint pair distributions and the double-Gaussian source model."""

import logging
from functools import cached_property
from typing import List, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, confloat, conint

from paircam.exceptions import InvalidGridError, PixelIndexError

logger = logging.getLogger(__name__)

MAX_PIXELS = 4096
NORMALIZATION_TOLERANCE = 1e-12


class PixelGrid(BaseModel):
    """One-dimensional row of square pixels."""

    n_pixels: conint(ge=1, le=MAX_PIXELS)
    pitch: confloat(gt=0) = 13.0
    origin: float = 0.0

    class Config:
        allow_mutation = False

    @property
    def centers(self) -> np.ndarray:
        """Absolute pixel center coordinates in micrometers."""
        return self.origin + self.pitch * np.arange(self.n_pixels, dtype=np.float64)

    @property
    def centered_coordinates(self) -> np.ndarray:
        """Pixel center coordinates measured from the grid midpoint."""
        offsets = np.arange(self.n_pixels, dtype=np.float64) - (self.n_pixels - 1) / 2
        return self.pitch * offsets


class DoubleGaussianParams(BaseModel):
    """Source widths in sum (sigma_plus) and difference (sigma_minus) coordinates."""

    amplitude: confloat(gt=0) = 1.0
    sigma_plus: confloat(gt=0)
    sigma_minus: confloat(gt=0)

    class Config:
        allow_mutation = False


class Violation(NamedTuple):
    invariant: str
    index: Optional[tuple]
    value: float

    def __str__(self):
        location = f" at {self.index}" if self.index is not None else ""
        return f"{self.invariant}{location} (value {self.value:.17g})"


class JointDistribution:
    def __init__(self, grid: PixelGrid, gamma, gamma_marginal=None) -> None:
        """
        Probability that a pair's first photon hits pixel i and its second pixel j.

        Parameters
        ----------
        grid: PixelGrid
            Grid the distribution is discretized on.
        gamma: array-like
            N×N matrix of cell probabilities.
        gamma_marginal: array-like, optional
            Per-pixel marginals. Computed as row sums when omitted.

        """
        self.grid = grid
        self.gamma = np.array(gamma, dtype=np.float64)
        if self.gamma.ndim != 2 or self.gamma.shape[0] != self.gamma.shape[1]:
            raise InvalidGridError(f"Γ must be square, got {self.gamma.shape}.")
        if self.gamma.shape[0] != grid.n_pixels:
            raise InvalidGridError(
                f"Γ is {self.gamma.shape[0]}×{self.gamma.shape[0]} but the grid has "
                f"{grid.n_pixels} pixels."
            )
        if gamma_marginal is None:
            self.gamma_marginal = self.gamma.sum(axis=1)
        else:
            self.gamma_marginal = np.array(gamma_marginal, dtype=np.float64)
        self.gamma.setflags(write=False)
        self.gamma_marginal.setflags(write=False)

    def __repr__(self) -> str:
        return "{}.{}({})".format(
            self.__class__.__module__,
            self.__class__.__qualname__,
            f"n_pixels={self.n_pixels}",
        )

    @property
    def n_pixels(self) -> int:
        return self.grid.n_pixels

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.gamma).copy()

    @cached_property
    def cdf(self) -> np.ndarray:
        """Cumulative distribution over the row-major flattened cells."""
        cdf = np.cumsum(self.gamma.ravel())
        return cdf / cdf[-1]

    def marginal(self, i: int) -> float:
        return marginal(self, i)

    def symmetrized(self) -> "JointDistribution":
        """Return (Γ + Γᵀ) / 2, the distribution of an unordered pair."""
        return JointDistribution(self.grid, (self.gamma + self.gamma.T) / 2)

    def pair_parameters(self, i: int, j: int) -> dict:
        """Per-pixel-pair inputs of the moment formulas."""
        return {
            "gamma_i": float(self.gamma_marginal[i]),
            "gamma_j": float(self.gamma_marginal[j]),
            "gamma_ii": float(self.gamma[i, i]),
            "gamma_jj": float(self.gamma[j, j]),
            "gamma_ij": float(self.gamma[i, j]),
        }


def build_double_gaussian(
    grid: PixelGrid, params: DoubleGaussianParams
) -> JointDistribution:
    """
    Discretize the double-Gaussian pair model at pixel centers.

    Parameters
    ----------
    grid: PixelGrid
    params: DoubleGaussianParams

    Raises
    ------
    InvalidGridError
        If every cell underflows to zero (widths far below the pixel pitch).

    """
    gamma = double_gaussian_surface(
        grid.centered_coordinates, 1.0, params.sigma_plus, params.sigma_minus
    )
    total = gamma.sum()
    if not np.isfinite(total) or total <= 0:
        raise InvalidGridError(
            f"Double-Gaussian with σ+={params.sigma_plus}, σ−={params.sigma_minus} "
            f"underflows on a grid with pitch {grid.pitch}."
        )
    return JointDistribution(grid, gamma / total)


def double_gaussian_surface(x: np.ndarray, amplitude, sigma_plus, sigma_minus):
    """Unnormalized double-Gaussian evaluated on the outer grid of `x`."""
    x_sum = x[:, None] + x[None, :]
    x_diff = x[:, None] - x[None, :]
    return amplitude * np.exp(
        -(x_sum**2) / (4 * sigma_plus**2) - (x_diff**2) / (4 * sigma_minus**2)
    )


def validate(jd: JointDistribution) -> List[Violation]:
    """List every broken invariant of `jd`, worst offender first within each."""
    violations = []
    gamma = jd.gamma
    n = gamma.shape[0]

    finite = np.isfinite(gamma)
    if not finite.all():
        index = np.unravel_index(np.argmin(finite), gamma.shape)
        violations.append(
            Violation("finite entries", _as_index(index), float(gamma[index]))
        )
        return violations

    if (gamma < 0).any():
        index = np.unravel_index(np.argmin(gamma), gamma.shape)
        violations.append(
            Violation("non-negativity", _as_index(index), float(gamma[index]))
        )

    total = float(gamma.sum())
    if abs(total - 1) > NORMALIZATION_TOLERANCE:
        violations.append(Violation("normalization", None, total))

    if jd.gamma_marginal.shape != (n,):
        violations.append(
            Violation("marginal length", None, float(len(jd.gamma_marginal)))
        )
        return violations

    marginal_error = np.abs(jd.gamma_marginal - gamma.sum(axis=1))
    if (marginal_error > NORMALIZATION_TOLERANCE).any():
        i = int(np.argmax(marginal_error))
        violations.append(
            Violation("marginal equals row sum", (i,), float(jd.gamma_marginal[i]))
        )

    excess = np.diag(gamma) - jd.gamma_marginal
    if (excess > NORMALIZATION_TOLERANCE).any():
        i = int(np.argmax(excess))
        violations.append(
            Violation("diagonal within marginal", (i,), float(gamma[i, i]))
        )
    return violations


def _as_index(index):
    return tuple(int(k) for k in index)


def marginal(jd: JointDistribution, i: int) -> float:
    """Probability Σ_j Γ_ij that a given photon of a pair lands on pixel i."""
    if not 0 <= i < jd.n_pixels:
        raise PixelIndexError(f"Pixel index {i} outside [0, {jd.n_pixels}).")
    return float(np.sum(jd.gamma[i]))


def total_variation(p: np.ndarray, q: np.ndarray, exclude_diagonal=False) -> float:
    """
    Total-variation distance between two distributions on the same cells.

    Both inputs are renormalized after optional removal of the diagonal, so a
    reconstruction without diagonal can be compared to a full ground truth.
    """
    p = np.array(p, dtype=np.float64)
    q = np.array(q, dtype=np.float64)
    if exclude_diagonal:
        np.fill_diagonal(p, 0)
        np.fill_diagonal(q, 0)
    return float(0.5 * np.abs(p / p.sum() - q / q.sum()).sum())


def two_row_distribution(jd: JointDistribution) -> JointDistribution:
    """
    Lay the pair distribution over two N-pixel rows.

    Photon one of each pair lands on the first row and photon two on the second.
    The returned 2N-pixel distribution has block form [[0, Γ/2], [Γᵀ/2, 0]].
    """
    n = jd.n_pixels
    gamma = np.zeros((2 * n, 2 * n))
    gamma[:n, n:] = jd.gamma / 2
    gamma[n:, :n] = jd.gamma.T / 2
    grid = PixelGrid(n_pixels=2 * n, pitch=jd.grid.pitch, origin=jd.grid.origin)
    return JointDistribution(grid, gamma)


def uniform_distribution(grid: PixelGrid) -> JointDistribution:
    n = grid.n_pixels
    return JointDistribution(grid, np.full((n, n), 1.0 / n**2))
