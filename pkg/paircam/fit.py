"""Least-squares fit of the double-Gaussian pair model to a reconstructed Γ̂."""

import logging
from typing import Iterable, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, confloat
from scipy import optimize

from paircam.exceptions import DomainError, NonConvergenceError
from paircam.grid import PixelGrid, double_gaussian_surface
from paircam.reconstruct import ReconstructionResult

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 200
PARAMETER_TOLERANCE = 1e-8
TRUNCATION_LEVEL = 0.1


class FitResult(BaseModel):
    """Fitted double-Gaussian widths (micrometers) and amplitude."""

    sigma_plus: confloat(gt=0)
    sigma_minus: confloat(gt=0)
    amplitude: float
    rms_residual: float
    n_evaluations: int = 0

    class Config:
        allow_mutation = False

    def surface(self, grid: PixelGrid) -> np.ndarray:
        return double_gaussian_surface(
            grid.centered_coordinates, self.amplitude, self.sigma_plus, self.sigma_minus
        )

    def to_report(self) -> dict:
        return {
            "sigma_plus_um": self.sigma_plus,
            "sigma_minus_um": self.sigma_minus,
            "amplitude": self.amplitude,
            "rms_residual": self.rms_residual,
        }


def _half_max_width(profile: np.ndarray) -> float:
    """Full width at half maximum of the highest peak, in pixels."""
    peak = int(np.argmax(profile))
    half = profile[peak] / 2
    left = peak
    while left > 0 and profile[left - 1] >= half:
        left -= 1
    right = peak
    while right < len(profile) - 1 and profile[right + 1] >= half:
        right += 1

    if left > 0:
        inner, outer = profile[left], profile[left - 1]
        left_edge = left - (inner - half) / (inner - outer)
    else:
        left_edge = left - 0.5
    if right < len(profile) - 1:
        inner, outer = profile[right], profile[right + 1]
        right_edge = right + (inner - half) / (inner - outer)
    else:
        right_edge = right + 0.5
    return right_edge - left_edge


def initial_guess(
    gamma: np.ndarray, grid: PixelGrid, mask_diagonal: bool = True
) -> Tuple[float, float, float]:
    """
    Deterministic starting point (amplitude, σ+, σ−) read off the data.

    σ+ comes from the half-maximum width of the ridge crossing row N/4, σ− from
    the spread of the anti-diagonal profile. When the anti-diagonal is cut off
    by the sensor edge, σ− comes from a quadratic fit to its logarithm.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    n = grid.n_pixels
    x = grid.centered_coordinates

    row = n // 4
    profile = gamma[row].copy()
    if mask_diagonal:
        profile[row] = 0.0
    profile = np.clip(profile, 0, None)
    width = _half_max_width(profile) * grid.pitch
    sigma_plus = max(width / (4 * np.sqrt(np.log(2))), grid.pitch / 4)

    index = np.arange(n)
    anti = np.clip(gamma[index, n - 1 - index], 0, None)
    distance = 2 * x
    keep = np.ones(n, dtype=bool)
    if mask_diagonal and n % 2:
        keep[n // 2] = False
    anti, distance = anti[keep], distance[keep]
    peak = anti.max()

    sigma_minus = None
    if min(anti[0], anti[-1]) > TRUNCATION_LEVEL * peak:
        usable = anti > 0
        slope, _ = np.polyfit(distance[usable] ** 2, np.log(anti[usable]), 1)
        if slope < 0:
            sigma_minus = np.sqrt(-1 / (4 * slope))
        else:
            sigma_minus = 10 * grid.pitch * n
    if sigma_minus is None:
        center = np.average(distance, weights=anti)
        spread = np.average((distance - center) ** 2, weights=anti)
        sigma_minus = np.sqrt(spread / 2)
    sigma_minus = max(sigma_minus, grid.pitch / 4)

    logger.debug(f"Initial guess σ+={sigma_plus:.4g} µm, σ−={sigma_minus:.4g} µm.")
    return float(peak), float(sigma_plus), float(sigma_minus)


def fit_double_gaussian(
    result: Union[ReconstructionResult, np.ndarray],
    grid: PixelGrid,
    guess: Optional[Tuple[float, float, float]] = None,
    mask_diagonal: Optional[bool] = None,
) -> FitResult:
    """
    Fit amplitude·exp(−u²/2σ+² − v²/2σ−²) to Γ̂.

    Parameters
    ----------
    result: ReconstructionResult or numpy.ndarray
        Normalized reconstruction, or a bare N×N matrix.
    grid: PixelGrid
        Pixel coordinates of the matrix axes.
    guess: tuple of float, optional
        Starting (amplitude, σ+, σ−); read off the data by default.
    mask_diagonal: bool, optional
        Leave the diagonal out of the residuals. Defaults to masking it when the
        reconstruction marks it invalid.

    Returns
    -------
    FitResult

    Raises
    ------
    NonConvergenceError
        If the damped Gauss-Newton iteration stops without meeting a tolerance.

    """
    if isinstance(result, ReconstructionResult):
        gamma = result.gamma_hat
        if mask_diagonal is None:
            mask_diagonal = not result.diagonal_valid
    else:
        gamma = np.asarray(result, dtype=np.float64)
    mask_diagonal = bool(mask_diagonal)

    n = grid.n_pixels
    if gamma.shape != (n, n):
        raise DomainError(f"Γ̂ has shape {gamma.shape}, grid has {n} pixels.")
    if n < 4:
        raise DomainError("The double-Gaussian fit needs at least 4 pixels.")

    mask = np.ones((n, n), dtype=bool)
    if mask_diagonal:
        np.fill_diagonal(mask, False)
    x = grid.centered_coordinates
    target = gamma[mask]
    scale = float(np.abs(target).max()) or 1.0

    def residuals(log_params):
        amplitude, sigma_plus, sigma_minus = np.exp(log_params)
        model = double_gaussian_surface(x, amplitude, sigma_plus, sigma_minus)
        return (model[mask] - target) / scale

    start = initial_guess(gamma, grid, mask_diagonal) if guess is None else guess
    solution = optimize.least_squares(
        residuals,
        np.log(start),
        method="lm",
        xtol=PARAMETER_TOLERANCE,
        ftol=1e-14,
        gtol=1e-14,
        max_nfev=MAX_ITERATIONS * (len(start) + 1),
    )
    amplitude, sigma_plus, sigma_minus = np.exp(solution.x)
    rms = float(np.sqrt(np.mean(solution.fun**2)))
    if solution.status <= 0:
        raise NonConvergenceError(
            f"Double-Gaussian fit did not converge: {solution.message}",
            last_iterate=(amplitude, sigma_plus, sigma_minus),
            residual=rms,
        )
    logger.info(f"Fitted σ+ = {sigma_plus:.4g} µm, σ− = {sigma_minus:.4g} µm.")
    return FitResult(
        sigma_plus=sigma_plus,
        sigma_minus=sigma_minus,
        amplitude=amplitude,
        rms_residual=rms,
        n_evaluations=solution.nfev,
    )


def profile_table(
    result: ReconstructionResult,
    grid: PixelGrid,
    columns: Iterable[int],
    fit: Optional[FitResult] = None,
) -> pd.DataFrame:
    """Conditional profiles Γ̂(X1 | X2 = c) next to the fitted model profiles."""
    table = pd.DataFrame({"x_um": grid.centers})
    surface = fit.surface(grid) if fit is not None else None
    for column in columns:
        if not 0 <= column < grid.n_pixels:
            raise DomainError(f"Profile column {column} outside the grid.")
        table[f"measured_c{column}"] = result.conditional_profile(column)
        if surface is not None:
            model = surface[:, column]
            table[f"fit_c{column}"] = model / model.sum()
    return table
