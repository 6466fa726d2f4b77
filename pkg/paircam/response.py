"""Per-pixel detector response moments I_k and J_k."""

import logging
from typing import Callable

import numpy as np

from paircam.exceptions import DomainError

logger = logging.getLogger(__name__)

VARIANCE_TOLERANCE = 1e-12


class ResponseMoments:
    def __init__(
        self,
        mean_response: Callable[[np.ndarray], np.ndarray],
        second_moment: Callable[[np.ndarray], np.ndarray],
        name: str = "custom",
    ) -> None:
        """
        Mean I_k and second moment J_k of a pixel's output given k photoelectrons.

        Parameters
        ----------
        mean_response: callable
            Vectorized map from electron counts to I_k.
        second_moment: callable
            Vectorized map from electron counts to J_k.
        name: str
            Label used in reports.

        """
        self.mean_response = mean_response
        self.second_moment = second_moment
        self.name = name

    def __repr__(self) -> str:
        return f"{self.__class__.__qualname__}(name='{self.name}')"

    def mean(self, k) -> np.ndarray:
        return np.asarray(self.mean_response(np.asarray(k)), dtype=np.float64)

    def second(self, k) -> np.ndarray:
        return np.asarray(self.second_moment(np.asarray(k)), dtype=np.float64)

    def check_variance(self, k_max: int) -> None:
        """Raise DomainError if J_k < I_k² for some k ≤ k_max."""
        k = np.arange(k_max + 1)
        mean = self.mean(k)
        deficit = mean**2 - self.second(k)
        scale = np.maximum(1.0, mean**2)
        if (deficit > VARIANCE_TOLERANCE * scale).any():
            worst = int(np.argmax(deficit / scale))
            raise DomainError(
                f"Response `{self.name}` has negative variance at k = {worst}."
            )


def spc_response(p10: float) -> ResponseMoments:
    """Binary output: fires for any electron, else with dark probability p10."""
    if not 0 <= p10 <= 1:
        raise DomainError(f"p10 must lie in [0, 1], got {p10}.")

    def mean(k):
        return np.where(k > 0, 1.0, p10)

    return ResponseMoments(mean, mean, name="spc")


def linear_response(A: float, x0: float, sigma0_sq: float) -> ResponseMoments:
    """Unthresholded EMCCD: I_k = A k + x0, J_k = (A k + x0)² + A² k + σ0²."""
    if A <= 0:
        raise DomainError(f"Gain A must be positive, got {A}.")
    if sigma0_sq < 0:
        raise DomainError(f"Background variance must be non-negative, got {sigma0_sq}.")

    def mean(k):
        return A * k + x0

    def second(k):
        return (A * k + x0) ** 2 + A**2 * k + sigma0_sq

    return ResponseMoments(mean, second, name="linear")


def thresholded_response(noise, threshold: float, k_max: int = 64) -> ResponseMoments:
    """
    Thresholded EMCCD: I_k = J_k = P(X ≥ threshold | k).

    Survival probabilities are tabulated for k = 0..k_max from the register model.
    """
    table = noise.survival_table(threshold, k_max)

    def mean(k):
        if np.any(k > k_max):
            raise DomainError(
                f"Thresholded response tabulated up to k = {k_max}, got {np.max(k)}."
            )
        return table[k]

    return ResponseMoments(mean, mean, name="thresholded")
