"""Invert accumulated moments to the joint pair distribution."""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from paircam.exceptions import (
    AllNonPositiveError,
    DimensionMismatchError,
    DomainError,
    NonPositiveLogArgumentError,
    SaturatedPixelError,
)
from paircam.sensor import FrameKind

logger = logging.getLogger(__name__)

NORMALIZED_ONLY = "normalized-only"
SATURATION_EPSILON = 1e-12


class ReconstructionResult:
    def __init__(
        self,
        gamma_hat: np.ndarray,
        raw: np.ndarray,
        diagonal_valid: bool,
        scale_note: str = NORMALIZED_ONLY,
        background_report: Optional[dict] = None,
        n_frames: Optional[int] = None,
    ) -> None:
        """Normalized Γ̂ with the raw inversion it was derived from."""
        self.gamma_hat = gamma_hat
        self.raw = raw
        self.diagonal_valid = diagonal_valid
        self.scale_note = scale_note
        self.background_report = background_report or {}
        self.n_frames = n_frames

    def __repr__(self) -> str:
        return "{}.{}({})".format(
            self.__class__.__module__,
            self.__class__.__qualname__,
            f"shape={self.gamma_hat.shape}, diagonal_valid={self.diagonal_valid}",
        )

    def conditional_profile(self, column: int) -> np.ndarray:
        """Γ̂ along the first photon's pixel for a fixed second-photon pixel."""
        profile = self.gamma_hat[:, column].copy()
        total = profile.sum()
        return profile / total if total > 0 else profile


def inversion_scale(
    kind: str, eta=None, mean_pairs=None, A=None
) -> Tuple[float, str]:
    """
    Scale factor of the raw inversion and its report note.

    Without the physical parameters the factor is 1 and only the normalized
    result is meaningful.
    """
    if kind == "spc":
        if eta and mean_pairs:
            return 1 / (2 * eta**2 * mean_pairs), "1/(2 eta^2 mean_pairs)"
    elif eta and mean_pairs and A:
        return 1 / (2 * A**2 * mean_pairs * eta**2), "1/(2 A^2 mean_pairs eta^2)"
    return 1.0, NORMALIZED_ONLY


def _means(mean, corr, mean_col):
    rows = np.asarray(mean, dtype=np.float64)
    cols = rows if mean_col is None else np.asarray(mean_col, dtype=np.float64)
    corr = np.asarray(corr, dtype=np.float64)
    if corr.shape != (len(rows), len(cols)):
        raise DimensionMismatchError(
            f"Correlation image {corr.shape} does not match means "
            f"({len(rows)}, {len(cols)})."
        )
    return rows, cols, corr


def _product(rows, cols, product):
    if product is None:
        return np.outer(rows, cols)
    product = np.asarray(product, dtype=np.float64)
    if product.shape != (len(rows), len(cols)):
        raise DimensionMismatchError("Product image does not match the means.")
    return product


def _mark_diagonal(raw, mean_col):
    if mean_col is None:
        np.fill_diagonal(raw, np.nan)
    return raw


def reconstruct_spc(
    mean_c,
    corr,
    eta=None,
    mean_pairs=None,
    *,
    mean_col=None,
    product=None,
    strict=False,
) -> np.ndarray:
    """
    SPC inversion of the coincidence excess:

        Γ_ij = ln[1 + (⟨c_i c_j⟩ − ⟨c_i⟩⟨c_j⟩) / ((1−⟨c_i⟩)(1−⟨c_j⟩))] / (2η²m̄)

    Parameters
    ----------
    mean_c: array-like
        Direct image ⟨c_i⟩.
    corr: array-like
        Correlation image ⟨c_i c_j⟩.
    eta, mean_pairs: float, optional
        Physical scale; omitted for a normalized-only reconstruction.
    mean_col: array-like, optional
        Direct image of the column pixels for a rectangular (two-row) block.
    product: array-like, optional
        Replacement for ⟨c_i⟩⟨c_j⟩, such as the successive-frame product.
    strict: bool
        Raise on a non-positive log argument instead of marking it −inf.

    Returns
    -------
    numpy.ndarray
        Raw Γ̂; the diagonal of a square image is NaN (not reconstructible).

    """
    rows, cols, corr = _means(mean_c, corr, mean_col)
    for means in (rows, cols):
        saturated = np.nonzero(means >= 1 - SATURATION_EPSILON)[0]
        if saturated.size:
            raise SaturatedPixelError(int(saturated[0]), float(means[saturated[0]]))

    excess = (corr - _product(rows, cols, product)) / np.outer(1 - rows, 1 - cols)
    if mean_col is None:
        np.fill_diagonal(excess, 0.0)
    invalid = excess <= -1
    if invalid.any():
        worst = np.unravel_index(np.argmin(excess), excess.shape)
        if strict:
            raise NonPositiveLogArgumentError(
                tuple(int(k) for k in worst), float(1 + excess[worst])
            )
        logger.debug(f"{int(invalid.sum())} non-positive log arguments set to -inf.")

    scale, _ = inversion_scale("spc", eta, mean_pairs)
    raw = np.log1p(np.where(invalid, 0.0, excess)) * scale
    raw[invalid] = -np.inf
    return _mark_diagonal(raw, mean_col)


def reconstruct_emccd(
    mean_x, corr, A=None, eta=None, mean_pairs=None, *, mean_col=None, product=None
) -> np.ndarray:
    """EMCCD inversion Γ_ij = (⟨x_i x_j⟩ − ⟨x_i⟩⟨x_j⟩) / (2A²m̄η²)."""
    rows, cols, corr = _means(mean_x, corr, mean_col)
    scale, _ = inversion_scale("emccd", eta, mean_pairs, A)
    raw = (corr - _product(rows, cols, product)) * scale
    return _mark_diagonal(raw, mean_col)


def reconstruct_general(
    mean_x,
    corr,
    A,
    x0,
    eta,
    mean_pairs,
    pair_variance,
    *,
    mean_col=None,
    product=None,
) -> np.ndarray:
    """
    EMCCD inversion corrected for non-Poissonian pair numbers.

    Subtracts (σ_m² − m̄)/m̄² (⟨x_i⟩ − x0)(⟨x_j⟩ − x0) from the covariance
    before scaling. A and eta may be None for a normalized-only result.
    """
    if not mean_pairs or mean_pairs <= 0:
        raise DomainError(f"The mean pair number must be positive, got {mean_pairs}.")
    rows, cols, corr = _means(mean_x, corr, mean_col)
    background = (pair_variance - mean_pairs) / mean_pairs**2 * np.outer(
        rows - x0, cols - x0
    )
    scale, _ = inversion_scale("emccd", eta, mean_pairs, A)
    raw = (corr - _product(rows, cols, product) - background) * scale
    return _mark_diagonal(raw, mean_col)


def reconstruct_diagonal(
    mean_x,
    mean_sq,
    A,
    x0,
    sigma0_sq,
    eta,
    mean_pairs,
    pair_variance,
    frame_kind: FrameKind = FrameKind.GRAY,
) -> Optional[np.ndarray]:
    """
    Γ̂_ii from the direct image and the mean squared gray values.

    Binary (SPC) frames carry no information on Γ_ii since c² = c; None is
    returned for them.
    """
    if frame_kind == FrameKind.BINARY:
        logger.warning("The diagonal cannot be reconstructed from binary frames.")
        return None
    if mean_pairs <= 0 or eta <= 0 or A <= 0:
        raise DomainError("The diagonal needs positive A, eta and mean pair number.")
    mean_x = np.asarray(mean_x, dtype=np.float64)
    mean_sq = np.asarray(mean_sq, dtype=np.float64)
    m, var = mean_pairs, pair_variance
    marginal = (mean_x - x0) / (2 * A * m * eta)
    residual = (
        mean_sq
        - 4 * A**2 * (m**2 + var - m) * eta**2 * marginal**2
        - 4 * (A**2 + A * x0) * m * eta * marginal
        - sigma0_sq
        - x0**2
    )
    return residual / (2 * A**2 * m * eta**2)


def estimate_background(raw: np.ndarray, filter_width: int = 15) -> np.ndarray:
    """
    Smooth background of a raw Γ̂ from a normalized box filter.

    Non-finite entries (invalid diagonal, −inf markers) are excluded from the
    average, and the kernel is renormalized where it is truncated at the edges.
    The estimate is defined at every entry, masked ones included.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if filter_width < 1:
        raise DomainError(f"Filter width must be at least 1, got {filter_width}.")
    if filter_width >= min(raw.shape):
        raise DomainError(
            f"Filter width {filter_width} must be smaller than the image {raw.shape}."
        )
    finite = np.isfinite(raw)
    data = np.where(finite, raw, 0.0)
    weight = ndimage.uniform_filter(
        finite.astype(np.float64), filter_width, mode="constant"
    )
    smooth = ndimage.uniform_filter(data, filter_width, mode="constant")
    return np.divide(smooth, weight, out=np.zeros_like(smooth), where=weight > 1e-12)


def remove_background(raw: np.ndarray, filter_width: int = 15) -> np.ndarray:
    """Subtract the smooth background estimated by `estimate_background`."""
    raw = np.asarray(raw, dtype=np.float64)
    return raw - estimate_background(raw, filter_width)


def finalize(
    raw: np.ndarray,
    diagonal: Optional[np.ndarray] = None,
    scale_note: str = NORMALIZED_ONLY,
    background_report: Optional[dict] = None,
    n_frames: Optional[int] = None,
) -> ReconstructionResult:
    """
    Clamp negative and invalid entries to zero and normalize to unit sum.

    Parameters
    ----------
    raw: numpy.ndarray
        Raw Γ̂. A NaN diagonal marks a non-reconstructible diagonal.
    diagonal: numpy.ndarray, optional
        Reconstructed Γ̂_ii to insert.
    scale_note: str
    background_report: dict, optional
    n_frames: int, optional

    Raises
    ------
    AllNonPositiveError
        If no positive entry remains.

    """
    gamma = np.array(raw, dtype=np.float64)
    square = gamma.shape[0] == gamma.shape[1]
    if diagonal is not None:
        np.fill_diagonal(gamma, diagonal)
        diagonal_valid = True
    elif square and np.isnan(np.diag(gamma)).all():
        np.fill_diagonal(gamma, 0.0)
        diagonal_valid = False
    else:
        diagonal_valid = True

    finite = np.isfinite(gamma)
    negative = finite & (gamma < 0)
    report = dict(background_report or {})
    report["n_nonpositive_log"] = int(np.isneginf(gamma).sum())
    report["n_invalid"] = int((~finite).sum())
    report["clamped_negative_mass"] = float(-gamma[negative].sum())

    cleaned = np.where(finite & (gamma > 0), gamma, 0.0)
    total = cleaned.sum()
    if not total > 0:
        raise AllNonPositiveError("No positive entry left to normalize.")
    return ReconstructionResult(
        gamma_hat=cleaned / total,
        raw=np.asarray(raw),
        diagonal_valid=diagonal_valid,
        scale_note=scale_note,
        background_report=report,
        n_frames=n_frames,
    )
