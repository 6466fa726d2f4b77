"""Pair-number statistics of the photon-pair source."""

import logging
import math
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, confloat, root_validator, validator
from scipy import stats

from paircam.exceptions import DomainError, TruncationError

logger = logging.getLogger(__name__)

TAIL_TOLERANCE = 1e-12
MAX_PAIRS = 200


class PoissonCounts(BaseModel):
    """Poisson-distributed number of pairs per frame."""

    kind: Literal["poisson"] = "poisson"
    mean: confloat(ge=0)

    class Config:
        allow_mutation = False

    @property
    def variance(self) -> float:
        return self.mean

    def truncated_pmf(self) -> np.ndarray:
        """P(m) for m = 0..m_max with tail mass below `TAIL_TOLERANCE`."""
        if self.mean == 0:
            return np.array([1.0])
        support = np.arange(MAX_PAIRS + 1)
        cdf = stats.poisson.cdf(support, self.mean)
        reached = np.nonzero(cdf >= 1 - TAIL_TOLERANCE)[0]
        if len(reached) == 0:
            raise TruncationError(
                f"Poisson tail mass {1 - cdf[-1]:.3g} exceeds {TAIL_TOLERANCE} at "
                f"m = {MAX_PAIRS} for mean {self.mean}."
            )
        m_max = int(reached[0])
        return stats.poisson.pmf(support[: m_max + 1], self.mean)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.poisson(self.mean, size=size)


class ExplicitCounts(BaseModel):
    """Tabulated pair-number distribution P(m) for m = 0..m_max."""

    kind: Literal["explicit"] = "explicit"
    probabilities: List[confloat(ge=0)]

    class Config:
        allow_mutation = False

    @validator("probabilities")
    def _validate_probabilities(cls, v):
        if not v:
            raise ValueError("At least one probability is required.")
        if len(v) > MAX_PAIRS + 1:
            raise ValueError(f"At most {MAX_PAIRS + 1} probabilities are supported.")
        if abs(math.fsum(v) - 1) > TAIL_TOLERANCE:
            raise ValueError(f"Probabilities sum to {math.fsum(v)!r}, not 1.")
        return v

    @property
    def mean(self) -> float:
        return math.fsum(m * p for m, p in enumerate(self.probabilities))

    @property
    def variance(self) -> float:
        second = math.fsum(m * m * p for m, p in enumerate(self.probabilities))
        return second - self.mean**2

    def truncated_pmf(self) -> np.ndarray:
        return np.array(self.probabilities, dtype=np.float64)

    def sample(self, rng: np.random.Generator, size=None):
        cdf = np.cumsum(self.probabilities)
        draws = np.searchsorted(cdf / cdf[-1], rng.random(size=size), side="right")
        return np.minimum(draws, len(self.probabilities) - 1)


class GenericMomentsCounts(BaseModel):
    """
    Pair-number distribution known only by its mean and variance.

    Closed-form moments need nothing else. Sampling and the general sums use a
    moment-matched distribution: Poisson when the variance equals the mean,
    negative binomial above it, and binomial or fixed below it.
    """

    kind: Literal["generic_moments"] = "generic_moments"
    mean: confloat(ge=0)
    variance: confloat(ge=0)

    class Config:
        allow_mutation = False

    def _matched(self) -> Tuple[str, tuple]:
        mean, variance = self.mean, self.variance
        if mean == 0:
            if variance != 0:
                raise DomainError("A zero mean pair number must have zero variance.")
            return "fixed", (0,)
        if math.isclose(variance, mean, rel_tol=1e-12):
            return "poisson", (mean,)
        if variance > mean:
            n = mean**2 / (variance - mean)
            return "nbinom", (n, n / (n + mean))
        if variance == 0:
            if not float(mean).is_integer():
                raise DomainError(f"A fixed pair number must be integer, got {mean}.")
            return "fixed", (int(mean),)
        n = mean**2 / (mean - variance)
        if not math.isclose(n, round(n), rel_tol=0, abs_tol=1e-9):
            raise DomainError(
                f"No binomial pair-number law has mean {mean} and variance {variance}; "
                "use explicit probabilities instead."
            )
        return "binom", (int(round(n)), mean / round(n))

    def truncated_pmf(self) -> np.ndarray:
        law, args = self._matched()
        if law == "fixed":
            pmf = np.zeros(args[0] + 1)
            pmf[-1] = 1.0
            return pmf
        if law == "binom":
            n, p = args
            if n > MAX_PAIRS:
                raise TruncationError(f"Binomial support {n} exceeds {MAX_PAIRS}.")
            return stats.binom.pmf(np.arange(n + 1), n, p)
        if law == "poisson":
            return PoissonCounts(mean=args[0]).truncated_pmf()
        support = np.arange(MAX_PAIRS + 1)
        cdf = stats.nbinom.cdf(support, *args)
        reached = np.nonzero(cdf >= 1 - TAIL_TOLERANCE)[0]
        if len(reached) == 0:
            raise TruncationError(
                f"Negative-binomial tail mass {1 - cdf[-1]:.3g} exceeds "
                f"{TAIL_TOLERANCE} at m = {MAX_PAIRS}."
            )
        return stats.nbinom.pmf(support[: int(reached[0]) + 1], *args)

    def sample(self, rng: np.random.Generator, size=None):
        law, args = self._matched()
        if law == "fixed":
            if size is None:
                return args[0]
            return np.full(size, args[0], dtype=np.int64)
        if law == "poisson":
            return rng.poisson(args[0], size=size)
        if law == "nbinom":
            return rng.negative_binomial(args[0], args[1], size=size)
        return rng.binomial(args[0], args[1], size=size)


PairCountDistribution = Union[PoissonCounts, ExplicitCounts, GenericMomentsCounts]


class SourceConfig(BaseModel):
    """Mean pair number per frame and the pair-number model."""

    mean_pairs: confloat(ge=0) = 0.0
    pair_number_model: Literal["poisson", "generic_moments", "explicit"] = "poisson"
    variance: Optional[confloat(ge=0)] = None
    probabilities: Optional[List[confloat(ge=0)]] = None

    class Config:
        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def _check_model_arguments(cls, values):
        model = values.get("pair_number_model")
        if model == "generic_moments" and values.get("variance") is None:
            raise ValueError("The generic_moments model requires a `variance`.")
        if model == "explicit":
            probabilities = values.get("probabilities")
            if not probabilities:
                raise ValueError("The explicit model requires `probabilities`.")
            values["mean_pairs"] = ExplicitCounts(probabilities=probabilities).mean
        return values

    def counts(self) -> PairCountDistribution:
        """Pair-count distribution described by this configuration."""
        if self.pair_number_model == "poisson":
            return PoissonCounts(mean=self.mean_pairs)
        if self.pair_number_model == "generic_moments":
            return GenericMomentsCounts(mean=self.mean_pairs, variance=self.variance)
        return ExplicitCounts(probabilities=self.probabilities)

    @property
    def pair_variance(self) -> float:
        return self.counts().variance


def as_counts(counts) -> PairCountDistribution:
    """Coerce a mean, dict, SourceConfig or distribution to a distribution."""
    if isinstance(counts, (PoissonCounts, ExplicitCounts, GenericMomentsCounts)):
        return counts
    if isinstance(counts, SourceConfig):
        return counts.counts()
    if isinstance(counts, (int, float)):
        if counts < 0:
            raise DomainError(f"Mean pair number must be non-negative, got {counts}.")
        return PoissonCounts(mean=counts)
    if isinstance(counts, dict):
        kind = counts.get("kind", "poisson")
        model = {
            "poisson": PoissonCounts,
            "explicit": ExplicitCounts,
            "generic_moments": GenericMomentsCounts,
        }.get(kind)
        if model is None:
            raise DomainError(f"Unknown pair-count model `{kind}`.")
        return model.parse_obj(counts)
    raise DomainError(f"Cannot interpret {counts!r} as a pair-count distribution.")
