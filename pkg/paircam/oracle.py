"""
Exact conditional probabilities and output moments of a pixelated pair detector.

Conditional probabilities of photon (n) and photoelectron (k) numbers given m
pairs per frame are evaluated with closed combinatorial sums. The general
moment operations combine a pair-count distribution with any detector response
(I_k, J_k) through conditional tables built by repeated convolution of the
single-pair outcome distribution. SPC and linear EMCCD closed forms are
provided for Poisson and generic pair statistics.

Gamma values follow the symmetric-distribution convention: gamma_ij is the
probability of the ordered cell (i, j) and equals gamma_ji.
"""

import logging
import math
from typing import Tuple

import numpy as np
from numpy.polynomial import polynomial
from scipy.special import gammaln

from paircam.exceptions import DomainError, UnknownOracleOperationError
from paircam.noise import EmccdNoiseParams
from paircam.response import (
    ResponseMoments,
    linear_response,
    spc_response,
    thresholded_response,
)
from paircam.source import PoissonCounts, as_counts

logger = logging.getLogger(__name__)

EXACT_BINOMIAL_LIMIT = 30
PROBABILITY_TOLERANCE = 1e-12


def binom(n: int, k: int) -> float:
    """Binomial coefficient, zero outside 0 ≤ k ≤ n."""
    if n < 0 or k < 0 or k > n:
        return 0.0
    if n <= EXACT_BINOMIAL_LIMIT:
        return float(math.comb(n, k))
    return math.exp(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def _check_count(name, value, upper=None):
    if int(value) != value or value < 0:
        raise DomainError(f"`{name}` must be a non-negative integer, got {value}.")
    if upper is not None and value > upper:
        raise DomainError(f"`{name}` = {value} exceeds its maximum {upper}.")
    return int(value)


def _check_probability(name, value):
    if not -PROBABILITY_TOLERANCE <= value <= 1 + PROBABILITY_TOLERANCE:
        raise DomainError(f"`{name}` must be a probability, got {value!r}.")
    return min(max(value, 0.0), 1.0)


def _single_pair_outcomes(gamma_i, gamma_ii, eta) -> Tuple[float, float, float]:
    """Probabilities that one pair yields 2, 1 or 0 electrons at pixel i."""
    _check_probability("eta", eta)
    if gamma_ii < -PROBABILITY_TOLERANCE or gamma_ii > gamma_i + PROBABILITY_TOLERANCE:
        raise DomainError(
            f"Need 0 ≤ gamma_ii ≤ gamma_i, got gamma_ii={gamma_ii}, "
            f"gamma_i={gamma_i}."
        )
    _check_probability("2 gamma_i − gamma_ii", 2 * gamma_i - gamma_ii)
    both = eta**2 * gamma_ii
    one = 2 * eta * gamma_i - 2 * eta**2 * gamma_ii
    none = 1 - 2 * eta * gamma_i + eta**2 * gamma_ii
    return (
        _check_probability("P(2 electrons)", both),
        _check_probability("P(1 electron)", one),
        _check_probability("P(0 electrons)", none),
    )


def _joint_pair_outcomes(gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, eta):
    """
    Probabilities of the six single-pair outcomes at pixels (i, j).

    Returned order: (2,0), (0,2), (1,1), (1,0), (0,1), (0,0) electrons.
    """
    _check_probability("eta", eta)
    for name, value in _outcome_probabilities(
        gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, 1.0
    ).items():
        _check_probability(name, value)
    return tuple(
        _check_probability(name, value)
        for name, value in _outcome_probabilities(
            gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, eta
        ).items()
    )


def _outcome_probabilities(gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, eta):
    e2 = eta**2
    return {
        "P(2,0)": e2 * gamma_ii,
        "P(0,2)": e2 * gamma_jj,
        "P(1,1)": 2 * e2 * gamma_ij,
        "P(1,0)": 2 * eta * gamma_i - 2 * e2 * gamma_ii - 2 * e2 * gamma_ij,
        "P(0,1)": 2 * eta * gamma_j - 2 * e2 * gamma_jj - 2 * e2 * gamma_ij,
        "P(0,0)": (
            1
            - 2 * eta * gamma_i
            - 2 * eta * gamma_j
            + e2 * gamma_ii
            + e2 * gamma_jj
            + 2 * e2 * gamma_ij
        ),
    }


def _single_sum(both, one, none, n, m) -> float:
    terms = []
    for q in range(n // 2 + 1):
        weight = binom(n - q, q) * binom(m, n - q)
        if weight == 0:
            continue
        terms.append(weight * both**q * one ** (n - 2 * q) * none ** (m - n + q))
    return math.fsum(terms)


def _joint_sum(outcomes, n_i, n_j, m) -> float:
    p20, p02, p11, p10, p01, p00 = outcomes
    terms = []
    for q in range((n_i + n_j) // 2 + 1):
        m00 = m - (n_i + n_j - q)
        if m00 < 0:
            continue
        for m11 in range(q + 1):
            for m02 in range(q - m11 + 1):
                m20 = q - m02 - m11
                m01 = n_j - 2 * m02 - m11
                m10 = n_i + m11 - 2 * (q - m02)
                if m01 < 0 or m10 < 0:
                    continue
                weight = (
                    binom(m, m00)
                    * binom(m - m00, m10)
                    * binom(m - m00 - m10, m01)
                    * binom(q, m11)
                    * binom(q - m11, m02)
                )
                terms.append(
                    weight
                    * p20**m20
                    * p02**m02
                    * p11**m11
                    * p10**m10
                    * p01**m01
                    * p00**m00
                )
    return math.fsum(terms)


def p_photons_given_pairs(gamma_i, gamma_ii, n, m) -> float:
    """
    Probability of n photons at pixel i given m pairs.

    Parameters
    ----------
    gamma_i: float
        Marginal probability Σ_j Γ_ij.
    gamma_ii: float
        Probability that both photons of a pair hit pixel i.
    n: int
        Photon number, 0 ≤ n ≤ 2m.
    m: int
        Pair number.

    """
    m = _check_count("m", m)
    n = _check_count("n", n, upper=2 * m)
    return _single_sum(*_single_pair_outcomes(gamma_i, gamma_ii, 1.0), n, m)


def p_electrons_given_pairs(gamma_i, gamma_ii, eta, k, m) -> float:
    """Probability of k photoelectrons at pixel i given m pairs."""
    m = _check_count("m", m)
    k = _check_count("k", k, upper=2 * m)
    return _single_sum(*_single_pair_outcomes(gamma_i, gamma_ii, eta), k, m)


def p_joint_photons_given_pairs(
    gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, n_i, n_j, m
) -> float:
    """Probability of (n_i, n_j) photons at two distinct pixels given m pairs."""
    m = _check_count("m", m)
    n_i = _check_count("n_i", n_i, upper=2 * m)
    n_j = _check_count("n_j", n_j, upper=2 * m)
    outcomes = _joint_pair_outcomes(gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, 1.0)
    return _joint_sum(outcomes, n_i, n_j, m)


def p_joint_electrons_given_pairs(
    gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, eta, k_i, k_j, m
) -> float:
    """Probability of (k_i, k_j) photoelectrons at two distinct pixels given m pairs."""
    m = _check_count("m", m)
    k_i = _check_count("k_i", k_i, upper=2 * m)
    k_j = _check_count("k_j", k_j, upper=2 * m)
    outcomes = _joint_pair_outcomes(gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, eta)
    return _joint_sum(outcomes, k_i, k_j, m)


def _electron_tables(outcomes, m_max):
    both, one, none = outcomes
    kernel = np.array([none, one, both])
    table = np.ones(1)
    for m in range(m_max + 1):
        if m > 0:
            table = np.convolve(table, kernel)
        yield table


def _joint_electron_tables(outcomes, m_max):
    p20, p02, p11, p10, p01, p00 = outcomes
    shifts = (
        (0, 0, p00),
        (1, 0, p10),
        (0, 1, p01),
        (2, 0, p20),
        (0, 2, p02),
        (1, 1, p11),
    )
    table = np.ones((1, 1))
    for m in range(m_max + 1):
        if m > 0:
            size = table.shape[0]
            grown = np.zeros((size + 2, size + 2))
            for di, dj, probability in shifts:
                grown[di : di + size, dj : dj + size] += probability * table
            table = grown
        yield table


def electron_table(gamma_i, gamma_ii, eta, m) -> np.ndarray:
    """P(k | m) for k = 0..2m by repeated convolution of one pair's outcomes."""
    m = _check_count("m", m)
    outcomes = _single_pair_outcomes(gamma_i, gamma_ii, eta)
    for table in _electron_tables(outcomes, m):
        pass
    return table


def joint_electron_table(gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, eta, m):
    """P(k_i, k_j | m) as a (2m+1)×(2m+1) matrix."""
    m = _check_count("m", m)
    outcomes = _joint_pair_outcomes(gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, eta)
    for table in _joint_electron_tables(outcomes, m):
        pass
    return table


def mean_output(gamma_i, gamma_ii, eta, counts, resp: ResponseMoments) -> float:
    """⟨x_i⟩ = Σ_m P(m) Σ_k I_k P(k|m)."""
    return _single_moment(gamma_i, gamma_ii, eta, counts, resp.mean)


def mean_output_square(gamma_i, gamma_ii, eta, counts, resp: ResponseMoments) -> float:
    """⟨x_i²⟩ = Σ_m P(m) Σ_k J_k P(k|m)."""
    pmf = as_counts(counts).truncated_pmf()
    resp.check_variance(2 * (len(pmf) - 1))
    return _single_moment(gamma_i, gamma_ii, eta, counts, resp.second)


def _single_moment(gamma_i, gamma_ii, eta, counts, weights) -> float:
    pmf = as_counts(counts).truncated_pmf()
    m_max = len(pmf) - 1
    outcomes = _single_pair_outcomes(gamma_i, gamma_ii, eta)
    values = weights(np.arange(2 * m_max + 1))
    terms = []
    for m, table in enumerate(_electron_tables(outcomes, m_max)):
        terms.extend((pmf[m] * table * values[: 2 * m + 1]).tolist())
    return math.fsum(terms)


def mean_output_pair(
    gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, eta, counts, resp: ResponseMoments
) -> float:
    """⟨x_i x_j⟩ = Σ_m P(m) Σ I_{k_i} I_{k_j} P(k_i,k_j|m), for i ≠ j."""
    pmf = as_counts(counts).truncated_pmf()
    m_max = len(pmf) - 1
    outcomes = _joint_pair_outcomes(gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, eta)
    values = resp.mean(np.arange(2 * m_max + 1))
    terms = []
    for m, table in enumerate(_joint_electron_tables(outcomes, m_max)):
        weights = np.outer(values[: 2 * m + 1], values[: 2 * m + 1])
        terms.extend((pmf[m] * table * weights).ravel().tolist())
    return math.fsum(terms)


def _generating_function(counts, loss):
    """G(s) = Σ_m P(m) s^m evaluated at s = 1 − loss."""
    if isinstance(counts, PoissonCounts):
        return np.exp(-counts.mean * loss)
    return polynomial.polyval(1 - loss, counts.truncated_pmf())


def spc_moments(
    gamma_i,
    gamma_j,
    gamma_ii,
    gamma_jj,
    gamma_ij,
    eta,
    mean_pairs,
    p10,
    counts=None,
) -> Tuple[float, float, float]:
    """
    SPC mean counts ⟨c_i⟩, ⟨c_j⟩ and coincidence rate ⟨c_i c_j⟩.

    Poisson pair numbers with mean `mean_pairs` unless `counts` gives another
    distribution with explicit P(m).
    """
    _joint_pair_outcomes(gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, eta)
    _check_probability("p10", p10)
    counts = as_counts(mean_pairs if counts is None else counts)

    e2 = eta**2
    loss_i = 2 * eta * gamma_i - e2 * gamma_ii
    loss_j = 2 * eta * gamma_j - e2 * gamma_jj
    loss_ij = loss_i + loss_j - 2 * e2 * gamma_ij
    g_i, g_j, g_ij = (
        float(_generating_function(counts, loss)) for loss in (loss_i, loss_j, loss_ij)
    )
    dark = 1 - p10
    c_i = 1 - dark * g_i
    c_j = 1 - dark * g_j
    c_ij = 1 - dark * (g_i + g_j) + dark**2 * g_ij
    return c_i, c_j, c_ij


def emccd_moments(
    gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, eta, counts, A, x0, sigma0_sq
) -> Tuple[float, float, float, float]:
    """
    Linear-response EMCCD moments ⟨x_i⟩, ⟨x_j⟩, ⟨x_i x_j⟩ and ⟨x_i²⟩.

    Only the mean and variance of the pair number enter.
    """
    if A <= 0:
        raise DomainError(f"Gain A must be positive, got {A}.")
    _joint_pair_outcomes(gamma_i, gamma_j, gamma_ii, gamma_jj, gamma_ij, eta)
    counts = as_counts(counts)
    m, var = counts.mean, counts.variance
    excess = m**2 + var - m

    x_i = x0 + 2 * A * m * eta * gamma_i
    x_j = x0 + 2 * A * m * eta * gamma_j
    x_ij = (
        x0**2
        + 2 * A * x0 * m * eta * (gamma_i + gamma_j)
        + 4 * A**2 * excess * eta**2 * gamma_i * gamma_j
        + 2 * A**2 * m * eta**2 * gamma_ij
    )
    x_ii = (
        2 * A**2 * m * eta**2 * gamma_ii
        + 4 * A**2 * excess * eta**2 * gamma_i**2
        + 4 * (A**2 + A * x0) * m * eta * gamma_i
        + sigma0_sq
        + x0**2
    )
    return x_i, x_j, x_ij, x_ii


def spc_moment_images(jd, eta, counts, p10):
    """
    Direct and correlation images of an SPC camera for a whole distribution.

    Returns ⟨c_i⟩ and the matrix ⟨c_i c_j⟩, whose diagonal equals ⟨c_i⟩.
    """
    counts = as_counts(counts)
    gamma = (jd.gamma + jd.gamma.T) / 2
    marginal = gamma.sum(axis=1)
    diagonal = np.diag(gamma)
    loss = 2 * eta * marginal - eta**2 * diagonal
    joint_loss = loss[:, None] + loss[None, :] - 2 * eta**2 * gamma
    dark = 1 - p10
    g = _generating_function(counts, loss)
    mean = 1 - dark * g
    corr = 1 - dark * (g[:, None] + g[None, :]) + dark**2 * _generating_function(
        counts, joint_loss
    )
    np.fill_diagonal(corr, mean)
    return mean, corr


def emccd_moment_images(jd, eta, counts, A, x0, sigma0_sq):
    """Linear EMCCD images ⟨x_i⟩, ⟨x_i x_j⟩ and ⟨x_i²⟩ for a whole distribution."""
    counts = as_counts(counts)
    m, var = counts.mean, counts.variance
    excess = m**2 + var - m
    gamma = (jd.gamma + jd.gamma.T) / 2
    marginal = gamma.sum(axis=1)
    diagonal = np.diag(gamma)
    mean = x0 + 2 * A * m * eta * marginal
    corr = (
        x0**2
        + 2 * A * x0 * m * eta * (marginal[:, None] + marginal[None, :])
        + 4 * A**2 * excess * eta**2 * np.outer(marginal, marginal)
        + 2 * A**2 * m * eta**2 * gamma
    )
    square = (
        2 * A**2 * m * eta**2 * diagonal
        + 4 * A**2 * excess * eta**2 * marginal**2
        + 4 * (A**2 + A * x0) * m * eta * marginal
        + sigma0_sq
        + x0**2
    )
    np.fill_diagonal(corr, square)
    return mean, corr, square


def _noise_from_query(noise) -> EmccdNoiseParams:
    if isinstance(noise, str) and noise.lower() == "reference":
        return EmccdNoiseParams.reference_preset()
    if isinstance(noise, dict):
        return EmccdNoiseParams.parse_obj(noise)
    raise DomainError(f"Cannot interpret {noise!r} as EMCCD noise parameters.")


def _response_from_query(response: dict) -> ResponseMoments:
    kind = response.get("kind")
    if kind == "spc":
        return spc_response(response["p10"])
    if kind == "linear":
        return linear_response(response["A"], response["x0"], response["sigma0_sq"])
    if kind == "thresholded":
        return thresholded_response(
            _noise_from_query(response["noise"]),
            response["threshold"],
            response.get("k_max", 64),
        )
    raise DomainError(f"Unknown response kind `{kind}`.")


def _emccd_query(noise=None, **arguments):
    if noise is not None:
        noise = _noise_from_query(noise)
        arguments.setdefault("A", noise.A)
        arguments.setdefault("x0", noise.x0)
        arguments.setdefault("sigma0_sq", noise.sigma0_sq)
    return emccd_moments(**arguments)


def _with_response(function):
    def query(response, **arguments):
        return function(resp=_response_from_query(response), **arguments)

    return query


ORACLE_OPERATIONS = {
    "p_photons_given_pairs": (p_photons_given_pairs, None),
    "p_electrons_given_pairs": (p_electrons_given_pairs, None),
    "p_joint_photons_given_pairs": (p_joint_photons_given_pairs, None),
    "p_joint_electrons_given_pairs": (p_joint_electrons_given_pairs, None),
    "electron_table": (electron_table, None),
    "joint_electron_table": (joint_electron_table, None),
    "mean_output": (_with_response(mean_output), None),
    "mean_output_square": (_with_response(mean_output_square), None),
    "mean_output_pair": (_with_response(mean_output_pair), None),
    "spc_moments": (spc_moments, ("mean_c_i", "mean_c_j", "mean_c_ij")),
    "emccd_moments": (
        _emccd_query,
        ("mean_x_i", "mean_x_j", "mean_x_ij", "mean_x_i_sq"),
    ),
}


def run_oracle_query(query: dict) -> dict:
    """
    Evaluate one oracle operation from a JSON-style query.

    The query names the operation under `op`; every other key is passed as a
    keyword argument. `counts` may be a mean or a pair-count dict, `response` a
    dict with `kind` spc, linear or thresholded, and `noise` the string "reference"
    or a dict of register parameters.
    """
    arguments = dict(query)
    op = arguments.pop("op", None)
    if op not in ORACLE_OPERATIONS:
        raise UnknownOracleOperationError(
            f"Unknown oracle operation `{op}`; expected one of "
            f"{sorted(ORACLE_OPERATIONS)}."
        )
    function, names = ORACLE_OPERATIONS[op]
    try:
        value = function(**arguments)
    except TypeError as e:
        raise DomainError(f"Bad arguments for `{op}`: {e}") from e
    except KeyError as e:
        raise DomainError(f"Missing response parameter {e} for `{op}`.") from e

    if names is not None:
        value = dict(zip(names, (float(v) for v in value)))
    elif isinstance(value, np.ndarray):
        value = value.tolist()
    else:
        value = float(value)
    return {"op": op, "result": value}
