"""Built-in consistency checks of the oracle, the inversions and the simulator."""

import logging
import math
from typing import List, NamedTuple

import numpy as np

from paircam import oracle
from paircam.enumeration import electron_counts, photon_counts
from paircam.grid import JointDistribution, PixelGrid, total_variation
from paircam.noise import EmccdNoiseParams
from paircam.reconstruct import (
    finalize,
    reconstruct_diagonal,
    reconstruct_emccd,
    reconstruct_general,
    reconstruct_spc,
)
from paircam.response import linear_response, spc_response
from paircam.source import TAIL_TOLERANCE, ExplicitCounts, PoissonCounts

logger = logging.getLogger(__name__)

ETAS = (0.3, 0.44, 1.0)
PAIR_NUMBERS = (0, 1, 2, 3)


class CheckFailed(Exception):
    pass


def _expect(condition: bool, message: str) -> None:
    if not condition:
        raise CheckFailed(message)


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def random_distribution(n_pixels: int, rng: np.random.Generator) -> JointDistribution:
    """Random symmetric Γ on a toy grid."""
    gamma = rng.random((n_pixels, n_pixels))
    gamma = gamma + gamma.T
    return JointDistribution(PixelGrid(n_pixels=n_pixels), gamma / gamma.sum())


def _relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def _tolerance_ratio(actual, expected, rtol=1e-10, atol=0.0) -> float:
    return abs(actual - expected) / (rtol * abs(expected) + atol)


def check_enumeration(rng) -> str:
    """Closed sums against exhaustive enumeration on toy sensors."""
    worst = 0.0
    for n_pixels in (2, 3, 4):
        for _ in range(3):
            jd = random_distribution(n_pixels, rng)
            p = jd.pair_parameters(0, 1)
            for m in PAIR_NUMBERS:
                photons = photon_counts(jd.gamma, (0, 1), m)
                for (n_i, n_j), expected in photons.items():
                    actual = oracle.p_joint_photons_given_pairs(
                        **p, n_i=n_i, n_j=n_j, m=m
                    )
                    worst = max(worst, abs(actual - expected))
                for eta in ETAS:
                    electrons = electron_counts(jd.gamma, (0,), eta, m)
                    for (k,), expected in electrons.items():
                        actual = oracle.p_electrons_given_pairs(
                            p["gamma_i"], p["gamma_ii"], eta, k, m
                        )
                        worst = max(worst, abs(actual - expected))
    _expect(worst < 1e-12, f"enumeration differs by {worst:.3g}")
    return f"max deviation {worst:.2g}"


def check_normalization(rng) -> str:
    worst = 0.0
    for _ in range(10):
        jd = random_distribution(3, rng)
        p = jd.pair_parameters(0, 1)
        for eta in ETAS:
            for m in PAIR_NUMBERS:
                single = math.fsum(
                    oracle.p_electrons_given_pairs(
                        p["gamma_i"], p["gamma_ii"], eta, k, m
                    )
                    for k in range(2 * m + 1)
                )
                joint = math.fsum(
                    oracle.p_joint_electrons_given_pairs(
                        **p, eta=eta, k_i=a, k_j=b, m=m
                    )
                    for a in range(2 * m + 1)
                    for b in range(2 * m + 1)
                )
                worst = max(worst, abs(single - 1), abs(joint - 1))
    _expect(worst < 1e-12, f"normalization off by {worst:.3g}")
    return f"max deviation {worst:.2g}"


def check_tables(rng) -> str:
    worst = 0.0
    for _ in range(10):
        jd = random_distribution(4, rng)
        p = jd.pair_parameters(1, 2)
        for eta in ETAS:
            m = 3
            table = oracle.joint_electron_table(**p, eta=eta, m=m)
            sums = [
                [
                    oracle.p_joint_electrons_given_pairs(
                        **p, eta=eta, k_i=a, k_j=b, m=m
                    )
                    for b in range(2 * m + 1)
                ]
                for a in range(2 * m + 1)
            ]
            worst = max(worst, float(np.max(np.abs(table - np.array(sums)))))
    _expect(worst < 1e-12, f"tables differ from closed sums by {worst:.3g}")
    return f"max deviation {worst:.2g}"


def check_closed_forms(rng) -> str:
    """General moments against closed forms; Poisson sums are truncated at 1e-12."""
    worst = 0.0
    for _ in range(20):
        jd = random_distribution(4, rng)
        p = jd.pair_parameters(0, 3)
        eta, mean_pairs, p10 = rng.uniform(0.3, 1), rng.uniform(0.5, 3), 0.015
        c_i, _, c_ij = oracle.spc_moments(**p, eta=eta, mean_pairs=mean_pairs, p10=p10)
        resp = spc_response(p10)
        counts = PoissonCounts(mean=mean_pairs)
        single = oracle.mean_output(p["gamma_i"], p["gamma_ii"], eta, counts, resp)
        pair = oracle.mean_output_pair(**p, eta=eta, counts=counts, resp=resp)
        worst = max(
            worst,
            _tolerance_ratio(single, c_i, atol=TAIL_TOLERANCE),
            _tolerance_ratio(pair, c_ij, atol=TAIL_TOLERANCE),
        )

        A, x0, sigma0_sq = 52.6, 569.0, 350.0
        counts = ExplicitCounts(probabilities=rng.dirichlet(np.ones(6)).tolist())
        x_i, _, x_ij, x_ii = oracle.emccd_moments(
            **p, eta=eta, counts=counts, A=A, x0=x0, sigma0_sq=sigma0_sq
        )
        resp = linear_response(A, x0, sigma0_sq)
        gamma_i, gamma_ii = p["gamma_i"], p["gamma_ii"]
        worst = max(
            worst,
            _tolerance_ratio(
                oracle.mean_output(gamma_i, gamma_ii, eta, counts, resp), x_i
            ),
            _tolerance_ratio(
                oracle.mean_output_pair(**p, eta=eta, counts=counts, resp=resp), x_ij
            ),
            _tolerance_ratio(
                oracle.mean_output_square(gamma_i, gamma_ii, eta, counts, resp), x_ii
            ),
        )
    _expect(worst <= 1, f"closed forms differ beyond tolerance (ratio {worst:.3g})")
    return f"max tolerance ratio {worst:.2g}"


def check_round_trips(rng) -> str:
    jd = random_distribution(8, rng)
    gamma = jd.gamma
    off = ~np.eye(8, dtype=bool)
    eta, mean_pairs = 0.44, 2.0
    A, x0, sigma0_sq = 52.6, 569.0, 350.0

    mean_c, corr_c = oracle.spc_moment_images(jd, eta, mean_pairs, 0.015)
    spc = reconstruct_spc(mean_c, corr_c, eta, mean_pairs)
    errors = [_relative_error(spc[off], gamma[off])]

    counts = PoissonCounts(mean=mean_pairs)
    mean_x, corr_x, square = oracle.emccd_moment_images(
        jd, eta, counts, A, x0, sigma0_sq
    )
    emccd = reconstruct_emccd(mean_x, corr_x, A, eta, mean_pairs)
    errors.append(_relative_error(emccd[off], gamma[off]))

    counts = ExplicitCounts(probabilities=[0.3, 0.1, 0.1, 0.2, 0.3])
    mean_x, corr_x, square = oracle.emccd_moment_images(
        jd, eta, counts, A, x0, sigma0_sq
    )
    general = reconstruct_general(
        mean_x, corr_x, A, x0, eta, counts.mean, counts.variance
    )
    errors.append(_relative_error(general[off], gamma[off]))
    diagonal = reconstruct_diagonal(
        mean_x, square, A, x0, sigma0_sq, eta, counts.mean, counts.variance
    )
    errors.append(_relative_error(diagonal, np.diag(gamma)))
    result = finalize(general, diagonal=diagonal)
    errors.append(_relative_error(result.gamma_hat, gamma))

    worst = max(errors)
    _expect(worst < 1e-10, f"round trip off by {worst:.3g} relative")
    return f"max relative deviation {worst:.2g}"


def check_emccd_linearity(samples: int):
    """Sampled reference-preset response against the constructed A, x0 and σ0."""

    def run(rng) -> str:
        noise = EmccdNoiseParams.reference_preset()
        k = np.arange(6)
        means = [noise.sample(np.full(samples, n), rng).mean() for n in k]
        slope, intercept = np.polyfit(k, means, 1)
        _expect(abs(slope / noise.A - 1) < 0.01, f"slope {slope:.4g}, A {noise.A:.4g}")
        _expect(
            abs(intercept / noise.x0 - 1) < 0.01,
            f"intercept {intercept:.4g} vs x0 {noise.x0:.4g}",
        )
        dark = noise.sample(np.zeros(10 * samples, dtype=np.int64), rng)
        sigma0 = np.sqrt(noise.sigma0_sq)
        spread = dark.std()
        _expect(abs(spread / sigma0 - 1) < 0.05, f"dark std {spread:.4g}")
        return f"slope {slope:.4g}, intercept {intercept:.4g}, dark std {spread:.4g}"

    return run


def check_monte_carlo(mode: dict, n_frames: int, num_cpu=None):
    from paircam.pipeline import Experiment

    def run(_rng) -> str:
        config = {
            "grid": {"n_pixels": 64, "pitch": 13.0},
            "source_model": {
                "kind": "double_gaussian",
                "sigma_plus": 12.06,
                "sigma_minus": 926.12,
            },
            "source": {"mean_pairs": 2.0},
            "sensor": {"eta": 0.44, "mode": mode},
            "n_frames": n_frames,
            "seed": 2024,
        }
        experiment = Experiment(config, num_cpu=num_cpu, show_progress=False)
        truth = experiment.config.ground_truth()
        accumulator = experiment.accumulate_simulation()
        result, fit, _ = experiment.reconstruct(accumulator, truth=truth)
        tv = total_variation(
            result.gamma_hat, truth.gamma, exclude_diagonal=not result.diagonal_valid
        )
        _expect(tv < 0.05, f"total variation {tv:.3g}")
        _expect(fit is not None, "fit did not converge")
        for fitted, expected in ((fit.sigma_plus, 12.06), (fit.sigma_minus, 926.12)):
            _expect(abs(fitted / expected - 1) < 0.1, f"fitted width {fitted:.4g}")
        return f"TV {tv:.3g}, σ+ {fit.sigma_plus:.4g}, σ− {fit.sigma_minus:.4g}"

    return run


def check_thresholded_equivalence(n_frames: int, threshold=516.0, num_cpu=None):
    """A thresholded EMCCD matches an SPC camera with its effective (η, p10)."""
    from paircam.pipeline import Experiment

    def run(_rng) -> str:
        config = {
            "grid": {"n_pixels": 64, "pitch": 13.0},
            "source_model": {
                "kind": "double_gaussian",
                "sigma_plus": 12.06,
                "sigma_minus": 926.12,
            },
            "source": {"mean_pairs": 2.0},
            "sensor": {
                "eta": 0.44,
                "mode": {
                    "kind": "emccd_thresholded",
                    "noise": "reference",
                    "threshold": threshold,
                },
            },
            "n_frames": n_frames,
            "seed": 2024,
        }
        experiment = Experiment(config, num_cpu=num_cpu, show_progress=False)
        sensor = experiment.config.sensor
        eta_eff, p10 = sensor.mode.noise.effective_spc(sensor.eta, threshold)
        mean, corr = oracle.spc_moment_images(
            experiment.config.ground_truth(), eta_eff, 2.0, p10
        )
        accumulator = experiment.accumulate_simulation()

        worst = 0.0
        for measured, expected in (
            (accumulator.mean_direct(), mean),
            (accumulator.mean_corr(), corr),
        ):
            se = np.sqrt(np.maximum(expected * (1 - expected), 1e-300) / n_frames)
            worst = max(worst, float(np.max(np.abs(measured - expected) / se)))
        _expect(worst < 5, f"deviation of {worst:.2f} standard errors")
        return f"p10 {p10:.4g}, η_eff {eta_eff:.4g}, max {worst:.2f} SE"

    return run


def check_background_robustness(n_frames: int, runs: int = 5, num_cpu=None):
    """Background removal lowers the TV distance under ±5 % gain drift."""
    from paircam.pipeline import Experiment

    def run(_rng) -> str:
        improved = 0
        for seed in range(runs):
            config = {
                "grid": {"n_pixels": 64, "pitch": 13.0},
                "source_model": {
                    "kind": "double_gaussian",
                    "sigma_plus": 12.06,
                    "sigma_minus": 926.12,
                },
                "source": {"mean_pairs": 2.0},
                "sensor": {
                    "eta": 0.44,
                    "mode": {"kind": "emccd_linear", "noise": "reference"},
                    "gain_drift": {"amplitude": 0.05, "period": n_frames / 4},
                },
                "n_frames": n_frames,
                "seed": seed,
                "reconstruction": {"inversion": "emccd", "fit": False},
            }
            plain = Experiment(config, num_cpu=num_cpu, show_progress=False)
            truth = plain.config.ground_truth()
            accumulator = plain.accumulate_simulation()
            filtered_config = dict(
                config,
                reconstruction=dict(config["reconstruction"], remove_background=True),
            )
            filtered = Experiment(filtered_config, show_progress=False)
            tv = [
                experiment.reconstruct(accumulator, truth=truth)[2]["tv_to_truth"]
                for experiment in (plain, filtered)
            ]
            improved += tv[1] < tv[0]
            logger.debug(f"Seed {seed}: TV {tv[0]:.4g} raw, {tv[1]:.4g} filtered.")
        _expect(improved >= runs - 1, f"filter helped in {improved} of {runs} runs")
        return f"filter helped in {improved} of {runs} runs"

    return run


def run_selftest(full: bool = False, seed: int = 0, num_cpu=None) -> List[CheckResult]:
    """
    Run the built-in checks.

    The quick set covers enumeration equivalence, conditional-probability
    normalization, convolution tables, closed-form moment identities and exact
    inversion round trips. `full` checks the sampled EMCCD response, runs
    end-to-end Monte Carlo for SPC and unthresholded EMCCD cameras, compares a
    thresholded EMCCD with the SPC moments and checks background removal under
    gain drift.
    """
    checks: List[tuple] = [
        ("enumeration", check_enumeration),
        ("normalization", check_normalization),
        ("convolution_tables", check_tables),
        ("closed_forms", check_closed_forms),
        ("round_trips", check_round_trips),
    ]
    if full:
        checks += [
            ("emccd_linearity", check_emccd_linearity(10**5)),
            (
                "monte_carlo_spc",
                check_monte_carlo({"kind": "spc", "p10": 0.015}, 10**6, num_cpu),
            ),
            (
                "monte_carlo_emccd",
                check_monte_carlo(
                    {"kind": "emccd_linear", "noise": "reference"}, 10**6, num_cpu
                ),
            ),
            (
                "thresholded_emccd_as_spc",
                check_thresholded_equivalence(10**5, num_cpu=num_cpu),
            ),
            (
                "background_robustness",
                check_background_robustness(2 * 10**5, num_cpu=num_cpu),
            ),
        ]

    results = []
    for name, check in checks:
        rng = np.random.default_rng(seed)
        try:
            detail = check(rng)
            results.append(CheckResult(name, True, detail))
        except CheckFailed as e:
            results.append(CheckResult(name, False, str(e)))
        logger.info(f"{name}: {'passed' if results[-1].passed else 'FAILED'}")
    return results
