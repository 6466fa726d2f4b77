import numpy as np
import pytest
from pydantic import ValidationError
from scipy.integrate import trapezoid

from paircam.exceptions import DomainError
from paircam.noise import REFERENCE_P10, REFERENCE_THRESHOLD, EmccdNoiseParams


@pytest.fixture
def noise():
    return EmccdNoiseParams(
        register_cells=100, p_c=0.02, alpha=0.1, p_par=0.1, sigma_r=10.0, mu=20.0
    )


class TestEmccdNoiseParams:
    def test_derived_quantities_without_spurious_charge(self):
        noise = EmccdNoiseParams(
            register_cells=50, p_c=0.01, alpha=0.5, sigma_r=4.0, mu=8.0, offset=3.0
        )
        assert noise.gain == pytest.approx(1.01**50)
        assert noise.A == pytest.approx(0.5 * 1.01**50)
        assert noise.x0 == pytest.approx(3.0 + 0.5 * 8.0)
        assert noise.sigma0_sq == pytest.approx(0.25 * 16.0)
        assert noise.noiseless is False

    def test_clock_induced_charge_moments(self, noise):
        g = noise.gain
        assert noise.x0 == pytest.approx(0.1 * (20.0 + 0.1 * g))
        assert noise.sigma0_sq == pytest.approx(0.01 * (100.0 + 0.1 * g**2 * 1.9))

    def test_invalid(self):
        with pytest.raises(ValidationError):
            EmccdNoiseParams(p_c=0.0, alpha=1.0)
        with pytest.raises(ValidationError):
            EmccdNoiseParams(p_c=0.01, alpha=1.0, p_par=1.5)

    def test_hashable(self, noise):
        assert hash(noise) == hash(noise.with_offset(noise.offset))

    def test_sample_moments(self, noise):
        rng = np.random.default_rng(11)
        values = noise.sample(np.full(40000, 3), rng)
        expected_mean = noise.x0 + noise.A * 3
        assert values.mean() == pytest.approx(expected_mean, rel=0.02)
        assert values.shape == (40000,)

    def test_sample_shape_and_gain_scale(self, noise):
        rng = np.random.default_rng(5)
        k = np.zeros((3, 4), dtype=int)
        assert noise.sample(k, rng).shape == (3, 4)
        scaled = noise.sample(np.full(20000, 2), rng, gain_scale=0.5)
        register_mean = 0.5 * (2 + noise.p_par) * noise.gain
        expected = noise.offset + noise.alpha * (noise.mu + register_mean)
        assert scaled.mean() == pytest.approx(expected, rel=0.03)


class TestRegisterModel:
    @pytest.mark.parametrize("k", [0, 1, 3, 20])
    def test_register_pmf(self, noise, k):
        support, pmf = noise.register_pmf(k)
        assert pmf.sum() == pytest.approx(1.0, abs=1e-6)
        mean = np.dot(support, pmf)
        assert mean == pytest.approx((k + noise.p_par) * noise.gain, rel=1e-3)

    def test_negative_electrons(self, noise):
        with pytest.raises(DomainError):
            noise.register_pmf(-1)

    def test_survival_increases_with_electrons(self, noise):
        threshold = noise.x0 + 3 * np.sqrt(noise.sigma0_sq)
        table = noise.survival_table(threshold, 5)
        assert np.all(np.diff(table) > 0)
        single = noise.response_survival(1, threshold)
        assert table[1] == pytest.approx(single, rel=1e-3)

    def test_dark_pdf_integrates_to_one(self, noise):
        low = noise.offset + noise.alpha * (noise.mu - 10 * noise.sigma_r)
        spread = 10 * noise.sigma_r + 40 * noise.gain
        high = noise.offset + noise.alpha * (noise.mu + spread)
        x = np.linspace(low, high, 20001)
        assert trapezoid(noise.dark_pdf(x), x) == pytest.approx(1.0, abs=2e-3)

    def test_dark_pdf_requires_readout_noise(self):
        with pytest.raises(DomainError):
            EmccdNoiseParams(p_c=0.01, alpha=1.0).dark_pdf([0.0])

    def test_calibrate_offset(self, noise):
        threshold = 10.0
        calibrated = noise.calibrate_offset(threshold, 0.02)
        p10 = calibrated.survival_table(threshold, 0)[0]
        assert p10 == pytest.approx(0.02, rel=1e-6)

    @pytest.mark.parametrize("p10", [0.0, 1.0])
    def test_calibrate_offset_range(self, noise, p10):
        with pytest.raises(DomainError):
            noise.calibrate_offset(10.0, p10)

    def test_effective_spc(self, noise):
        threshold = noise.x0 + 3 * np.sqrt(noise.sigma0_sq)
        eta_eff, p10 = noise.effective_spc(0.44, threshold)
        assert 0 < eta_eff < 0.44
        assert p10 == pytest.approx(noise.survival_table(threshold, 0)[0])


def test_reference_preset_dark_count_rate():
    noise = EmccdNoiseParams.reference_preset()
    assert noise.register_cells == 506
    p10 = noise.survival_table(REFERENCE_THRESHOLD, 0)[0]
    assert p10 == pytest.approx(REFERENCE_P10, rel=1e-6)
    assert noise.A == pytest.approx(noise.gain / 19)
    assert noise.x0 == pytest.approx(510.7, abs=0.5)


class TestReferencePresetSampling:
    def test_mean_response_is_linear(self):
        noise = EmccdNoiseParams.reference_preset()
        rng = np.random.default_rng(2024)
        k = np.arange(6)
        means = [noise.sample(np.full(100000, n), rng).mean() for n in k]
        slope, intercept = np.polyfit(k, means, 1)
        assert slope == pytest.approx(noise.A, rel=0.01)
        assert intercept == pytest.approx(noise.x0, rel=0.01)

    def test_dark_spread(self):
        noise = EmccdNoiseParams.reference_preset()
        dark = noise.sample(np.zeros(10**6, dtype=int), np.random.default_rng(3))
        assert dark.mean() == pytest.approx(noise.x0, rel=1e-3)
        assert dark.std() == pytest.approx(np.sqrt(noise.sigma0_sq), rel=0.05)
