import numpy as np
import pytest

from paircam.exceptions import DomainError
from paircam.fit import fit_double_gaussian, initial_guess, profile_table
from paircam.grid import DoubleGaussianParams, PixelGrid, build_double_gaussian
from paircam.reconstruct import finalize


def model(n_pixels, sigma_plus, sigma_minus, pitch=13.0):
    grid = PixelGrid(n_pixels=n_pixels, pitch=pitch)
    params = DoubleGaussianParams(sigma_plus=sigma_plus, sigma_minus=sigma_minus)
    return grid, build_double_gaussian(grid, params)


class TestFitDoubleGaussian:
    def test_anticorrelated_source(self):
        grid, jd = model(128, 12.06, 926.12)
        fit = fit_double_gaussian(jd.gamma, grid)
        assert fit.sigma_plus == pytest.approx(12.06, rel=0.02)
        assert fit.sigma_minus == pytest.approx(926.12, rel=0.02)
        assert fit.rms_residual < 1e-6

    def test_isotropic_source_without_diagonal(self):
        grid, jd = model(32, 50.0, 50.0)
        gamma = jd.gamma.copy()
        np.fill_diagonal(gamma, np.nan)
        result = finalize(gamma)
        fit = fit_double_gaussian(result, grid)
        assert fit.sigma_plus == pytest.approx(50.0, rel=0.01)
        assert fit.sigma_minus == pytest.approx(50.0, rel=0.01)

    def test_explicit_guess(self):
        grid, jd = model(32, 20.0, 120.0)
        fit = fit_double_gaussian(jd.gamma, grid, guess=(jd.gamma.max(), 15.0, 100.0))
        assert fit.sigma_plus == pytest.approx(20.0, rel=0.01)
        assert fit.sigma_minus == pytest.approx(120.0, rel=0.01)

    def test_shape_checks(self):
        grid = PixelGrid(n_pixels=8)
        with pytest.raises(DomainError):
            fit_double_gaussian(np.ones((6, 6)), grid)
        with pytest.raises(DomainError):
            fit_double_gaussian(np.ones((3, 3)), PixelGrid(n_pixels=3))

    def test_report(self):
        grid, jd = model(32, 20.0, 120.0)
        report = fit_double_gaussian(jd.gamma, grid).to_report()
        assert set(report) == {
            "sigma_plus_um",
            "sigma_minus_um",
            "amplitude",
            "rms_residual",
        }


def test_initial_guess_from_untruncated_profile():
    grid, jd = model(64, 15.0, 300.0)
    amplitude, sigma_plus, sigma_minus = initial_guess(jd.gamma, grid)
    assert amplitude == pytest.approx(jd.gamma.max(), rel=0.2)
    assert sigma_plus == pytest.approx(15.0, rel=0.5)
    assert sigma_minus == pytest.approx(300.0, rel=0.1)


def test_profile_table():
    grid, jd = model(16, 20.0, 100.0)
    result = finalize(jd.gamma)
    fit = fit_double_gaussian(result, grid)
    table = profile_table(result, grid, [4, 8], fit)
    assert list(table.columns) == [
        "x_um",
        "measured_c4",
        "fit_c4",
        "measured_c8",
        "fit_c8",
    ]
    assert table["measured_c4"].sum() == pytest.approx(1.0)
    np.testing.assert_allclose(table["fit_c8"], table["measured_c8"], atol=1e-6)
    with pytest.raises(DomainError):
        profile_table(result, grid, [16])
