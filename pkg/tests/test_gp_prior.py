import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectralbnn import fft_core, gp_prior
from spectralbnn.gp_prior import SpectrumProfile


def exact_filter_covariance_1d(profile):
    """Covariance of the (linear) sampling map, built column by column."""
    (n,) = profile.grid
    lay = fft_core.layout_1d(n)
    tau = np.sqrt(lay.coord_var_mult * profile.sigma0_sq / (1 + lay.coord_rho**profile.alpha))
    h = fft_core.unpack_effective(np.diag(tau), lay)
    A = np.sqrt(n) * np.fft.ifft(fft_core.hermitian_complete_1d(h, n), axis=-1).real.T
    return A @ A.T


class TestProfile:
    def test_validation(self):
        with pytest.raises(ValueError):
            SpectrumProfile(0.0, 1.0, (8,))
        with pytest.raises(ValueError):
            SpectrumProfile(1.0, -1.0, (8,))
        with pytest.raises(ValueError):
            SpectrumProfile(1.0, 1.0, (2, 2, 2))

    @pytest.mark.parametrize(
        "k,n,expected", [(0, 8, 0.0), (4, 8, 1.0), (6, 8, 0.5), (3, 7, 1.0), (5, 7, 2 / 3)]
    )
    def test_wrapped_radius(self, k, n, expected):
        assert gp_prior.rho(k, (n,)) == pytest.approx(expected)

    def test_rho_out_of_range(self):
        with pytest.raises(ValueError):
            gp_prior.rho(8, (8,))
        with pytest.raises(ValueError):
            gp_prior.rho((1,), (4, 4))

    def test_radius_2d_combines_axes(self):
        assert gp_prior.rho((2, 3), (4, 6)) == pytest.approx(np.hypot(1.0, 1.0))

    def test_flat_profile_is_half_sigma0(self):
        p = SpectrumProfile(3.0, 0.0, (8,))
        np.testing.assert_allclose(gp_prior.spectrum_full(p), 1.5)

    def test_low_pass_is_monotone_in_radius(self):
        p = SpectrumProfile(1.0, 2.0, (16,))
        S = gp_prior.spectrum_full(p)[:9]
        assert np.all(np.diff(S) < 0) and S[0] == 1.0

    @given(st.integers(1, 20), st.floats(0.0, 4.0))
    @settings(max_examples=40, deadline=None)
    def test_spectrum_is_even(self, n, alpha):
        S = gp_prior.spectrum_full(SpectrumProfile(1.0, alpha, (n,)))
        np.testing.assert_allclose(S, S[(-np.arange(n)) % n])


class TestCovariance:
    @pytest.mark.parametrize("n,alpha", [(8, 0.0), (9, 2.0), (16, 1.5)])
    def test_closed_form_matches_cosine_sum(self, n, alpha):
        p = SpectrumProfile(1.0, alpha, (n,))
        S = gp_prior.spectrum_full(p)
        k = np.arange(n)
        brute = np.array([np.sum(S * np.cos(2 * np.pi * k * t / n)) / n for t in range(n)])
        np.testing.assert_allclose(gp_prior.prior_covariance_1d(p), brute, atol=1e-14)

    @pytest.mark.parametrize("n,alpha", [(6, 0.0), (7, 1.0), (16, 2.0)])
    def test_sampling_map_covariance_is_circulant_kernel(self, n, alpha):
        p = SpectrumProfile(1.3, alpha, (n,))
        k = gp_prior.prior_covariance_1d(p)
        np.testing.assert_allclose(exact_filter_covariance_1d(p), fft_core.circulant_dense(k), atol=1e-12)

    def test_flat_profile_is_white(self):
        k = gp_prior.prior_covariance_1d(SpectrumProfile(2.0, 0.0, (12,)))
        np.testing.assert_allclose(k, np.r_[1.0, np.zeros(11)], atol=1e-15)

    def test_2d_closed_form(self):
        p = SpectrumProfile(1.0, 2.0, (4, 6))
        S = gp_prior.spectrum_full(p)
        u, v = np.meshgrid(np.arange(4), np.arange(6), indexing="ij")
        brute = np.array(
            [
                [np.sum(S * np.cos(2 * np.pi * (u * a / 4 + v * b / 6))) / 24 for b in range(6)]
                for a in range(4)
            ]
        )
        np.testing.assert_allclose(gp_prior.prior_covariance_2d(p), brute, atol=1e-14)

    def test_dimension_checks(self):
        with pytest.raises(ValueError):
            gp_prior.prior_covariance_2d(SpectrumProfile(1.0, 1.0, (4,)))
        with pytest.raises(ValueError):
            gp_prior.sample_prior_filter_1d(SpectrumProfile(1.0, 1.0, (4, 4)), np.random.default_rng())


class TestSampling:
    def test_spectrum_draws_are_hermitian_valid(self, rng):
        p = SpectrumProfile(1.0, 2.0, (10,))
        h = gp_prior.sample_prior_spectrum(p, rng, size=5)
        assert h.shape == (5, 6)
        assert np.all(h[:, 0].imag == 0) and np.all(h[:, -1].imag == 0)

    def test_spectrum_second_moment(self, rng):
        p = SpectrumProfile(2.0, 1.0, (8,))
        h = gp_prior.sample_prior_spectrum(p, rng, size=40000)
        S = gp_prior.spectrum_full(p)[:5]
        np.testing.assert_allclose(np.mean(np.abs(h) ** 2, axis=0), S, rtol=0.04)

    def test_filters_are_real_and_shaped(self, rng):
        w = gp_prior.sample_prior_filter_1d(SpectrumProfile(1.0, 1.0, (7,)), rng, 3)
        assert w.shape == (3, 7) and w.dtype == np.float64
        f = gp_prior.sample_prior_field_2d(SpectrumProfile(1.0, 1.0, (4, 5)), rng, 2)
        assert f.shape == (2, 4, 5) and f.dtype == np.float64

    def test_masked_layout_draws_zero_outside_band(self, rng):
        p = SpectrumProfile(1.0, 1.0, (12,))
        h = gp_prior.sample_prior_spectrum(p, rng, 4, layout=fft_core.layout_1d(12, 3))
        assert np.all(h[:, 3:] == 0)

    def test_seeded_draws_reproduce(self):
        p = SpectrumProfile(1.0, 2.0, (8, 8))
        a = gp_prior.sample_prior_field_2d(p, np.random.default_rng(4), 3)
        b = gp_prior.sample_prior_field_2d(p, np.random.default_rng(4), 3)
        np.testing.assert_array_equal(a, b)

    def test_imaginary_residue_guard(self):
        with pytest.raises(AssertionError, match="imaginary residue"):
            gp_prior._real_part(np.array([1.0 + 1e-6j]))
