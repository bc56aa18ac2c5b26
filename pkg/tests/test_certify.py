import math

import numpy as np
import pytest

from spectralbnn import certify as cert
from spectralbnn.layers import SpectralBCCB2D, SpectralCirculant1D
from spectralbnn.model import ModelSpec, logits, network_layers
from spectralbnn.svi import GuideConfig, init_params, posterior_mean

from _oracles import dense_1d, dense_2d


class TestNorms:
    @pytest.mark.parametrize("d,K", [(8, None), (9, None), (16, 4)])
    def test_1d_equals_dense_singular_value(self, d, K, rng):
        layer = SpectralCirculant1D(np.fft.rfft(rng.standard_normal(d)), d, K)
        sv = np.linalg.norm(dense_1d(layer.masked_response(), d), 2)
        assert cert.spectral_norm_1d(layer) == pytest.approx(sv, abs=1e-10)

    @pytest.mark.parametrize("c_out,c_in,K_rad", [(1, 1, None), (2, 3, None), (3, 2, 0.5)])
    def test_2d_equals_dense_singular_value(self, c_out, c_in, K_rad, rng):
        dims = (4, 6)
        K = np.fft.rfft2(rng.standard_normal((c_out, c_in) + dims))
        layer = SpectralBCCB2D(K, dims, K_rad)
        sv = np.linalg.norm(dense_2d(layer.masked_response(), dims), 2)
        assert cert.spectral_norm_2d(layer) == pytest.approx(sv, abs=1e-10)

    def test_dense_norm_power_iteration_branch(self, rng):
        W = rng.standard_normal((300, 280))
        assert cert.dense_norm(W, iters=500, tol=1e-14, exact_below=10) == pytest.approx(
            np.linalg.norm(W, 2), rel=1e-6
        )

    def test_dense_norm_rejects_vectors(self):
        with pytest.raises(ValueError):
            cert.dense_norm(np.ones(3))

    def test_unclassified_layer(self):
        with pytest.raises(TypeError, match="unclassified layer"):
            cert.layer_norm([[1.0]])


class TestNetworkBound:
    def test_product_of_norms(self, rng):
        A, B = rng.standard_normal((5, 4)), rng.standard_normal((3, 5))
        L, norms = cert.network_lipschitz([A, "tanh", B])
        assert L == pytest.approx(np.linalg.norm(A, 2) * np.linalg.norm(B, 2))
        assert len(norms) == 2

    def test_undeclared_activation(self, rng):
        with pytest.raises(TypeError, match="1-Lipschitz"):
            cert.network_lipschitz([np.eye(2), "softsign-ish"])

    @pytest.mark.parametrize("kind,shape", [("spectral1d", (12,)), ("spectral2d", (4, 4)), ("dense", (6,))])
    def test_bounds_empirical_sensitivity(self, kind, shape, rng):
        spec = ModelSpec(kind, shape, num_classes=3, hidden=5 if kind == "dense" else None)
        theta = posterior_mean(spec, init_params(spec, GuideConfig(mu_scale=1.0), rng))
        L, _ = cert.network_lipschitz(network_layers(spec, theta))
        for _ in range(50):
            x = rng.standard_normal((1,) + shape)
            dx = 1e-3 * rng.standard_normal(x.shape)
            dz = logits(spec, theta, x + dx) - logits(spec, theta, x)
            assert np.linalg.norm(dz) <= L * np.linalg.norm(dx) * (1 + 1e-9)


class TestMargins:
    def test_margin_values(self):
        z = np.array([[2.0, 0.5, 1.0], [0.0, 3.0, -1.0]])
        np.testing.assert_allclose(cert.margin(z, [0, 0]), [1.0, -3.0])
        assert cert.margin(np.array([1.0, 4.0]), 1) == 3.0

    def test_margin_needs_two_classes(self):
        with pytest.raises(ValueError):
            cert.margin(np.ones((2, 1)), [0, 0])

    def test_radius(self):
        assert cert.cert_radius(3.0, 1.5) == 1.0
        np.testing.assert_array_equal(cert.cert_radius(np.array([-1.0, 2.0]), 2.0), [0.0, 0.5])
        with pytest.raises(ValueError):
            cert.cert_radius(1.0, 0.0)

    def test_certified_radius_is_sound(self, rng):
        # no perturbation inside the radius flips the prediction
        spec = ModelSpec("spectral1d", (10,), num_classes=4)
        theta = posterior_mean(spec, init_params(spec, GuideConfig(mu_scale=1.0), rng))
        X = rng.standard_normal((20, 10))
        y = logits(spec, theta, X).argmax(axis=1)
        report = cert.CertReport.from_logits(logits(spec, theta, X), y, network_layers(spec, theta))
        for x, label, r in zip(X, y, report.radii):
            for _ in range(20):
                u = rng.standard_normal(10)
                x_adv = x + 0.999 * r * u / np.linalg.norm(u)
                assert logits(spec, theta, x_adv[None]).argmax() == label


class TestTailBounds:
    def test_bound_and_radius_are_inverse(self):
        m, s = 17, 1.3
        t = cert.prior_tail_radius(m, s, 0.05)
        assert cert.prior_tail_bound(m, s, t) == pytest.approx(0.05)

    def test_clipping(self):
        assert cert.prior_tail_bound(10, 1.0, 0.1) == 1.0
        assert cert.prior_tail_bound(10, 1.0, 0.1, clip=False) > 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            cert.prior_tail_radius(3, 1.0, 1.0)
        with pytest.raises(ValueError):
            cert.prior_tail_bound(0, 1.0, 1.0)

    def test_network_union_bound(self):
        radii, prod = cert.prior_tail_bound_network([(5, 1.0), (9, 2.0)], 0.1)
        assert radii[0] == pytest.approx(math.sqrt(2 * math.log(2 * 5 * 2 / 0.1)))
        assert radii[1] == pytest.approx(math.sqrt(4 * math.log(2 * 9 * 2 / 0.1)))
        assert prod == pytest.approx(radii[0] * radii[1])
