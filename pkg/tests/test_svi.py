import numpy as np
import pytest

from spectralbnn import fft_core, svi
from spectralbnn.data import make_separable
from spectralbnn.gp_prior import SpectrumProfile
from spectralbnn.model import ModelSpec
from spectralbnn.svi import (
    AdamConfig,
    AdamState,
    GuideConfig,
    LowRankGaussian,
    MeanFieldGaussian,
    PriorDiag,
    TrainConfig,
    adam_step,
    elbo,
    init_params,
    kl_lowrank_terms,
    kl_lowrank_vs_diag,
    kl_mean_field,
    prior_variances,
    sample_posterior,
    train,
)

from _oracles import dense_kl, rel_err


def random_q(rng, d, r, eps=1e-5):
    return LowRankGaussian(
        rng.standard_normal(d),
        rng.standard_normal((d, r)),
        np.exp(0.3 * rng.standard_normal(r)),
        np.exp(0.3 * rng.standard_normal(d)),
        eps,
    )


class TestTransforms:
    def test_softplus_inverse(self):
        y = np.array([1e-5, 0.01, 1.0, 30.0])
        np.testing.assert_allclose(svi.positive(svi.softplus_inv(y)), y, rtol=1e-10)

    def test_positive_floor(self):
        assert svi.positive(-1000.0) == pytest.approx(1e-6)


class TestLowRankGaussian:
    def test_shape_validation(self):
        with pytest.raises(ValueError, match="inconsistent"):
            LowRankGaussian(np.zeros(3), np.zeros((3, 2)), np.ones(3), np.ones(3))
        with pytest.raises(ValueError, match="rank"):
            LowRankGaussian(np.zeros(2), np.zeros((2, 3)), np.ones(3), np.ones(2))

    def test_sample_moments(self, rng):
        q = random_q(rng, 3, 2)
        draws = sample_posterior(q, rng, size=200_000)
        # the eps jitter is a numerical guard of the density, not of the sampler
        expected = q.covariance() - q.eps * np.eye(3)
        np.testing.assert_allclose(draws.mean(axis=0), q.mu, atol=0.03)
        np.testing.assert_allclose(np.cov(draws.T), expected, atol=0.05 * np.abs(expected).max())

    def test_single_draw_shape(self, rng):
        assert sample_posterior(random_q(rng, 5, 2), rng).shape == (5,)


class TestKL:
    @pytest.mark.parametrize("d,r", [(1, 1), (4, 2), (9, 3), (16, 4)])
    def test_matches_dense_formula(self, d, r, rng):
        q = random_q(rng, d, r)
        tau_sq = np.exp(rng.standard_normal(d))
        expected = dense_kl(q.mu, q.covariance(), tau_sq)
        assert kl_lowrank_vs_diag(q, PriorDiag(tau_sq)) == pytest.approx(expected, rel=1e-10, abs=1e-10)

    def test_zero_at_prior(self):
        tau_sq = np.array([0.5, 1.0, 2.0])
        eps = 1e-5
        q = LowRankGaussian(np.zeros(3), np.zeros((3, 1)), np.zeros(1), np.sqrt(tau_sq - eps), eps)
        assert abs(kl_lowrank_vs_diag(q, PriorDiag(tau_sq))) < 1e-12

    def test_nonnegative(self, rng):
        for _ in range(20):
            q = random_q(rng, 6, 2)
            assert kl_lowrank_vs_diag(q, PriorDiag(np.exp(rng.standard_normal(6)))) >= 0

    def test_gradients_against_central_differences(self, rng):
        d, r, eps = 7, 3, 1e-5
        q = random_q(rng, d, r, eps)
        tau_sq = np.exp(rng.standard_normal(d))
        args = [q.mu, q.U, q.lam, q.sigma, tau_sq]
        _, grads = kl_lowrank_terms(*args, eps, with_grad=True)
        for i, g in enumerate(grads):
            dz = rng.standard_normal(args[i].shape)

            def f(h):
                a = list(args)
                a[i] = args[i] + h * dz
                return kl_lowrank_terms(*a, eps)

            fd = (f(1e-5) - f(-1e-5)) / 2e-5
            assert rel_err(fd, float(np.sum(g * dz))) < 1e-6

    def test_overflow_is_reported(self):
        with pytest.raises(FloatingPointError, match="KL overflow"):
            kl_lowrank_terms(np.ones(2), np.ones((2, 1)), np.ones(1), np.ones(2), np.zeros(2), 1e-5)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            kl_lowrank_vs_diag(random_q(rng, 3, 1), PriorDiag(np.ones(4)))

    def test_mean_field_matches_dense(self, rng):
        mu, sigma, pv = rng.standard_normal(4), np.exp(rng.standard_normal(4)), np.exp(rng.standard_normal(4))
        assert kl_mean_field(MeanFieldGaussian(mu, sigma), pv) == pytest.approx(
            dense_kl(mu, np.diag(sigma**2), pv), rel=1e-12
        )


class TestPriorVariances:
    def test_multipliers(self):
        lay = fft_core.layout_1d(6)
        tau = prior_variances(SpectrumProfile(1.0, 0.0, (6,)), lay).tau_sq
        # flat S = 1/2: real DC and Nyquist carry S, complex components S/2
        np.testing.assert_allclose(tau, [0.5, 0.25, 0.25, 0.25, 0.25, 0.5])

    def test_grid_mismatch(self):
        with pytest.raises(ValueError, match="does not match"):
            prior_variances(SpectrumProfile(1.0, 1.0, (8,)), fft_core.layout_1d(6))

    def test_masked_bin_rejected(self):
        lay = fft_core.layout_1d(8)
        mask = np.r_[np.ones(3, bool), np.zeros(2, bool)]
        with pytest.raises(ValueError, match="masked bin"):
            prior_variances(SpectrumProfile(1.0, 1.0, (8,)), lay, mask)


SPECS = {
    "spectral1d-learned": ModelSpec("spectral1d", (8,), num_classes=3),
    "spectral1d-fixed-band": ModelSpec("spectral1d", (9,), num_classes=2, K=3, alpha=1.5),
    "spectral2d": ModelSpec("spectral2d", (4, 5), num_classes=3, channels_out=2),
    "spectral2d-band": ModelSpec("spectral2d", (4, 4), num_classes=2, K_rad=0.7, alpha=2.0),
    "dense": ModelSpec("dense", (6,), num_classes=3, hidden=4),
}


def _batch(spec, rng, B=5):
    return rng.standard_normal((B,) + spec.input_shape), rng.integers(0, spec.num_classes, B)


class TestELBO:
    @pytest.mark.parametrize("name", sorted(SPECS))
    def test_gradient_directional_derivative(self, name, rng):
        spec = SPECS[name]
        params = init_params(spec, GuideConfig(rank=2), rng)
        params = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in params.items()}
        X, y = _batch(spec, rng)
        _, _, grads = elbo(spec, params, X, y, np.random.default_rng(7), n_data=50, with_grad=True)
        dirs = {k: rng.standard_normal(v.shape) for k, v in params.items()}

        def f(h):
            p = {k: v + h * dirs[k] for k, v in params.items()}
            return elbo(spec, p, X, y, np.random.default_rng(7), n_data=50)[0]

        fd = (f(1e-5) - f(-1e-5)) / 2e-5
        an = sum(float(np.sum(grads[k] * dirs[k])) for k in params)
        assert rel_err(fd, an) < 1e-6

    def test_parts_compose(self, rng):
        spec = SPECS["spectral1d-learned"]
        params = init_params(spec, GuideConfig(), rng)
        X, y = _batch(spec, rng)
        value, parts = elbo(spec, params, X, y, rng)
        assert value == pytest.approx(parts["loglik"] - parts["kl_spectral"] - parts["kl_base"])

    def test_mc_average_matches_sequential_draws(self, rng):
        spec = SPECS["spectral2d"]
        params = init_params(spec, GuideConfig(), rng)
        X, y = _batch(spec, rng)
        two = elbo(spec, params, X, y, np.random.default_rng(3), n_mc=2)[0]
        r = np.random.default_rng(3)
        singles = [elbo(spec, params, X, y, r)[0] for _ in range(2)]
        assert two == pytest.approx(np.mean(singles), rel=1e-12)

    def test_likelihood_rescaling(self, rng):
        spec = SPECS["dense"]
        params = init_params(spec, GuideConfig(), rng)
        X, y = _batch(spec, rng, B=4)
        base = elbo(spec, params, X, y, np.random.default_rng(1))[1]["loglik"]
        scaled = elbo(spec, params, X, y, np.random.default_rng(1), n_data=40)[1]["loglik"]
        assert scaled == pytest.approx(10 * base)

    def test_empty_batch(self, rng):
        spec = SPECS["dense"]
        with pytest.raises(ValueError, match="empty batch"):
            elbo(spec, init_params(spec, GuideConfig(), rng), np.zeros((0, 6)), np.zeros(0), rng)

    def test_rank_clamped_to_dimension(self, rng):
        spec = ModelSpec("spectral1d", (4,), num_classes=2)
        assert init_params(spec, GuideConfig(rank=8), rng)["spec.U"].shape == (4, 4)


class TestAdam:
    def test_first_step_closed_form(self):
        p, g = {"w": np.array([1.0, -2.0])}, {"w": np.array([0.5, -4.0])}
        hyper = AdamConfig(lr=0.1)
        new, state = adam_step(p, g, AdamState(), hyper)
        np.testing.assert_allclose(new["w"], p["w"] - 0.1 * g["w"] / (np.abs(g["w"]) + 1e-8))
        assert state.step == 1

    def test_minimizes_quadratic(self):
        target = np.array([3.0, -1.0, 0.5])
        p, state = {"w": np.zeros(3)}, AdamState()
        for _ in range(2000):
            p, state = adam_step(p, {"w": 2 * (p["w"] - target)}, state, AdamConfig(lr=0.05))
        np.testing.assert_allclose(p["w"], target, atol=1e-3)


class TestTrain:
    def test_deterministic(self):
        spec = ModelSpec("spectral1d", (16,), num_classes=2)
        X, y = make_separable(64, 16, np.random.default_rng(0))
        cfg = TrainConfig(steps=15, batch_size=16)
        a = train(spec, X, y, cfg, np.random.default_rng(5))
        b = train(spec, X, y, cfg, np.random.default_rng(5))
        assert a[2] == b[2]
        for k in a[0]:
            np.testing.assert_array_equal(a[0][k], b[0][k])

    def test_resume_equals_uninterrupted(self):
        spec = ModelSpec("spectral2d", (4, 4), num_classes=2)
        X, y = make_separable(40, 16, np.random.default_rng(1))
        full = train(spec, X, y, TrainConfig(steps=10, batch_size=8), np.random.default_rng(2))
        r = np.random.default_rng(2)
        p, s, t1 = train(spec, X, y, TrainConfig(steps=6, batch_size=8), r)
        p, s, t2 = train(spec, X, y, TrainConfig(steps=4, batch_size=8), r, params=p, state=s)
        assert t1 + t2 == full[2]
        for k in p:
            np.testing.assert_array_equal(p[k], full[0][k])

    def test_zero_steps_returns_initialization(self):
        spec = ModelSpec("dense", (5,), num_classes=2, hidden=3)
        X, y = make_separable(10, 5, np.random.default_rng(0))
        p, s, trace = train(spec, X, y, TrainConfig(steps=0), np.random.default_rng(3))
        init = init_params(spec, GuideConfig(), np.random.default_rng(3))
        assert trace == [] and s.step == 0
        for k in init:
            np.testing.assert_array_equal(p[k], init[k])

    def test_divergence_raises_with_trace(self):
        spec = ModelSpec("dense", (5,), num_classes=2, hidden=3)
        X, y = make_separable(10, 5, np.random.default_rng(0))
        params = init_params(spec, GuideConfig(), np.random.default_rng(0))
        params["head.b.mu"] = np.array([np.nan, 0.0])
        with pytest.raises(svi.TrainingDiverged) as info:
            train(spec, X, y, TrainConfig(steps=3), np.random.default_rng(0), params=params)
        assert len(info.value.trace) == 1

    def test_predictive_probs_are_distributions(self, rng):
        spec = ModelSpec("spectral1d", (8,), num_classes=3)
        params = init_params(spec, GuideConfig(), rng)
        p = svi.predictive_probs(spec, params, rng.standard_normal((6, 8)), rng, n_samples=4)
        np.testing.assert_allclose(p.sum(axis=1), 1.0)
        assert np.all(p >= 0)
