"""Stochastic variational inference for spectral Bayesian classifiers.

Spectral sites use a low-rank plus diagonal Gaussian over effective
coordinates; every other parameter gets a mean-field Gaussian.  Positive
quantities are stored unconstrained and mapped through ``softplus + 1e-6``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import fft_core, gp_prior
from .fft_core import Layout
from .model import ModelSpec, base_sites, input_spectrum, logits, logits_tape
from .tape import Tape

__all__ = [
    "AdamConfig",
    "AdamState",
    "LowRankGaussian",
    "MeanFieldGaussian",
    "PriorDiag",
    "TrainConfig",
    "TrainingDiverged",
    "adam_step",
    "elbo",
    "init_params",
    "kl_lowrank_vs_diag",
    "kl_mean_field",
    "posterior_sample",
    "predictive_probs",
    "prior_variances",
    "sample_posterior",
    "train",
]

log = logging.getLogger(__name__)

POS_FLOOR = 1e-6


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64) - POS_FLOOR
    return y + np.log(-np.expm1(-y))


def positive(raw):
    return softplus(raw) + POS_FLOOR


@dataclass
class LowRankGaussian:
    """``N(mu, U diag(lam^2) U^T + diag(sigma^2) + eps I)``."""

    mu: np.ndarray
    U: np.ndarray
    lam: np.ndarray
    sigma: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64).reshape(self.mu.size, -1)
        self.lam = np.asarray(self.lam, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        d, r = self.U.shape
        if self.lam.shape != (r,) or self.sigma.shape != (d,):
            raise ValueError("inconsistent LowRankGaussian shapes")
        if r > d:
            raise ValueError(f"rank {r} exceeds dimension {d}")

    @property
    def d_eff(self) -> int:
        return self.mu.size

    def covariance(self) -> np.ndarray:
        B = self.U * self.lam
        return B @ B.T + np.diag(self.sigma**2 + self.eps)


@dataclass
class PriorDiag:
    tau_sq: np.ndarray


@dataclass
class MeanFieldGaussian:
    mu: np.ndarray
    sigma: np.ndarray


def sample_posterior(q: LowRankGaussian, rng: np.random.Generator, size: int | None = None):
    """Reparameterized draws ``mu + U (lam * xi) + sigma * zeta``."""
    r = q.lam.size
    if size is None:
        xi = rng.standard_normal(r)
        zeta = rng.standard_normal(q.d_eff)
        return q.mu + q.U @ (q.lam * xi) + q.sigma * zeta
    xi = rng.standard_normal((size, r))
    zeta = rng.standard_normal((size, q.d_eff))
    return q.mu + (xi * q.lam) @ q.U.T + q.sigma * zeta


def prior_variances(
    profile: gp_prior.SpectrumProfile, layout: Layout, mask: np.ndarray | None = None
) -> PriorDiag:
    """Diagonal prior on effective coordinates: ``S`` on real bins, ``S/2`` per component."""
    if tuple(profile.grid) != tuple(layout.dims):
        raise ValueError(f"profile grid {profile.grid} does not match layout {layout.dims}")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), layout.shape).ravel()
        if not np.all(mask[layout.coord_bin]):
            raise ValueError("layout contains a masked bin")
    S = profile.sigma0_sq / (1.0 + layout.coord_rho**profile.alpha)
    return PriorDiag(layout.coord_var_mult * S)


def kl_lowrank_terms(mu, U, lam, sigma, tau_sq, eps, with_grad=False):
    """Closed-form KL of a low-rank + diagonal Gaussian against ``N(0, diag(tau_sq))``.

    Uses ``logdet(D + B B^T) = logdet D + logdet(I + B^T D^-1 B)``; nothing of
    size ``d x d`` is formed.  With ``with_grad`` also returns gradients with
    respect to ``(mu, U, lam, sigma, tau_sq)``.
    """
    U = np.asarray(U, dtype=np.float64).reshape(mu.size, -1)
    s = sigma * sigma + eps
    B = U * lam
    P = B / s[:, None]
    r = lam.size
    M = np.eye(r) + B.T @ P
    with np.errstate(all="ignore"):
        try:
            cho = linalg.cho_factor(M, lower=True)
        except (linalg.LinAlgError, ValueError):
            raise FloatingPointError("KL overflow") from None
        logdet_M = 2.0 * np.sum(np.log(np.diag(cho[0])))
        bsq = np.sum(B * B, axis=1)
        trace = np.sum((s + bsq) / tau_sq)
        quad = np.sum(mu * mu / tau_sq)
        logdet_sigma = np.sum(np.log(s)) + logdet_M
        kl = 0.5 * (trace + quad - mu.size + np.sum(np.log(tau_sq)) - logdet_sigma)
    if not np.isfinite(kl):
        raise FloatingPointError("KL overflow")
    if not with_grad:
        return float(kl)

    PMinv = linalg.cho_solve(cho, P.T).T  # P M^-1, (d, r)
    g_mu = mu / tau_sq
    g_U = U * (lam**2) / tau_sq[:, None] - PMinv * lam
    g_lam = lam * np.sum(U * U / tau_sq[:, None], axis=0) - np.einsum("ij,ij->j", U, PMinv)
    diag_inv = 1.0 / s - np.sum(PMinv * P, axis=1)  # diag of Sigma^-1
    g_s = 0.5 * (1.0 / tau_sq - diag_inv)
    g_sigma = 2.0 * sigma * g_s
    g_tau = 0.5 * (1.0 / tau_sq - (s + bsq + mu * mu) / tau_sq**2)
    return float(kl), (g_mu, g_U.reshape(np.shape(U)), g_lam, g_sigma, g_tau)


def kl_lowrank_vs_diag(q: LowRankGaussian, p: PriorDiag) -> float:
    if p.tau_sq.shape != q.mu.shape:
        raise ValueError("prior and posterior dimensions differ")
    return kl_lowrank_terms(q.mu, q.U, q.lam, q.sigma, p.tau_sq, q.eps)


def kl_mean_field(q: MeanFieldGaussian, prior_var) -> float:
    s2 = q.sigma**2
    return float(0.5 * np.sum((s2 + q.mu**2) / prior_var - 1.0 - np.log(s2 / prior_var)))


# -- variational parameters --------------------------------------------------


@dataclass(frozen=True)
class GuideConfig:
    rank: int = 8
    eps: float = 1e-5
    mu_scale: float = 0.1
    sigma_scale: float = 0.05
    lam_scale: float = 0.05
    base_sigma: float = 0.01


def _spectral_profile(spec: ModelSpec, alpha: float) -> gp_prior.SpectrumProfile:
    return gp_prior.SpectrumProfile(spec.sigma0_sq, alpha, spec.grid)


def current_alpha(spec: ModelSpec, alpha_z=None) -> float:
    return spec.alpha if spec.alpha is not None else float(softplus(alpha_z))


def init_params(spec: ModelSpec, guide: GuideConfig, rng: np.random.Generator) -> dict:
    """Unconstrained variational parameters, keyed by name."""
    params = {}
    lay = spec.layout
    if lay is not None:
        d = lay.d_eff
        r = min(guide.rank, d)
        prof = _spectral_profile(spec, current_alpha(spec, 0.0))
        tau = np.sqrt(prior_variances(prof, lay).tau_sq)
        params["spec.mu"] = guide.mu_scale * tau * rng.standard_normal(d)
        params["spec.U"] = rng.standard_normal((d, r)) / np.sqrt(d * r)
        lam0 = guide.lam_scale * np.sqrt(np.mean(tau**2))
        params["spec.lam_raw"] = np.full(r, float(softplus_inv(lam0)))
        params["spec.sigma_raw"] = softplus_inv(guide.sigma_scale * tau)
    for name, shape in base_sites(spec).items():
        if name.endswith(".W"):
            mu = rng.standard_normal(shape) / np.sqrt(shape[0])
        else:
            mu = np.zeros(shape)
        params[name + ".mu"] = mu
        params[name + ".sigma_raw"] = np.full(shape, float(softplus_inv(guide.base_sigma)))
    return params


def spectral_guide(params: dict, eps: float) -> LowRankGaussian:
    return LowRankGaussian(
        params["spec.mu"],
        params["spec.U"],
        positive(params["spec.lam_raw"]),
        positive(params["spec.sigma_raw"]),
        eps,
    )


def posterior_sample(spec: ModelSpec, params: dict, rng: np.random.Generator, eps=1e-5) -> dict:
    """Concrete parameters drawn from the guides (same draw order as the ELBO)."""
    theta = {}
    if spec.layout is not None:
        theta["spec.a"] = sample_posterior(spectral_guide(params, eps), rng)
    for name, shape in base_sites(spec).items():
        z = rng.standard_normal(shape)
        theta[name] = params[name + ".mu"] + positive(params[name + ".sigma_raw"]) * z
    return theta


def posterior_mean(spec: ModelSpec, params: dict) -> dict:
    theta = {}
    if spec.layout is not None:
        theta["spec.a"] = params["spec.mu"].copy()
    for name in base_sites(spec):
        theta[name] = params[name + ".mu"].copy()
    return theta


def _prior_var_of(spec: ModelSpec, name: str) -> float:
    return spec.alpha_prior_var if name == "alpha_z" else spec.base_prior_var


def elbo(
    spec: ModelSpec,
    params: dict,
    X,
    y,
    rng: np.random.Generator,
    *,
    n_mc: int = 1,
    n_data: int | None = None,
    eps: float = 1e-5,
    with_grad: bool = False,
):
    """Monte-Carlo ELBO on a minibatch, likelihood rescaled to ``n_data`` points.

    Returns ``(elbo, parts)`` or ``(elbo, parts, grads)`` where ``parts`` holds
    the log-likelihood estimate and each KL term and ``grads`` are the ELBO
    gradients with respect to ``params``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    B = X.shape[0]
    scale = (n_data if n_data is not None else B) / B
    Xh = input_spectrum(spec, X)
    lay = spec.layout
    sites = base_sites(spec)

    tape = Tape()
    leaves = {k: tape.leaf(v) for k, v in params.items()}
    total = None
    parts = {"loglik": 0.0, "kl_spectral": 0.0, "kl_base": 0.0}
    for _ in range(n_mc):
        theta = {}
        kl_terms = []
        if lay is not None:
            mu, U = leaves["spec.mu"], leaves["spec.U"]
            lam = tape.record("softplus", leaves["spec.lam_raw"]) + POS_FLOOR
            sig = tape.record("softplus", leaves["spec.sigma_raw"]) + POS_FLOOR
            xi = rng.standard_normal(lam.value.shape)
            zeta = rng.standard_normal(mu.value.shape)
            spec_noise = (xi, zeta)
        base_noise = {name: rng.standard_normal(shape) for name, shape in sites.items()}
        sigmas = {}
        for name in sites:
            s = tape.record("softplus", leaves[name + ".sigma_raw"]) + POS_FLOOR
            sigmas[name] = s
            theta[name] = leaves[name + ".mu"] + s * base_noise[name]
            kl_b = tape.record(
                "kl_diag_normal", leaves[name + ".mu"], s, np.asarray(_prior_var_of(spec, name))
            )
            kl_terms.append(("kl_base", kl_b))
        if lay is not None:
            xi, zeta = spec_noise
            theta["spec.a"] = mu + tape.record("matmul", U, lam * xi) + sig * zeta
            if spec.learns_alpha:
                alpha = tape.record("softplus", theta["alpha_z"])
                tau_sq = tape.record(
                    "spectral_prior_var",
                    alpha,
                    lay.coord_rho,
                    lay.coord_var_mult,
                    np.asarray(spec.sigma0_sq),
                )
            else:
                tau_sq = prior_variances(_spectral_profile(spec, spec.alpha), lay).tau_sq
            kl_s = tape.record("kl_lowrank_diag", mu, U, lam, sig, tau_sq, np.asarray(eps))
            kl_terms.append(("kl_spectral", kl_s))

        out = logits_tape(spec, tape, theta, Xh, X)
        ll = tape.record("sum", tape.record("take_labels", tape.record("log_softmax", out), y))
        term = ll * scale
        parts["loglik"] += float(term.value) / n_mc
        for key, kl in kl_terms:
            parts[key] += float(kl.value) / n_mc
            term = term - kl
        total = term if total is None else total + term
    total = total * (1.0 / n_mc)
    value = float(total.value)
    if not with_grad:
        return value, parts
    g = tape.backward(total)
    return value, parts, {k: g[v] for k, v in leaves.items()}


# -- optimizer ---------------------------------------------------------------


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, hyper: AdamConfig):
    """One Adam update minimizing the objective whose gradient is ``grads``."""
    t = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = hyper.beta1 * state.m.get(k, np.zeros_like(p)) + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * state.v.get(k, np.zeros_like(p)) + (1.0 - hyper.beta2) * g * g
        m_hat = m / (1.0 - hyper.beta1**t)
        v_hat = v / (1.0 - hyper.beta2**t)
        new_params[k] = p - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(t, m_new, v_new)


# -- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 128
    n_mc: int = 1
    adam: AdamConfig = AdamConfig()
    guide: GuideConfig = GuideConfig()
    log_every: int = 100


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


def train(
    spec: ModelSpec,
    X,
    y,
    config: TrainConfig,
    rng: np.random.Generator,
    params: dict | None = None,
    state: AdamState | None = None,
):
    """Run SVI; returns ``(params, adam_state, trace)``.

    ``trace`` is a list of per-step dicts with the ELBO and its parts.  Passing
    ``params``/``state`` resumes a previous run.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    N = X.shape[0]
    if params is None:
        params = init_params(spec, config.guide, rng)
    state = AdamState() if state is None else state
    bs = min(config.batch_size, N)
    trace = []
    for i in range(config.steps):
        idx = rng.choice(N, size=bs, replace=False) if bs < N else np.arange(N)
        value, parts, grads = elbo(
            spec,
            params,
            X[idx],
            y[idx],
            rng,
            n_mc=config.n_mc,
            n_data=N,
            eps=config.guide.eps,
            with_grad=True,
        )
        trace.append({"step": state.step + 1, "elbo": value, **parts})
        if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise TrainingDiverged(f"non-finite ELBO at step {state.step + 1}", trace)
        params, state = adam_step(params, {k: -g for k, g in grads.items()}, state, config.adam)
        if config.log_every and (i + 1) % config.log_every == 0:
            log.info("step %d elbo %.4f", state.step, value)
    return params, state, trace


def predictive_probs(
    spec: ModelSpec, params: dict, X, rng: np.random.Generator, n_samples: int = 32, eps=1e-5
) -> np.ndarray:
    """Posterior predictive class probabilities averaged over ``n_samples`` draws."""
    X = np.asarray(X, dtype=np.float64)
    probs = np.zeros((X.shape[0], spec.num_classes))
    for _ in range(n_samples):
        z = logits(spec, posterior_sample(spec, params, rng, eps), X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        probs += p / p.sum(axis=1, keepdims=True)
    return probs / n_samples
