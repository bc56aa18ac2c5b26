"""Discrete spectral GP prior on circulant and BCCB filters.

The variance profile is the low-pass envelope ``S = sigma0_sq / (1 + rho**alpha)``
over the normalized wrapped frequency radius ``rho``.  With ``rho**0 == 1`` the
choice ``alpha = 0`` is flat at ``sigma0_sq / 2``.

Two objects are sampled here.  A *spectrum* draw is a prior draw of a layer's
stored half-spectrum (its frequency response).  A *filter* draw maps such a
spectrum to the spatial domain with the unitary inverse DFT, so its covariance
is exactly ``k(tau) = (1/n) sum_k S(k) exp(2 pi i k tau / n)``.  With the
library's unnormalized convention the circulant generator of a layer with
response ``f`` is ``irfft(f) = filter / sqrt(n)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fft_core
from .fft_core import Layout

__all__ = [
    "SpectrumProfile",
    "prior_covariance_1d",
    "prior_covariance_2d",
    "rho",
    "sample_prior_field_2d",
    "sample_prior_filter_1d",
    "sample_prior_spectrum",
    "spectrum_full",
    "variance_profile",
]

_IMAG_TOL = 1e-12


@dataclass(frozen=True)
class SpectrumProfile:
    sigma0_sq: float
    alpha: float
    grid: tuple[int, ...]

    def __post_init__(self):
        if not self.sigma0_sq > 0:
            raise ValueError("sigma0_sq must be positive")
        if not self.alpha >= 0:
            raise ValueError("alpha must be nonnegative")
        if len(self.grid) not in (1, 2) or min(self.grid) < 1:
            raise ValueError(f"grid must be (n,) or (H, W) with positive sizes, got {self.grid}")
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))


def rho(index, grid) -> float:
    """Normalized wrapped radius of bin ``index`` (``k`` or ``(u, v)``)."""
    grid = tuple(grid)
    idx = (index,) if np.ndim(index) == 0 else tuple(index)
    if len(idx) != len(grid):
        raise ValueError(f"index {index} does not match grid {grid}")
    for i, n in zip(idx, grid):
        if not 0 <= i < n:
            raise ValueError(f"index {index} out of range for grid {grid}")
    r = [fft_core.wrapped_radius(i, n) for i, n in zip(idx, grid)]
    return float(np.sqrt(sum(x * x for x in r)))


def _envelope(profile: SpectrumProfile, r):
    return profile.sigma0_sq / (1.0 + np.asarray(r, dtype=np.float64) ** profile.alpha)


def variance_profile(profile: SpectrumProfile, index) -> float:
    return float(_envelope(profile, rho(index, profile.grid)))


def spectrum_full(profile: SpectrumProfile) -> np.ndarray:
    """``S`` on the full frequency grid, shape ``(n,)`` or ``(H, W)``."""
    if len(profile.grid) == 1:
        (n,) = profile.grid
        return _envelope(profile, fft_core.wrapped_radius(np.arange(n), n))
    H, W = profile.grid
    ru = fft_core.wrapped_radius(np.arange(H), H)
    rv = fft_core.wrapped_radius(np.arange(W), W)
    return _envelope(profile, np.sqrt(ru[:, None] ** 2 + rv[None, :] ** 2))


def _layout(profile: SpectrumProfile) -> Layout:
    if len(profile.grid) == 1:
        return fft_core.layout_1d(profile.grid[0])
    return fft_core.layout_2d(*profile.grid)


def sample_prior_spectrum(
    profile: SpectrumProfile,
    rng: np.random.Generator,
    size: int | None = None,
    layout: Layout | None = None,
) -> np.ndarray:
    """Hermitian half-spectrum draws with ``E|f|^2 = S`` on active bins.

    Complex bins get independent ``N(0, S/2)`` real and imaginary parts,
    self-conjugate bins are ``N(0, S)``.  Bins outside ``layout`` stay zero.
    """
    layout = _layout(profile) if layout is None else layout
    tau = np.sqrt(layout.coord_var_mult * _envelope(profile, layout.coord_rho))
    shape = (layout.d_eff,) if size is None else (size, layout.d_eff)
    a = tau * rng.standard_normal(shape)
    return fft_core.unpack_effective(a, layout)


def _real_part(z: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(z)))) if z.size else 1.0
    resid = float(np.max(np.abs(z.imag))) if z.size else 0.0
    if resid > _IMAG_TOL * scale:
        raise AssertionError(f"imaginary residue {resid:.3e} in a Hermitian reconstruction")
    return z.real.copy()


def sample_prior_filter_1d(
    profile: SpectrumProfile, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Stationary GP draw ``w_t = n^{-1/2} sum_k f_k exp(2 pi i k t / n)``."""
    if len(profile.grid) != 1:
        raise ValueError("1D profile required")
    (n,) = profile.grid
    f = sample_prior_spectrum(profile, rng, size)
    full = fft_core.hermitian_complete_1d(f, n)
    return _real_part(np.sqrt(n) * np.fft.ifft(full, axis=-1))


def sample_prior_field_2d(
    profile: SpectrumProfile, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Stationary random field draw on the ``H x W`` torus."""
    if len(profile.grid) != 2:
        raise ValueError("2D profile required")
    H, W = profile.grid
    f = sample_prior_spectrum(profile, rng, size)
    full = fft_core.hermitian_complete_2d(f, (H, W))
    return _real_part(np.sqrt(H * W) * np.fft.ifft2(full, axes=(-2, -1)))


def prior_covariance_1d(profile: SpectrumProfile) -> np.ndarray:
    """``k(tau)`` for ``tau = 0..n-1``."""
    if len(profile.grid) != 1:
        raise ValueError("1D profile required")
    return _real_part(np.fft.ifft(spectrum_full(profile)))


def prior_covariance_2d(profile: SpectrumProfile) -> np.ndarray:
    """``kappa(tau_x, tau_y)`` on the full lag grid."""
    if len(profile.grid) != 2:
        raise ValueError("2D profile required")
    return _real_part(np.fft.ifft2(spectrum_full(profile)))
