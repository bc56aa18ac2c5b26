"""Spectral circulant (1D) and BCCB (2D) layers parameterized by RFFT coefficients."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import fft_core
from .fft_core import Layout

__all__ = [
    "SpectralBCCB2D",
    "SpectralCirculant1D",
    "apply_mask",
    "forward_1d",
    "forward_2d",
    "grad_filter_1d",
    "param_count",
    "spectral_weights_1d",
    "vjp_inputs_1d",
    "vjp_inputs_2d",
    "vjp_weights_1d",
    "vjp_weights_2d",
]


@dataclass(frozen=True)
class SpectralCirculant1D:
    """``y = irfft(mask(h_half) * rfft(x)) + bias`` on length-``d`` signals.

    ``K`` is the number of active lowest-frequency bins (``None``: all).
    """

    h_half: np.ndarray
    d: int
    K: int | None = None
    bias: float | None = None

    def __post_init__(self):
        h = np.asarray(self.h_half, dtype=np.complex128)
        object.__setattr__(self, "h_half", h)
        if h.shape != (self.d // 2 + 1,):
            raise ValueError(f"h_half must have length {self.d // 2 + 1}, got {h.shape}")
        # validates K and Hermitian realness
        self.layout
        fft_core._check_self_conjugate(h, self.d, 1e-12)

    @property
    def layout(self) -> Layout:
        return fft_core.layout_1d(self.d, self.K)

    @classmethod
    def from_coords(cls, a, d: int, K: int | None = None, bias: float | None = None):
        return cls(fft_core.unpack_effective(a, fft_core.layout_1d(d, K)), d, K, bias)

    def coords(self) -> np.ndarray:
        return fft_core.pack_effective(self.h_half, self.layout)

    def masked_response(self) -> np.ndarray:
        h = self.h_half.copy()
        if self.K is not None:
            h[self.K :] = 0.0
        return h

    def filter(self) -> np.ndarray:
        """Generating vector ``w`` with ``layer(x) = circulant_dense(w) @ x`` (bias 0)."""
        return np.fft.irfft(self.masked_response(), n=self.d)


@dataclass(frozen=True)
class SpectralBCCB2D:
    """``Y[o] = irfft2(sum_c K[o, c] * rfft2(X[c])) + bias[o]`` on ``H x W`` grids.

    ``K_rad`` is the radial cutoff on the wrapped frequency radius (``None``:
    all bins active).
    """

    K_half: np.ndarray
    dims: tuple[int, int]
    K_rad: float | None = None
    bias: np.ndarray | None = None

    def __post_init__(self):
        k = np.asarray(self.K_half, dtype=np.complex128)
        object.__setattr__(self, "K_half", k)
        object.__setattr__(self, "dims", tuple(int(x) for x in self.dims))
        H, W = self.dims
        if k.ndim != 4 or k.shape[2:] != (H, W // 2 + 1):
            raise ValueError(f"K_half must be (C_out, C_in, {H}, {W // 2 + 1}), got {k.shape}")
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float64)
            if b.shape != (k.shape[0],):
                raise ValueError("bias must have one entry per output channel")
            object.__setattr__(self, "bias", b)
        self.layout  # validates K_rad
        fft_core.irfft_2d(k, self.dims)  # validates Hermitian structure

    @property
    def c_out(self) -> int:
        return self.K_half.shape[0]

    @property
    def c_in(self) -> int:
        return self.K_half.shape[1]

    @property
    def layout(self) -> Layout:
        return fft_core.layout_2d(*self.dims, K_rad=self.K_rad, channels=self.K_half.shape[:2])

    @classmethod
    def from_coords(cls, a, dims, c_out: int, c_in: int, K_rad=None, bias=None):
        lay = fft_core.layout_2d(*dims, K_rad=K_rad, channels=(c_out, c_in))
        return cls(fft_core.unpack_effective(a, lay), dims, K_rad, bias)

    def coords(self) -> np.ndarray:
        return fft_core.pack_effective(self.K_half, self.layout)

    def masked_response(self) -> np.ndarray:
        if self.K_rad is None:
            return self.K_half.copy()
        keep = fft_core.radius_2d(*self.dims) <= self.K_rad
        return np.where(keep, self.K_half, 0.0)


def apply_mask(layer):
    """Layer with its out-of-band coefficients zeroed (idempotent)."""
    if isinstance(layer, SpectralCirculant1D):
        return replace(layer, h_half=layer.masked_response())
    if isinstance(layer, SpectralBCCB2D):
        return replace(layer, K_half=layer.masked_response())
    raise TypeError(f"not a spectral layer: {type(layer).__name__}")


def forward_1d(layer: SpectralCirculant1D, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.d:
        raise ValueError(f"input length {x.shape[-1]} does not match layer size {layer.d}")
    y = np.fft.irfft(layer.masked_response() * np.fft.rfft(x, axis=-1), n=layer.d, axis=-1)
    if layer.bias is not None:
        y = y + layer.bias
    return y


def forward_2d(layer: SpectralBCCB2D, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 3 or X.shape[-3:] != (layer.c_in,) + layer.dims:
        raise ValueError(
            f"input shape {X.shape} does not match (C_in, H, W) = {(layer.c_in,) + layer.dims}"
        )
    Xh = np.fft.rfft2(X, axes=(-2, -1))
    Yh = np.einsum("ocuv,...cuv->...ouv", layer.masked_response(), Xh)
    Y = np.fft.irfft2(Yh, s=layer.dims, axes=(-2, -1))
    if layer.bias is not None:
        Y = Y + layer.bias[:, None, None]
    return Y


def _bin_weights(n: int) -> np.ndarray:
    c = np.full(n // 2 + 1, 2.0)
    c[0] = 1.0
    if n % 2 == 0:
        c[-1] = 1.0
    return c


def grad_filter_1d(x, upstream) -> np.ndarray:
    """Loss gradient w.r.t. the spatial generator ``w`` of ``circ(w) @ x``.

    This is the circular correlation ``sum_t g[t] x[t - j]``, summed over any
    leading batch axes.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    n = x.shape[-1]
    prod = np.fft.rfft(g, axis=-1) * np.conj(np.fft.rfft(x, axis=-1))
    return np.fft.irfft(prod.reshape(-1, n // 2 + 1).sum(axis=0), n=n)


def vjp_weights_1d(layer: SpectralCirculant1D, x, upstream) -> np.ndarray:
    """Gradient on the layer's effective coordinates."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    n = layer.d
    gh = (_bin_weights(n) / n) * np.fft.rfft(g, axis=-1) * np.conj(np.fft.rfft(x, axis=-1))
    gh = gh.reshape(-1, n // 2 + 1).sum(axis=0)
    return fft_core.unpack_vjp(gh, layer.layout)


def vjp_inputs_1d(layer: SpectralCirculant1D, upstream) -> np.ndarray:
    """Gradient on the input: ``irfft(conj(h) * rfft(g))``, the transposed map."""
    g = np.asarray(upstream, dtype=np.float64)
    return np.fft.irfft(np.conj(layer.masked_response()) * np.fft.rfft(g, axis=-1), n=layer.d)


def vjp_weights_2d(layer: SpectralBCCB2D, X, upstream) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    G = np.asarray(upstream, dtype=np.float64)
    H, W = layer.dims
    Gh = (_bin_weights(W) / (H * W)) * np.fft.rfft2(G, axes=(-2, -1))
    Xh = np.fft.rfft2(X, axes=(-2, -1))
    Gh = Gh.reshape((-1,) + Gh.shape[-3:])
    Xh = Xh.reshape((-1,) + Xh.shape[-3:])
    gK = np.einsum("bouv,bcuv->ocuv", Gh, np.conj(Xh))
    return fft_core.unpack_vjp(gK, layer.layout)


def vjp_inputs_2d(layer: SpectralBCCB2D, upstream) -> np.ndarray:
    G = np.asarray(upstream, dtype=np.float64)
    Gh = np.fft.rfft2(G, axes=(-2, -1))
    Xh = np.einsum("ocuv,...ouv->...cuv", np.conj(layer.masked_response()), Gh)
    return np.fft.irfft2(Xh, s=layer.dims, axes=(-2, -1))


# -- parameter counting ------------------------------------------------------


def spectral_weights_1d(d: int, K: int | None = None) -> int:
    """Free real degrees of freedom of a 1D spectral layer with ``K`` active bins."""
    return fft_core.layout_1d(d, K).d_eff


def param_count(
    kind: str,
    input_shape,
    num_classes: int = 10,
    *,
    K: int | None = None,
    K_rad: float | None = None,
    channels_in: int = 1,
    channels_out: int = 1,
    kernel_size: int = 3,
    hidden: int | None = None,
    include_head: bool = True,
) -> dict:
    """Weight and bias counts for ``hidden layer -> tanh -> linear(num_classes)``.

    ``kind`` is one of ``spectral1d``, ``circulant1d`` (spatial generator),
    ``spectral2d``, ``bccb2d`` (spatial kernel), ``conv2d`` (``k x k``, circular
    same-size output) or ``dense`` (``D -> hidden``, ``hidden`` defaults to ``D``).
    """
    shape = (input_shape,) if np.ndim(input_shape) == 0 else tuple(input_shape)
    D = int(np.prod(shape))
    if kind == "spectral1d":
        w, b, out = spectral_weights_1d(D, K), 1, D
    elif kind == "circulant1d":
        w, b, out = D, 1, D
    elif kind in ("spectral2d", "bccb2d", "conv2d"):
        if len(shape) != 2:
            raise ValueError(f"{kind} needs a (H, W) input shape")
        H, W = shape
        if kind == "spectral2d":
            lay = fft_core.layout_2d(H, W, K_rad=K_rad, channels=(channels_out, channels_in))
            w = lay.d_eff
        elif kind == "bccb2d":
            w = channels_out * channels_in * H * W
        else:
            w = channels_out * channels_in * kernel_size * kernel_size
        b, out = channels_out, channels_out * H * W
    elif kind == "dense":
        h = D if hidden is None else hidden
        w, b, out = D * h, h, h
    else:
        raise ValueError(f"unknown layer kind {kind!r}")
    if include_head:
        w += out * num_classes
        b += num_classes
    return {"weights": int(w), "biases": int(b), "total": int(w + b)}
