"""``hidden layer -> tanh -> linear -> softmax`` classifiers.

Parameters are passed around as flat dicts of concrete arrays:

``spec.a``      effective coordinates of the spectral layer (spectral kinds)
``hidden.W``    dense hidden weights (``dense`` kind)
``hidden.b``    hidden bias (scalar for ``spectral1d``, per channel for
                ``spectral2d``, per unit for ``dense``)
``head.W``      ``(features, classes)`` classifier weights
``head.b``      classifier bias
``alpha_z``     unconstrained spectral slope, when it is learned
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import fft_core
from .fft_core import Layout
from .layers import SpectralBCCB2D, SpectralCirculant1D, param_count
from .tape import Tape, Var

__all__ = ["ModelSpec", "base_sites", "logits", "logits_tape", "network_layers"]

KINDS = ("spectral1d", "spectral2d", "dense")


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "spectral1d"
    input_shape: tuple = (784,)
    num_classes: int = 10
    K: int | None = None
    K_rad: float | None = None
    channels_out: int = 1
    hidden: int | None = None
    sigma0_sq: float = 1.0
    alpha: float | None = None  # None: learned through alpha_z
    base_prior_var: float = 1.0
    alpha_prior_var: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        shape = (self.input_shape,) if np.ndim(self.input_shape) == 0 else self.input_shape
        object.__setattr__(self, "input_shape", tuple(int(s) for s in shape))
        if self.kind == "spectral2d" and len(self.input_shape) != 2:
            raise ValueError("spectral2d needs input_shape (H, W)")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        self.layout  # validates K / K_rad

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def features(self) -> int:
        if self.kind == "spectral1d":
            return self.input_dim
        if self.kind == "spectral2d":
            return self.channels_out * self.input_dim
        return self.input_dim if self.hidden is None else self.hidden

    @property
    def learns_alpha(self) -> bool:
        return self.kind != "dense" and self.alpha is None

    @property
    def layout(self) -> Layout | None:
        if self.kind == "spectral1d":
            return fft_core.layout_1d(self.input_dim, self.K)
        if self.kind == "spectral2d":
            H, W = self.input_shape
            return fft_core.layout_2d(H, W, K_rad=self.K_rad, channels=(self.channels_out, 1))
        return None

    @property
    def grid(self) -> tuple:
        return (self.input_dim,) if self.kind == "spectral1d" else self.input_shape

    def param_count(self) -> dict:
        return param_count(
            self.kind,
            self.input_shape if self.kind == "spectral2d" else self.input_dim,
            self.num_classes,
            K=self.K,
            K_rad=self.K_rad,
            channels_out=self.channels_out,
            hidden=self.hidden,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d


def base_sites(spec: ModelSpec) -> dict[str, tuple]:
    """Shapes of the mean-field (non-spectral) sites, in sampling order."""
    sites = {}
    if spec.kind == "dense":
        sites["hidden.W"] = (spec.input_dim, spec.features)
        sites["hidden.b"] = (spec.features,)
    elif spec.kind == "spectral1d":
        sites["hidden.b"] = ()
    else:
        sites["hidden.b"] = (spec.channels_out,)
    sites["head.W"] = (spec.features, spec.num_classes)
    sites["head.b"] = (spec.num_classes,)
    if spec.learns_alpha:
        sites["alpha_z"] = ()
    return sites


def _flatten_input(spec: ModelSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(X.shape[0], spec.input_dim)


def input_spectrum(spec: ModelSpec, X) -> np.ndarray | None:
    """Fourier transform of a data batch (constant under the tape)."""
    X = _flatten_input(spec, X)
    if spec.kind == "spectral1d":
        return np.fft.rfft(X, axis=-1)
    if spec.kind == "spectral2d":
        H, W = spec.input_shape
        return np.fft.rfft2(X.reshape(-1, 1, H, W), axes=(-2, -1))
    return None


def logits(spec: ModelSpec, theta: dict, X) -> np.ndarray:
    """Plain numpy forward pass with concrete parameters."""
    X = _flatten_input(spec, X)
    if spec.kind == "spectral1d":
        layer = SpectralCirculant1D.from_coords(theta["spec.a"], spec.input_dim, spec.K)
        pre = np.fft.irfft(layer.h_half * np.fft.rfft(X, axis=-1), n=spec.input_dim)
        pre = pre + theta["hidden.b"]
    elif spec.kind == "spectral2d":
        H, W = spec.input_shape
        K_half = fft_core.unpack_effective(theta["spec.a"], spec.layout)
        Xh = np.fft.rfft2(X.reshape(-1, 1, H, W), axes=(-2, -1))
        pre = np.fft.irfft2(np.einsum("ocuv,bcuv->bouv", K_half, Xh), s=(H, W), axes=(-2, -1))
        pre = (pre + np.asarray(theta["hidden.b"])[:, None, None]).reshape(X.shape[0], -1)
    else:
        pre = X @ theta["hidden.W"] + theta["hidden.b"]
    return np.tanh(pre) @ theta["head.W"] + theta["head.b"]


def logits_tape(spec: ModelSpec, tape: Tape, theta: dict[str, Var], Xh, X=None) -> Var:
    """Differentiable forward pass; ``Xh`` from :func:`input_spectrum`."""
    B = (X if X is not None else Xh).shape[0]
    if spec.kind == "spectral1d":
        h = tape.record("unpack", theta["spec.a"], layout=spec.layout)
        pre = tape.record("irfft", tape.record("mul", h, Xh), n=spec.input_dim)
        pre = pre + theta["hidden.b"]
    elif spec.kind == "spectral2d":
        H, W = spec.input_shape
        K_half = tape.record("unpack", theta["spec.a"], layout=spec.layout)
        Yh = tape.record("channel_mix", K_half, Xh)
        pre = tape.record("irfft2", Yh, shape=(H, W))
        b = tape.record("reshape", theta["hidden.b"], shape=(spec.channels_out, 1, 1))
        pre = tape.record("reshape", pre + b, shape=(B, spec.features))
    else:
        pre = tape.record("matmul", _flatten_input(spec, X), theta["hidden.W"]) + theta["hidden.b"]
    hidden = tape.record("tanh", pre)
    return tape.record("matmul", hidden, theta["head.W"]) + theta["head.b"]


def network_layers(spec: ModelSpec, theta: dict) -> list:
    """Linear pieces of the network in order, for Lipschitz certification."""
    if spec.kind == "spectral1d":
        first = SpectralCirculant1D.from_coords(theta["spec.a"], spec.input_dim, spec.K)
    elif spec.kind == "spectral2d":
        first = SpectralBCCB2D.from_coords(
            theta["spec.a"], spec.input_shape, spec.channels_out, 1, spec.K_rad
        )
    else:
        first = np.asarray(theta["hidden.W"]).T
    return [first, "tanh", np.asarray(theta["head.W"]).T]
