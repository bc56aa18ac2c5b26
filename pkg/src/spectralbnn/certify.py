"""Exact spectral norms, network Lipschitz bounds and margin certificates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .layers import SpectralBCCB2D, SpectralCirculant1D

__all__ = [
    "CertReport",
    "cert_radius",
    "dense_norm",
    "layer_norm",
    "margin",
    "network_lipschitz",
    "prior_tail_bound",
    "prior_tail_bound_network",
    "prior_tail_radius",
    "spectral_norm_1d",
    "spectral_norm_2d",
]

ACTIVATIONS = frozenset({"tanh", "relu", "identity"})  # all 1-Lipschitz


def spectral_norm_1d(layer) -> float:
    """``max_k |h_k|`` over the active half-spectrum (equals the operator 2-norm)."""
    if isinstance(layer, SpectralCirculant1D):
        h = layer.masked_response()
    else:
        h = np.asarray(layer)
    return float(np.max(np.abs(h))) if h.size else 0.0


def spectral_norm_2d(layer) -> float:
    """Largest singular value over the per-bin ``C_out x C_in`` mixing matrices."""
    K = layer.masked_response() if isinstance(layer, SpectralBCCB2D) else np.asarray(layer)
    blocks = np.moveaxis(K, (0, 1), (-2, -1))
    return float(np.max(np.linalg.svd(blocks, compute_uv=False)))


def dense_norm(W, iters: int = 50, tol: float = 1e-9, exact_below: int = 256) -> float:
    """Largest singular value of a dense matrix.

    Exact SVD when the smaller side is at most ``exact_below``; otherwise power
    iteration on ``W^T W`` with an SVD fallback if it has not converged.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError("dense layer weights must be a matrix")
    if min(W.shape) <= exact_below:
        return float(np.linalg.norm(W, 2))
    v = np.random.default_rng(0).standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = W.T @ (W @ v)
        new = math.sqrt(float(np.linalg.norm(w)))
        v = w / np.linalg.norm(w)
        if abs(new - est) <= tol * max(new, 1.0):
            return new
        est = new
    return float(np.linalg.norm(W, 2))


def layer_norm(layer) -> float:
    if isinstance(layer, SpectralCirculant1D):
        return spectral_norm_1d(layer)
    if isinstance(layer, SpectralBCCB2D):
        return spectral_norm_2d(layer)
    if isinstance(layer, np.ndarray) and layer.ndim == 2:
        return dense_norm(layer)
    raise TypeError(f"unclassified layer: {type(layer).__name__}")


def network_lipschitz(layers) -> tuple[float, list[float]]:
    """Product bound over linear layers; activations must be declared 1-Lipschitz.

    Returns ``(bound, per_layer_norms)``.  Biases play no role.
    """
    norms = []
    for layer in layers:
        if isinstance(layer, str):
            if layer not in ACTIVATIONS:
                raise TypeError(f"activation {layer!r} is not declared 1-Lipschitz")
            continue
        norms.append(layer_norm(layer))
    return float(np.prod(norms)) if norms else 1.0, norms


def margin(logits, y) -> np.ndarray | float:
    """``logits[y] - max_{k != y} logits[k]``, row-wise for 2D input."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise ValueError("margin needs at least two classes")
    single = z.ndim == 1
    z = np.atleast_2d(z)
    y = np.atleast_1d(np.asarray(y, dtype=np.intp))
    if np.any((y < 0) | (y >= z.shape[1])):
        raise ValueError("label out of range")
    rows = np.arange(z.shape[0])
    true = z[rows, y]
    others = z.copy()
    others[rows, y] = -np.inf
    m = true - others.max(axis=1)
    return float(m[0]) if single else m


def cert_radius(m, lipschitz: float):
    """Certified l2 radius ``max(m, 0) / (2 L)``."""
    if not lipschitz > 0:
        raise ValueError("Lipschitz bound must be positive")
    r = np.maximum(np.asarray(m, dtype=np.float64), 0.0) / (2.0 * lipschitz)
    return float(r) if np.ndim(r) == 0 else r


def prior_tail_bound(m_active: int, s_max: float, t: float, clip: bool = True) -> float:
    """``P[||T|| >= t] <= 2 m exp(-t^2 / (2 S_max))`` under the spectral prior."""
    if m_active < 1 or not s_max > 0 or not t > 0:
        raise ValueError("need m_active >= 1, S_max > 0 and t > 0")
    b = 2.0 * m_active * math.exp(-t * t / (2.0 * s_max))
    return min(b, 1.0) if clip else b


def prior_tail_radius(m_active: int, s_max: float, delta: float) -> float:
    """Radius ``sqrt(2 S_max log(2 m / delta))`` exceeded with probability <= delta."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if m_active < 1 or not s_max > 0:
        raise ValueError("need m_active >= 1 and S_max > 0")
    return math.sqrt(2.0 * s_max * math.log(2.0 * m_active / delta))


def prior_tail_bound_network(layers, delta: float) -> tuple[list[float], float]:
    """Per-layer radii holding jointly with probability >= 1 - delta, and their product.

    ``layers`` is a sequence of ``(m_active, S_max)`` pairs for independent priors.
    """
    layers = list(layers)
    L = len(layers)
    radii = [prior_tail_radius(m * L, s, delta) for m, s in layers]
    return radii, float(np.prod(radii))


@dataclass
class CertReport:
    margins: np.ndarray
    radii: np.ndarray
    lipschitz: float
    layer_norms: list[float] = field(default_factory=list)

    @classmethod
    def from_logits(cls, logits, y, layers) -> "CertReport":
        L, norms = network_lipschitz(layers)
        m = np.atleast_1d(margin(np.atleast_2d(logits), y))
        return cls(m, np.atleast_1d(cert_radius(m, L)), L, norms)
