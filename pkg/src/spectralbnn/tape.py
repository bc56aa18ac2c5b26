"""Minimal reverse-mode differentiation over numpy arrays.

Every registered op supplies a forward function returning ``(value, vjp)``
where ``vjp(g)`` maps the output cotangent to one cotangent per input.
Complex intermediates carry cotangents in the form ``dL/dRe z + i dL/dIm z``;
leaves are always real.

    tape = Tape()
    x = tape.leaf(np.array([0.3, -1.2]))
    y = tape.record("sum", tape.record("tanh", x))
    grads = tape.backward(y)
    grads[x]
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fft_core

__all__ = ["OPS", "Tape", "Var", "register"]

VJP = Callable[[np.ndarray], tuple]
OPS: dict[str, Callable[..., tuple[np.ndarray, VJP]]] = {}


def register(name: str):
    def deco(fn):
        OPS[name] = fn
        return fn

    return deco


class Var:
    __slots__ = ("value", "tape", "index")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(index={self.index}, shape={self.value.shape}, dtype={self.value.dtype})"

    def __add__(self, other):
        return self.tape.record("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.record("sub", self, other)

    def __rsub__(self, other):
        return self.tape.record("sub", other, self)

    def __mul__(self, other):
        return self.tape.record("mul", self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.record("neg", self)

    def __matmul__(self, other):
        return self.tape.record("matmul", self, other)

    def __rmatmul__(self, other):
        return self.tape.record("matmul", other, self)


@dataclass
class TapeNode:
    op: str
    inputs: tuple  # tape indices, or None for constants
    vjp: VJP | None


class Tape:
    """Single-owner record of operations; nodes are stored in creation order."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def leaf(self, value) -> Var:
        value = np.array(value, dtype=np.float64)
        self.nodes.append(TapeNode("leaf", (), None))
        return Var(value, self, len(self.nodes) - 1)

    def record(self, op: str, *inputs, **params) -> Var:
        try:
            fn = OPS[op]
        except KeyError:
            raise ValueError(f"unregistered op {op!r}") from None
        idx, vals = [], []
        for x in inputs:
            if isinstance(x, Var):
                if x.tape is not self:
                    raise ValueError("input belongs to a different tape")
                idx.append(x.index)
                vals.append(x.value)
            else:
                idx.append(None)
                vals.append(np.asarray(x))
        out, vjp = fn(*vals, **params)
        self.nodes.append(TapeNode(op, tuple(idx), vjp))
        return Var(np.asarray(out), self, len(self.nodes) - 1)

    def backward(self, root: Var) -> dict:
        """Cotangent of scalar ``root`` for every node, keyed by leaf ``Var``.

        Returns a mapping usable as ``grads[var]`` for any var on this tape.
        """
        if root.value.size != 1 or root.value.ndim > 1:
            raise ValueError("backward requires a scalar root")
        grads: list = [None] * len(self.nodes)
        grads[root.index] = np.ones_like(root.value)
        for i in range(root.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            for j, gj in zip(node.inputs, node.vjp(g)):
                if j is None or gj is None:
                    continue
                grads[j] = gj if grads[j] is None else grads[j] + gj
        return _Grads(grads)


class _Grads:
    def __init__(self, grads: list):
        self._grads = grads

    def __getitem__(self, var: Var) -> np.ndarray:
        g = self._grads[var.index]
        return np.zeros_like(var.value) if g is None else g


def _unbroadcast(g: np.ndarray, shape: tuple, real: bool) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.real if real else g


def _is_real(x: np.ndarray) -> bool:
    return not np.iscomplexobj(x)


# -- elementwise -------------------------------------------------------------


@register("add")
def _add(a, b):
    def vjp(g):
        return _unbroadcast(g, a.shape, _is_real(a)), _unbroadcast(g, b.shape, _is_real(b))

    return a + b, vjp


@register("sub")
def _sub(a, b):
    def vjp(g):
        return _unbroadcast(g, a.shape, _is_real(a)), -_unbroadcast(g, b.shape, _is_real(b))

    return a - b, vjp


@register("neg")
def _neg(a):
    return -a, lambda g: (-g,)


@register("mul")
def _mul(a, b):
    def vjp(g):
        return (
            _unbroadcast(np.conj(b) * g, a.shape, _is_real(a)),
            _unbroadcast(np.conj(a) * g, b.shape, _is_real(b)),
        )

    return a * b, vjp


@register("tanh")
def _tanh(a):
    y = np.tanh(a)
    return y, lambda g: (g * (1.0 - y * y),)


@register("softplus")
def _softplus(a):
    y = np.logaddexp(0.0, a)
    sig = np.exp(a - y)  # logistic(a), overflow-free
    return y, lambda g: (g * sig,)


# -- linear algebra and shape ------------------------------------------------


@register("matmul")
def _matmul(a, b):
    def vjp(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * b, g * a
        if b.ndim == 1:
            lead = tuple(range(g.ndim))
            return g[..., None] * b, np.tensordot(g, a, axes=(lead, lead))
        if a.ndim == 1:
            return b @ g, np.outer(a, g)
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape, True), _unbroadcast(gb, b.shape, True)

    return a @ b, vjp


@register("sum")
def _sum(a, axis=None):
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return np.sum(a, axis=axis), vjp


@register("reshape")
def _reshape(a, shape):
    return a.reshape(shape), lambda g: (g.reshape(a.shape),)


@register("log_softmax")
def _log_softmax(a):
    m = a.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(a - m).sum(axis=-1, keepdims=True))
    y = a - lse
    p = np.exp(y)
    return y, lambda g: (g - p * g.sum(axis=-1, keepdims=True),)


@register("take_labels")
def _take_labels(a, labels):
    labels = np.asarray(labels, dtype=np.intp)
    rows = np.arange(a.shape[0])

    def vjp(g):
        out = np.zeros_like(a)
        out[rows, labels] = g
        return out, None

    return a[rows, labels], vjp


# -- Fourier -----------------------------------------------------------------


def _half_weights(n: int) -> np.ndarray:
    # multiplicity of each stored bin in the full spectrum
    c = np.full(n // 2 + 1, 2.0)
    c[0] = 1.0
    if n % 2 == 0:
        c[-1] = 1.0
    return c


@register("rfft")
def _rfft(x):
    n = x.shape[-1]
    c = _half_weights(n)
    return np.fft.rfft(x, axis=-1), lambda g: (n * np.fft.irfft(g / c, n=n, axis=-1),)


@register("irfft")
def _irfft(z, n):
    c = _half_weights(n)
    return np.fft.irfft(z, n=n, axis=-1), lambda g: (c / n * np.fft.rfft(g, axis=-1),)


@register("rfft2")
def _rfft2(x):
    H, W = x.shape[-2:]
    c = _half_weights(W)
    return np.fft.rfft2(x, axes=(-2, -1)), lambda g: (
        H * W * np.fft.irfft2(g / c, s=(H, W), axes=(-2, -1)),
    )


@register("irfft2")
def _irfft2(z, shape):
    H, W = shape
    c = _half_weights(W)
    return np.fft.irfft2(z, s=(H, W), axes=(-2, -1)), lambda g: (
        c / (H * W) * np.fft.rfft2(g, axes=(-2, -1)),
    )


@register("unpack")
def _unpack(a, layout):
    return fft_core.unpack_effective(a, layout), lambda g: (fft_core.unpack_vjp(g, layout),)


@register("channel_mix")
def _channel_mix(K, X):
    """``Y[b, o] = sum_c K[o, c] * X[b, c]`` elementwise over frequency bins."""

    def vjp(g):
        gK = np.einsum("bouv,bcuv->ocuv", g, np.conj(X))
        gX = np.einsum("bouv,ocuv->bcuv", g, np.conj(K))
        return (gK.real if _is_real(K) else gK), (gX.real if _is_real(X) else gX)

    return np.einsum("ocuv,bcuv->bouv", K, X), vjp


# -- closed-form Gaussian terms ----------------------------------------------


@register("spectral_prior_var")
def _spectral_prior_var(alpha, rho, mult, sigma0_sq):
    """Per-coordinate prior variance ``mult * sigma0_sq / (1 + rho**alpha)``."""
    p = rho ** alpha  # numpy gives 0**0 == 1, the flat-spectrum convention
    tau_sq = mult * sigma0_sq / (1.0 + p)
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = np.where(rho > 0, p * np.log(np.where(rho > 0, rho, 1.0)), 0.0)
    dtau = -mult * sigma0_sq * dp / (1.0 + p) ** 2

    def vjp(g):
        return np.sum(g * dtau).reshape(alpha.shape), None, None, None

    return tau_sq, vjp


@register("kl_lowrank_diag")
def _kl_lowrank_diag(mu, U, lam, sigma, tau_sq, eps):
    """KL(N(mu, U diag(lam^2) U^T + diag(sigma^2) + eps I) || N(0, diag(tau_sq)))."""
    from .svi import kl_lowrank_terms

    kl, grads = kl_lowrank_terms(mu, U, lam, sigma, tau_sq, float(eps), with_grad=True)

    def vjp(g):
        return tuple(g * gi for gi in grads) + (None,)

    return np.asarray(kl), vjp


@register("kl_diag_normal")
def _kl_diag_normal(mu, sigma, prior_var):
    """KL(N(mu, diag(sigma^2)) || N(0, diag(prior_var))), summed."""
    s2 = sigma * sigma
    kl = 0.5 * np.sum((s2 + mu * mu) / prior_var - 1.0 - np.log(s2 / prior_var))

    def vjp(g):
        g_mu = g * mu / prior_var
        g_sigma = g * (sigma / prior_var - 1.0 / sigma)
        g_p = g * 0.5 * (1.0 / prior_var - (s2 + mu * mu) / prior_var**2)
        return g_mu, g_sigma, _unbroadcast(np.asarray(g_p), prior_var.shape, True)

    return np.asarray(kl), vjp
