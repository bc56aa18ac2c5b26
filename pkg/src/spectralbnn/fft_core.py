"""Real-FFT primitives and Hermitian bookkeeping.

Convention: unnormalized forward transform, ``1/n`` (or ``1/(H*W)``) on the
inverse.  A half-spectrum ``h`` is therefore the frequency response of the
circulant map ``x -> irfft(h * rfft(x))`` and ``max |h_k|`` is its operator norm.

Effective coordinates ``a`` are the free real degrees of freedom of a half
spectrum.  Layout order: bins in ascending (row-major in 2D) storage order,
real part before imaginary part.  Self-conjugate bins contribute one entry,
other bins two, and the redundant member of a conjugate pair inside the
self-conjugate columns of a 2D half-plane contributes none.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Layout",
    "circulant_dense",
    "bccb_dense",
    "direct_dft",
    "hermitian_complete_1d",
    "hermitian_complete_2d",
    "irfft_1d",
    "irfft_2d",
    "layout_1d",
    "layout_2d",
    "pack_effective",
    "rfft_1d",
    "rfft_2d",
    "unpack_effective",
    "unpack_vjp",
]

_REAL_TOL = 1e-12


def _as_signal(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty signal")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite values")
    return x


def rfft_1d(x) -> np.ndarray:
    """Half spectrum ``sum_t x_t exp(-2 pi i k t / n)`` for ``k <= n // 2``."""
    x = _as_signal(x)
    h = np.fft.rfft(x, axis=-1)
    # numpy leaves rounding noise in the self-conjugate bins
    h[..., 0] = h[..., 0].real
    if x.shape[-1] % 2 == 0:
        h[..., -1] = h[..., -1].real
    return h


def _check_self_conjugate(h: np.ndarray, n: int, tol: float) -> None:
    scale = max(1.0, float(np.max(np.abs(h)))) if h.size else 1.0
    bad = np.abs(h[..., 0].imag) > tol * scale
    if n % 2 == 0:
        bad = bad | (np.abs(h[..., n // 2].imag) > tol * scale)
    if np.any(bad):
        raise ValueError("non-real self-conjugate bin")


def irfft_1d(h, n: int, *, tol: float = _REAL_TOL) -> np.ndarray:
    """Inverse of :func:`rfft_1d` for a length-``n`` real signal."""
    h = np.asarray(h, dtype=np.complex128)
    if h.shape[-1] != n // 2 + 1:
        raise ValueError(f"half spectrum length {h.shape[-1]} does not match n={n}")
    _check_self_conjugate(h, n, tol)
    return np.fft.irfft(h, n=n, axis=-1)


def hermitian_complete_1d(h, n: int) -> np.ndarray:
    """Full length-``n`` spectrum from its nonredundant half."""
    h = np.asarray(h, dtype=np.complex128)
    k_half = n // 2 + 1
    if h.shape[-1] != k_half:
        raise ValueError(f"half spectrum length {h.shape[-1]} does not match n={n}")
    full = np.empty(h.shape[:-1] + (n,), dtype=np.complex128)
    full[..., :k_half] = h
    k = np.arange(k_half, n)
    full[..., k] = np.conj(h[..., n - k])
    return full


def hermitian_complete_2d(z, shape: tuple[int, int]) -> np.ndarray:
    """Full ``H x W`` spectrum from its half-plane (last two axes)."""
    H, W = shape
    z = np.asarray(z, dtype=np.complex128)
    Wh = W // 2 + 1
    if z.shape[-2:] != (H, Wh):
        raise ValueError(f"half-plane shape {z.shape[-2:]} does not match grid {shape}")
    full = np.empty(z.shape[:-2] + (H, W), dtype=np.complex128)
    full[..., :, :Wh] = z
    u = (-np.arange(H)) % H
    v = np.arange(Wh, W)
    full[..., :, Wh:] = np.conj(z[..., u[:, None], (W - v)[None, :]])
    return full


def _self_conjugate_cols(w: int) -> list[int]:
    return [0, w // 2] if w % 2 == 0 and w > 1 else [0]


def rfft_2d(x) -> np.ndarray:
    """Half-plane spectrum of a real grid over its last two axes."""
    x = _as_signal(x)
    if x.ndim < 2:
        raise ValueError("rfft_2d needs at least two dimensions")
    H, W = x.shape[-2:]
    z = np.fft.rfft2(x, axes=(-2, -1))
    # exact Hermitian symmetry inside the self-conjugate columns
    u = np.arange(H)
    for v in _self_conjugate_cols(W):
        col = z[..., :, v]
        z[..., :, v] = 0.5 * (col + np.conj(col[..., (-u) % H]))
    return z


def irfft_2d(z, shape: tuple[int, int], *, tol: float = _REAL_TOL) -> np.ndarray:
    H, W = shape
    z = np.asarray(z, dtype=np.complex128)
    if z.shape[-2:] != (H, W // 2 + 1):
        raise ValueError(f"half-plane shape {z.shape[-2:]} does not match grid {shape}")
    u = np.arange(H)
    scale = max(1.0, float(np.max(np.abs(z)))) if z.size else 1.0
    for v in _self_conjugate_cols(W):
        col = z[..., :, v]
        if np.any(np.abs(col - np.conj(col[..., (-u) % H])) > tol * scale):
            raise ValueError("half-plane violates Hermitian symmetry")
    return np.fft.irfft2(z, s=(H, W), axes=(-2, -1))


def direct_dft(x) -> np.ndarray:
    """O(n^2) full DFT by explicit summation.  Test oracle; small n only."""
    x = np.asarray(x)
    n = x.shape[-1]
    t = np.arange(n)
    kernel = np.exp(-2j * np.pi * np.outer(t, t) / n)
    return x @ kernel.T


def circulant_dense(w) -> np.ndarray:
    """Dense ``n x n`` circulant matrix with entry ``(t, s) = w[(t - s) mod n]``."""
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[0]
    t = np.arange(n)
    return w[(t[:, None] - t[None, :]) % n]


def bccb_dense(w) -> np.ndarray:
    """Dense ``HW x HW`` BCCB matrix of the circular 2D convolution with ``w``.

    Rows and columns index the grid in row-major order.
    """
    w = np.asarray(w, dtype=np.float64)
    H, W = w.shape
    u = np.arange(H)
    v = np.arange(W)
    du = (u[:, None] - u[None, :]) % H
    dv = (v[:, None] - v[None, :]) % W
    return w[du[:, None, :, None], dv[None, :, None, :]].reshape(H * W, H * W)


@dataclass(frozen=True)
class Layout:
    """Map between effective real coordinates and a half-spectrum array.

    ``coord_bin[j]`` is the flat storage index of coordinate ``j`` and
    ``coord_part[j]`` is 0 for a real part and 1 for an imaginary part.
    ``mirror_dst[i]`` is stored as ``conj`` of ``mirror_src[i]``.
    """

    shape: tuple[int, ...]
    dims: tuple[int, ...]
    coord_bin: np.ndarray
    coord_part: np.ndarray
    mirror_dst: np.ndarray
    mirror_src: np.ndarray
    coord_rho: np.ndarray
    coord_var_mult: np.ndarray
    active: np.ndarray

    @property
    def d_eff(self) -> int:
        return int(self.coord_bin.size)

    @property
    def m_active(self) -> int:
        """Number of active stored bins (conjugate duplicates counted once)."""
        return int(np.unique(self.coord_bin).size)

    def describe(self) -> list[tuple[int, str]]:
        return [(int(b), "im" if p else "re") for b, p in zip(self.coord_bin, self.coord_part)]


def wrapped_radius(k, n: int) -> np.ndarray:
    k = np.asarray(k)
    return np.minimum(k, n - k) / max(1, n // 2)


def layout_1d(n: int, K: int | None = None) -> Layout:
    """Layout of a length-``n`` filter with the lowest ``K`` bins active."""
    if n < 1:
        raise ValueError("n must be >= 1")
    k_half = n // 2 + 1
    if K is None:
        K = k_half
    if not 1 <= K <= k_half:
        raise ValueError(f"K must be in [1, {k_half}], got {K}")
    bins, parts = [], []
    for k in range(K):
        bins.append(k)
        parts.append(0)
        if not (k == 0 or (n % 2 == 0 and k == n // 2)):
            bins.append(k)
            parts.append(1)
    bins = np.asarray(bins, dtype=np.intp)
    parts = np.asarray(parts, dtype=np.intp)
    active = np.zeros(k_half, dtype=bool)
    active[:K] = True
    empty = np.zeros(0, dtype=np.intp)
    return Layout(
        shape=(k_half,),
        dims=(n,),
        coord_bin=bins,
        coord_part=parts,
        mirror_dst=empty,
        mirror_src=empty,
        coord_rho=wrapped_radius(bins, n),
        coord_var_mult=_var_mult(bins, k_half),
        active=active,
    )


def _var_mult(bins: np.ndarray, size: int) -> np.ndarray:
    # a bin carrying a single coordinate is self-conjugate (variance S),
    # each component of a complex bin carries S/2
    return np.where(np.bincount(bins, minlength=size)[bins] == 1, 1.0, 0.5)


def radius_2d(H: int, W: int) -> np.ndarray:
    """Normalized wrapped radius on the ``H x (W//2+1)`` half-plane."""
    ru = wrapped_radius(np.arange(H), H)
    rv = wrapped_radius(np.arange(W // 2 + 1), W)
    return np.sqrt(ru[:, None] ** 2 + rv[None, :] ** 2)


def layout_2d(
    H: int, W: int, K_rad: float | None = None, channels: tuple[int, ...] = ()
) -> Layout:
    """Layout of one or more ``H x W`` half-planes (``channels`` leading axes).

    Bins with wrapped radius above ``K_rad`` are inactive; ``None`` keeps all.
    """
    if H < 1 or W < 1:
        raise ValueError("grid dims must be >= 1")
    if K_rad is not None and not 0.0 <= K_rad <= 1.0:
        raise ValueError(f"K_rad must lie in [0, 1], got {K_rad}")
    Wh = W // 2 + 1
    rho = radius_2d(H, W)
    active = np.ones((H, Wh), dtype=bool) if K_rad is None else rho <= K_rad
    sc_cols = set(_self_conjugate_cols(W))

    bins, parts, dst, src = [], [], [], []
    for u in range(H):
        for v in range(Wh):
            if not active[u, v]:
                continue
            flat = u * Wh + v
            if v in sc_cols:
                mu = (-u) % H
                if mu == u:
                    bins.append(flat)
                    parts.append(0)
                    continue
                if mu < u:
                    dst.append(flat)
                    src.append(mu * Wh + v)
                    continue
            bins += [flat, flat]
            parts += [0, 1]

    bins = np.asarray(bins, dtype=np.intp)
    parts = np.asarray(parts, dtype=np.intp)
    dst = np.asarray(dst, dtype=np.intp)
    src = np.asarray(src, dtype=np.intp)
    mult = _var_mult(bins, H * Wh)
    bin_rho = rho.ravel()[bins]

    n_pairs = int(np.prod(channels)) if channels else 1
    plane = H * Wh
    offs = np.arange(n_pairs, dtype=np.intp) * plane

    def tile(idx):
        return (offs[:, None] + idx[None, :]).ravel()

    return Layout(
        shape=tuple(channels) + (H, Wh),
        dims=(H, W),
        coord_bin=tile(bins),
        coord_part=np.tile(parts, n_pairs),
        mirror_dst=tile(dst),
        mirror_src=tile(src),
        coord_rho=np.tile(bin_rho, n_pairs),
        coord_var_mult=np.tile(mult, n_pairs),
        active=np.broadcast_to(active, tuple(channels) + (H, Wh)).copy(),
    )


def unpack_effective(a, layout: Layout) -> np.ndarray:
    """The map T: effective coordinates to half-spectrum storage."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != layout.d_eff:
        raise ValueError(
            f"coordinate length mismatch: got {a.shape[-1]}, expected {layout.d_eff}"
        )
    lead = a.shape[:-1]
    size = int(np.prod(layout.shape))
    z = np.zeros(lead + (size,), dtype=np.complex128)
    re = layout.coord_part == 0
    im = ~re
    z[..., layout.coord_bin[re]] = a[..., re]
    z[..., layout.coord_bin[im]] += 1j * a[..., im]
    if layout.mirror_dst.size:
        z[..., layout.mirror_dst] = np.conj(z[..., layout.mirror_src])
    return z.reshape(lead + layout.shape)


def pack_effective(h, layout: Layout) -> np.ndarray:
    """Inverse of :func:`unpack_effective` on Hermitian-consistent input."""
    h = np.asarray(h)
    n_lead = h.ndim - len(layout.shape)
    if n_lead < 0 or h.shape[n_lead:] != layout.shape:
        raise ValueError(f"spectrum shape {h.shape} does not match layout {layout.shape}")
    flat = h.reshape(h.shape[:n_lead] + (-1,))
    vals = flat[..., layout.coord_bin]
    return np.where(layout.coord_part == 0, vals.real, vals.imag).astype(np.float64)


def unpack_vjp(g, layout: Layout) -> np.ndarray:
    """Cotangent of :func:`unpack_effective`.

    ``g`` holds ``dL/dRe z + i dL/dIm z`` per storage bin, with no assumption
    that it is Hermitian-consistent.
    """
    g = np.asarray(g, dtype=np.complex128)
    n_lead = g.ndim - len(layout.shape)
    flat = g.reshape(g.shape[:n_lead] + (-1,)).copy()
    if layout.mirror_dst.size:
        # mirror sources are distinct, so plain fancy-index accumulation is safe
        flat[..., layout.mirror_src] += np.conj(flat[..., layout.mirror_dst])
    vals = flat[..., layout.coord_bin]
    return np.where(layout.coord_part == 0, vals.real, vals.imag)
