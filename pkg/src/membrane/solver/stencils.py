"""Centered finite-difference stencils on halo-padded arrays."""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

HALO = 5  # enough for third derivatives at eighth-order accuracy
ACCURACIES = (4, 6, 8)


def fornberg(order: int, offsets: Sequence[float], x0: float = 0.0) -> np.ndarray:
    """Weights for the ``order``-th derivative at ``x0`` from samples at ``offsets`` (Fornberg's recursion)."""
    z = np.asarray(offsets, dtype=float)
    n = len(z)
    c = np.zeros((n, order + 1))
    c1, c4 = 1.0, z[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2, c5, c4 = 1.0, c4, z[i] - x0
        for j in range(i):
            c3 = z[i] - z[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


@lru_cache(maxsize=None)
def centered(order: int, accuracy: int = 4) -> tuple[np.ndarray, int]:
    """Centered weights for ``d^order`` (unit spacing) at the given even accuracy, and the half width."""
    if order == 0:
        return np.array([1.0]), 0
    if accuracy not in ACCURACIES:
        raise ValueError(f"accuracy must be one of {ACCURACIES}")
    hw = (order - 1) // 2 + accuracy // 2
    w = fornberg(order, np.arange(-hw, hw + 1))
    w[np.abs(w) < 1e-14] = 0.0
    return w, hw


def _shift(region: tuple, axis: int, k: int) -> tuple:
    sl = list(region)
    s = sl[axis]
    sl[axis] = slice(s.start + k, s.stop + k)
    return tuple(sl)


def _grow(region: tuple, axis: int, k: int) -> tuple:
    sl = list(region)
    s = sl[axis]
    sl[axis] = slice(s.start - k, s.stop + k)
    return tuple(sl)


def diff1d(f: np.ndarray, axis: int, order: int, h: float, region: tuple, accuracy: int = 4) -> np.ndarray:
    """``d^order f / dx_axis^order`` on ``region`` (tuple of slices into ``f``)."""
    w, hw = centered(order, accuracy)
    if order == 0:
        return f[region]
    out = None
    for k, wk in zip(range(-hw, hw + 1), w):
        if wk == 0.0:
            continue
        term = wk * f[_shift(region, axis, k)]
        out = term if out is None else out + term
    return out / h**order


def partial(f: np.ndarray, alpha: Sequence[int], h: float, region: tuple, accuracy: int = 4) -> np.ndarray:
    """Mixed spatial derivative ``d^alpha f`` on ``region`` via tensor-product stencils."""
    active = [ax for ax, k in enumerate(alpha) if k > 0]
    if not active:
        return f[region]
    ax = active[-1]
    k = alpha[ax]
    hw = centered(k, accuracy)[1]
    inner_alpha = list(alpha)
    inner_alpha[ax] = 0
    inner = partial(f, inner_alpha, h, _grow(region, ax, hw), accuracy)
    local = tuple(
        slice(hw, hw + r.stop - r.start) if a == ax else slice(0, r.stop - r.start) for a, r in enumerate(region)
    )
    return diff1d(inner, ax, k, h, local, accuracy)


def fill_halo(f: np.ndarray, boundary: str, radial: bool = False) -> None:
    """Set halo cells: zero, periodic wrap, or even reflection at r = 0 (radial arrays)."""
    H = HALO
    if radial:
        f[:H] = f[2 * H - 1 : H - 1 : -1]
        f[-H:] = 0.0
        return
    if boundary == "periodic":
        for ax in range(f.ndim):
            n = f.shape[ax] - 2 * H
            lo = [slice(None)] * f.ndim
            hi = [slice(None)] * f.ndim
            src_lo = [slice(None)] * f.ndim
            src_hi = [slice(None)] * f.ndim
            lo[ax], src_lo[ax] = slice(0, H), slice(n, n + H)
            hi[ax], src_hi[ax] = slice(n + H, n + 2 * H), slice(H, 2 * H)
            f[tuple(lo)] = f[tuple(src_lo)]
            f[tuple(hi)] = f[tuple(src_hi)]
        return
    for ax in range(f.ndim):
        lo = [slice(None)] * f.ndim
        hi = [slice(None)] * f.ndim
        lo[ax] = slice(0, H)
        hi[ax] = slice(-H, None)
        f[tuple(lo)] = 0.0
        f[tuple(hi)] = 0.0
