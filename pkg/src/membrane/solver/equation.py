"""Pointwise quasilinear decomposition of the membrane equation.

The equation is written as ``(m + G)^{ab} d_a d_b phi = F`` with

    G^{ab} = (g^{ab} - m^{ab}) + (g^{mn} d_m phi d_n phi) g^{ab} - v^a v^b,   v^a = g^{ab} d_b phi,
    F      = Gamma^m d_m phi + (g^{mn} d_m phi d_n phi) Gamma^m d_m phi - v^m v^n Gamma^c_{mn} d_c phi.

All functions accept numpy arrays or jets (anything with + and *), so the same
code drives the time stepper and the diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..frames import minkowski


class DegeneracyError(RuntimeError):
    """The coefficient of d_t^2 phi left the admissible range."""

    def __init__(self, message: str, t: float | None = None, worst: float | None = None):
        super().__init__(message)
        self.t = t
        self.worst = worst


# Guard thresholds: |A + 1| and |W - 1| must stay below this.
GUARD = 0.5


@dataclass
class Background:
    """Metric data at a batch of points; ``flat`` short-circuits Minkowski."""

    n: int
    flat: bool
    upper: object = None  # nested [a][b]
    contracted: object = None  # [m]
    christoffel: object = None  # [c][m][n]

    @classmethod
    def minkowski(cls, n: int) -> "Background":
        m = minkowski(n)
        n1 = n + 1
        return cls(n, True, [[m[a, b] for b in range(n1)] for a in range(n1)], [0.0] * n1, None)

    @classmethod
    def from_sample(cls, ms) -> "Background":
        n1 = ms.g_upper.shape[0]
        return cls(
            n1 - 1,
            False,
            [[ms.g_upper[a, b] for b in range(n1)] for a in range(n1)],
            [ms.contracted[m] for m in range(n1)],
            [[[ms.christoffel[c, a, b] for b in range(n1)] for a in range(n1)] for c in range(n1)],
        )

    @classmethod
    def from_jets(cls, mj) -> "Background":
        n1 = len(mj.upper)
        return cls(n1 - 1, False, mj.upper, mj.contracted, mj.christoffel)


@dataclass
class Decomposition:
    G: list  # G[a][b]
    F: object
    A: object  # (m + G)^{00}
    W: object  # 1 + g^{ab} d_a phi d_b phi


def _zero(x):
    return x * 0.0


def decompose(d1: list, bg: Background, mode: str = "full") -> Decomposition:
    """``G``, ``F``, ``A`` and the timelike factor ``W`` from first derivatives ``d1``."""
    n1 = len(d1)
    m = minkowski(n1 - 1)
    g = bg.upper
    v = [sum(g[a][b] * d1[b] for b in range(n1)) for a in range(n1)]
    q = sum(v[a] * d1[a] for a in range(n1))
    W = 1.0 + q
    if bg.flat:
        lin = 0.0
    else:
        lin = sum(bg.contracted[a] * d1[a] for a in range(n1))
    G = [[None] * n1 for _ in range(n1)]
    for a in range(n1):
        for b in range(a, n1):
            base = g[a][b] - m[a, b] if not bg.flat else _zero(d1[0])
            if mode == "full":
                val = base + q * g[a][b] - v[a] * v[b]
            elif mode == "flat-null-only":
                vm_a = m[a, a] * d1[a]
                vm_b = m[b, b] * d1[b]
                qm = sum(m[c, c] * d1[c] * d1[c] for c in range(n1))
                val = base - vm_a * vm_b + (qm * m[a, b] if a == b else 0.0)
            elif mode == "linear":
                val = base
            else:
                raise ValueError(f"unknown nonlinearity mode {mode!r}")
            G[a][b] = G[b][a] = val
    F = lin
    if mode == "full" and not bg.flat:
        F = F + q * lin
        for c in range(n1):
            acc = 0.0
            for a in range(n1):
                for b in range(n1):
                    acc = acc + v[a] * v[b] * bg.christoffel[c][a][b]
            F = F - acc * d1[c]
    if bg.flat:
        F = _zero(d1[0]) + F
    A = m[0, 0] + G[0][0]
    return Decomposition(G, F, A, W)


def operator(d1: list, d2: list, bg: Background, mode: str = "full"):
    """``(m + G)^{ab} d_a d_b phi - F``; zero on exact solutions of the unforced equation."""
    dec = decompose(d1, bg, mode)
    n1 = len(d1)
    m = minkowski(n1 - 1)
    out = -dec.F
    for a in range(n1):
        for b in range(n1):
            out = out + (m[a, b] + dec.G[a][b]) * d2[a][b]
    return out


def acceleration(d1: list, d2: list, bg: Background, mode: str = "full", forcing=None):
    """Solve the equation for ``d_t^2 phi``; ``d2[0][0]`` is ignored.

    Returns ``(phi_tt, A, W)``.  ``forcing`` is added to the right side, so the
    equation being solved is ``operator(phi) = forcing``.
    """
    n1 = len(d1)
    if bg.flat and mode in ("full", "flat-null-only"):
        return _flat_acceleration(d1, d2, forcing)
    dec = decompose(d1, bg, mode)
    m = minkowski(n1 - 1)
    rest = 0.0
    for a in range(n1):
        for b in range(n1):
            if a == 0 and b == 0:
                continue
            c = d2[a][b]
            if isinstance(c, float) and c == 0.0:
                continue
            rest = rest + (m[a, b] + dec.G[a][b]) * c
    rhs = dec.F - rest
    if forcing is not None:
        rhs = rhs + forcing
    return rhs / dec.A, dec.A, dec.W


def _flat_acceleration(d1, d2, forcing):
    n1 = len(d1)
    psi = d1[0]
    grad2 = sum(d1[i] * d1[i] for i in range(1, n1))
    q = grad2 - psi * psi
    rest = 0.0
    for i in range(1, n1):
        if not (isinstance(d2[0][i], float) and d2[0][i] == 0.0):
            rest = rest + 2.0 * psi * d1[i] * d2[0][i]
        for j in range(1, n1):
            c = d2[i][j]
            if isinstance(c, float) and c == 0.0:
                continue
            coeff = -d1[i] * d1[j] + ((1.0 + q) if i == j else 0.0)
            rest = rest + coeff * c
    A = -1.0 - grad2
    rhs = -rest
    if forcing is not None:
        rhs = rhs + forcing
    return rhs / A, A, 1.0 + q


def check_guard(A, W, t: float) -> None:
    """Raise :class:`DegeneracyError` when ``|A + 1|`` or ``|W - 1|`` reaches the guard."""
    dev_a = float(np.max(np.abs(np.asarray(A) + 1.0))) if np.size(A) else 0.0
    dev_w = float(np.max(np.abs(np.asarray(W) - 1.0))) if np.size(W) else 0.0
    worst = max(dev_a, dev_w)
    if not np.isfinite(worst):
        return  # NaNs are reported by the blowup check
    if worst >= GUARD:
        which = "|A + 1|" if dev_a >= dev_w else "|W - 1|"
        raise DegeneracyError(
            f"degeneracy guard tripped at t={t:.6g}: {which} = {worst:.4g} >= {GUARD} "
            "(coefficient of d_t^2 phi / timelike factor left the small-data regime)",
            t=t,
            worst=worst,
        )
