"""The cubic membrane nonlinearity in Cartesian and semi-hyperboloidal form.

Frame second derivatives are stored as ``frame2[a][b] = dbar_a dbar_b phi``
(``dbar_b`` applied first); ``dbar_t dbar_i`` and ``dbar_i dbar_t`` differ by
``-(x^i/t^2) dbar_t phi``, so both orders are kept.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import calibrated
from .frames import frame_second, minkowski
from .jets import Jet


@dataclass
class DerivativeBundle:
    t: np.ndarray
    x: list
    cart1: list  # d_alpha phi
    cart2: list  # d_alpha d_beta phi
    frame1: list  # dbar_alpha phi
    frame2: list  # dbar_alpha dbar_beta phi

    @property
    def n(self) -> int:
        return len(self.x)

    @classmethod
    def from_jet(cls, u: Jet, coords: Sequence[Jet]) -> "DerivativeBundle":
        if u.order < 2:
            raise ValueError("need a jet of order >= 2")
        n1 = u.nvar
        unit = [tuple(int(i == a) for i in range(n1)) for a in range(n1)]
        cart1 = [u.derivative(unit[a]) for a in range(n1)]
        cart2 = [[u.derivative(tuple(p + q for p, q in zip(unit[a], unit[b]))) for b in range(n1)] for a in range(n1)]
        t = coords[0].value
        x = [c.value for c in coords[1:]]
        sec = frame_second(u.truncate(2), [c.truncate(2) for c in coords])
        frame2 = [[sec[a][b].value for b in range(n1)] for a in range(n1)]
        frame1 = [cart1[0]] + [x[a - 1] / t * cart1[0] + cart1[a] for a in range(1, n1)]
        return cls(t, x, cart1, cart2, frame1, frame2)

    @classmethod
    def from_cartesian(cls, t, x: Sequence, cart1: Sequence, cart2) -> "DerivativeBundle":
        t = np.asarray(t, dtype=float)
        x = [np.asarray(v, dtype=float) for v in x]
        n1 = len(x) + 1
        xt = [None] + [x[a - 1] / t for a in range(1, n1)]
        frame1 = [cart1[0]] + [xt[a] * cart1[0] + cart1[a] for a in range(1, n1)]
        # dbar_a dbar_b = Phi_a^mu Phi_b^nu d_mu d_nu + Phi_a^mu (d_mu Phi_b^nu) d_nu
        row = lambda a, nu: cart2[0][nu] if a == 0 else xt[a] * cart2[0][nu] + cart2[a][nu]  # noqa: E731
        frame2 = [[None] * n1 for _ in range(n1)]
        for a in range(n1):
            for b in range(n1):
                val = row(a, b) if b == 0 else xt[b] * row(a, 0) + row(a, b)
                if b > 0:
                    if a == 0:
                        val = val - x[b - 1] / t**2 * cart1[0]
                    else:
                        val = val + ((a == b) / t - x[a - 1] * x[b - 1] / t**3) * cart1[0]
                frame2[a][b] = val
        return cls(t, x, list(cart1), [list(r) for r in cart2], frame1, frame2)

    def cartesian_from_frame(self):
        """Cartesian first and second derivatives rebuilt from the frame entries."""
        return cartesian_from_frame(self.frame1, self.frame2, self.t, self.x)

    def scaled(self, c: float) -> "DerivativeBundle":
        sc = lambda rows: [[c * v for v in r] for r in rows]  # noqa: E731
        return DerivativeBundle(
            self.t, self.x, [c * v for v in self.cart1], sc(self.cart2), [c * v for v in self.frame1], sc(self.frame2)
        )


def cartesian_from_frame(frame1, frame2, t, x):
    """Invert the frame change: ``d_i = dbar_i - (x^i/t) dbar_t``."""
    n1 = len(x) + 1
    P = frame1[0]
    F = frame2
    xt = [None] + [x[a - 1] / t for a in range(1, n1)]
    c1 = [P] + [frame1[a] - xt[a] * P for a in range(1, n1)]
    c2 = [[None] * n1 for _ in range(n1)]
    c2[0][0] = F[0][0]
    for i in range(1, n1):
        c2[0][i] = c2[i][0] = F[i][0] - xt[i] * F[0][0]
        for j in range(i, n1):
            v = F[i][j] - xt[j] * F[i][0] - xt[i] * F[0][j] + xt[i] * xt[j] * F[0][0]
            if i == j:
                v = v - P / t
            c2[i][j] = c2[j][i] = v
    return c1, c2


# -- cubic null form -----------------------------------------------------------


def cubic_flat_cartesian(d: DerivativeBundle):
    """``m^{mu nu} m^{ab} d_a phi d_b phi d_mu d_nu phi - m^{mu a} m^{nu b} d_a phi d_b phi d_mu d_nu phi``.

    Written as ``-(phi_t)^2 Lap - |grad|^2 phi_tt + |grad|^2 Lap + 2 sum phi_t phi_i phi_ti
    - sum phi_i phi_j phi_ij``.
    """
    c1, c2 = d.cart1, d.cart2
    n1 = len(c1)
    lap = sum(c2[i][i] for i in range(1, n1))
    grad2 = sum(c1[i] ** 2 for i in range(1, n1))
    out = -(c1[0] ** 2) * lap - grad2 * c2[0][0] + grad2 * lap
    for i in range(1, n1):
        out = out + 2.0 * c1[0] * c1[i] * c2[0][i]
        for j in range(1, n1):
            out = out - c1[i] * c1[j] * c2[i][j]
    return out


def cubic_flat_frame_groups(d: DerivativeBundle) -> dict:
    """Frame expansion of the cubic null form (n = 2), one entry per displayed group."""
    if d.n != 2:
        raise ValueError("the frame expansion is written out for n = 2")
    t = d.t
    x1, x2 = d.x
    P, Q1, Q2 = d.frame1
    F = d.frame2
    Ptt = F[0][0]
    F11, F22, F12 = F[1][1], F[2][2], 0.5 * (F[1][2] + F[2][1])
    r2 = x1 * x1 + x2 * x2
    Q = (None, Q1, Q2)
    X = (None, x1, x2)
    g = {}
    g["frame_null"] = sum(-(P**2) * F[i][i] - Q[i] ** 2 * Ptt + 2.0 * P * Q[i] * F[0][i] for i in (1, 2))
    g["tt_weighted_good"] = P**2 * ((x1 / t) ** 2 * F22 + (x2 / t) ** 2 * F11 - 2.0 * x1 * x2 / t**2 * F12)
    g["good_weighted_tt"] = Ptt * ((x2 / t) ** 2 * Q1**2 + (x1 / t) ** 2 * Q2**2 - 2.0 * x1 * x2 / t**2 * Q1 * Q2)
    g["symmetrised_mixed"] = -(x2 / t) * Q1**2 * (F[0][2] + F[2][0]) - (x1 / t) * Q2**2 * (F[0][1] + F[1][0])
    g["good_mixed"] = 2.0 * (x1 / t) * Q1 * Q2 * F[0][2] + 2.0 * (x2 / t) * Q1 * Q2 * F[1][0]
    g["good_only"] = Q1**2 * F22 + Q2**2 * F11 - 2.0 * Q1 * Q2 * F12
    g["t_good_mixed"] = (
        2.0 * x1 * x2 / t**2 * P * Q1 * F[2][0]
        + 2.0 * x1 * x2 / t**2 * P * Q2 * F[0][1]
        - 2.0 * (x1 / t) ** 2 * P * Q2 * F[0][2]
        - 2.0 * (x2 / t) ** 2 * P * Q1 * F[1][0]
    )
    g["t_good_good"] = (
        -2.0 * (x2 / t) * P * Q2 * F11
        - 2.0 * (x1 / t) * P * Q1 * F22
        + 2.0 * (x2 / t) * P * Q1 * F12
        + 2.0 * (x1 / t) * P * Q2 * F12
    )
    g["first_order_tail"] = (
        -(P / t) * (Q1**2 + Q2**2)
        + P**2 * (2.0 * x1 / t**2 * Q1 + 2.0 * x2 / t**2 * Q2)
        + 2.0 * (t**2 - r2) / t**3 * P**3
        + sum(2.0 * X[i] / t**2 * P**2 * Q[i] for i in (1, 2))
    )
    return g


def cubic_flat_frame(d: DerivativeBundle):
    """The same cubic form evaluated entirely from frame derivatives."""
    groups = cubic_flat_frame_groups(d)
    out = 0.0
    for v in groups.values():
        out = out + v
    return out


@dataclass
class NullBound:
    groups: dict
    total: np.ndarray
    value: np.ndarray
    constant: float

    @property
    def ratio(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.total > 0, np.abs(self.value) / np.where(self.total > 0, self.total, 1.0), 0.0)

    @property
    def holds(self) -> bool:
        return bool(np.all(np.abs(self.value) <= self.constant * self.total * (1 + 1e-12) + 1e-300))


def double_null_bound(d: DerivativeBundle, constant: float | None = None) -> NullBound:
    """Pointwise bound groups for the cubic null form (zero-order case).

    Groups: ``(s/t)^2 t^-1 |dbar_t phi|^3``; ``t^-1 |dbar_a dbar_b dbar_i|``;
    ``|dbar_a dbar_b dbar_i dbar_j phi|``; ``|dbar_j dbar_b dbar_i dbar_a phi|``
    (sums over all frame indices, latin indices spatial).
    """
    t = d.t
    n1 = d.n + 1
    r2 = sum(v * v for v in d.x)
    s2t2 = (t * t - r2) / (t * t)
    f1 = [np.abs(v) for v in d.frame1]
    f2 = [[np.abs(v) for v in row] for row in d.frame2]
    all1 = sum(f1)
    good1 = sum(f1[1:])
    groups = {
        "tt_cubed": s2t2 / t * f1[0] ** 3,
        "first_order": all1 * all1 * good1 / t,
        "good_second": all1 * all1 * sum(f2[i][j] for i in range(1, n1) for j in range(1, n1)),
        "one_good_second": good1 * all1 * sum(f2[i][a] for i in range(1, n1) for a in range(n1)),
    }
    total = sum(groups.values())
    c = calibrated.DOUBLE_NULL_CONSTANT if constant is None else constant
    return NullBound(groups, total, cubic_flat_frame(d), c)


# -- metric corrections ----------------------------------------------------------


@dataclass
class CoefficientTensors:
    """``D4[a,b,c,e]`` multiplies ``d_a phi d_b phi d_c d_e phi``; ``D3[a,b,c]`` multiplies ``d_a d_b d_c phi``."""

    D4: np.ndarray
    D3: np.ndarray


def coefficient_tensors(ms) -> CoefficientTensors:
    g = ms.g_upper
    n1 = g.shape[0]
    m = minkowski(n1 - 1).reshape((n1, n1) + (1,) * (g.ndim - 2))
    d4 = np.einsum("ab...,ce...->abce...", g, g) - np.einsum("ab...,ce...->abce...", m + 0 * g, m + 0 * g)
    d4 -= np.einsum("ca...,eb...->abce...", g, g) - np.einsum("ca...,eb...->abce...", m + 0 * g, m + 0 * g)
    d3 = np.einsum("ab...,c...->abc...", g, ms.contracted) - np.einsum("ua...,vb...,cuv...->abc...", g, g, ms.christoffel)
    return CoefficientTensors(d4, d3)


def correction_terms(tensors: CoefficientTensors, d: DerivativeBundle):
    """``D4 dphi dphi d2phi + D3 dphi dphi dphi`` using Cartesian derivatives rebuilt from the frame."""
    c1, c2 = d.cartesian_from_frame()
    c1 = np.array(np.broadcast_arrays(*c1))
    c2 = np.array([np.broadcast_arrays(*row) for row in c2])
    quartic = np.einsum("abce...,a...,b...,ce...->...", tensors.D4, c1, c1, c2)
    cubic = np.einsum("abc...,a...,b...,c...->...", tensors.D3, c1, c1, c1)
    return quartic + cubic


def linear_variable_terms(ms, d: DerivativeBundle):
    """``(g^{mu nu} - m^{mu nu}) d_mu d_nu phi + Gamma^mu d_mu phi``."""
    g = ms.g_upper
    n1 = g.shape[0]
    m = minkowski(n1 - 1)
    out = 0.0
    for mu in range(n1):
        out = out + ms.contracted[mu] * d.cart1[mu]
        for nu in range(n1):
            out = out + (g[mu, nu] - m[mu, nu]) * d.cart2[mu][nu]
    return out


def calibrate_double_null(bundles: Sequence[DerivativeBundle], safety: float = 1.5) -> float:
    """``safety`` times the largest observed ``|value| / total`` over the given bundles."""
    worst = 0.0
    for d in bundles:
        b = double_null_bound(d, constant=np.inf)
        worst = max(worst, float(np.max(b.ratio)))
    return safety * worst
