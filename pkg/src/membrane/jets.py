"""Truncated multivariate Taylor arithmetic ("jets") over batches of points.

A :class:`Jet` stores the Taylor coefficients ``c_alpha = d^alpha f / alpha!``
of a function of ``nvar`` variables, truncated at total degree ``order``, for
every point of a batch.  Coefficients live in one array of shape
``(ncoef, *batch)`` ordered by total degree, so the coefficients of a lower
order jet are a prefix of those of a higher order one.

Jets carry exact derivatives through arithmetic, elementary functions and
small matrix inverses.  They are used for the analytic metric families, the
analytic cross-validation fields, and for differentiating quantities built
from slice data (``Z^I`` of the PDE residual, ``d_alpha G^{alpha beta}``).
"""

from __future__ import annotations

import math
from functools import lru_cache
from itertools import product
from typing import Sequence

import numpy as np


class _Basis:
    def __init__(self, nvar: int, order: int):
        self.nvar = nvar
        self.order = order
        multi: list[tuple[int, ...]] = []
        for deg in range(order + 1):
            level = [m for m in product(range(deg + 1), repeat=nvar) if sum(m) == deg]
            multi.extend(sorted(level, reverse=True))
        self.multi = multi
        self.index = {m: k for k, m in enumerate(multi)}
        self.size = [math.comb(d + nvar, nvar) for d in range(order + 1)]

        # product table: for each left index i, the (right, target) index pairs
        self.mul_pairs = []
        for i, mi in enumerate(multi):
            js, ks = [], []
            room = order - sum(mi)
            for j in range(self.size[room]):
                mk = tuple(a + b for a, b in zip(mi, multi[j]))
                js.append(j)
                ks.append(self.index[mk])
            self.mul_pairs.append((np.array(js, dtype=np.intp), np.array(ks, dtype=np.intp)))

        # derivative along each variable: order -> order - 1
        self.deriv = []
        lower = self.size[order - 1] if order > 0 else 0
        for v in range(nvar):
            src = np.empty(lower, dtype=np.intp)
            fac = np.empty(lower)
            for k in range(lower):
                m = list(multi[k])
                m[v] += 1
                src[k] = self.index[tuple(m)]
                fac[k] = m[v]
            self.deriv.append((src, fac))

        self.factorial = np.array([math.prod(math.factorial(a) for a in m) for m in multi], dtype=float)


@lru_cache(maxsize=None)
def basis(nvar: int, order: int) -> _Basis:
    return _Basis(nvar, order)


def ncoef(nvar: int, order: int) -> int:
    return math.comb(order + nvar, nvar)


def _bshape(coef: np.ndarray) -> tuple[int, ...]:
    return coef.shape[1:]


def _expand(coef: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    lead = coef.shape[:1]
    batch = coef.shape[1:]
    coef = coef.reshape(lead + (1,) * (len(shape) - len(batch)) + batch)
    return np.broadcast_to(coef, lead + shape)


class Jet:
    """Taylor jet of order ``order`` in ``nvar`` variables, batched."""

    __array_priority__ = 1000

    def __init__(self, coef: np.ndarray, nvar: int, order: int):
        coef = np.asarray(coef, dtype=float)
        if coef.shape[0] != ncoef(nvar, order):
            raise ValueError(f"expected {ncoef(nvar, order)} coefficients, got {coef.shape[0]}")
        self.coef = coef
        self.nvar = nvar
        self.order = order

    # -- construction -------------------------------------------------------
    @classmethod
    def constant(cls, value, nvar: int, order: int, shape: tuple[int, ...] | None = None) -> "Jet":
        value = np.asarray(value, dtype=float)
        if shape is not None:
            value = np.broadcast_to(value, shape)
        coef = np.zeros((ncoef(nvar, order),) + value.shape)
        coef[0] = value
        return cls(coef, nvar, order)

    @classmethod
    def variable(cls, value, var: int, nvar: int, order: int) -> "Jet":
        value = np.asarray(value, dtype=float)
        coef = np.zeros((ncoef(nvar, order),) + value.shape)
        coef[0] = value
        if order >= 1:
            coef[1 + var] = 1.0
        return cls(coef, nvar, order)

    @classmethod
    def coordinates(cls, point: Sequence, order: int) -> list["Jet"]:
        """Coordinate jets ``x^mu`` expanded about ``point`` (sequence of arrays)."""
        nvar = len(point)
        return [cls.variable(point[v], v, nvar, order) for v in range(nvar)]

    @classmethod
    def from_derivatives(cls, derivs: dict[tuple[int, ...], np.ndarray], nvar: int, order: int) -> "Jet":
        """Build from partial derivatives keyed by multi-index."""
        b = basis(nvar, order)
        first = next(iter(derivs.values()))
        coef = np.zeros((len(b.multi),) + np.shape(first))
        for m, val in derivs.items():
            if sum(m) <= order:
                coef[b.index[m]] = np.asarray(val) / b.factorial[b.index[m]]
        return cls(coef, nvar, order)

    # -- access -------------------------------------------------------------
    @property
    def value(self) -> np.ndarray:
        return self.coef[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return _bshape(self.coef)

    def derivative(self, alpha: Sequence[int]) -> np.ndarray:
        """Partial derivative ``d^alpha f`` at the expansion points."""
        alpha = tuple(alpha)
        b = basis(self.nvar, self.order)
        k = b.index[alpha]
        return self.coef[k] * b.factorial[k]

    def grad(self) -> list[np.ndarray]:
        return [self.coef[1 + v] for v in range(self.nvar)]

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise ValueError("cannot raise jet order")
        return Jet(self.coef[: ncoef(self.nvar, order)], self.nvar, order)

    def d(self, var: int) -> "Jet":
        """Derivative along variable ``var``; the result has order - 1."""
        if self.order == 0:
            raise ValueError("derivative of an order-0 jet is undetermined")
        src, fac = basis(self.nvar, self.order).deriv[var]
        fac = fac.reshape((-1,) + (1,) * len(self.shape))
        return Jet(self.coef[src] * fac, self.nvar, self.order - 1)

    def take(self, idx) -> "Jet":
        return Jet(self.coef[(slice(None),) + (idx if isinstance(idx, tuple) else (idx,))], self.nvar, self.order)

    # -- arithmetic ---------------------------------------------------------
    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        return Jet.constant(other, self.nvar, self.order)

    def _common(self, other: "Jet") -> tuple["Jet", "Jet"]:
        if other.nvar != self.nvar:
            raise ValueError("jets over different variables")
        o = min(self.order, other.order)
        a = self if self.order == o else self.truncate(o)
        b = other if other.order == o else other.truncate(o)
        if a.shape != b.shape:
            shape = np.broadcast_shapes(a.shape, b.shape)
            a = Jet(_expand(a.coef, shape), a.nvar, o)
            b = Jet(_expand(b.coef, shape), b.nvar, o)
        return a, b

    def __add__(self, other):
        if not isinstance(other, Jet):
            other = np.asarray(other, dtype=float)
            shape = np.broadcast_shapes(self.shape, other.shape)
            coef = _expand(self.coef, shape).copy()
            coef[0] += other
            return Jet(coef, self.nvar, self.order)
        a, b = self._common(other)
        return Jet(a.coef + b.coef, a.nvar, a.order)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coef, self.nvar, self.order)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            other = np.asarray(other, dtype=float)
            shape = np.broadcast_shapes(self.shape, other.shape)
            return Jet(_expand(self.coef, shape) * other, self.nvar, self.order)
        a, b = self._common(other)
        bs = basis(a.nvar, a.order)
        shape = np.broadcast_shapes(a.shape, b.shape)
        out = np.zeros((len(bs.multi),) + shape)
        for i, (js, ks) in enumerate(bs.mul_pairs):
            ai = a.coef[i]
            if not np.any(ai):
                continue
            out[ks] += ai * b.coef[js]
        return Jet(out, a.nvar, a.order)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / np.asarray(other, dtype=float))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, int) and p >= 0:
            out = Jet.constant(1.0, self.nvar, self.order, self.shape)
            for _ in range(p):
                out = out * self
            return out
        return self.power(float(p))

    # -- elementary functions ----------------------------------------------
    def compose(self, derivs: Sequence[np.ndarray]) -> "Jet":
        """Apply a univariate function given its derivatives at the base value.

        ``derivs[k]`` is ``f^(k)(self.value)`` for ``k = 0..order``.
        """
        nil = Jet(self.coef.copy(), self.nvar, self.order)
        nil.coef[0] = 0.0
        out = Jet.constant(np.asarray(derivs[self.order]) / math.factorial(self.order), self.nvar, self.order, self.shape)
        for k in range(self.order - 1, -1, -1):
            out = out * nil + np.asarray(derivs[k]) / math.factorial(k)
        return out

    def power(self, p: float) -> "Jet":
        a0 = self.value
        derivs = []
        c = 1.0
        for k in range(self.order + 1):
            derivs.append(c * a0 ** (p - k))
            c *= p - k
        return self.compose(derivs)

    def reciprocal(self) -> "Jet":
        return self.power(-1.0)

    def sqrt(self) -> "Jet":
        return self.power(0.5)

    def exp(self) -> "Jet":
        e = np.exp(self.value)
        return self.compose([e] * (self.order + 1))

    def log(self) -> "Jet":
        a0 = self.value
        derivs = [np.log(a0)]
        for k in range(1, self.order + 1):
            derivs.append((-1.0) ** (k - 1) * math.factorial(k - 1) * a0 ** (-float(k)))
        return self.compose(derivs)

    def sin(self) -> "Jet":
        s, c = np.sin(self.value), np.cos(self.value)
        cyc = [s, c, -s, -c]
        return self.compose([cyc[k % 4] for k in range(self.order + 1)])

    def cos(self) -> "Jet":
        s, c = np.sin(self.value), np.cos(self.value)
        cyc = [c, -s, -c, s]
        return self.compose([cyc[k % 4] for k in range(self.order + 1)])

    def where(self, mask, other: "Jet") -> "Jet":
        """Pointwise select: ``self`` where ``mask`` else ``other``."""
        a, b = self._common(other)
        return Jet(np.where(mask, a.coef, b.coef), a.nvar, a.order)

    def __repr__(self) -> str:
        return f"Jet(nvar={self.nvar}, order={self.order}, batch={self.shape})"


def value(x):
    """Value of a jet, or ``x`` itself for plain arrays/scalars."""
    return x.value if isinstance(x, Jet) else x


def mat_inverse(mat: list[list[Jet]]) -> list[list[Jet]]:
    """Inverse of a small square matrix of jets.

    The base value is inverted pointwise with numpy; the nilpotent part is
    handled by the terminating Neumann series ``sum_k (-B0 N)^k B0``.
    """
    n = len(mat)
    nvar, order = mat[0][0].nvar, mat[0][0].order
    vals = np.stack([np.stack([np.broadcast_to(mat[i][j].value, mat[0][0].shape) for j in range(n)], -1) for i in range(n)], -2)
    inv0 = np.linalg.inv(vals)
    b0 = [[Jet.constant(inv0[..., i, j], nvar, order) for j in range(n)] for i in range(n)]
    nil = []
    for i in range(n):
        row = []
        for j in range(n):
            c = mat[i][j].coef.copy()
            c[0] = 0.0
            row.append(Jet(c, nvar, order))
        nil.append(row)
    # step = -B0 N
    step = [[-sum((b0[i][k] * nil[k][j] for k in range(n)), Jet.constant(0.0, nvar, order)) for j in range(n)] for i in range(n)]
    out = [row[:] for row in b0]
    term = [row[:] for row in b0]
    for _ in range(order):
        term = [[sum((step[i][k] * term[k][j] for k in range(n)), Jet.constant(0.0, nvar, order)) for j in range(n)] for i in range(n)]
        out = [[out[i][j] + term[i][j] for j in range(n)] for i in range(n)]
    return out
