from __future__ import annotations

import itertools

import numpy as np
import pytest
import sympy as sp

from membrane.jets import Jet, mat_inverse, ncoef


T, X, Y = sp.symbols("t x y")


def _sym_derivs(expr, point, order):
    out = {}
    for k in range(order + 1):
        for a in itertools.product(range(k + 1), repeat=3):
            if sum(a) != k:
                continue
            d = expr
            for var, p in zip((T, X, Y), a):
                if p:
                    d = sp.diff(d, var, p)
            out[a] = float(d.subs({T: point[0], X: point[1], Y: point[2]}))
    return out


CASES = [
    (lambda c: (c[0] * c[1] + c[2] * c[2]).exp(), sp.exp(T * X + Y * Y)),
    (lambda c: (c[1] * 0.7 - c[0]).sin() * c[2], sp.sin(0.7 * X - T) * Y),
    (lambda c: (c[0] * c[0] - c[1] * c[1]).sqrt(), sp.sqrt(T * T - X * X)),
    (lambda c: (c[0] + c[2] * c[2]).log() / c[0], sp.log(T + Y * Y) / T),
    (lambda c: (c[0] * c[0] + c[1]).power(-1.5), (T * T + X) ** sp.Rational(-3, 2)),
]


@pytest.mark.parametrize("case", range(len(CASES)))
def test_jet_derivatives_match_symbolic(case):
    fn, expr = CASES[case]
    point = (2.3, 0.4, -0.6)
    coords = Jet.coordinates([np.array(v) for v in point], 3)
    jet = fn(coords)
    for alpha, want in _sym_derivs(expr, point, 3).items():
        assert jet.derivative(alpha) == pytest.approx(want, rel=1e-11, abs=1e-12), alpha


def test_coefficient_count():
    assert ncoef(3, 3) == 20
    assert ncoef(2, 0) == 1


def test_batched_and_scalar_mix():
    t = np.linspace(2, 3, 7)
    c = Jet.coordinates([t, t * 0.1, t * 0.2], 2)
    u = (c[0] * 2.0 + 1.0) * c[1]
    np.testing.assert_allclose(u.derivative((1, 1, 0)), 2.0)
    np.testing.assert_allclose(u.value, (2 * t + 1) * 0.1 * t)


def test_from_derivatives_roundtrip():
    c = Jet.coordinates([np.array(1.2), np.array(0.3), np.array(-0.1)], 2)
    u = (c[0] * c[1] - c[2]).exp()
    b = {a: u.derivative(a) for a in itertools.product(range(3), repeat=3) if sum(a) <= 2}
    v = Jet.from_derivatives(b, 3, 2)
    np.testing.assert_allclose(v.coef, u.coef)


def test_d_lowers_order():
    c = Jet.coordinates([np.array(1.5), np.array(0.5), np.array(0.2)], 3)
    u = c[0] * c[0] * c[1]
    du = u.d(0)
    assert du.order == 2
    assert du.derivative((0, 1, 0)) == pytest.approx(2 * 1.5)


def test_truncate_rejects_raise():
    c = Jet.coordinates([np.array(1.0)], 1)
    with pytest.raises(ValueError):
        c[0].truncate(2)


def test_matrix_inverse():
    c = Jet.coordinates([np.array(2.0), np.array(0.5), np.array(0.3)], 2)
    m = [[c[0], c[1]], [c[2], c[0] * c[0]]]
    inv = mat_inverse(m)
    for i in range(2):
        for j in range(2):
            prod = m[i][0] * inv[0][j] + m[i][1] * inv[1][j]
            np.testing.assert_allclose(prod.coef, (1.0 if i == j else 0.0) * (np.arange(prod.coef.shape[0]) == 0), atol=1e-13)
