from __future__ import annotations

import numpy as np
import pytest
import sympy as sp

from membrane.fields import cone_points
from membrane.metrics import MetricConfig, sample_metric
from membrane.solver.equation import (
    GUARD,
    Background,
    DegeneracyError,
    acceleration,
    check_guard,
    decompose,
    operator,
)


def _random_derivs(rng, count, scale=0.3):
    d1 = [scale * rng.normal(size=count) for _ in range(3)]
    m = scale * rng.normal(size=(3, 3, count))
    m = (m + m.transpose(1, 0, 2)) / 2
    return d1, [[m[a, b] for b in range(3)] for a in range(3)]


def test_flat_equation_matches_membrane_lagrangian(rng):
    # Euler-Lagrange of sqrt(1 + m(dphi, dphi)) is d_a (m^{ab} d_b phi / W^(1/2)) = 0;
    # times W^(3/2) this is (1 + q) box phi - v^a v^b d_a d_b phi
    P = sp.symbols("p0:3")
    H = sp.Matrix(3, 3, lambda a, b: sp.Symbol(f"h{min(a, b)}{max(a, b)}"))
    m = sp.diag(-1, 1, 1)
    q = sum(m[a, a] * P[a] ** 2 for a in range(3))
    W = 1 + q
    lhs = 0
    for a in range(3):
        for b in range(3):
            # d_a (m^{ab} p_b W^-1/2)
            dW = 2 * sum(m[c, c] * P[c] * H[a, c] for c in range(3))
            lhs += m[a, b] * (H[a, b] / sp.sqrt(W) - P[b] * dW / (2 * W ** sp.Rational(3, 2)))
    hs = [H[a, b] for a in range(3) for b in range(a, 3)]
    el = sp.lambdify(list(P) + hs, sp.simplify(lhs * W ** sp.Rational(3, 2)))
    d1, d2 = _random_derivs(rng, 50)
    got = operator(d1, d2, Background.minkowski(2), "full")
    want = el(*d1, *[d2[a][b] for a in range(3) for b in range(a, 3)])
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-13)


def test_flat_fast_path_matches_general(rng):
    d1, d2 = _random_derivs(rng, 40)
    bg = Background.minkowski(2)
    fast, A, W = acceleration(d1, d2, bg, "full")
    dec = decompose(d1, bg, "full")
    rest = sum((np.diag([-1.0, 1, 1])[a, b] + dec.G[a][b]) * d2[a][b] for a in range(3) for b in range(3) if (a, b) != (0, 0))
    np.testing.assert_allclose(fast, (dec.F - rest) / dec.A, rtol=1e-12)
    np.testing.assert_allclose(A, dec.A)
    np.testing.assert_allclose(W, dec.W)


@pytest.mark.parametrize("mode", ["full", "linear", "flat-null-only"])
def test_acceleration_solves_operator(rng, mode):
    t, x = cone_points(30, rng)
    cfg = MetricConfig(kind="perturbed", delta=0.2, coeffs=[[-0.5, 0.2, 0.0], [0.2, 0.5, 0.1], [0.0, 0.1, 0.3]])
    bg = Background.from_sample(sample_metric(cfg, t, x))
    d1, d2 = _random_derivs(rng, 30)
    forcing = rng.normal(size=30)
    tt, _, _ = acceleration(d1, d2, bg, mode, forcing)
    d2[0][0] = tt
    np.testing.assert_allclose(operator(d1, d2, bg, mode), forcing, atol=1e-12)


def test_linear_mode_ignores_field_nonlinearity(rng):
    d1, d2 = _random_derivs(rng, 10)
    dec = decompose(d1, Background.minkowski(2), "linear")
    for row in dec.G:
        for v in row:
            np.testing.assert_array_equal(v, 0.0)


def test_flat_null_only_equals_full_on_minkowski(rng):
    d1, d2 = _random_derivs(rng, 20)
    bg = Background.minkowski(2)
    a = operator(d1, d2, bg, "full")
    b = operator(d1, d2, bg, "flat-null-only")
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_guard():
    check_guard(np.array([-1.2]), np.array([1.1]), 1.0)
    with pytest.raises(DegeneracyError) as e:
        check_guard(np.array([-1.0 - GUARD]), np.array([1.0]), 3.0)
    assert e.value.t == 3.0
    with pytest.raises(DegeneracyError):
        check_guard(np.array([-1.0]), np.array([1.0 - GUARD]), 3.0)


def test_unknown_mode():
    with pytest.raises(ValueError):
        decompose([np.zeros(1)] * 3, Background.minkowski(2), "quartic")
