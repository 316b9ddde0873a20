from __future__ import annotations

import numpy as np
import pytest

from membrane import calibrated
from membrane.fields import cone_points, standard_corpus
from membrane.jets import Jet
from membrane.metrics import MetricConfig, sample_metric
from membrane.nullforms import (
    DerivativeBundle,
    calibrate_double_null,
    coefficient_tensors,
    correction_terms,
    cubic_flat_cartesian,
    cubic_flat_frame,
    double_null_bound,
    linear_variable_terms,
)
from membrane.solver.equation import Background, decompose


def _bundle(field, count=400, seed=3, order=2):
    rng = np.random.default_rng(seed)
    t, x = cone_points(count, rng)
    return DerivativeBundle.from_jet(field.jet(t, x, order), Jet.coordinates([t] + x, order))


def _random_bundle(rng, count=300):
    t, x = cone_points(count, rng)
    c1 = [rng.normal(size=count) for _ in range(3)]
    m = rng.normal(size=(3, 3, count))
    m = (m + m.transpose(1, 0, 2)) / 2
    return DerivativeBundle.from_cartesian(t, x, c1, [[m[a, b] for b in range(3)] for a in range(3)])


@pytest.mark.parametrize("idx", range(5))
def test_frame_expansion_equals_cartesian(idx):
    d = _bundle(standard_corpus()[idx])
    a, b = cubic_flat_cartesian(d), cubic_flat_frame(d)
    scale = max(float(np.max(np.abs(a))), 1e-300)
    assert float(np.max(np.abs(a - b))) / scale <= 1e-9


def test_frame_expansion_random_derivatives(rng):
    d = _random_bundle(rng)
    a, b = cubic_flat_cartesian(d), cubic_flat_frame(d)
    np.testing.assert_allclose(b, a, rtol=1e-9, atol=1e-9 * float(np.max(np.abs(a))))


def test_cubic_form_is_the_equation_nonlinearity(rng):
    # independent oracle: cubic part of (m + G)^{ab} d_a d_b phi in flat space
    d = _random_bundle(rng)
    dec = decompose(d.cart1, Background.minkowski(2), "full")
    cubic = sum(dec.G[a][b] * d.cart2[a][b] for a in range(3) for b in range(3))
    np.testing.assert_allclose(cubic_flat_cartesian(d), cubic, rtol=1e-12, atol=1e-12)


def test_from_cartesian_matches_jets():
    f = standard_corpus()[2]
    rng = np.random.default_rng(9)
    t, x = cone_points(100, rng)
    u = f.jet(t, x, 2)
    a = DerivativeBundle.from_jet(u, Jet.coordinates([t] + x, 2))
    b = DerivativeBundle.from_cartesian(t, x, a.cart1, a.cart2)
    for i in range(3):
        np.testing.assert_allclose(b.frame1[i], a.frame1[i], atol=1e-12)
        for j in range(3):
            np.testing.assert_allclose(b.frame2[i][j], a.frame2[i][j], atol=1e-12)
    c1, c2 = a.cartesian_from_frame()
    for i in range(3):
        np.testing.assert_allclose(c1[i], a.cart1[i], atol=1e-12)
        for j in range(3):
            np.testing.assert_allclose(c2[i][j], a.cart2[i][j], atol=1e-11)


def test_double_null_no_tt_term(rng):
    # with all good first derivatives zero, the form does not depend on dbar_t dbar_t phi
    d = _random_bundle(rng)
    xt = [d.x[a] / d.t for a in range(2)]
    f1 = [d.frame1[0], 0 * d.t, 0 * d.t]
    f2a = [list(r) for r in d.frame2]
    f2b = [list(r) for r in d.frame2]
    f2b[0][0] = f2a[0][0] + 10.0
    vals = []
    for f2 in (f2a, f2b):
        from membrane.nullforms import cartesian_from_frame

        c1, c2 = cartesian_from_frame(f1, f2, d.t, d.x)
        vals.append(cubic_flat_frame(DerivativeBundle.from_cartesian(d.t, d.x, c1, c2)))
    assert xt  # points are in the cone
    np.testing.assert_allclose(vals[0], vals[1], atol=1e-10)


def test_cubic_homogeneity():
    d = _bundle(standard_corpus()[4])
    np.testing.assert_allclose(cubic_flat_frame(d.scaled(3.0)), 27.0 * cubic_flat_frame(d), rtol=1e-11, atol=1e-300)


def test_bound_holds_with_calibrated_constant():
    for f in standard_corpus():
        b = double_null_bound(_bundle(f, seed=11))
        assert b.holds
        assert float(np.max(b.ratio)) <= b.constant


def test_calibration_is_reproducible():
    assert calibrated._recompute() == pytest.approx(calibrated.DOUBLE_NULL_CONSTANT, rel=1e-12)
    d = [_bundle(f) for f in standard_corpus()]
    assert calibrate_double_null(d, safety=1.0) > 0


def test_metric_corrections_match_equation(rng):
    t, x = cone_points(50, rng)
    cfg = MetricConfig(kind="perturbed", delta=0.3, coeffs=[[-0.5, 0.2, 0.0], [0.2, 0.5, 0.1], [0.0, 0.1, 0.3]])
    ms = sample_metric(cfg, t, x)
    d = DerivativeBundle.from_jet(standard_corpus()[1].jet(t, x, 2), Jet.coordinates([t] + x, 2))
    bg, flat = Background.from_sample(ms), Background.minkowski(2)
    full, lin, mink = decompose(d.cart1, bg, "full"), decompose(d.cart1, bg, "linear"), decompose(d.cart1, flat, "full")
    want = sum((full.G[a][b] - lin.G[a][b] - mink.G[a][b]) * d.cart2[a][b] for a in range(3) for b in range(3))
    want = want + (full.F - lin.F)
    got = correction_terms(coefficient_tensors(ms), d)
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-14 * float(np.max(np.abs(want))))
    lv = linear_variable_terms(ms, d)
    lin_want = sum(lin.G[a][b] * d.cart2[a][b] for a in range(3) for b in range(3)) + lin.F
    np.testing.assert_allclose(lv, lin_want, rtol=1e-12, atol=1e-18)


def test_order_one_jet_rejected():
    c = Jet.coordinates([np.array([5.0]), np.array([1.0]), np.array([0.0])], 1)
    with pytest.raises(ValueError):
        DerivativeBundle.from_jet(c[0] * c[1], c)
