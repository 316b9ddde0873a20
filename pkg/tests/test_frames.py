from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from membrane.fields import cone_points, standard_corpus
from membrane.frames import (
    DomainError,
    InsufficientStencilError,
    MultiIndex,
    SpacetimePoint,
    admissible_family,
    apply_all,
    apply_vector_field,
    boost,
    commutator_residuals,
    frame_matrices,
    frame_minkowski,
    frame_second,
    frame_second_values,
    frame_to_tensor,
    minkowski,
    multi_indices,
    second_order_frame_decomposition,
    tensor_to_frame,
    translation,
)
from membrane.jets import Jet


@st.composite
def cone_point(draw):
    t = draw(st.floats(1.5, 200.0))
    frac = draw(st.floats(0.0, 0.999))
    ang = draw(st.floats(0.0, 2 * np.pi))
    r = frac * (t - 1.0)
    return SpacetimePoint(t, (r * np.cos(ang), r * np.sin(ang)))


@settings(max_examples=200, deadline=None)
@given(cone_point())
def test_phi_psi_inverse_exact(p):
    fm = frame_matrices(p)
    prod = fm.phi @ fm.psi
    ulp = np.spacing(np.maximum(np.abs(prod), 1.0))
    assert np.all(np.abs(prod - np.eye(3)) <= ulp)


@settings(max_examples=100, deadline=None)
@given(cone_point())
def test_minkowski_display_form(p):
    # displayed form in (+,-,-): [[s^2/t^2, x/t], [x/t, -I]]
    fm = frame_minkowski(p, "display")
    t = p.t
    expect = np.array(
        [[(t * t - p.r**2) / t**2, p.x[0] / t, p.x[1] / t], [p.x[0] / t, -1, 0], [p.x[1] / t, 0, -1]]
    )
    np.testing.assert_allclose(fm.upper, expect, atol=1e-14, rtol=0)


def test_signature_convention_is_negated_display():
    p = SpacetimePoint(5.0, (1.0, -2.0))
    a = frame_minkowski(p, "display")
    b = frame_minkowski(p, "signature")
    np.testing.assert_array_equal(a.upper, -b.upper)
    assert b.upper[0, 0] == pytest.approx(-(p.s / p.t) ** 2)
    # lower and upper are mutually inverse
    np.testing.assert_allclose(b.upper @ b.lower, np.eye(3), atol=1e-14)


def test_frame_roundtrip(rng):
    p = SpacetimePoint(7.0, (2.0, 3.0))
    T = rng.normal(size=(3, 3))
    np.testing.assert_allclose(frame_to_tensor(tensor_to_frame(T, p), p), T, atol=1e-13)


def test_domain_errors():
    with pytest.raises(DomainError):
        SpacetimePoint(1.0, (2.0, 0.0)).s
    with pytest.raises(DomainError):
        frame_minkowski(SpacetimePoint(1.0, (1.0, 0.0)))
    p = SpacetimePoint(5.0, (1.0, 0.0))
    assert p.in_cone() and p.in_slab(4.0, 5.0)
    assert not SpacetimePoint(5.0, (4.5, 0.0)).in_cone()


def test_commutators_on_corpus(rng):
    t, x = cone_points(500, rng)
    coords = Jet.coordinates([t] + x, 3)
    for f in standard_corpus():
        u = f.jet(t, x, 3)
        res = commutator_residuals(u, coords)
        scale = max(1.0, float(np.max(np.abs(u.value))))
        assert res["t_a"] / scale <= 1e-10
        assert res["a_b"] / scale <= 1e-10


def test_frame_second_values_matches_jets(rng):
    t, x = cone_points(200, rng)
    coords = Jet.coordinates([t] + x, 2)
    u = standard_corpus()[1].jet(t, x, 2)
    sec = frame_second(u, coords)
    grad = [u.derivative(tuple(int(i == a) for i in range(3))) for a in range(3)]
    hess = [[u.derivative(tuple((i == a) + (i == b) for i in range(3))) for b in range(3)] for a in range(3)]
    vals = frame_second_values(grad, hess, t, x)
    for a in range(3):
        for b in range(3):
            np.testing.assert_allclose(vals[a][b], sec[a][b].value, atol=1e-13)


def test_boost_definition_and_ordering():
    # L_1 = x d_t + t d_x ; on u = t*x gives x^2 + t^2
    c = Jet.coordinates([np.array(3.0), np.array(2.0), np.array(0.5)], 2)
    u = c[0] * c[1]
    assert apply_vector_field(boost(1), u, c).value == pytest.approx(4 + 9)
    # Z^I acts right to left: d_t L_1 (t x) = 2t, L_1 d_t (t x) = L_1 x = t
    assert apply_vector_field(MultiIndex((translation(0), boost(1))), u, c).value == pytest.approx(6.0)
    assert apply_vector_field(MultiIndex((boost(1), translation(0))), u, c).value == pytest.approx(3.0)


def test_apply_all_consistent_and_stencil_exhaustion():
    c = Jet.coordinates([np.array(4.0), np.array(1.0), np.array(-1.0)], 2)
    u = (c[0] * c[1] + c[2]).sin()
    idx = multi_indices(admissible_family(2), 2)
    assert len(idx) == 1 + 5 + 25
    out = apply_all(idx, u, c)
    for mi in idx:
        assert out[mi].value == pytest.approx(apply_vector_field(mi, u, c).value, abs=1e-12)
    with pytest.raises(InsufficientStencilError):
        apply_vector_field(MultiIndex((boost(1), boost(2), boost(1))), u, c)


def test_boost_commutes_with_flat_wave(rng):
    # [L_a, box] = 0: box(L u) = L(box u) with box = -d_t^2 + d_x^2 + d_y^2
    t, x = cone_points(50, rng)
    c = Jet.coordinates([t] + x, 3)
    u = standard_corpus()[0].jet(t, x, 3)

    def box(w):
        return -w.d(0).d(0) + w.d(1).d(1) + w.d(2).d(2)

    lhs = box(apply_vector_field(boost(2), u, c))
    rhs = apply_vector_field(boost(2), box(u), [v.truncate(1) for v in c])
    np.testing.assert_allclose(lhs.value, rhs.value, atol=1e-12)


def test_second_order_decomposition(rng):
    # T^{ab} d_a d_b u computed through the frame equals the Cartesian contraction
    t, x = cone_points(100, rng)
    c = Jet.coordinates([t] + x, 2)
    u = standard_corpus()[3].jet(t, x, 2)
    T = rng.normal(size=(3, 3))
    T = T + T.T
    sec = frame_second(u, c)
    dbar = [u.d(0).value] + [((c[a] / c[0]) * u.d(0) + u.d(a)).value for a in (1, 2)]
    dbar2 = [[sec[a][b].value for b in range(3)] for a in range(3)]
    got = second_order_frame_decomposition(T, dbar, dbar2, t, x)
    want = sum(T[a, b] * u.derivative(tuple((i == a) + (i == b) for i in range(3))) for a in range(3) for b in range(3))
    np.testing.assert_allclose(got, want, atol=1e-11)


def test_minkowski_matrix():
    np.testing.assert_array_equal(minkowski(2), np.diag([-1.0, 1.0, 1.0]))
