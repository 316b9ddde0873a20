"""Semi-hyperboloidal frame algebra.

The frame is ``dbar_0 = d_t`` and ``dbar_a = (x^a/t) d_t + d_a``.  Transition
matrices are stored with the row index down: ``Phi[alpha][beta] = Phi_alpha^beta``
so that ``dbar_alpha = Phi_alpha^beta d_beta`` and ``d_alpha = Psi_alpha^beta dbar_beta``.
Contravariant tensors transform as ``Tbar = Psi^T T Psi``.

Everything here is a pure function of point data; nothing is cached globally.
Functions accept scalars or equally shaped arrays for ``t`` and the entries of ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .jets import Jet


class DomainError(ValueError):
    """A point lies outside the region where a quantity is defined."""


class InsufficientStencilError(ValueError):
    """Not enough derivative data to apply the requested vector fields."""


@dataclass(frozen=True)
class SpacetimePoint:
    t: float
    x: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def r(self) -> float:
        return float(np.sqrt(sum(v * v for v in self.x)))

    @property
    def s(self) -> float:
        if self.t <= self.r:
            raise DomainError(f"s undefined at t={self.t}, r={self.r}: need t > r")
        return float(np.sqrt(self.t**2 - self.r**2))

    def in_cone(self) -> bool:
        """Membership in K = {r < t - 1}."""
        return self.r < self.t - 1.0

    def in_slab(self, s0: float, s1: float) -> bool:
        """Membership in K_[s0, s1]."""
        q = self.t**2 - self.r**2
        return self.in_cone() and s0 * s0 <= q <= s1 * s1


@dataclass
class FrameMatrix:
    phi: np.ndarray
    psi: np.ndarray


@dataclass
class FrameMinkowski:
    upper: np.ndarray
    lower: np.ndarray
    convention: str


def _check_time(t) -> None:
    if np.any(np.asarray(t) <= 0):
        raise DomainError("frame undefined for t <= 0")


def phi_matrix(t, x: Sequence) -> np.ndarray:
    """``Phi_alpha^beta`` with shape ``(n+1, n+1, *batch)``."""
    _check_time(t)
    t = np.asarray(t, dtype=float)
    n = len(x)
    shape = np.broadcast_shapes(t.shape, *(np.shape(v) for v in x))
    out = np.zeros((n + 1, n + 1) + shape)
    for a in range(n + 1):
        out[a, a] = 1.0
    for a in range(1, n + 1):
        out[a, 0] = np.asarray(x[a - 1]) / t
    return out


def psi_matrix(t, x: Sequence) -> np.ndarray:
    """``Psi_alpha^beta`` (the inverse of ``Phi``), shape ``(n+1, n+1, *batch)``."""
    out = phi_matrix(t, x)
    out[1:, 0] *= -1.0
    return out


def frame_matrices(p: SpacetimePoint) -> FrameMatrix:
    return FrameMatrix(phi=phi_matrix(p.t, p.x), psi=psi_matrix(p.t, p.x))


def minkowski(n: int) -> np.ndarray:
    """Cartesian Minkowski metric diag(-1, 1, ..., 1) (self-inverse)."""
    m = np.eye(n + 1)
    m[0, 0] = -1.0
    return m


def frame_minkowski(p: SpacetimePoint, convention: str = "display") -> FrameMinkowski:
    """Frame components of the Minkowski metric.

    ``convention="signature"`` conjugates diag(-1, 1, ..., 1) and gives
    ``upper[0][0] = -s^2/t^2``.  The default ``"display"`` flips the overall
    sign, which is the (+, -, ..., -) form with ``upper[0][0] = s^2/t^2``,
    ``upper[0][a] = x^a/t`` and ``upper[a][b] = -delta``.
    """
    if p.t <= p.r:
        raise DomainError(f"t={p.t} <= r={p.r}: s undefined")
    m = minkowski(p.n)
    upper = tensor_to_frame(m, p)
    phi = phi_matrix(p.t, p.x)
    lower = phi @ m @ phi.T  # covariant components: Phi_a^mu Phi_b^nu m_{mu nu}
    if convention == "display":
        return FrameMinkowski(-upper, -lower, convention)
    if convention == "signature":
        return FrameMinkowski(upper, lower, convention)
    raise ValueError(f"unknown convention {convention!r}")


def tensor_to_frame(T: np.ndarray, p: SpacetimePoint) -> np.ndarray:
    """``Tbar^{a'b'} = T^{ab} Psi_a^{a'} Psi_b^{b'}`` for a single point."""
    psi = psi_matrix(p.t, p.x)
    return psi.T @ np.asarray(T, dtype=float) @ psi


def frame_to_tensor(Tbar: np.ndarray, p: SpacetimePoint) -> np.ndarray:
    """Inverse of :func:`tensor_to_frame`."""
    phi = phi_matrix(p.t, p.x)
    return phi.T @ np.asarray(Tbar, dtype=float) @ phi


def conjugate_batch(T, t, x: Sequence):
    """Batched frame conjugation; ``T`` is indexable as ``T[a][b]`` (arrays or jets)."""
    psi = psi_matrix(t, x)
    n1 = len(x) + 1
    out = [[0.0] * n1 for _ in range(n1)]
    for ap in range(n1):
        for bp in range(n1):
            acc = 0.0
            for a in range(n1):
                pa = psi[a, ap]
                if not np.any(pa):
                    continue
                for b in range(n1):
                    pb = psi[b, bp]
                    if not np.any(pb):
                        continue
                    acc = acc + T[a][b] * (pa * pb)
            out[ap][bp] = acc
    return out


def dpsi_contraction(T, t, x: Sequence):
    """Coefficients ``c^{b'} = T^{ab} d_a Psi_b^{b'}``; only ``b' = 0`` is nonzero.

    ``Psi_b^0 = -x^b/t`` gives ``d_t Psi_b^0 = x^b/t^2`` and ``d_a Psi_b^0 = -delta_ab/t``.
    """
    n = len(x)
    acc = 0.0
    for b in range(1, n + 1):
        acc = acc + T[0][b] * (np.asarray(x[b - 1]) / t**2) - T[b][b] / t
    return acc


# -- frame derivatives on jets ------------------------------------------------


def coordinate_jets(t, x: Sequence, order: int) -> list[Jet]:
    return Jet.coordinates([t, *x], order)


def frame_derivative(u: Jet, alpha: int, coords: list[Jet]) -> Jet:
    """``dbar_alpha u``; the result has one order less than ``u``."""
    if u.order < 1:
        raise InsufficientStencilError("need at least first derivatives")
    if alpha == 0:
        return u.d(0)
    c = coords[alpha].truncate(u.order - 1) / coords[0].truncate(u.order - 1)
    return c * u.d(0) + u.d(alpha)


def frame_first(u: Jet, coords: list[Jet]) -> list[Jet]:
    return [frame_derivative(u, a, coords) for a in range(u.nvar)]


def frame_second(u: Jet, coords: list[Jet]) -> list[list[Jet]]:
    """``out[a][b] = dbar_a dbar_b u`` (``dbar_b`` applied first)."""
    first = frame_first(u, coords)
    return [[frame_derivative(first[b], a, coords) for b in range(u.nvar)] for a in range(u.nvar)]


def frame_second_values(grad: Sequence, hess: Sequence, t, x: Sequence) -> list[list[np.ndarray]]:
    """``dbar_a dbar_b u`` from Cartesian gradient and Hessian values (no jets).

    Expands ``dbar_a = (x^a/t) d_t + d_a`` by the product rule; agrees with
    :func:`frame_second` to rounding.
    """
    n1 = len(grad)
    xt = [None] + [np.asarray(xa) / t for xa in x]
    # first[b] = dbar_b u; dfirst[b][c] = d_c (dbar_b u)
    dfirst = [[hess[0][c] for c in range(n1)]]
    for b in range(1, n1):
        row = []
        for c in range(n1):
            v = xt[b] * hess[0][c] + hess[b][c]
            if c == 0:
                v = v - xt[b] / t * grad[0]
            elif c == b:
                v = v + grad[0] / t
            row.append(v)
        dfirst.append(row)
    out = [[None] * n1 for _ in range(n1)]
    for b in range(n1):
        out[0][b] = dfirst[b][0]
        for a in range(1, n1):
            out[a][b] = xt[a] * dfirst[b][0] + dfirst[b][a]
    return out


# -- admissible vector fields ------------------------------------------------


@dataclass(frozen=True)
class VectorFieldId:
    kind: str  # "translation" or "boost"
    index: int  # alpha in 0..n for translations, a in 1..n for boosts

    def __post_init__(self):
        if self.kind == "translation" and self.index < 0:
            raise ValueError("translation index must be >= 0")
        if self.kind == "boost" and self.index < 1:
            raise ValueError("boost index must be >= 1")
        if self.kind not in ("translation", "boost"):
            raise ValueError(f"unknown vector field kind {self.kind!r}")

    def __str__(self) -> str:
        return f"d{self.index}" if self.kind == "translation" else f"L{self.index}"


def translation(alpha: int) -> VectorFieldId:
    return VectorFieldId("translation", alpha)


def boost(a: int) -> VectorFieldId:
    return VectorFieldId("boost", a)


def admissible_family(n: int) -> list[VectorFieldId]:
    return [translation(a) for a in range(n + 1)] + [boost(a) for a in range(1, n + 1)]


def boost_family(n: int) -> list[VectorFieldId]:
    return [boost(a) for a in range(1, n + 1)]


@dataclass(frozen=True)
class MultiIndex:
    fields: tuple[VectorFieldId, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.fields)

    def __str__(self) -> str:
        return "".join(str(z) for z in self.fields) or "id"


def multi_indices(family: Sequence[VectorFieldId], max_len: int) -> list[MultiIndex]:
    """All ordered composites of length <= max_len, shortest first."""
    out = [MultiIndex(())]
    layer = [()]
    for _ in range(max_len):
        layer = [tuple(z) + (f,) for z in layer for f in family]
        out.extend(MultiIndex(z) for z in layer)
    return out


def apply_vector_field(z, u: Jet, coords: list[Jet]) -> Jet:
    """Apply a single field or a composite ``Z^I`` to a jet.

    Composites act right to left: the leftmost field is applied last.
    Each field lowers the jet order by one.
    """
    if isinstance(z, MultiIndex):
        for f in reversed(z.fields):
            u = apply_vector_field(f, u, coords)
        return u
    if u.order < 1:
        raise InsufficientStencilError(f"cannot apply {z}: jet order exhausted")
    if z.kind == "translation":
        return u.d(z.index)
    o = u.order - 1
    return coords[z.index].truncate(o) * u.d(0) + coords[0].truncate(o) * u.d(z.index)


def apply_all(indices: Sequence[MultiIndex], u: Jet, coords: list[Jet]) -> dict[MultiIndex, Jet]:
    """``Z^I u`` for every multi-index, reusing shorter composites."""
    out: dict[MultiIndex, Jet] = {}
    for mi in sorted(indices, key=len):
        if len(mi) == 0:
            out[mi] = u
            continue
        inner = MultiIndex(mi.fields[1:])
        base = out[inner] if inner in out else apply_vector_field(inner, u, coords)
        out[mi] = apply_vector_field(mi.fields[0], base, coords)
    return out


def commutator_residuals(u: Jet, coords: list[Jet]) -> dict[str, np.ndarray]:
    """Max residuals of ``[dbar_t, dbar_a] = -(x^a/t^2) dbar_t`` and ``[dbar_a, dbar_b] = 0``."""
    sec = frame_second(u, coords)
    t = coords[0].value
    dt = u.d(0).value
    n = u.nvar - 1
    res_ta = 0.0
    res_ab = 0.0
    for a in range(1, n + 1):
        lhs = sec[0][a].value - sec[a][0].value
        rhs = -(coords[a].value / t**2) * dt
        res_ta = max(res_ta, float(np.max(np.abs(lhs - rhs))))
        for b in range(1, n + 1):
            res_ab = max(res_ab, float(np.max(np.abs(sec[a][b].value - sec[b][a].value))))
    return {"t_a": res_ta, "a_b": res_ab}


def second_order_frame_decomposition(T, dbar: Sequence, dbar2, t, x: Sequence):
    """``T^{ab} d_a d_b phi`` evaluated through the frame.

    ``dbar[b]`` are frame first derivatives, ``dbar2[a][b] = dbar_a dbar_b phi``.
    Returns ``Tbar^{ab} dbar_a dbar_b phi + T^{ab} (d_a Psi_b^{b'}) dbar_{b'} phi``.
    """
    Tbar = conjugate_batch(T, t, x)
    n1 = len(x) + 1
    acc = 0.0
    for a in range(n1):
        for b in range(n1):
            acc = acc + Tbar[a][b] * dbar2[a][b]
    return acc + dpsi_contraction(T, t, x) * dbar[0]
