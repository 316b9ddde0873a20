"""Background metrics: Minkowski, analytic perturbations, tabulated data.

Perturbations act on the inverse metric,

    g^{mu nu} = m^{mu nu} + delta * env(t, x) * h^{mu nu}(t, x),

with the conforming envelope ``env = chi(t - r - 1) (s/t)^2 s^(-1-gamma)`` or
the deliberately non-conforming ``env = chi(t - r - 1) s^(-1/2)``.  The cutoff
``chi`` is a C-infinity step that equals 1 on the cone K and vanishes for
``t - r <= 1 - cutoff_width``, so the metric is smooth on the whole grid.

All analytic quantities are produced as jets, which gives exact derivatives of
any order for the decay validator and first derivatives for Christoffels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .frames import DomainError, minkowski
from .jets import Jet, mat_inverse


class DegeneracyError(RuntimeError):
    """The metric (or the quasilinear principal part) is not invertible."""


KINDS = ("minkowski", "perturbed", "tabulated")
SHAPES = ("constant", "modulated")
ENVELOPES = ("conforming", "violating")


@dataclass
class MetricConfig:
    kind: str = "minkowski"
    delta: float = 0.0
    gamma: float = 0.5
    shape: str = "constant"
    envelope: str = "conforming"
    coeffs: list[list[float]] | None = None
    wavevector: list[float] = field(default_factory=lambda: [1.0, 0.0])
    cutoff_width: float = 0.5
    path: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"metric kind must be one of {KINDS}, got {self.kind!r}")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.kind == "minkowski" and self.delta != 0:
            raise ValueError("Minkowski metric requires delta = 0")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}")
        if self.envelope not in ENVELOPES:
            raise ValueError(f"envelope must be one of {ENVELOPES}")
        if self.kind == "tabulated" and not self.path:
            raise ValueError("tabulated metric needs a path")
        if not 0 < self.cutoff_width < 1:
            raise ValueError("cutoff_width must lie in (0, 1)")

    @property
    def is_flat(self) -> bool:
        return self.kind == "minkowski" or (self.kind == "perturbed" and self.delta == 0)

    def coefficient_matrix(self, n: int) -> np.ndarray:
        if self.coeffs is None:
            c = np.eye(n + 1) * 0.5
            c[0, 0] = -0.5
        else:
            c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (n + 1, n + 1) or not np.allclose(c, c.T):
            raise ValueError(f"perturbation coefficients must be a symmetric {n + 1}x{n + 1} matrix")
        if np.max(np.abs(c)) > 1:
            raise ValueError("perturbation coefficients must satisfy |c| <= 1")
        return c

    def is_isotropic(self, n: int) -> bool:
        """Whether the metric is invariant under spatial rotations about the origin."""
        if self.is_flat:
            return True
        if self.kind != "perturbed" or self.shape != "constant":
            return False
        c = self.coefficient_matrix(n)
        return bool(np.all(c[0, 1:] == 0) and np.allclose(c[1:, 1:], c[1, 1] * np.eye(n)))


@dataclass
class MetricSample:
    g_upper: np.ndarray  # (n+1, n+1, *batch)
    g_lower: np.ndarray
    dg: np.ndarray  # dg[lam, mu, nu] = d_lam g_{mu nu}
    christoffel: np.ndarray  # christoffel[gam, a, b] = Gamma^gam_{ab}
    contracted: np.ndarray  # contracted[mu] = g^{ab} Gamma^mu_{ab}


@dataclass
class MetricJets:
    """Metric quantities as jets; Christoffels carry one order less."""

    upper: list[list[Jet]]
    lower: list[list[Jet]]
    christoffel: list[list[list[Jet]]]
    contracted: list[Jet]


# -- cutoff and envelope ------------------------------------------------------


def _smooth_step(v: Jet) -> Jet:
    """C-infinity step: 0 for v <= 0, 1 for v >= 1."""
    vv = v.value
    out = Jet.constant(np.where(vv >= 1.0, 1.0, 0.0), v.nvar, v.order)
    mid = (vv > 0.0) & (vv < 1.0)
    if np.any(mid):
        sub = v.take(np.nonzero(mid))
        a = (-(sub.reciprocal())).exp()
        b = (-((1.0 - sub).reciprocal())).exp()
        val = a / (a + b)
        out.coef[(slice(None),) + np.nonzero(mid)] = val.coef
    return out


def _radius(xs: Sequence[Jet]) -> Jet:
    q = xs[0] * xs[0]
    for x in xs[1:]:
        q = q + x * x
    return q.sqrt()


def envelope_jet(cfg: MetricConfig, coords: Sequence[Jet]) -> Jet:
    """``chi(t - r - 1) * profile(s, t)`` as a jet; zero where chi vanishes."""
    t, xs = coords[0], coords[1:]
    nvar, order = t.nvar, t.order
    shape = np.broadcast_shapes(*(c.shape for c in coords))
    if shape == ():
        lifted = [Jet(c.coef.reshape(c.coef.shape + (1,)), nvar, order) for c in coords]
        out = envelope_jet(cfg, lifted)
        return Jet(out.coef[..., 0], nvar, order)
    tv = np.broadcast_to(t.value, shape)
    rv = np.sqrt(sum(np.broadcast_to(x.value, shape) ** 2 for x in xs))
    live = (tv - rv) > 1.0 - cfg.cutoff_width
    out = Jet.constant(np.zeros(shape), nvar, order)
    if not np.any(live):
        return out
    if np.all(live):
        idx = (slice(None),) * len(shape)
    else:
        idx = np.nonzero(live)
    sub = [Jet(np.broadcast_to(c.coef, c.coef.shape[:1] + shape)[(slice(None),) + idx], nvar, order) for c in coords]
    ts, xss = sub[0], sub[1:]
    r2 = xss[0] * xss[0]
    for x in xss[1:]:
        r2 = r2 + x * x
    s2 = ts * ts - r2
    s = s2.sqrt()
    if cfg.envelope == "conforming":
        prof = s.power(1.0 - cfg.gamma) / (ts * ts)
    else:
        prof = s.power(-0.5)
    # chi(u) with u = t - r - 1: ramps over u in (-w, 0)
    inside = (np.sqrt(np.maximum(r2.value, 0)) < ts.value - 1.0)
    chi = Jet.constant(np.ones(inside.shape), nvar, order)
    ramp = ~inside
    if np.any(ramp):
        ridx = np.nonzero(ramp)
        rs = [c.take(ridx) for c in sub]
        u = rs[0] - _radius(rs[1:]) - 1.0
        chi.coef[(slice(None),) + ridx] = _smooth_step(u / cfg.cutoff_width + 1.0).coef
    env = chi * prof
    out.coef[(slice(None),) + idx] = env.coef
    return out


def _shape_jet(cfg: MetricConfig, coords: Sequence[Jet]) -> Jet:
    if cfg.shape == "constant":
        return Jet.constant(1.0, coords[0].nvar, coords[0].order)
    k = np.asarray(cfg.wavevector, dtype=float)
    phase = coords[1] * k[0]
    for a in range(1, len(coords) - 1):
        phase = phase + coords[a + 1] * k[a]
    return phase.cos()


# -- tabulated metrics --------------------------------------------------------

TAB_MAGIC = "MEMBRANE-METRIC-TABLE 1"


def write_tabulated(path, t_axis, x_axes: Sequence, g_lower: np.ndarray, delta: float, gamma: float) -> None:
    """Write a tabulated metric.

    Layout: a text header of ``key = value`` lines starting with the magic line
    and ending with ``END``, followed by little-endian float64 samples of
    ``g_{mu nu}`` in C order with shape ``(nt, nx_1, ..., nx_n, n+1, n+1)``.
    """
    t_axis = np.asarray(t_axis, dtype=float)
    n = len(x_axes)
    g_lower = np.asarray(g_lower, dtype="<f8")
    expected = (len(t_axis),) + tuple(len(a) for a in x_axes) + (n + 1, n + 1)
    if g_lower.shape != expected:
        raise ValueError(f"g_lower shape {g_lower.shape} != {expected}")
    header = {
        "n": n,
        "shape": list(expected),
        "t_min": float(t_axis[0]),
        "t_step": float(t_axis[1] - t_axis[0]) if len(t_axis) > 1 else 1.0,
        "x_min": [float(a[0]) for a in x_axes],
        "x_step": [float(a[1] - a[0]) if len(a) > 1 else 1.0 for a in x_axes],
        "delta": float(delta),
        "gamma": float(gamma),
    }
    lines = [TAB_MAGIC] + [f"{k} = {json.dumps(v)}" for k, v in header.items()] + ["END"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        fh.write(g_lower.tobytes(order="C"))


@dataclass
class TabulatedMetric:
    n: int
    axes: list[np.ndarray]
    data: np.ndarray  # (nt, nx..., n+1, n+1)
    delta: float
    gamma: float

    def __post_init__(self):
        from scipy.interpolate import RegularGridInterpolator

        flat = self.data.reshape(self.data.shape[: self.n + 1] + (-1,))
        self._interp = RegularGridInterpolator(self.axes, flat, method="linear", bounds_error=False, fill_value=None)
        self.steps = [float(a[1] - a[0]) for a in self.axes]

    def lower(self, pts: np.ndarray) -> np.ndarray:
        """Interpolated ``g_{mu nu}`` at points of shape ``(..., n+1)``."""
        vals = self._interp(pts.reshape(-1, self.n + 1))
        return vals.reshape(pts.shape[:-1] + (self.n + 1, self.n + 1))


def load_tabulated(path) -> TabulatedMetric:
    raw = Path(path).read_bytes()
    head_end = raw.index(b"\nEND\n") + len(b"\nEND\n")
    lines = raw[:head_end].decode().strip().splitlines()
    if lines[0] != TAB_MAGIC:
        raise ValueError(f"{path}: not a tabulated metric file")
    header = {}
    for line in lines[1:-1]:
        k, v = line.split("=", 1)
        header[k.strip()] = json.loads(v)
    shape = tuple(header["shape"])
    n = header["n"]
    data = np.frombuffer(raw[head_end:], dtype="<f8")
    if data.size != math.prod(shape):
        raise ValueError(f"{path}: expected {math.prod(shape)} samples, found {data.size}")
    data = data.reshape(shape).astype(float)
    axes = [header["t_min"] + header["t_step"] * np.arange(shape[0])]
    axes += [header["x_min"][a] + header["x_step"][a] * np.arange(shape[1 + a]) for a in range(n)]
    return TabulatedMetric(n, axes, data, header["delta"], header["gamma"])


_TAB_CACHE: dict[str, TabulatedMetric] = {}


def _tabulated(cfg: MetricConfig) -> TabulatedMetric:
    key = str(Path(cfg.path).resolve())
    if key not in _TAB_CACHE:
        _TAB_CACHE[key] = load_tabulated(cfg.path)
    return _TAB_CACHE[key]


def _fd_derivative(func, pts: np.ndarray, alpha: Sequence[int], steps: Sequence[float]) -> np.ndarray:
    """Central-difference estimate of ``d^alpha func`` (tensor product of 1D stencils)."""
    offsets = [np.zeros(len(alpha))]
    weights = [1.0]
    for v, k in enumerate(alpha):
        if k == 0:
            continue
        new_o, new_w = [], []
        for o, w in zip(offsets, weights):
            for j in range(k + 1):
                oo = o.copy()
                oo[v] += (k / 2.0 - j) * steps[v]
                new_o.append(oo)
                new_w.append(w * (-1) ** j * math.comb(k, j) / steps[v] ** k)
        offsets, weights = new_o, new_w
    acc = 0.0
    for o, w in zip(offsets, weights):
        acc = acc + w * func(pts + o)
    return acc


def _tabulated_jets(cfg: MetricConfig, t, x: Sequence, order: int):
    tab = _tabulated(cfg)
    if tab.n != len(x):
        raise ValueError("tabulated metric dimension does not match the points")
    shape = np.broadcast_shapes(np.shape(t), *(np.shape(v) for v in x))
    pts = np.stack([np.broadcast_to(t, shape)] + [np.broadcast_to(v, shape) for v in x], -1).astype(float)
    from .jets import basis

    b = basis(len(x) + 1, order)
    n1 = len(x) + 1
    derivs = {m: _fd_derivative(tab.lower, pts, m, tab.steps) for m in b.multi}
    lower = []
    for i in range(n1):
        row = []
        for j in range(n1):
            row.append(Jet.from_derivatives({m: d[..., i, j] for m, d in derivs.items()}, n1, order))
        lower.append(row)
    upper = mat_inverse(lower)
    return upper, lower


# -- sampling -----------------------------------------------------------------


def _check_points(t, x) -> None:
    t = np.asarray(t, dtype=float)
    r = np.sqrt(sum(np.asarray(v, dtype=float) ** 2 for v in x))
    if np.any(t <= r):
        raise DomainError("metric sampled outside the light cone (t <= r)")


def metric_jets(cfg: MetricConfig, t, x: Sequence, order: int = 1, check: bool = True) -> MetricJets:
    """Metric, inverse and Christoffels as jets about the points ``(t, x)``."""
    n = len(x)
    n1 = n + 1
    if check:
        _check_points(t, x)
    coords = Jet.coordinates([np.asarray(t, dtype=float)] + [np.asarray(v, dtype=float) for v in x], order)
    shape = np.broadcast_shapes(*(c.shape for c in coords))
    m = minkowski(n)
    zero = Jet.constant(np.zeros(shape), n1, order)
    if cfg.kind == "tabulated":
        upper, lower = _tabulated_jets(cfg, t, x, order)
    elif cfg.is_flat:
        upper = [[zero + m[i, j] for j in range(n1)] for i in range(n1)]
        lower = [[zero + m[i, j] for j in range(n1)] for i in range(n1)]
        zg = Jet.constant(np.zeros(shape), n1, max(order - 1, 0))
        return MetricJets(upper, lower, [[[zg] * n1 for _ in range(n1)] for _ in range(n1)], [zg] * n1)
    else:
        c = cfg.coefficient_matrix(n)
        pert = envelope_jet(cfg, coords) * _shape_jet(cfg, coords) * cfg.delta
        upper = [[pert * c[i, j] + m[i, j] for j in range(n1)] for i in range(n1)]
        det = np.linalg.det(np.moveaxis(np.array([[u.value for u in row] for row in upper]).reshape((n1, n1, -1)), -1, 0))
        if np.any(np.abs(det) < 1e-6):
            raise DegeneracyError("perturbed metric is not invertible (perturbation too large)")
        lower = mat_inverse(upper)
    if order == 0:
        return MetricJets(upper, lower, [], [])
    christ = christoffel_jets(upper, lower)
    contracted = []
    for mu in range(n1):
        acc = 0.0
        for a in range(n1):
            for b in range(n1):
                acc = acc + upper[a][b].truncate(order - 1) * christ[mu][a][b]
        contracted.append(acc)
    return MetricJets(upper, lower, christ, contracted)


def christoffel_jets(upper, lower):
    """``Gamma^g_{ab} = 1/2 g^{gd} (d_a g_{db} + d_b g_{ad} - d_d g_{ab})``."""
    n1 = len(upper)
    o = lower[0][0].order - 1
    dlow = [[[lower[i][j].d(lam) for j in range(n1)] for i in range(n1)] for lam in range(n1)]
    out = []
    for g in range(n1):
        plane = [[None] * n1 for _ in range(n1)]
        for a in range(n1):
            for b in range(a, n1):
                acc = 0.0
                for d in range(n1):
                    acc = acc + upper[g][d].truncate(o) * (dlow[a][d][b] + dlow[b][a][d] - dlow[d][a][b])
                plane[a][b] = acc * 0.5
                plane[b][a] = plane[a][b]
        out.append(plane)
    return out


def _perturbation_grad(cfg: MetricConfig, t, x: Sequence) -> tuple:
    """``delta * envelope * shape`` and its spacetime gradient, in closed form."""
    shape = np.broadcast_shapes(np.shape(t), *(np.shape(v) for v in x))
    t = np.broadcast_to(np.asarray(t, dtype=float), shape)
    x = [np.broadcast_to(np.asarray(v, dtype=float), shape) for v in x]
    r = np.sqrt(sum(v * v for v in x))
    live = (t - r) > 1.0 - cfg.cutoff_width
    tl = np.where(live, t, 2.0)
    xl = [np.where(live, v, 0.0) for v in x]
    rl = np.where(live, r, 0.0)
    s = np.sqrt(tl * tl - rl * rl)
    ds = [tl / s] + [-v / s for v in xl]
    if cfg.envelope == "conforming":
        prof = s ** (1.0 - cfg.gamma) / tl**2
        dprof = [(1.0 - cfg.gamma) * prof / s * d for d in ds]
        dprof[0] = dprof[0] - 2.0 * prof / tl
    else:
        prof = s**-0.5
        dprof = [-0.5 * prof / s * d for d in ds]
    # chi(u), u = t - r - 1, ramping over u in (-w, 0)
    w = cfg.cutoff_width
    v = np.clip((tl - rl - 1.0) / w + 1.0, 0.0, 1.0)
    ramp = (v > 0.0) & (v < 1.0)
    chi = np.where(v >= 1.0, 1.0, 0.0)
    dchi = np.zeros(shape)
    if np.any(ramp):
        vr = v[ramp]
        a = np.exp(-1.0 / vr)
        b = np.exp(-1.0 / (1.0 - vr))
        chi[ramp] = a / (a + b)
        dchi[ramp] = a * b * (1.0 / vr**2 + 1.0 / (1.0 - vr) ** 2) / (a + b) ** 2 / w
    safe_r = np.where(rl > 0, rl, 1.0)
    du = [np.ones(shape)] + [-np.where(rl > 0, v / safe_r, 0.0) for v in xl]
    env = chi * prof
    denv = [chi * dp_ + prof * dchi * du_ for dp_, du_ in zip(dprof, du)]
    if cfg.shape == "constant":
        shp, dshp = 1.0, [0.0] * len(denv)
    else:
        k = np.asarray(cfg.wavevector, dtype=float)
        phase = sum(k[a] * x[a] for a in range(len(x)))
        shp = np.cos(phase)
        dshp = [0.0] + [-np.sin(phase) * k[a] for a in range(len(x))]
    val = np.where(live, cfg.delta * env * shp, 0.0)
    grad = [np.where(live, cfg.delta * (de * shp + env * dsh), 0.0) for de, dsh in zip(denv, dshp)]
    return val, grad


def metric_values(cfg: MetricConfig, t, x: Sequence, check: bool = True) -> tuple:
    """Values of ``g^{ab}``, ``Gamma^c_{ab}`` and ``g^{ab} Gamma^c_{ab}`` as nested lists of arrays.

    Same numbers as ``metric_jets(order=1)`` for the analytic perturbed metric,
    but the perturbation gradient is taken in closed form and the inverse and
    Christoffels are assembled entrywise, which is much cheaper on large grids.
    The fourth entry is ``(g_lower, d_lambda g_lower)`` for callers that need it.
    """
    n = len(x)
    n1 = n + 1
    if check:
        _check_points(t, x)
    p, dp = _perturbation_grad(cfg, t, x)
    c = cfg.coefficient_matrix(n)
    m = minkowski(n)
    dp = [v if np.any(v) else 0.0 for v in dp]
    up = [[_add([m[i, j], _mul(c[i, j], p)]) for j in range(n1)] for i in range(n1)]
    lo = _small_inverse(up)
    # d g_lower = -g_lower (d g_upper) g_lower with d g_upper = C d(pert)
    lc = [[_add(_mul(lo[i][k], c[k, j]) for k in range(n1)) for j in range(n1)] for i in range(n1)]
    k_ = [[_add(_mul(lc[i][k], lo[k][j]) for k in range(n1)) for j in range(n1)] for i in range(n1)]
    # Gamma^g_{ab} = 1/2 g^{gd} (d_a g_{db} + d_b g_{ad} - d_d g_{ab}) = -1/2 g^{gd} (p_a K_db + p_b K_ad - p_d K_ab)
    comb = [
        [[_add([_mul(dp[a], k_[d][b]), _mul(dp[b], k_[a][d]), _mul(_mul(dp[d], k_[a][b]), -1.0)]) for b in range(n1)] for a in range(n1)]
        for d in range(n1)
    ]
    ch = [[[_mul(_add(_mul(up[g][d], comb[d][a][b]) for d in range(n1)), -0.5) for b in range(n1)] for a in range(n1)] for g in range(n1)]
    con = [_add(_mul(up[a][b], ch[mu][a][b]) for a in range(n1) for b in range(n1)) for mu in range(n1)]
    return up, ch, con, (lo, k_, dp)


def _is_zero(v) -> bool:
    return isinstance(v, float) and v == 0.0


def _mul(a, b):
    """Product that keeps structural zeros as the scalar 0.0."""
    if _is_zero(a) or _is_zero(b):
        return 0.0
    if isinstance(b, float) and b == 1.0:
        return a
    if isinstance(a, float) and a == 1.0:
        return b
    return a * b


def _add(terms):
    acc = 0.0
    for v in terms:
        if not _is_zero(v):
            acc = v if _is_zero(acc) else acc + v
    return acc


def _analytic_sample(cfg: MetricConfig, t, x: Sequence, check: bool) -> MetricSample:
    up, ch, con, (lo, k_, dp) = metric_values(cfg, t, x, check)
    shape = np.broadcast_shapes(np.shape(t), *(np.shape(v) for v in x))
    arr = lambda v: np.broadcast_to(v, shape)  # noqa: E731
    stack = lambda rows: np.array([[arr(v) for v in row] for row in rows])  # noqa: E731
    dg = np.array([[[-arr(_mul(dp[lam], k_[i][j])) for j in range(len(up))] for i in range(len(up))] for lam in range(len(up))])
    return MetricSample(stack(up), stack(lo), dg, np.array([stack(pl) for pl in ch]), np.array([arr(v) for v in con]))


def _small_inverse(a: list) -> list:
    """Inverse of a batch of small matrices given as nested lists of arrays (Faddeev-LeVerrier)."""
    n = len(a)
    eye = lambda i, j: 1.0 if i == j else 0.0  # noqa: E731
    mk = [[eye(i, j) for j in range(n)] for i in range(n)]
    coef = _mul(_add(a[i][i] for i in range(n)), -1.0)
    for k in range(2, n + 1):
        am = [[_add(_mul(a[i][l], mk[l][j]) for l in range(n)) for j in range(n)] for i in range(n)]
        mk = [[_add([am[i][j], _mul(coef, eye(i, j))]) for j in range(n)] for i in range(n)]
        coef = _add(_mul(a[i][l], mk[l][i]) for i in range(n) for l in range(n)) * (-1.0 / k)
    det = coef * (-1) ** n
    if np.any(np.abs(det) < 1e-6):
        raise DegeneracyError("perturbed metric is not invertible (perturbation too large)")
    return [[_mul(mk[i][j], -1.0) / coef for j in range(n)] for i in range(n)]


def sample_metric(cfg: MetricConfig, t, x: Sequence, check: bool = True) -> MetricSample:
    """Metric sample (values and first derivatives) at a batch of points."""
    if cfg.kind == "perturbed" and not cfg.is_flat:
        return _analytic_sample(cfg, t, x, check)
    n1 = len(x) + 1
    jets = metric_jets(cfg, t, x, order=1, check=check)
    g_up = np.array([[np.asarray(jets.upper[i][j].value) for j in range(n1)] for i in range(n1)])
    g_lo = np.array([[np.asarray(jets.lower[i][j].value) for j in range(n1)] for i in range(n1)])
    dg = np.array([[[np.asarray(jets.lower[i][j].coef[1 + lam]) for j in range(n1)] for i in range(n1)] for lam in range(n1)])
    ch = np.array([[[np.asarray(jets.christoffel[g][a][b].value) for b in range(n1)] for a in range(n1)] for g in range(n1)])
    con = np.array([np.asarray(jets.contracted[mu].value) for mu in range(n1)])
    shape = np.broadcast_shapes(np.shape(t), *(np.shape(v) for v in x))
    bc = lambda arr, k: np.broadcast_to(arr, arr.shape[:k] + shape).copy()  # noqa: E731
    return MetricSample(bc(g_up, 2), bc(g_lo, 2), bc(dg, 3), bc(ch, 3), bc(con, 1))


def sample_metric_point(cfg: MetricConfig, p) -> MetricSample:
    """Single-point convenience wrapper; requires ``p`` inside the cone K."""
    if not p.in_cone():
        raise DomainError(f"point (t={p.t}, r={p.r}) lies outside the cone K")
    return sample_metric(cfg, p.t, p.x)


# -- decay validation ---------------------------------------------------------


@dataclass
class ValidationReport:
    delta: float
    gamma: float
    tolerance: float
    max_order: int
    s: np.ndarray
    ratios_upper: np.ndarray  # (npts, M+1), delta-normalised ratios before dividing by delta
    ratios_lower: np.ndarray
    passed: bool
    worst: dict

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        w = self.worst
        return (
            f"{verdict}: max ratio {w['ratio']:.4g} (limit {self.delta * (1 + self.tolerance):.4g}) "
            f"at s={w['s']:.4g}, |I|={w['order']}, index={w['position']}"
        )


def decay_reference(s, t, order: int, gamma: float):
    """``(s/t)^2 s^(-k-gamma)`` with ``k = max(order, 1)`` (order 0 uses the g^{mu nu} bound)."""
    k = max(order, 1)
    return (s / t) ** 2 * s ** (-k - gamma)


def validate_decay(cfg: MetricConfig, t, x: Sequence, max_order: int = 2, tol: float | None = None) -> ValidationReport:
    """Measure ``|d^I (g - m)| / ((s/t)^2 s^(-|I|-gamma))`` for both index positions."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = [np.atleast_1d(np.asarray(v, dtype=float)) for v in x]
    n1 = len(x) + 1
    if tol is None:
        tol = 0.15 if cfg.kind == "tabulated" else 0.05
    r = np.sqrt(sum(v**2 for v in x))
    if np.any(r >= t - 1.0):
        raise DomainError("validation points must lie inside the cone K")
    s = np.sqrt(t**2 - r**2)
    gamma = cfg.gamma
    delta = cfg.delta
    if cfg.kind == "tabulated":
        tab = _tabulated(cfg)
        gamma, delta = tab.gamma, tab.delta
    m = minkowski(n1 - 1)
    jets = metric_jets(cfg, t, x, order=max_order, check=True) if not cfg.is_flat or cfg.kind == "tabulated" else None
    from .jets import basis

    b = basis(n1, max_order)
    ru = np.zeros((t.size, max_order + 1))
    rl = np.zeros((t.size, max_order + 1))
    if jets is not None:
        for k, mi in enumerate(b.multi):
            order = sum(mi)
            ref = decay_reference(s, t, order, gamma)
            for i in range(n1):
                for j in range(n1):
                    du = jets.upper[i][j].coef[k] * b.factorial[k]
                    dl = jets.lower[i][j].coef[k] * b.factorial[k]
                    if order == 0:
                        du = du - m[i, j]
                        dl = dl - m[i, j]
                    ru[:, order] = np.maximum(ru[:, order], np.abs(du) / ref)
                    rl[:, order] = np.maximum(rl[:, order], np.abs(dl) / ref)
    both = np.maximum(ru, rl)
    flat_idx = int(np.argmax(both))
    ip, io = np.unravel_index(flat_idx, both.shape)
    worst_ratio = float(both[ip, io])
    position = "upper" if ru[ip, io] >= rl[ip, io] else "lower"
    passed = bool(worst_ratio <= delta * (1.0 + tol))
    worst = {"ratio": worst_ratio, "s": float(s[ip]), "t": float(t[ip]), "order": int(io), "position": position}
    return ValidationReport(delta, gamma, tol, max_order, s, ru, rl, passed, worst)


def ray_points(s_values, speed: float = 0.0, n: int = 2):
    """Points on the ray ``x = speed * t e_1`` with the given hyperboloidal times."""
    s_values = np.asarray(s_values, dtype=float)
    t = s_values / np.sqrt(1.0 - speed**2)
    x = [speed * t] + [np.zeros_like(t) for _ in range(n - 1)]
    return t, x
