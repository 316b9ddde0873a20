"""Hyperboloidal slices, vector-field derivatives of the discrete solution, and energies.

A slice ``H_s`` is sampled at grid points ``x`` with ``t(x) = sqrt(s^2 + |x|^2)``.
At each sample the solution is reconstructed as a Taylor jet in ``(t, x)``:
spatial derivatives come from centered stencils applied to every stored time
level, time dependence from Lagrange interpolation across levels (``phi`` for
the value, the evolved ``psi = d_t phi`` for every time derivative).  Vector
fields ``Z^I`` then act on the jets exactly.

Slices are harvested while the run advances: after each step, every grid point
whose ``t(x)`` falls in the central interval of the level ring is processed for
all pending slices, and the integrals are accumulated.  No slice ever needs the
whole history in memory.

In radial mode the samples lie on the positive x1-axis.  Every reported
quantity is a sum over all ``Z^I`` of a fixed length (or a Euclidean norm over
frame indices), which is invariant under rotations, so integrating along the
ray with weight ``|S^{n-1}| r^{n-1}`` is exact.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .frames import (
    apply_all,
    boost_family,
    admissible_family,
    conjugate_batch,
    dpsi_contraction,
    frame_second_values,
    minkowski,
    multi_indices,
)
from .jets import Jet, basis
from .metrics import metric_jets
from .solver.config import ConfigError, ScenarioConfig
from .solver.equation import Background, decompose
from .solver.grid import GridState, exact_solution
from .solver.stencils import HALO, partial


class InsufficientHistoryError(RuntimeError):
    """The stored time levels do not span the requested slice."""


SPHERE_AREA = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}


# -- time interpolation --------------------------------------------------------


def lagrange_weights(u: np.ndarray, nodes: int, jmax: int) -> list[np.ndarray]:
    """Weights ``w[j][p, k]`` of ``d^j/du^j`` of the interpolant through nodes ``0..nodes-1`` at ``u[p]``."""
    V = np.vander(np.arange(nodes, dtype=float), nodes, increasing=True)
    C = np.linalg.inv(V)  # row p: coefficient of u^p in basis polynomial k (column k)
    u = np.asarray(u, dtype=float)
    out = []
    for j in range(jmax + 1):
        powers = np.zeros((u.size, nodes))
        for p in range(j, nodes):
            powers[:, p] = math.factorial(p) / math.factorial(p - j) * u ** (p - j)
        out.append(powers @ C)
    return out


# -- derivative levels -----------------------------------------------------------


@dataclass
class DerivativeLevel:
    t: float
    phi: dict  # spatial multi-index -> interior array
    psi: dict


def spatial_indices(nd: int, order: int) -> list[tuple]:
    b = basis(nd, order)
    return list(b.multi)


def level_derivatives(state: GridState, phi: np.ndarray, psi: np.ndarray, t: float, order: int) -> DerivativeLevel:
    """Stencil derivatives of one stored level on its active region (zero elsewhere)."""
    from .solver.grid import active_region
    from .solver.stencils import fill_halo

    nd = len(state.axes)
    region = active_region(state, t)
    interior = state.interior
    fill_halo(phi, state.cfg.boundary, state.radial)
    fill_halo(psi, state.cfg.boundary, state.radial)
    local = tuple(slice(r.start - i.start, r.stop - i.start) for r, i in zip(region, interior))
    shape = tuple(len(a) for a in state.axes)
    out_phi, out_psi = {}, {}
    for alpha in spatial_indices(nd, order):
        arr = np.zeros(shape)
        arr[local] = partial(phi, alpha, state.h, region, state.cfg.accuracy)
        out_phi[alpha] = arr.reshape(-1)
        if sum(alpha) <= order - 1:
            arr = np.zeros(shape)
            arr[local] = partial(psi, alpha, state.h, region, state.cfg.accuracy)
            out_psi[alpha] = arr.reshape(-1)
    return DerivativeLevel(t, out_phi, out_psi)


def assemble_jets(
    levels: Sequence[DerivativeLevel],
    start: np.ndarray,
    nodes: int,
    flat_idx: np.ndarray,
    tau: np.ndarray,
    xpts: list,
    order: int,
    radial: bool,
    n: int,
) -> Jet:
    """Taylor jet of ``phi`` (order ``order``) at the points ``(tau, x)``.

    ``start[p]`` is the first of ``nodes`` consecutive levels used for point ``p``.
    """
    dt = levels[1].t - levels[0].t
    t_first = np.array([levels[k].t for k in range(len(levels))])
    u = (tau - t_first[start]) / dt
    w = lagrange_weights(u, nodes, max(order - 1, 0))
    npts = tau.size
    nd = 1 if radial else n

    def interp(which, alpha, j):
        acc = np.zeros(npts)
        for k in range(nodes):
            lev_idx = start + k
            # gather per point from possibly different levels
            vals = np.empty(npts)
            for lv in np.unique(lev_idx):
                sel = lev_idx == lv
                src = getattr(levels[lv], which)[alpha]
                vals[sel] = src[flat_idx[sel]]
            acc += w[j][:, k] * vals
        return acc / dt**j

    # derivative data in (t, spatial grid variables)
    derivs = {}
    for alpha in spatial_indices(nd, order):
        sa = sum(alpha)
        for k in range(order - sa + 1):
            key = (k,) + alpha
            if k == 0:
                derivs[key] = interp("phi", alpha, 0)
            else:
                derivs[key] = interp("psi", alpha, k - 1)
    if not radial:
        return Jet.from_derivatives(derivs, n + 1, order)
    # compose u(t, rho) with rho = |x| about points on the x1-axis
    uj = Jet.from_derivatives(derivs, 2, order)
    coords = Jet.coordinates([tau] + list(xpts), order)
    r0 = xpts[0]
    rho = coords[1] * coords[1]
    for c in coords[2:]:
        rho = rho + c * c
    dT = coords[0] - tau
    dR = rho.sqrt() - r0
    b2 = basis(2, order)
    out = None
    powT = [Jet.constant(np.ones(npts), n + 1, order)]
    powR = [Jet.constant(np.ones(npts), n + 1, order)]
    for _ in range(order):
        powT.append(powT[-1] * dT)
        powR.append(powR[-1] * dR)
    for idx, (kt, kr) in enumerate(b2.multi):
        term = powT[kt] * powR[kr] * uj.coef[idx]
        out = term if out is None else out + term
    return out


# -- per-point quantities ------------------------------------------------------


@dataclass
class SliceSamples:
    """Sample points of one or several slices with the reconstructed jets."""

    sid: np.ndarray  # slice id per point
    s: np.ndarray  # hyperboloidal time per point (constant-t slices: nan)
    t: np.ndarray
    x: list
    weights: np.ndarray
    jet: Jet
    flat: bool = False
    forcing: object = None  # jet of the manufactured forcing, if any


@dataclass
class HyperboloidSlice:
    """A complete slice with per-point jets and quadrature weights."""

    s: float
    t: np.ndarray
    x: list
    weights: np.ndarray
    jet: Jet
    m_diag: int
    radial: bool = False
    flat: bool = False
    forcing: object = None

    def samples(self) -> SliceSamples:
        return SliceSamples(
            np.zeros(self.t.size, dtype=int), np.full(self.t.size, self.s), self.t, self.x, self.weights, self.jet, self.flat, self.forcing
        )

    @property
    def phi(self) -> np.ndarray:
        return self.jet.value

    def z_fields(self, max_len: int | None = None) -> dict:
        coords = Jet.coordinates([self.t] + list(self.x), self.jet.order)
        fam = admissible_family(len(self.x))
        return apply_all(multi_indices(fam, self.m_diag if max_len is None else max_len), self.jet, coords)


def _background_at(cfg: ScenarioConfig, t, x, order: int) -> Background:
    if cfg.metric.is_flat and cfg.metric.kind != "tabulated":
        return Background.minkowski(cfg.n)
    mj = metric_jets(cfg.metric, t, x, order=order, check=False)
    return Background.from_jets(mj)


def _bg_values(bg: Background) -> Background:
    if bg.flat:
        return bg
    v = lambda j: j.value if isinstance(j, Jet) else j  # noqa: E731
    n1 = bg.n + 1
    return Background(
        bg.n,
        False,
        [[v(bg.upper[a][b]) for b in range(n1)] for a in range(n1)],
        [v(c) for c in bg.contracted],
        [[[v(bg.christoffel[c][a][b]) for b in range(n1)] for a in range(n1)] for c in range(n1)],
    )


def _bg_truncate(bg: Background, order: int) -> Background:
    if bg.flat:
        return bg
    tr = lambda j: j.truncate(order) if isinstance(j, Jet) else j  # noqa: E731
    n1 = bg.n + 1
    return Background(
        bg.n,
        False,
        [[tr(bg.upper[a][b]) for b in range(n1)] for a in range(n1)],
        [tr(c) for c in bg.contracted],
        [[[tr(bg.christoffel[c][a][b]) for b in range(n1)] for a in range(n1)] for c in range(n1)],
    )


def _val(x, npts):
    if isinstance(x, Jet):
        return x.value
    return np.broadcast_to(np.asarray(x, dtype=float), (npts,))


def _grad_hess(u: Jet):
    n1 = u.nvar
    unit = [tuple(int(i == a) for i in range(n1)) for a in range(n1)]
    g = [u.coef[1 + a] for a in range(n1)]
    hess = [[u.derivative(tuple(p + r for p, r in zip(unit[a], unit[b]))) for b in range(n1)] for a in range(n1)]
    return g, hess


def point_quantities(sm: SliceSamples, cfg: ScenarioConfig, m_diag: int) -> dict:
    """Per-point integrands and sup-norm candidates for every diagnostic."""
    n = len(sm.x)
    n1 = n + 1
    K = sm.jet.order
    npts = sm.t.size
    t = sm.t
    x = sm.x
    coords = Jet.coordinates([t] + list(x), K)
    fam = admissible_family(n)
    zi = apply_all(multi_indices(fam, m_diag), sm.jet, coords)
    q: dict = {"npts": npts}
    xt = [xa / t for xa in x]
    if sm.flat:
        ef = np.zeros((m_diag + 1, npts))
        for mi, u in zi.items():
            g = [u.coef[1 + a] for a in range(n1)]
            ef[len(mi)] += sum(c * c for c in g)
        q["e_flat"] = ef
        return q
    s = sm.s
    st = s / t
    # background and decomposition (values), G as jets for the flux
    bg_jet = _background_at(cfg, t, x, K)  # Christoffels then carry order K - 1
    bg = _bg_values(bg_jet)
    d1v = [sm.jet.coef[1 + a] for a in range(n1)]
    dec = decompose(d1v, bg, cfg.nonlinearity)
    Gv = dec.G
    e0 = np.zeros((m_diag + 1, npts))
    ec = np.zeros((m_diag + 1, npts))
    nvec = [np.ones(npts)] + [-v for v in xt]
    for mi, u in zi.items():
        if u.order < 1:
            continue
        g = [u.coef[1 + a] for a in range(n1)]  # d_alpha u
        good = [xt[a - 1] * g[0] + g[a] for a in range(1, n1)]
        e0[len(mi)] += sum(v * v for v in good) + (st * g[0]) ** 2
        quad = 0.0
        flux = 0.0
        for a in range(n1):
            for b in range(n1):
                Gab = Gv[a][b]
                quad = quad + Gab * g[a] * g[b]
                flux = flux + nvec[a] * Gab * g[0] * g[b]
        ec[len(mi)] += quad - 2.0 * flux
    q["e0"] = e0
    q["ecorr"] = ec
    # identity flux for the zeroth generalized energy
    if K >= 2:
        d1j = [sm.jet.d(a).truncate(1) for a in range(n1)]
        decj = decompose(d1j, _bg_truncate(bg_jet, 1), cfg.nonlinearity)
        Fv = _val(decj.F, npts)
        if sm.forcing is not None:
            Fv = Fv + sm.forcing.value
        phit = d1v[0]
        acc = -phit * Fv
        for a in range(n1):
            for b in range(n1):
                Gj = decj.G[a][b]
                if not isinstance(Gj, Jet):
                    continue
                acc = acc - Gj.coef[1 + a] * phit * d1v[b] + 0.5 * Gj.coef[1] * d1v[a] * d1v[b]
        q["flux"] = 2.0 * st * acc
    # Sobolev pieces
    kmax = math.ceil(n / 2)
    if K >= kmax:
        sob = np.zeros((kmax + 1, npts))
        for mi in multi_indices(boost_family(n), kmax):
            u = zi.get(mi)
            if u is None:
                u = apply_all([mi], sm.jet, coords)[mi]
            sob[len(mi)] += u.value**2
        q["sobolev_l2"] = sob
    q["sobolev_sup"] = t ** (n / 2) * np.abs(sm.jet.value)
    # weighted sup observables
    jmax = max(K - 2, 0)
    if K >= 2:
        bad = np.zeros((jmax + 1, npts))
        good = np.zeros((jmax + 1, npts))
        sec = np.zeros((jmax + 1, npts))
        tt = np.zeros((jmax + 1, npts))
        l45 = np.zeros((jmax + 1, npts))
        for mi, u in zi.items():
            k = len(mi)
            if k > jmax or u.order < 2:
                continue
            g, hess = _grad_hess(u)
            bad[k] += sum(v * v for v in g)
            good[k] += sum((xt[a - 1] * g[0] + g[a]) ** 2 for a in range(1, n1))
            fs = frame_second_values(g, hess, t, x)
            for a in range(1, n1):
                for al in range(n1):
                    sec[k] += fs[a][al] ** 2 + fs[al][a] ** 2
            tt[k] += hess[0][0] ** 2
            lhs = np.max(np.abs(np.array(hess).reshape(n1 * n1, npts)), axis=0)
            rhs = np.abs(hess[0][0]) + sum(np.abs(g[c]) for c in range(n1)) / t
            for a in range(1, n1):
                for b in range(n1):
                    rhs = rhs + np.abs(xt[a - 1] * hess[0][b] + hess[a][b])
            ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), 0.0)
            l45[k] = np.maximum(l45[k], ratio)
        q["obs_bad"] = s * np.sqrt(bad)
        q["obs_good"] = t * np.sqrt(good)
        q["obs_second"] = t * s * np.sqrt(sec)
        q["obs_tt"] = s**3 / t * np.sqrt(tt)
        q["lemma_second_ratio"] = l45
        q.update(_frame_identity(sm, cfg, zi, coords, bg_jet, jmax))
    return q


def _frame_identity(sm: SliceSamples, cfg, zi, coords, bg_jet, jmax) -> dict:
    """Residual of ``(mbar^00 + Gbar^00) d_t^2 u = Ft - Q - R`` for ``u = Z^I phi``.

    Signature (-, +, ..., +) throughout: ``mbar^00 = -(s/t)^2`` and
    ``R = mbar^{0a} dbar_0 dbar_a u + mbar^{a0} dbar_a dbar_0 u + mbar^{ab} dbar_a dbar_b u + m^{ab}(d_a Psi) dbar u``.
    """
    n1 = len(sm.x) + 1
    t, x = sm.t, sm.x
    K = sm.jet.order
    npts = t.size
    d1j = [sm.jet.d(a) for a in range(n1)]  # order K-1
    bgj = _bg_truncate(bg_jet, K - 1) if not bg_jet.flat else bg_jet
    decj = decompose(d1j, bgj, cfg.nonlinearity)
    source = decj.F if isinstance(decj.F, Jet) else Jet.constant(np.broadcast_to(decj.F, (npts,)), n1, K - 1)
    if sm.forcing is not None:
        source = source + sm.forcing.truncate(K - 1)
    d2j = [[d1j[a].d(b) for b in range(n1)] for a in range(n1)]  # order K-2
    m = minkowski(n1 - 1)
    for a in range(n1):
        for b in range(n1):
            Gab = decj.G[a][b]
            Gab = Gab.truncate(K - 2) if isinstance(Gab, Jet) else Gab
            source = source.truncate(K - 2) - Gab * d2j[a][b]
    Gv = [[_val(decj.G[a][b], npts) for b in range(n1)] for a in range(n1)]
    Gbar = conjugate_batch(Gv, t, x)
    mbar = conjugate_batch([[np.full(npts, m[a, b]) for b in range(n1)] for a in range(n1)], t, x)
    cG = dpsi_contraction(Gv, t, x)
    cm = dpsi_contraction([[np.full(npts, m[a, b]) for b in range(n1)] for a in range(n1)], t, x)
    res = np.zeros((jmax + 1, npts))
    scale = np.zeros((jmax + 1, npts))
    for mi, u in zi.items():
        k = len(mi)
        if k > jmax or u.order < 2:
            continue
        zsrc = apply_all([mi], source, coords)[mi].value if k else source.value
        g, hess = _grad_hess(u)
        Ft = zsrc + sum(Gv[a][b] * hess[a][b] for a in range(n1) for b in range(n1))
        fsv = frame_second_values(g, hess, t, x)
        dbar0 = g[0]
        Q = cG * dbar0
        R = cm * dbar0
        for a in range(1, n1):
            Q = Q + Gbar[0][a] * fsv[0][a] + Gbar[a][0] * fsv[a][0]
            R = R + mbar[0][a] * fsv[0][a] + mbar[a][0] * fsv[a][0]
            for b in range(1, n1):
                Q = Q + Gbar[a][b] * fsv[a][b]
                R = R + mbar[a][b] * fsv[a][b]
        lhs = (mbar[0][0] + Gbar[0][0]) * hess[0][0]
        rhs = Ft - Q - R
        res[k] += (lhs - rhs) ** 2
        scale[k] += lhs**2 + Ft**2
    return {"frame_identity_residual": np.sqrt(res), "frame_identity_scale": np.sqrt(scale)}


# -- accumulation into records ------------------------------------------------------


@dataclass
class EnergyRecord:
    s: float
    E: list  # E_m for m = 0..m_diag
    E_by_order: list  # sum over |I| = k of E_0(Z^I phi)
    Et: list  # generalized energies
    ratio: list  # Et/E - 1 (0 when E = 0)
    flux: float  # energy-identity right side for the zeroth generalized energy
    residual: float  # |dEt_0/ds - flux| (nan at the ends)
    sobolev_ratio: float
    observables: dict  # name -> list per |J|
    frame_identity: list  # sup residual per |I|
    frame_identity_scale: list
    lemma_second_ratio: list
    npoints: int
    E_flat: list = field(default_factory=list)  # constant-t energies at t = s

    CSV_COLUMNS = None  # filled below

    def row(self) -> dict:
        out = {"s": self.s}
        for k, v in enumerate(self.E):
            out[f"E{k}"] = v
        for k, v in enumerate(self.Et):
            out[f"Et{k}"] = v
        for k, v in enumerate(self.ratio):
            out[f"ratio{k}"] = v
        out["flux"] = self.flux
        out["residual"] = self.residual
        out["sobolev_ratio"] = self.sobolev_ratio
        for name, vals in self.observables.items():
            for k, v in enumerate(vals):
                out[f"{name}_J{k}"] = v
        for k, v in enumerate(self.frame_identity):
            out[f"frame_identity_I{k}"] = v
        for k, v in enumerate(self.E_flat):
            out[f"Eflat{k}"] = v
        out["npoints"] = self.npoints
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyRecord":
        return cls(**d)


class _Acc:
    def __init__(self, m_diag: int):
        self.sums: dict = {}
        self.sups: dict = {}
        self.npts = 0
        self.m_diag = m_diag

    def add_sum(self, key, arr2d, w):
        v = np.asarray(arr2d) @ w if np.ndim(arr2d) == 2 else float(np.dot(arr2d, w))
        self.sums[key] = self.sums.get(key, 0.0) + v

    def add_sup(self, key, arr):
        v = np.max(arr, axis=-1) if np.size(arr) else 0.0
        self.sups[key] = np.maximum(self.sups.get(key, v), v)


def accumulate(acc: dict, sm: SliceSamples, q: dict, m_diag: int) -> None:
    """Reduce per-point quantities into per-slice accumulators keyed by ``sm.sid``."""
    for sid in np.unique(sm.sid):
        sel = sm.sid == sid
        a = acc.setdefault(int(sid), _Acc(m_diag))
        w = sm.weights[sel]
        a.npts += int(sel.sum())
        for key in ("e0", "ecorr", "sobolev_l2", "e_flat"):
            if key in q:
                a.add_sum(key, q[key][:, sel], w)
        if "flux" in q:
            a.add_sum("flux", q["flux"][sel], w)
        for key in ("sobolev_sup",):
            if key in q:
                a.add_sup(key, q[key][sel])
        for key in ("obs_bad", "obs_good", "obs_second", "obs_tt", "lemma_second_ratio", "frame_identity_residual", "frame_identity_scale"):
            if key in q:
                a.add_sup(key, q[key][:, sel])


def finish_record(s: float, a: _Acc, m_diag: int, n: int, flat_acc: _Acc | None = None) -> EnergyRecord:
    e_by = [float(v) for v in a.sums.get("e0", np.zeros(m_diag + 1))]
    corr = [float(v) for v in a.sums.get("ecorr", np.zeros(m_diag + 1))]
    E = list(np.cumsum(e_by))
    Et = list(np.cumsum(np.array(e_by) + np.array(corr)))
    ratio = [(et / e - 1.0) if e > 0 else 0.0 for et, e in zip(Et, E)]
    sob_sup = float(a.sups.get("sobolev_sup", 0.0))
    l2 = a.sums.get("sobolev_l2")
    denom = float(np.sum(np.sqrt(np.maximum(l2, 0.0)))) if l2 is not None else 0.0
    sob = sob_sup / denom if denom > 0 else 0.0
    obs = {}
    for name in ("obs_bad", "obs_good", "obs_second", "obs_tt"):
        if name in a.sups:
            obs[name[4:]] = [float(v) for v in np.atleast_1d(a.sups[name])]
    fl = []
    if flat_acc is not None and "e_flat" in flat_acc.sums:
        fl = list(np.cumsum([float(v) for v in flat_acc.sums["e_flat"]]))
    return EnergyRecord(
        s=float(s),
        E=[float(v) for v in E],
        E_by_order=e_by,
        Et=[float(v) for v in Et],
        ratio=[float(v) for v in ratio],
        flux=float(a.sums.get("flux", 0.0)),
        residual=float("nan"),
        sobolev_ratio=sob,
        observables=obs,
        frame_identity=[float(v) for v in np.atleast_1d(a.sups.get("frame_identity_residual", []))],
        frame_identity_scale=[float(v) for v in np.atleast_1d(a.sups.get("frame_identity_scale", []))],
        lemma_second_ratio=[float(v) for v in np.atleast_1d(a.sups.get("lemma_second_ratio", []))],
        npoints=a.npts,
        E_flat=fl,
    )


def identity_residuals(records: list[EnergyRecord]) -> None:
    """Centered difference ``(Et0(s+) - Et0(s-)) / (s+ - s-)`` against the flux at ``s``."""
    for k in range(1, len(records) - 1):
        lo, mid, hi = records[k - 1], records[k], records[k + 1]
        lhs = (hi.Et[0] - lo.Et[0]) / (hi.s - lo.s)
        mid.residual = abs(lhs - mid.flux)


# -- harvesting during a run ----------------------------------------------------------


class SliceHarvester:
    """Collects hyperboloidal (and optional constant-t) slice diagnostics during a run."""

    def __init__(
        self,
        cfg: ScenarioConfig,
        s_values: Sequence[float],
        flat_times: Sequence[float] = (),
        order: int | None = None,
        stride: int = 4,
    ):
        self.cfg = cfg
        self.s_values = np.asarray(s_values, dtype=float)
        self.flat_times = np.asarray(flat_times, dtype=float)
        self.m_diag = cfg.m_diag
        self.order = cfg.m_diag + 1 if order is None else order
        self.order = max(self.order, 2)
        self.depth = cfg.ring_depth
        # every `stride` steps the central `stride` level intervals are processed
        self.stride = max(1, min(stride, self.depth - 4))
        self._since = 0
        self.levels: deque = deque()
        self.acc: dict = {}
        self.flat_acc: dict = {}
        self.done_until = -np.inf
        self._geometry = None

    def _setup(self, state: GridState):
        if self.cfg.mode == "radial":
            r = state.axes[0]
            self._r = r
            self._order_idx = np.arange(r.size)
            self._rs = r
            w = SPHERE_AREA[self.cfg.n] * r ** (self.cfg.n - 1) * state.h
            self._w = w
        else:
            c = state.coords()
            shape = tuple(len(a) for a in state.axes)
            full = [np.broadcast_to(v, shape).reshape(-1) for v in c]
            r = np.sqrt(sum(v * v for v in full))
            order = np.argsort(r, kind="stable")
            self._full = full
            self._order_idx = order
            self._rs = r[order]
            self._w = np.full(r.size, state.h ** len(state.axes))
        self._geometry = True

    def _points(self, idx: np.ndarray, state: GridState) -> list:
        if self.cfg.mode == "radial":
            r = self._r[idx]
            return [r] + [np.zeros_like(r)] * (self.cfg.n - 1)
        return [v[idx] for v in self._full]

    @property
    def pending(self) -> bool:
        last = max(
            [0.5 * (s * s + 1.0) for s in self.s_values] + [float(t) for t in self.flat_times] + [-np.inf]
        )
        return self.done_until < last

    def observe(self, state: GridState) -> None:
        if self._geometry is None:
            self._setup(state)
        lv = state.levels[-1]
        self.levels.append(level_derivatives(state, lv.phi, lv.psi, lv.t, self.order))
        while len(self.levels) > self.depth:
            self.levels.popleft()
        if len(self.levels) < self.depth:
            return
        self._since += 1
        first = self.done_until == -np.inf
        if not first and self._since < self.stride:
            return
        c = (self.depth - self.stride) // 2
        ta = self.levels[c].t if first else self.done_until
        tb = self.levels[c + self.stride].t
        if first and ta > min(list(self.s_values) + list(self.flat_times) + [np.inf]):
            raise InsufficientHistoryError("first slice precedes the first complete level window")
        self._since = 0
        self._process_window(state, ta, tb)
        self.done_until = tb

    def flush(self, state: GridState) -> None:
        """Process the remaining interval up to the central level of the ring."""
        if len(self.levels) < self.depth or self.done_until == -np.inf:
            return
        tb = self.levels[(self.depth - self.stride) // 2 + self.stride].t
        if tb > self.done_until:
            self._process_window(state, self.done_until, tb)
            self.done_until = tb
        self._since = 0

    def _process_window(self, state: GridState, ta: float, tb: float) -> None:
        parts = []
        for sid, s in enumerate(self.s_values):
            if tb <= s:
                continue
            lo_r = math.sqrt(max(ta * ta - s * s, 0.0)) if ta > s else -1.0
            hi_r = math.sqrt(tb * tb - s * s)
            hi_r = min(hi_r, 0.5 * (s * s - 1.0))
            if hi_r <= lo_r:
                continue
            i0 = np.searchsorted(self._rs, lo_r, side="left") if lo_r >= 0 else 0
            i1 = np.searchsorted(self._rs, hi_r, side="left")
            if i1 <= i0:
                continue
            idx = self._order_idx[i0:i1]
            r = self._rs[i0:i1]
            tau = np.sqrt(s * s + r * r)
            keep = (tau >= ta) & (tau < tb) & (r < tau - 1.0)
            if not np.any(keep):
                continue
            parts.append((sid, idx[keep], tau[keep]))
        if parts:
            self._run_batch(state, parts, flat=False)
        fparts = []
        for fid, tf in enumerate(self.flat_times):
            if ta <= tf < tb:
                idx = self._order_idx
                keep = self._rs < tf - 1.0
                fparts.append((fid, idx[keep], np.full(int(keep.sum()), tf)))
        if fparts:
            self._run_batch(state, fparts, flat=True)

    def _run_batch(self, state: GridState, parts, flat: bool) -> None:
        sid = np.concatenate([np.full(p[1].size, p[0]) for p in parts])
        idx = np.concatenate([p[1] for p in parts])
        tau = np.concatenate([p[2] for p in parts])
        chunk = 40000
        for a in range(0, idx.size, chunk):
            sl = slice(a, a + chunk)
            self._run_chunk(state, sid[sl], idx[sl], tau[sl], flat)

    def _run_chunk(self, state, sid, idx, tau, flat):
        xpts = self._points(idx, state)
        start = np.zeros(idx.size, dtype=int)
        jet = assemble_jets(
            self.levels, start, len(self.levels), idx, tau, xpts, self.order, self.cfg.mode == "radial", self.cfg.n
        )
        s = np.full(tau.size, np.nan) if flat else np.sqrt(np.maximum(tau**2 - sum(v * v for v in xpts), 0.0))
        forcing = _forcing_jet(self.cfg, tau, xpts, self.order) if (self.cfg.mms and not flat) else None
        sm = SliceSamples(sid, s, tau, xpts, self._w[idx], jet, flat, forcing)
        q = point_quantities(sm, self.cfg, self.m_diag)
        accumulate(self.flat_acc if flat else self.acc, sm, q, self.m_diag)

    def records(self) -> list[EnergyRecord]:
        out = []
        for sid, s in enumerate(self.s_values):
            if sid not in self.acc:
                continue
            if 0.5 * (s * s + 1.0) > self.done_until:
                continue  # incomplete slice
            fa = None
            if self.flat_times.size:
                near = np.where(np.isclose(self.flat_times, s))[0]
                if near.size and int(near[0]) in self.flat_acc:
                    fa = self.flat_acc[int(near[0])]
            out.append(finish_record(s, self.acc[sid], self.m_diag, self.cfg.n, fa))
        identity_residuals(out)
        return out


def _forcing_jet(cfg: ScenarioConfig, t, x, order: int):
    """Manufactured forcing as a jet (order ``order - 1``)."""
    from .solver.equation import operator

    ex = exact_solution(cfg).jet(t, x, order + 1)
    n1 = len(x) + 1
    d1 = [ex.d(a) for a in range(n1)]
    d2 = [[d1[a].d(b) for b in range(n1)] for a in range(n1)]
    d1 = [v.truncate(order - 1) for v in d1]
    bg = _background_at(cfg, t, x, order)
    return operator(d1, d2, bg, cfg.nonlinearity)


# -- run driver ------------------------------------------------------------------------


@dataclass
class RunResult:
    cfg: ScenarioConfig
    records: list
    state: GridState
    error: Exception | None
    guard_max: float
    steps: int
    wall: float


def evolve(cfg: ScenarioConfig, s_values=None, flat_times=None, progress=None, stride: int = 4) -> RunResult:
    """Evolve from ``t0`` until every scheduled slice has been harvested.

    Degeneracy and blowup stop the run; the records completed so far are kept
    and the exception is returned in ``RunResult.error``.
    """
    import time

    from .solver.equation import DegeneracyError
    from .solver.grid import BlowupError, Stepper, initial_data

    t_start = time.perf_counter()
    cfg.validate()
    s_values = cfg.slice_times() if s_values is None else np.asarray(s_values, dtype=float)
    if flat_times is None:
        flat_times = s_values if cfg.flat_slices else ()
    state = initial_data(cfg)
    stepper = Stepper(cfg)
    harvester = SliceHarvester(cfg, s_values, flat_times, stride=stride)
    harvester.observe(state)
    limit = max(0.5 * (float(np.max(s_values)) ** 2 + 1.0) if len(s_values) else cfg.t0, max(flat_times, default=cfg.t0))
    limit += (cfg.ring_depth + 2) * cfg.dt
    error = None
    try:
        while harvester.pending and state.t < limit:
            stepper.step(state)
            harvester.observe(state)
            if progress is not None:
                progress(state)
    except (DegeneracyError, BlowupError) as exc:
        error = exc
        harvester.flush(state)
    return RunResult(cfg, harvester.records(), state, error, stepper.guard_max, state.steps, time.perf_counter() - t_start)


# -- one-shot extraction from a stored history ----------------------------------------


def extract_slice(
    state: GridState, s: float, m_diag: int | None = None, flat: bool = False, levels: Sequence | None = None
) -> HyperboloidSlice:
    """Reconstruct ``H_s`` (or the constant-t slice ``t = s``) from stored levels.

    ``levels`` defaults to the state's ring buffer; a longer history (equally
    spaced :class:`~membrane.solver.grid.Level` objects) may be passed instead.
    The levels must span every sample time; each point uses the nearest window
    of ``ring_depth`` levels.
    """
    cfg = state.cfg
    m_diag = cfg.m_diag if m_diag is None else m_diag
    order = max(m_diag + 1, 2)
    levels_raw = list(state.levels if levels is None else levels)
    if len(levels_raw) < 4:
        raise InsufficientHistoryError("need at least 4 stored levels")
    levels = [level_derivatives(state, lv.phi, lv.psi, lv.t, order) for lv in levels_raw]
    h = SliceHarvester(cfg, [s], [], order)
    h._setup(state)
    rs, idx = h._rs, h._order_idx
    if flat:
        keep = rs < s - 1.0
        tau = np.full(int(keep.sum()), s)
    else:
        keep = rs < 0.5 * (s * s - 1.0)
        tau = np.sqrt(s * s + rs[keep] ** 2)
    idx = idx[keep]
    t_lo, t_hi = levels[0].t, levels[-1].t
    if tau.size and (tau.min() < t_lo - 1e-12 or tau.max() > t_hi + 1e-12):
        raise InsufficientHistoryError(
            f"slice s={s} needs levels spanning t in [{tau.min():.4g}, {tau.max():.4g}], stored [{t_lo:.4g}, {t_hi:.4g}]"
        )
    nodes = min(len(levels), cfg.ring_depth)
    dt = levels[1].t - levels[0].t
    start = np.clip(np.round((tau - t_lo) / dt).astype(int) - nodes // 2 + 1, 0, len(levels) - nodes)
    xpts = h._points(idx, state)
    jet = assemble_jets(levels, start, nodes, idx, tau, xpts, order, cfg.mode == "radial", cfg.n)
    forcing = _forcing_jet(cfg, tau, xpts, order) if (cfg.mms and not flat) else None
    return HyperboloidSlice(s, tau, xpts, h._w[idx], jet, m_diag, cfg.mode == "radial", flat, forcing)


# -- functionals on complete slices ----------------------------------------------------


def _slice_acc(sl: HyperboloidSlice, cfg: ScenarioConfig, m: int) -> _Acc:
    acc: dict = {}
    sm = sl.samples()
    q = point_quantities(sm, cfg, m)
    accumulate(acc, sm, q, m)
    return acc.get(0, _Acc(m))


def energy(sl: HyperboloidSlice, m: int, cfg: ScenarioConfig | None = None) -> tuple[float, list]:
    """``E_m`` and its per-|I| breakdown."""
    if m > sl.m_diag:
        raise ConfigError(f"energy order {m} exceeds the slice's diagnostic order {sl.m_diag}")
    cfg = cfg or ScenarioConfig()
    if sl.flat:
        raise ValueError("hyperboloidal energy requested on a constant-t slice")
    acc = _slice_acc(sl, cfg, m)
    by = [float(v) for v in acc.sums.get("e0", np.zeros(m + 1))]
    return float(sum(by)), by


def generalized_energy(sl: HyperboloidSlice, cfg: ScenarioConfig, m: int) -> float:
    acc = _slice_acc(sl, cfg, m)
    return float(np.sum(acc.sums.get("e0", 0.0)) + np.sum(acc.sums.get("ecorr", 0.0)))


def flat_energy(sl: HyperboloidSlice, m: int) -> float:
    acc = _slice_acc(sl, ScenarioConfig(), m)
    return float(np.sum(acc.sums.get("e_flat", 0.0)))


def energy_identity_residual(sl_minus: HyperboloidSlice, sl_mid: HyperboloidSlice, sl_plus: HyperboloidSlice, cfg: ScenarioConfig):
    """``(lhs, rhs, |lhs - rhs|)`` with a centered difference of the zeroth generalized energy."""
    e_lo = generalized_energy(sl_minus, cfg, 0)
    e_hi = generalized_energy(sl_plus, cfg, 0)
    lhs = (e_hi - e_lo) / (sl_plus.s - sl_minus.s)
    rhs = float(_slice_acc(sl_mid, cfg, 0).sums.get("flux", 0.0))
    return lhs, rhs, abs(lhs - rhs)


def sobolev_check(sl: HyperboloidSlice, cfg: ScenarioConfig | None = None) -> float:
    """``sup t^{n/2}|phi|`` over the sum of boost-derivative L2 norms (0 for the zero field)."""
    cfg = cfg or ScenarioConfig(n=len(sl.x))
    acc = _slice_acc(sl, cfg, max(sl.m_diag, 0))
    sup = float(acc.sups.get("sobolev_sup", 0.0))
    l2 = acc.sums.get("sobolev_l2")
    denom = float(np.sum(np.sqrt(np.maximum(l2, 0.0)))) if l2 is not None else 0.0
    return sup / denom if denom > 0 else 0.0


def decay_observables(sl: HyperboloidSlice, cfg: ScenarioConfig | None = None) -> dict:
    cfg = cfg or ScenarioConfig(n=len(sl.x))
    acc = _slice_acc(sl, cfg, sl.m_diag)
    return {k[4:]: [float(v) for v in np.atleast_1d(acc.sups[k])] for k in ("obs_bad", "obs_good", "obs_second", "obs_tt") if k in acc.sups}


def frame_wave_identity_check(sl: HyperboloidSlice, cfg: ScenarioConfig) -> dict:
    """Sup residual of the frame identity for ``d_t^2 Z^I phi`` and the second-derivative bound ratio."""
    acc = _slice_acc(sl, cfg, sl.m_diag)
    return {
        "residual": [float(v) for v in np.atleast_1d(acc.sups.get("frame_identity_residual", []))],
        "scale": [float(v) for v in np.atleast_1d(acc.sups.get("frame_identity_scale", []))],
        "second_derivative_ratio": [float(v) for v in np.atleast_1d(acc.sups.get("lemma_second_ratio", []))],
    }


# -- serialization -------------------------------------------------------------------------


def write_records_csv(records: list[EnergyRecord], path) -> None:
    rows = [r.row() for r in records]
    cols: list = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


def read_records_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) if v not in ("", None) else float("nan") for k, v in row.items()} for row in csv.DictReader(fh)]


def write_records_json(records: list[EnergyRecord], path) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in records], fh, indent=1, default=float)


def read_records_json(path) -> list[EnergyRecord]:
    with open(path) as fh:
        return [EnergyRecord.from_dict(d) for d in json.load(fh)]
