"""Grid state, right-hand side, RK4 stepping, initial data and checkpoints."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..fields import AnalyticField
from ..jets import Jet
from ..metrics import metric_values, sample_metric
from .config import ConfigError, ScenarioConfig
from .equation import Background, acceleration, check_guard, operator
from .stencils import HALO, fill_halo, partial


class BlowupError(RuntimeError):
    """Non-finite values appeared in the evolved fields."""

    def __init__(self, message: str, last_t: float, sup_phi: float, sup_psi: float):
        super().__init__(message)
        self.last_t = last_t
        self.sup_phi = sup_phi
        self.sup_psi = sup_psi


@dataclass
class Level:
    t: float
    phi: np.ndarray
    psi: np.ndarray


@dataclass
class GridState:
    cfg: ScenarioConfig
    axes: list  # 1D coordinate arrays of the interior points (radial: r_j)
    phi: np.ndarray  # halo-padded
    psi: np.ndarray
    t: float
    steps: int = 0
    levels: deque = field(default_factory=deque)

    @property
    def h(self) -> float:
        return self.cfg.h

    @property
    def radial(self) -> bool:
        return self.cfg.mode == "radial"

    @property
    def interior(self) -> tuple:
        return tuple(slice(HALO, HALO + len(a)) for a in self.axes)

    def coords(self, region: tuple | None = None) -> list:
        """Coordinate arrays (broadcastable) for a halo-relative region."""
        region = region or self.interior
        out = []
        nd = len(self.axes)
        for ax, a in enumerate(self.axes):
            sl = region[ax]
            v = a[sl.start - HALO : sl.stop - HALO]
            shape = [1] * nd
            shape[ax] = len(v)
            out.append(v.reshape(shape))
        return out

    def radius(self, region: tuple | None = None) -> np.ndarray:
        c = self.coords(region)
        if self.radial:
            return np.abs(c[0])
        return np.sqrt(sum(v * v for v in c))

    def push_level(self) -> None:
        self.levels.append(Level(self.t, self.phi.copy(), self.psi.copy()))
        while len(self.levels) > self.cfg.ring_depth:
            self.levels.popleft()

    def sup_norms(self) -> tuple[float, float]:
        i = self.interior
        return float(np.max(np.abs(self.phi[i]))), float(np.max(np.abs(self.psi[i])))


def make_axes(cfg: ScenarioConfig) -> list:
    L = cfg.domain_half_width
    if cfg.mode == "radial":
        return [(np.arange(cfg.points) + 0.5) * cfg.h]
    x = np.linspace(-L, L, cfg.points)
    return [x.copy() for _ in range(cfg.n)]


def _empty(axes) -> np.ndarray:
    return np.zeros(tuple(len(a) + 2 * HALO for a in axes))


def exact_solution(cfg: ScenarioConfig) -> AnalyticField:
    """Manufactured solutions; ``gaussian`` is ``eps exp(-(r^2 + (t - t0)^2))``."""
    if cfg.mms is None or cfg.mms == "zero":
        return AnalyticField("zero", lambda c: c[0] * 0.0)
    if cfg.mms == "gaussian":
        eps, t0 = cfg.epsilon, cfg.t0

        def fn(c):
            r2 = c[1] * c[1]
            for x in c[2:]:
                r2 = r2 + x * x
            return (-(r2 + (c[0] - t0) * (c[0] - t0))).exp() * eps

        return AnalyticField("gaussian", fn)
    raise ConfigError(f"unknown manufactured solution {cfg.mms!r}")


def initial_data(cfg: ScenarioConfig) -> GridState:
    """Fields at ``t0 = B + 1``: ``phi = eps f``, ``psi = eps g`` (or the exact MMS data)."""
    cfg.validate()
    axes = make_axes(cfg)
    phi, psi = _empty(axes), _empty(axes)
    state = GridState(cfg, axes, phi, psi, cfg.t0)
    i = state.interior
    if cfg.mms is not None:
        pts = _point_coords(state, i)
        jet = exact_solution(cfg).jet(np.full(pts[0].shape, cfg.t0), pts, 1)
        phi[i] = jet.value
        psi[i] = jet.derivative((1,) + (0,) * len(pts))
    else:
        pts = state.coords(i)
        if state.radial:
            pts = [pts[0]] + [np.zeros_like(pts[0])] * (cfg.n - 1)
        phi[i] = cfg.epsilon * cfg.f(pts)
        psi[i] = cfg.epsilon * cfg.g(pts)
    state.push_level()
    return state


def _point_coords(state: GridState, region: tuple) -> list:
    """Full Cartesian coordinates (arrays of the region's shape); radial points lie on the x1-axis."""
    c = state.coords(region)
    if state.radial:
        r = c[0]
        return [r] + [np.zeros_like(r)] * (state.cfg.n - 1)
    shape = np.broadcast_shapes(*(v.shape for v in c))
    return [np.broadcast_to(v, shape).copy() for v in c]


# Fields are zeroed beyond r = t - 1 + CONE_MARGIN * h.  The exact solution already
# vanishes for r > t - 1; the margin keeps the cut away from the cone, where a hard
# cut would inject grid-scale noise into the slice samples.
CONE_MARGIN = 10
REGION_QUANTUM = 0.5


def cone_cut(cfg: ScenarioConfig, t: float) -> float:
    return t - 1.0 + CONE_MARGIN * cfg.h


def active_region(state: GridState, t: float) -> tuple:
    """Index box covering the cone ``r <= t - 1`` plus stencil margin (whole grid when not cone-limited)."""
    cfg = state.cfg
    if not cfg.zero_outside_cone or cfg.mms is not None:
        return state.interior
    reach = cone_cut(cfg, t) + 2.0 * HALO * cfg.h
    out = []
    for a in state.axes:
        if state.radial:
            hi = int(np.searchsorted(a, reach, side="right"))
            out.append(slice(HALO, HALO + max(min(hi + 1, len(a)), 1)))
        else:
            lo = int(np.searchsorted(a, -reach, side="left"))
            hi = int(np.searchsorted(a, reach, side="right"))
            lo, hi = max(lo - 1, 0), min(hi + 1, len(a))
            out.append(slice(HALO + lo, HALO + hi))
    return tuple(out)


class BackgroundCache:
    """Metric data on the active region, memoised per (time, region)."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self._store: dict = {}

    def get(self, state: GridState, t: float, region: tuple) -> Background:
        if self.cfg.metric.is_flat and self.cfg.metric.kind != "tabulated":
            return Background.minkowski(self.cfg.n)
        key = (round(t, 12), tuple((s.start, s.stop) for s in region))
        if key not in self._store:
            pts = _point_coords(state, region)
            tt = np.full(pts[0].shape, t)
            if self.cfg.metric.kind == "perturbed":
                up, ch, con, _ = metric_values(self.cfg.metric, tt, pts, check=False)
                bg = Background(self.cfg.n, False, up, con, ch)
            else:
                bg = Background.from_sample(sample_metric(self.cfg.metric, tt, pts, check=False))
            if len(self._store) > 4:
                self._store.pop(next(iter(self._store)))
            self._store[key] = bg
        return self._store[key]


def spatial_derivatives(state: GridState, phi: np.ndarray, psi: np.ndarray, region: tuple):
    """First derivatives ``d1`` and second derivatives ``d2`` (with ``d2[0][0]`` unset)."""
    cfg = state.cfg
    h = cfg.h
    acc = cfg.accuracy
    nd = len(state.axes)
    n1 = cfg.n + 1
    unit = lambda ax, k: tuple(k if a == ax else 0 for a in range(nd))  # noqa: E731
    zero = 0.0
    if state.radial:
        r = state.coords(region)[0]
        ur = partial(phi, unit(0, 1), h, region, acc)
        urr = partial(phi, unit(0, 2), h, region, acc)
        psr = partial(psi, unit(0, 1), h, region, acc)
        d1 = [psi[region], ur] + [zero] * (n1 - 2)
        d2 = [[zero] * n1 for _ in range(n1)]
        d2[0][1] = d2[1][0] = psr
        d2[1][1] = urr
        for a in range(2, n1):
            d2[a][a] = ur / r
        return d1, d2
    d1 = [psi[region]] + [partial(phi, unit(ax, 1), h, region, acc) for ax in range(nd)]
    d2 = [[zero] * n1 for _ in range(n1)]
    for ax in range(nd):
        d2[0][ax + 1] = d2[ax + 1][0] = partial(psi, unit(ax, 1), h, region, acc)
        for bx in range(ax, nd):
            alpha = tuple(int(a == ax) + int(a == bx) for a in range(nd))
            d2[ax + 1][bx + 1] = d2[bx + 1][ax + 1] = partial(phi, alpha, h, region, acc)
    return d1, d2


def mms_forcing(cfg: ScenarioConfig, t: float, pts: list):
    """Left side of the equation evaluated on the exact solution at time ``t``."""
    if cfg.mms is None:
        return None
    ex = exact_solution(cfg)
    n1 = len(pts) + 1
    jet = ex.jet(np.full(pts[0].shape, t), pts, 2)
    unit = [tuple(int(i == a) for i in range(n1)) for a in range(n1)]
    d1 = [jet.derivative(unit[a]) for a in range(n1)]
    d2 = [[jet.derivative(tuple(p + q for p, q in zip(unit[a], unit[b]))) for b in range(n1)] for a in range(n1)]
    if cfg.metric.is_flat:
        bg = Background.minkowski(cfg.n)
    else:
        bg = Background.from_sample(sample_metric(cfg.metric, np.full(pts[0].shape, t), pts, check=False))
    return operator(d1, d2, bg, cfg.nonlinearity)


class Stepper:
    """Classical four-stage Runge-Kutta on the halo-padded grid."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.backgrounds = BackgroundCache(cfg)
        self.guard_max = 0.0

    def rhs(self, state: GridState, phi: np.ndarray, psi: np.ndarray, t: float, region: tuple):
        cfg = self.cfg
        radial = state.radial
        fill_halo(phi, cfg.boundary, radial)
        fill_halo(psi, cfg.boundary, radial)
        d1, d2 = spatial_derivatives(state, phi, psi, region)
        bg = self.backgrounds.get(state, t, region)
        forcing = None
        if cfg.mms is not None:
            forcing = mms_forcing(cfg, t, _point_coords(state, region))
        acc, A, W = acceleration(d1, d2, bg, cfg.nonlinearity, forcing)
        check_guard(A, W, t)
        self.guard_max = max(self.guard_max, float(np.max(np.abs(np.asarray(A) + 1.0))), float(np.max(np.abs(np.asarray(W) - 1.0))))
        return psi[region].copy(), np.broadcast_to(acc, psi[region].shape)

    def step(self, state: GridState) -> GridState:
        cfg = self.cfg
        dt = cfg.dt
        t = state.t
        # the region only grows in whole units of REGION_QUANTUM so that consecutive
        # steps share it and the end-of-step background is reused by the next step
        region = active_region(state, REGION_QUANTUM * math.ceil((t + dt) / REGION_QUANTUM))
        phi0, psi0 = state.phi, state.psi
        k_phi, k_psi = [], []
        stages = ((0.0, 0.0), (0.5, 0.5), (0.5, 0.5), (1.0, 1.0))
        for i, (c_t, c_y) in enumerate(stages):
            if i == 0:
                ph, ps = phi0, psi0
            else:
                ph, ps = phi0.copy(), psi0.copy()
                ph[region] += c_y * dt * k_phi[-1]
                ps[region] += c_y * dt * k_psi[-1]
            a, b = self.rhs(state, ph, ps, t + c_t * dt, region)
            k_phi.append(a)
            k_psi.append(b)
        new_phi, new_psi = phi0.copy(), psi0.copy()
        new_phi[region] += dt / 6.0 * (k_phi[0] + 2 * k_phi[1] + 2 * k_phi[2] + k_phi[3])
        new_psi[region] += dt / 6.0 * (k_psi[0] + 2 * k_psi[1] + 2 * k_psi[2] + k_psi[3])
        if not (np.all(np.isfinite(new_phi[region])) and np.all(np.isfinite(new_psi[region]))):
            sp, ss = state.sup_norms()
            raise BlowupError(f"non-finite values after t={t:.6g}", t, sp, ss)
        state.phi, state.psi = new_phi, new_psi
        state.t = t + dt
        state.steps += 1
        if cfg.zero_outside_cone and cfg.mms is None:
            zero_outside_cone(state)
        fill_halo(state.phi, cfg.boundary, state.radial)
        fill_halo(state.psi, cfg.boundary, state.radial)
        state.push_level()
        return state


def zero_outside_cone(state: GridState) -> None:
    """Zero both fields outside the cone (beyond the cut radius)."""
    i = state.interior
    mask = state.radius(i) >= cone_cut(state.cfg, state.t)
    mask = np.broadcast_to(mask, state.phi[i].shape)
    state.phi[i][mask] = 0.0
    state.psi[i][mask] = 0.0


def rhs(state: GridState, t: float | None = None):
    """Time derivative ``(phi_t, psi_t)`` of the current state on the interior."""
    st = Stepper(state.cfg)
    region = state.interior
    a, b = st.rhs(state, state.phi, state.psi, state.t if t is None else t, region)
    return a, np.array(b)


def step(state: GridState, stepper: Stepper | None = None) -> GridState:
    return (stepper or Stepper(state.cfg)).step(state)


# -- checkpoints -------------------------------------------------------------------

CHECKPOINT_MAGIC = "MEMBRANE-CHECKPOINT 1"


def save_checkpoint(state: GridState, path) -> None:
    """JSON header line followed by little-endian float64 (phi, psi) interiors per ring level."""
    i = state.interior
    header = {
        "magic": CHECKPOINT_MAGIC,
        "t": state.t,
        "steps": state.steps,
        "h": state.h,
        "shape": list(state.phi[i].shape),
        "domain": [[float(a[0]), float(a[-1])] for a in state.axes],
        "config_hash": state.cfg.digest(),
        "config": state.cfg.to_dict(),
        "level_times": [lv.t for lv in state.levels],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        for lv in state.levels:
            fh.write(np.ascontiguousarray(lv.phi[i], dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(lv.psi[i], dtype="<f8").tobytes())


def load_checkpoint(path) -> GridState:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    if header.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    cfg = ScenarioConfig.from_dict(header["config"])
    if cfg.digest() != header["config_hash"]:
        raise ValueError(f"{path}: config hash mismatch")
    axes = make_axes(cfg)
    shape = tuple(header["shape"])
    size = int(np.prod(shape))
    data = np.frombuffer(raw[nl + 1 :], dtype="<f8")
    nlev = len(header["level_times"])
    if data.size != 2 * nlev * size:
        raise ValueError(f"{path}: truncated checkpoint")
    state = GridState(cfg, axes, _empty(axes), _empty(axes), header["t"], header["steps"])
    i = state.interior
    for k, tk in enumerate(header["level_times"]):
        ph, ps = _empty(axes), _empty(axes)
        ph[i] = data[(2 * k) * size : (2 * k + 1) * size].reshape(shape)
        ps[i] = data[(2 * k + 1) * size : (2 * k + 2) * size].reshape(shape)
        state.levels.append(Level(tk, ph, ps))
    state.phi = state.levels[-1].phi.copy()
    state.psi = state.levels[-1].psi.copy()
    return state
