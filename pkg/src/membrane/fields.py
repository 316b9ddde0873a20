"""Analytic test fields with exact derivatives (evaluated on jets)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .jets import Jet


@dataclass(frozen=True)
class AnalyticField:
    name: str
    fn: Callable[[Sequence[Jet]], Jet]

    def jet(self, t, x: Sequence, order: int) -> Jet:
        coords = Jet.coordinates([np.asarray(t, dtype=float)] + [np.asarray(v, dtype=float) for v in x], order)
        return self.fn(coords)

    def __call__(self, coords: Sequence[Jet]) -> Jet:
        return self.fn(coords)


def _r2(coords, center=None):
    xs = coords[1:]
    center = center or [0.0] * len(xs)
    acc = (xs[0] - center[0]) * (xs[0] - center[0])
    for x, c in zip(xs[1:], center[1:]):
        acc = acc + (x - c) * (x - c)
    return acc


def gaussian(amp: float = 1.0, width: float = 3.0, t0: float = 5.0, center=None, twidth: float = 6.0) -> AnalyticField:
    def fn(c):
        return (-(_r2(c, center) / width**2) - (c[0] - t0) * (c[0] - t0) / twidth**2).exp() * amp

    return AnalyticField(f"gaussian(w={width})", fn)


def wave_packet(amp: float = 1.0, k=(1.3, -0.7), omega: float = 0.9, width: float = 4.0) -> AnalyticField:
    """Plane wave times a Gaussian envelope."""

    def fn(c):
        phase = c[0] * (-omega)
        for a, kv in enumerate(k[: len(c) - 1]):
            phase = phase + c[a + 1] * kv
        return phase.cos() * (-(_r2(c) / width**2)).exp() * amp

    return AnalyticField("wave_packet", fn)


def polynomial(coeffs: Sequence[float] = (0.3, -0.2, 0.15, 0.05, -0.04, 0.02)) -> AnalyticField:
    """Low-degree polynomial in (t, x) with mixed terms."""

    def fn(c):
        t, x1 = c[0], c[1]
        x2 = c[2] if len(c) > 2 else c[1] * 0.0
        a = coeffs
        return t * a[0] + x1 * x1 * a[1] + t * x2 * a[2] + x1 * x2 * t * a[3] + t * t * x1 * a[4] + x2 * x2 * x2 * a[5]

    return AnalyticField("polynomial", fn)


def radial_wave(amp: float = 1.0, width: float = 1.5) -> AnalyticField:
    """Exact outgoing solution profile ``F(t - r) / r`` smoothed away from r = 0."""

    def fn(c):
        r2 = _r2(c)
        u = c[0] - (r2 + 1.0).sqrt()
        return (-(u * u) / width**2).exp() / (r2 + 1.0).sqrt() * amp

    return AnalyticField("radial_wave", fn)


def standard_corpus() -> list[AnalyticField]:
    """Five fields used by the identity property suites."""
    return [
        gaussian(),
        gaussian(amp=0.7, width=1.7, t0=9.0, center=[1.0, -2.0], twidth=3.0),
        wave_packet(),
        polynomial(),
        radial_wave(),
    ]


def cone_points(count: int, rng: np.random.Generator, n: int = 2, t_max: float = 40.0):
    """Random points in the cone ``r < t - 1`` with ``t`` in ``(2, t_max)``."""
    t = rng.uniform(2.0, t_max, count)
    r = (t - 1.0) * np.sqrt(rng.uniform(0.0, 1.0, count)) * 0.999
    if n == 1:
        return t, [r * rng.choice([-1.0, 1.0], count)]
    direction = rng.normal(size=(n, count))
    direction /= np.linalg.norm(direction, axis=0)
    return t, [r * direction[a] for a in range(n)]
