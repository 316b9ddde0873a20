"""Cross-slice analysis: boundedness verdicts, decay fits, equivalence and foliation contrasts."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .hyperboloid import EnergyRecord

C_BOUND = 1.2
C_BOUND_PERTURBED = 1.3
SLOPE_WINDOW = (-0.1, 0.05)
DECAY_WINDOW = (-0.3, 0.1)
MIN_SPAN = 5.0
MIN_FIT_SLICES = 8
FLOOR = 1e-13
SKIP_FRACTION = 0.1


@dataclass
class RunSeries:
    """Energy records of one run, ordered in ``s``."""

    records: list
    scenario_hash: str = ""
    s0: float = 3.0
    resolution: dict = field(default_factory=dict)

    def __post_init__(self):
        s = [r.s for r in self.records]
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("records must be strictly increasing in s")

    @property
    def s(self) -> np.ndarray:
        return np.array([r.s for r in self.records], dtype=float)

    def energy(self, m: int, generalized: bool = False) -> np.ndarray:
        return np.array([(r.Et if generalized else r.E)[m] for r in self.records], dtype=float)

    def observable(self, name: str, order: int = 0) -> np.ndarray:
        return np.array([r.observables[name][order] for r in self.records], dtype=float)

    @classmethod
    def from_rows(cls, rows: list[dict], **kw) -> "RunSeries":
        """Rebuild from CSV rows (see :func:`membrane.hyperboloid.read_records_csv`)."""
        recs = []
        for row in rows:
            E = _collect(row, "E")
            Et = _collect(row, "Et")
            obs = {}
            for name in ("bad", "good", "second", "tt"):
                vals = _collect(row, f"{name}_J")
                if vals:
                    obs[name] = vals
            recs.append(
                EnergyRecord(
                    s=row["s"],
                    E=E,
                    E_by_order=list(np.diff([0.0] + E)),
                    Et=Et,
                    ratio=_collect(row, "ratio"),
                    flux=row.get("flux", float("nan")),
                    residual=row.get("residual", float("nan")),
                    sobolev_ratio=row.get("sobolev_ratio", float("nan")),
                    observables=obs,
                    frame_identity=_collect(row, "frame_identity_I"),
                    frame_identity_scale=[],
                    lemma_second_ratio=[],
                    npoints=int(row.get("npoints", 0)),
                    E_flat=_collect(row, "Eflat"),
                )
            )
        return cls(recs, **kw)


def _collect(row: dict, prefix: str) -> list:
    out = []
    k = 0
    while f"{prefix}{k}" in row:
        v = row[f"{prefix}{k}"]
        if isinstance(v, float) and math.isnan(v):
            break
        out.append(float(v))
        k += 1
    return out


@dataclass
class Verdict:
    claim: str
    anchor: str  # the analytic statement this verdict tests, in words
    statistic: dict
    threshold: dict
    status: str  # "pass", "fail" or "inconclusive"
    notes: str = ""
    sensitivity: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return asdict(self)

    def line(self) -> str:
        stats = ", ".join(f"{k}={_fmt(v)}" for k, v in self.statistic.items())
        return f"[{self.status.upper():12s}] {self.claim}: {stats}" + (f" ({self.notes})" if self.notes else "")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def loglog_slope(s: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of ``log y`` against ``log s`` and its standard error."""
    x = np.log(np.asarray(s, dtype=float))
    z = np.log(np.asarray(y, dtype=float))
    if x.size < 2:
        return float("nan"), float("nan")
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, z, rcond=None)
    slope = float(coef[0])
    if x.size > 2:
        resid = z - A @ coef
        sigma2 = float(resid @ resid) / (x.size - 2)
        sxx = float(np.sum((x - x.mean()) ** 2))
        err = math.sqrt(sigma2 / sxx) if sxx > 0 else float("nan")
    else:
        err = 0.0
    return slope, err


def _fit_window(s: np.ndarray) -> np.ndarray:
    """Mask dropping the first 10% of the s-range."""
    lo = s[0] + SKIP_FRACTION * (s[-1] - s[0])
    return s >= lo


def boundedness_verdict(series: RunSeries, m: int, c_bound: float = C_BOUND) -> Verdict:
    claim = f"uniform bound on E_{m}"
    anchor = "small-data solutions have energies bounded uniformly in the hyperboloidal time"
    thr = {"max_ratio": c_bound, "slope_min": SLOPE_WINDOW[0], "slope_max": SLOPE_WINDOW[1]}
    s = series.s
    if s.size < 4:
        return Verdict(claim, anchor, {"slices": int(s.size)}, thr, "inconclusive", "fewer than 4 slices")
    E = series.energy(m)
    span = s[-1] / series.s0
    if span < MIN_SPAN:
        return Verdict(claim, anchor, {"span": float(span)}, thr, "inconclusive", f"s_max/s0 = {span:.3g} < {MIN_SPAN}")
    if E[0] <= 0:
        if np.all(E == 0):
            return Verdict(claim, anchor, {"max_ratio": 0.0, "tail_slope": 0.0}, thr, "pass", "zero field")
        return Verdict(claim, anchor, {"first": float(E[0])}, thr, "inconclusive", "first energy vanishes")
    if not np.all(np.isfinite(E)):
        return Verdict(claim, anchor, {"max_ratio": float("nan")}, thr, "fail", "non-finite energies")
    ratio = float(np.max(E) / E[0])
    tail = s >= s[0] + 0.5 * (s[-1] - s[0])
    slope, err = loglog_slope(s[tail], E[tail]) if np.all(E[tail] > 0) else (float("nan"), float("nan"))
    ok = ratio <= c_bound and SLOPE_WINDOW[0] <= slope <= SLOPE_WINDOW[1]
    return Verdict(
        claim,
        anchor,
        {"max_ratio": ratio, "tail_slope": slope, "slope_stderr": err, "s_of_max": float(s[int(np.argmax(E))])},
        thr,
        "pass" if ok else "fail",
    )


@dataclass
class Fit:
    exponent: float
    stderr: float
    status: str  # "ok" or "inconclusive"
    note: str = ""


def decay_fit(series: RunSeries | tuple, observable: str = "good", order: int = 0) -> Fit:
    """Power-law exponent of an observable over ``s`` (first 10% of the range skipped).

    ``series`` may also be a pair ``(s, values)``.
    """
    if isinstance(series, RunSeries):
        s, y = series.s, series.observable(observable, order)
    else:
        s, y = (np.asarray(v, dtype=float) for v in series)
    if s.size < MIN_FIT_SLICES:
        return Fit(float("nan"), float("nan"), "inconclusive", f"only {s.size} slices (need {MIN_FIT_SLICES})")
    keep = _fit_window(s)
    s, y = s[keep], y[keep]
    if np.any(~np.isfinite(y)) or np.any(np.abs(y) < FLOOR):
        return Fit(float("nan"), float("nan"), "inconclusive", "observable at numerical floor")
    slope, err = loglog_slope(s, np.abs(y))
    return Fit(slope, err, "ok")


def decay_verdict(series: RunSeries, observable: str, order: int = 0, window=DECAY_WINDOW) -> Verdict:
    names = {
        "bad": "s-weighted derivatives",
        "good": "t-weighted good derivatives",
        "second": "ts-weighted frame second derivatives",
        "tt": "(s^3/t)-weighted second time derivative",
    }
    fit = decay_fit(series, observable, order)
    claim = f"decay of {names.get(observable, observable)} (|J| = {order})"
    anchor = "pointwise decay bounds implied by the energy bounds"
    thr = {"exponent_min": window[0], "exponent_max": window[1]}
    if fit.status != "ok":
        return Verdict(claim, anchor, {"exponent": fit.exponent}, thr, "inconclusive", fit.note)
    ok = window[0] <= fit.exponent <= window[1]
    return Verdict(claim, anchor, {"exponent": fit.exponent, "stderr": fit.stderr}, thr, "pass" if ok else "fail")


def equivalence_ratio(series: RunSeries, m: int | None = None) -> tuple[float, float]:
    """``max_s |Et_m/E_m - 1|`` (over all m when ``m`` is None) and the s where it occurs."""
    best, where = 0.0, float("nan")
    for r in series.records:
        orders = range(len(r.E)) if m is None else [m]
        for k in orders:
            e, et = r.E[k], r.Et[k]
            dev = abs(et / e - 1.0) if e > 0 else 0.0
            if dev > best:
                best, where = dev, r.s
    return best, where


def equivalence_envelope(s, eps: float, delta: float, gamma: float, c_eps: float = 1.0, c_delta: float = 1.0) -> np.ndarray:
    """Predicted shape ``c_delta delta s^{-1-gamma} + c_eps eps^2 s^{-2}``."""
    s = np.asarray(s, dtype=float)
    return c_delta * delta * s ** (-1.0 - gamma) + c_eps * eps**2 * s**-2


@dataclass
class FoliationContrast:
    hyperboloidal_slope: float
    constant_t_slope: float
    contrast: float
    m: int


def foliation_comparison(series: RunSeries, m: int = 0) -> FoliationContrast:
    """Log-log slopes of the hyperboloidal energy in ``s`` and the constant-t energy in ``t``."""
    recs = [r for r in series.records if len(r.E_flat) > m]
    if not recs:
        raise ValueError("series has no constant-t energy column")
    s = np.array([r.s for r in recs])
    E = np.array([r.E[m] for r in recs])
    F = np.array([r.E_flat[m] for r in recs])
    keep = _fit_window(s)
    hs, _ = loglog_slope(s[keep], E[keep]) if np.all(E[keep] > 0) else (0.0, 0.0)
    fs, _ = loglog_slope(s[keep], F[keep]) if np.all(F[keep] > 0) else (0.0, 0.0)
    return FoliationContrast(hs, fs, fs - hs, m)


def sobolev_verdict(series: RunSeries, s_ref: float | None = None, factor: float = 2.0) -> Verdict:
    claim = "bounded weighted Sobolev ratio"
    anchor = "t^{n/2}|phi| is controlled by boost-derivative L2 norms on the slice"
    s = series.s
    ratios = np.array([r.sobolev_ratio for r in series.records])
    s_ref = series.s0 + 2.0 if s_ref is None else s_ref
    thr = {"factor": factor}
    if s.size < 2:
        return Verdict(claim, anchor, {}, thr, "inconclusive", "fewer than 2 slices")
    k = int(np.argmin(np.abs(s - s_ref)))
    ref, last = ratios[k], ratios[-1]
    if ref <= 0:
        st = "pass" if last <= 0 else "inconclusive"
        return Verdict(claim, anchor, {"ref": float(ref), "last": float(last)}, thr, st, "zero reference ratio")
    q = float(last / ref)
    return Verdict(claim, anchor, {"ratio_last_over_ref": q, "s_ref": float(s[k]), "s_last": float(s[-1])}, thr, "pass" if q <= factor else "fail")


def identity_order(coarse: RunSeries, fine: RunSeries) -> tuple[float, float, float]:
    """Observed order of the energy-identity residual between two resolutions (median over shared s)."""
    rc = {round(r.s, 9): r.residual for r in coarse.records if np.isfinite(r.residual)}
    rf = {round(r.s, 9): r.residual for r in fine.records if np.isfinite(r.residual)}
    common = sorted(set(rc) & set(rf))
    if not common:
        return float("nan"), float("nan"), float("nan")
    ec = np.array([rc[s] for s in common])
    ef = np.array([rf[s] for s in common])
    nc, nf = float(np.linalg.norm(ec)), float(np.linalg.norm(ef))
    order = math.log2(nc / nf) if nf > 0 and nc > 0 else float("inf")
    return order, nc, nf


def resolution_sensitivity(coarse: Verdict, fine: Verdict) -> str:
    if coarse.status == fine.status:
        return "stable"
    return f"resolution-sensitive (coarse {coarse.status}, fine {fine.status})"


def standard_verdicts(series: RunSeries, perturbed: bool = False) -> list[Verdict]:
    c = C_BOUND_PERTURBED if perturbed else C_BOUND
    out = []
    m_max = len(series.records[0].E) - 1 if series.records else -1
    for m in range(m_max + 1):
        out.append(boundedness_verdict(series, m, c))
    if series.records and series.records[0].observables:
        for name in ("bad", "good", "second", "tt"):
            out.append(decay_verdict(series, name, 0))
    out.append(sobolev_verdict(series))
    return out


def write_verdicts(verdicts: list[Verdict], path) -> None:
    with open(path, "w") as fh:
        json.dump([v.to_dict() for v in verdicts], fh, indent=1, default=float)


def read_verdicts(path) -> list[Verdict]:
    with open(path) as fh:
        return [Verdict(**d) for d in json.load(fh)]
