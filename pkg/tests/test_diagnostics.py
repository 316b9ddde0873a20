from __future__ import annotations

import numpy as np
import pytest

from membrane.diagnostics import (
    RunSeries,
    Verdict,
    boundedness_verdict,
    decay_fit,
    decay_verdict,
    equivalence_envelope,
    equivalence_ratio,
    foliation_comparison,
    identity_order,
    loglog_slope,
    read_verdicts,
    resolution_sensitivity,
    sobolev_verdict,
    standard_verdicts,
    write_verdicts,
)
from membrane.hyperboloid import EnergyRecord, read_records_csv, write_records_csv


def _record(s, E, Et=None, obs=None, sob=0.1, flat=None, residual=float("nan")):
    E = list(E)
    Et = list(Et) if Et is not None else list(E)
    return EnergyRecord(
        s=float(s), E=E, E_by_order=list(np.diff([0.0] + E)), Et=Et,
        ratio=[et / e - 1 if e else 0.0 for et, e in zip(Et, E)], flux=0.0, residual=residual,
        sobolev_ratio=sob, observables=obs or {}, frame_identity=[], frame_identity_scale=[],
        lemma_second_ratio=[], npoints=10, E_flat=flat or [],
    )


def _series(fn, s0=3.0, s=None, **kw):
    s = np.arange(4.0, 15.01, 0.5) if s is None else s
    return RunSeries([_record(v, fn(v), **kw) for v in s], "hash", s0)


def test_slope_recovers_power_law():
    s = np.geomspace(1, 100, 30)
    slope, err = loglog_slope(s, 3.0 * s**-0.7)
    assert slope == pytest.approx(-0.7, abs=1e-12)
    assert err < 1e-10


def test_constant_series_passes():
    v = boundedness_verdict(_series(lambda s: [1.0, 2.0]), 1)
    assert v.passed and v.statistic["max_ratio"] == 1.0


def test_growing_series_fails():
    # negative control: E ~ s^0.5 grows past the bound and the slope window
    v = boundedness_verdict(_series(lambda s: [(s / 4.0) ** 0.5]), 0)
    assert v.status == "fail"
    assert v.statistic["tail_slope"] == pytest.approx(0.5, abs=1e-9)


def test_slow_growth_fails_on_slope_only():
    v = boundedness_verdict(_series(lambda s: [(s / 4.0) ** 0.1]), 0, c_bound=10.0)
    assert v.status == "fail" and v.statistic["max_ratio"] < 10.0


def test_short_span_inconclusive():
    v = boundedness_verdict(_series(lambda s: [1.0], s=np.arange(4.0, 9.0, 0.5)), 0)
    assert v.status == "inconclusive"
    v = boundedness_verdict(_series(lambda s: [1.0], s=np.array([4.0, 15.0, 16.0])), 0)
    assert v.status == "inconclusive"


def test_zero_field_passes():
    assert boundedness_verdict(_series(lambda s: [0.0]), 0).passed


def test_nonmonotone_s_rejected():
    with pytest.raises(ValueError):
        RunSeries([_record(5.0, [1.0]), _record(4.0, [1.0])])


def test_decay_fit_and_verdicts():
    obs = lambda s: {"bad": [s**-0.05], "good": [s**-1.0], "second": [1.0], "tt": [1e-20]}  # noqa: E731
    s = np.arange(4.0, 15.01, 0.5)
    ser = RunSeries([_record(v, [1.0], obs=obs(v)) for v in s], "", 3.0)
    assert decay_fit(ser, "bad").exponent == pytest.approx(-0.05, abs=1e-12)
    assert decay_verdict(ser, "bad").passed
    assert decay_verdict(ser, "good").status == "fail"
    assert decay_verdict(ser, "tt").status == "inconclusive"
    assert decay_fit((s[:5], s[:5]), "bad").status == "inconclusive"


def test_sobolev_verdict():
    ok = _series(lambda s: [1.0])
    assert sobolev_verdict(ok).passed
    s = np.arange(4.0, 15.01, 0.5)
    bad = RunSeries([_record(v, [1.0], sob=0.1 * v) for v in s], "", 3.0)
    assert sobolev_verdict(bad).status == "fail"


def test_equivalence_and_envelope():
    ser = _series(lambda s: [1.0, 2.0], Et=None)
    assert equivalence_ratio(ser)[0] == 0.0
    s = np.arange(4.0, 15.01, 0.5)
    ser = RunSeries([_record(v, [1.0], Et=[1.0 + 0.01 / v]) for v in s], "", 3.0)
    dev, where = equivalence_ratio(ser, 0)
    assert dev == pytest.approx(0.0025) and where == 4.0
    env = equivalence_envelope([1.0, 4.0], eps=0.1, delta=0.01, gamma=0.5)
    np.testing.assert_allclose(env, [0.01 + 0.01, 0.01 * 4**-1.5 + 0.01 / 16])


def test_foliation_contrast():
    s = np.arange(4.0, 15.01, 0.5)
    ser = RunSeries([_record(v, [1.0], flat=[v**-0.5]) for v in s], "", 3.0)
    fc = foliation_comparison(ser)
    assert fc.hyperboloidal_slope == pytest.approx(0.0, abs=1e-12)
    assert fc.constant_t_slope == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        foliation_comparison(_series(lambda s: [1.0]))


def test_identity_order():
    s = np.arange(4.0, 8.01, 0.5)
    coarse = RunSeries([_record(v, [1.0], residual=4e-6 * v) for v in s], "", 3.0)
    fine = RunSeries([_record(v, [1.0], residual=1e-6 * v) for v in s], "", 3.0)
    order, nc, nf = identity_order(coarse, fine)
    assert order == pytest.approx(2.0)
    assert nc == pytest.approx(4 * nf)


def test_verdict_roundtrip(tmp_path):
    vs = standard_verdicts(_series(lambda s: [1.0, 1.0 + 0.001 * s]))
    write_verdicts(vs, tmp_path / "v.json")
    back = read_verdicts(tmp_path / "v.json")
    assert [v.status for v in back] == [v.status for v in vs]
    assert all(isinstance(v, Verdict) and v.anchor for v in back)
    assert "PASS" in vs[0].line()
    assert resolution_sensitivity(vs[0], vs[0]) == "stable"


def test_series_from_csv_rows(tmp_path):
    recs = [_record(v, [1.0, 2.0], obs={"bad": [0.5], "good": [0.4], "second": [0.3], "tt": [0.2]}) for v in (4.0, 5.0)]
    write_records_csv(recs, tmp_path / "r.csv")
    ser = RunSeries.from_rows(read_records_csv(tmp_path / "r.csv"))
    np.testing.assert_array_equal(ser.energy(1), [2.0, 2.0])
    assert ser.observable("tt")[0] == 0.2
