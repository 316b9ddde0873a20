from __future__ import annotations

import json

import pytest

from membrane.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main, metric_growth_exponent, verify_metric
from membrane.metrics import MetricConfig

TINY = """[scenario]
mode = "radial"
points = 256
epsilon = {eps}
s_max = 5.0
ds = 0.5
m_diag = 1
accuracy = 8
flat_slices = true
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY.format(eps=0.05))
    return p


def test_verify_frames_and_nullform(capsys):
    assert main(["verify", "frames"]) == EXIT_OK
    assert main(["verify", "nullform"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("ok") >= 5


def test_check_metric_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.cfg"
    good.write_text('[metric]\nkind = "perturbed"\ndelta = 0.001\ngamma = 0.5\n')
    bad = tmp_path / "bad.cfg"
    bad.write_text('[metric]\nkind = "perturbed"\ndelta = 0.001\ngamma = 0.5\nenvelope = "violating"\n')
    assert main(["check-metric", str(good)]) == EXIT_OK
    assert main(["check-metric", str(bad)]) == EXIT_CONFIG
    assert "FAIL" in capsys.readouterr().out


def test_violating_growth_exponent():
    _, rep = verify_metric(MetricConfig(kind="perturbed", delta=1e-3, envelope="violating"), s_range=(10, 100))
    assert metric_growth_exponent(rep) >= 0.4


def test_simulate_report_compare(tiny, tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["--out", str(out), "simulate", str(tiny)]) == EXIT_OK
    bundle = out / "tiny"
    for name in ("config.cfg", "records.csv", "records.json", "verdicts.json", "provenance.json"):
        assert (bundle / name).exists()
    prov = json.loads((bundle / "provenance.json").read_text())
    assert prov["complete"] and prov["last_s"] == 5.0
    assert main(["report", str(bundle)]) == EXIT_OK
    assert (bundle / "report.md").exists() and (bundle / "plots" / "energy.gp").exists()
    assert "inconclusive" in (bundle / "report.md").read_text()  # s range too short for a verdict
    assert main(["compare", str(bundle), str(bundle)]) == EXIT_OK
    assert "E0_growth" in capsys.readouterr().out


def test_coarse_resolution_bundle(tiny, tmp_path):
    out = tmp_path / "runs"
    assert main(["--out", str(out), "--resolution", "coarse", "simulate", str(tiny)]) == EXIT_OK
    prov = json.loads((out / "tiny_coarse" / "provenance.json").read_text())
    assert prov["grid"]["points"] == 128


def test_degenerate_run_exits_2(tmp_path, capsys):
    p = tmp_path / "big.cfg"
    p.write_text(TINY.format(eps=3.0))
    out = tmp_path / "runs"
    assert main(["--out", str(out), "simulate", str(p)]) == EXIT_NUMERIC
    prov = json.loads((out / "big" / "provenance.json").read_text())
    assert not prov["complete"] and "DegeneracyError" in prov["error"]
    assert "degeneracy guard" in capsys.readouterr().err


def test_config_errors_exit_1(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("[scenario]\nwhat = 1\n")
    assert main(["simulate", str(p)]) == EXIT_CONFIG
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_out_env(tiny, tmp_path, monkeypatch):
    monkeypatch.setenv("MEMBRANE_OUT", str(tmp_path / "envout"))
    assert main(["simulate", str(tiny)]) == EXIT_OK
    assert (tmp_path / "envout" / "tiny" / "records.csv").exists()
