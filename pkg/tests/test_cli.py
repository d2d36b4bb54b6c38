import json
import os

import numpy as np
import pytest

from hyplab import cli
from hyplab.config import ExperimentConfig
from hyplab.errors import ConfigInvalid
from hyplab.report import VerificationReport, emit_trace, write_svg_line
from hyplab import harmonic as hm


def test_config_roundtrip_byte_identical():
    cfg = ExperimentConfig(refine=3)
    text = cfg.to_json()
    cfg2 = ExperimentConfig.from_json(text)
    assert cfg2.to_json() == text


def test_config_validation_names_field():
    with pytest.raises(ConfigInvalid) as exc:
        ExperimentConfig(refine=-1).validate()
    assert exc.value.field == "refine"
    with pytest.raises(ConfigInvalid) as exc:
        ExperimentConfig(suite="nope").validate()
    assert exc.value.field == "suite"
    with pytest.raises(ConfigInvalid) as exc:
        ExperimentConfig(qd_seeds=[[[0.0, 0.0]]]).validate()
    assert exc.value.field == "qd_seeds"


def test_report_duplicate_names_rejected():
    rep = VerificationReport("x")
    rep.add("a", "anchor", {"v": 1})
    with pytest.raises(ValueError):
        rep.add("a", "anchor", {"v": 2})


def test_report_conjunction_skips_exploratory():
    rep = VerificationReport("x")
    rep.add("a", "anchor", {}, passed=True)
    rep.add("b", "anchor", {}, passed=False, exploratory=True)
    assert rep.ok
    rep.add("c", "anchor", {}, passed=False)
    assert not rep.ok


def _toy_trace():
    tr = hm.EnergyTrace("z", 0.1)
    for z in (0, 0.1, -0.1, 0.1j, -0.1j, 0.1 + 0.1j, 0.1 - 0.1j,
              -0.1 + 0.1j, -0.1 - 0.1j):
        zz = complex(z)
        tr.add(zz, 1.0 + abs(zz) ** 2, ell=2.0 + zz.real,
               residual=1e-12, iterations=3)
    return tr


def test_emit_trace_deterministic(tmp_path):
    tr = _toy_trace()
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    emit_trace(tr, str(p1))
    emit_trace(tr, str(p2))
    b1 = p1.read_bytes()
    assert b1 == p2.read_bytes()
    header, *rows = b1.decode().strip().split("\n")
    assert header == "p1,p2,E,ell,residual,iterations"
    assert len(rows) == 9


def test_emit_trace_missing_directory(tmp_path):
    tr = _toy_trace()
    bad = tmp_path / "no" / "such" / "dir" / "t.csv"
    with pytest.raises(OSError) as exc:
        emit_trace(tr, str(bad))
    assert "t.csv" in str(exc.value)


def test_svg_writer(tmp_path):
    path = tmp_path / "p.svg"
    write_svg_line(str(path), [0, 1, 2], [1.0, 4.0, 2.0])
    body = path.read_text()
    assert body.startswith("<svg") and "polyline" in body


def test_cli_build_qd_liouville_sweep(tmp_path):
    mesh_path = str(tmp_path / "mesh.json")
    qd_path = str(tmp_path / "qd.json")
    rc = cli.main(["build-surface", "--refine", "2", "--out", mesh_path])
    assert rc == 0
    data = json.load(open(mesh_path))
    assert data["euler_characteristic"] == -2
    assert len(data["triangles"]) == 128

    rc = cli.main(["qd", "--seed-coeffs", "1", "--depth", "5",
                   "--samples", "50", "--out", qd_path])
    assert rc == 0
    qd_data = json.load(open(qd_path))
    assert qd_data["defect_report"]["defect"] <= 1e-2

    metric_path = str(tmp_path / "metric.json")
    rc = cli.main(["liouville", "--mesh", mesh_path, "--qd", qd_path,
                   "--z", "0.1,0.05", "--out", metric_path])
    assert rc == 0
    m = json.load(open(metric_path))
    assert m["curvature_max_dev"] <= 2e-2
    assert len(m["tensors"]["g11"]) == 128 * 3

    trace_path = str(tmp_path / "trace.csv")
    rc = cli.main(["sweep", "--mode", "t", "--mesh", mesh_path,
                   "--qd", qd_path, "--grid-size", "5", "--domain",
                   "circle", "--class", "0", "--samples", "128",
                   "--out", trace_path])
    assert rc == 0
    lines = open(trace_path).read().strip().split("\n")
    assert lines[0] == "p1,p2,E,ell,residual,iterations"
    assert len(lines) == 6


def test_cli_verify_exit_codes(tmp_path):
    report = str(tmp_path / "rep.json")
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(
        {"refine": 2, "qd_depth": 5, "defect_depth_sweep": [2, 3, 4, 5]}))
    rc = cli.main(["verify", "--suite", "fuchsian", "--config",
                   str(cfg_path), "--report", report])
    assert rc == 0
    data = json.load(open(report))
    assert data["ok"] is True
    assert all("anchor" in c for c in data["checks"])
    # timing sidecar exists and is separate from the deterministic report
    assert os.path.exists(str(tmp_path / "rep.timing.json"))


def test_cli_invalid_config_exit_code(tmp_path):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps({"refine": -1}))
    rc = cli.main(["verify", "--suite", "fuchsian",
                   "--config", str(cfg_path),
                   "--report", str(tmp_path / "r.json")])
    assert rc == 2
