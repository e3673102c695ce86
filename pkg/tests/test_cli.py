import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from reggeflow import cli, models
from reggeflow.complex import load_mesh


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


@pytest.fixture
def mesh(tmp_path):
    def make(lattice, *extra):
        path = tmp_path / f"{lattice}.json"
        assert cli.run(["models", "generate", lattice, "--out", str(path), *extra]) == 0
        return path
    return make


def test_generated_mesh_round_trips(mesh):
    path = mesh("16cell", "--perturb", "0.01", "--seed", "3")
    top, m = load_mesh(path)
    ref_top, ref_m = models.generate_pcell_lattice(4)
    assert top.same_as(ref_top)
    np.testing.assert_array_equal(m.lengths_sq, models.perturb_metric(ref_m, 0.01, 3).lengths_sq)


def test_curvature_600_cell(mesh, tmp_path):
    out = tmp_path / "c"
    assert cli.run(["curvature", str(mesh("600cell")), "--out", str(out)]) == 0
    header, rows = read_csv(out / "edges.csv")
    assert header == ["edge_id", "v0", "v1", "length", "deficit", "dual_area", "rc_edge"]
    assert len(rows) == 720
    eps = np.array([float(r[4]) for r in rows])
    np.testing.assert_allclose(eps, 0.12839, atol=1e-5)
    _, duals = read_csv(out / "duals.csv")
    assert len(duals) == 1200
    _, verts = read_csv(out / "vertices.csv")
    assert len(verts) == 120
    summary = json.loads((out / "summary.json").read_text())
    assert summary["well_centered_fraction"] == 1.0
    assert summary["regge_action"] == pytest.approx(720 * 0.1283882205 / (8 * np.pi), rel=1e-9)


def test_curvature_flat_mesh_is_zero(mesh, tmp_path):
    out = tmp_path / "c"
    assert cli.run(["curvature", str(mesh("bcc")), "--out", str(out)]) == 0
    _, rows = read_csv(out / "edges.csv")
    assert max(abs(float(r[c])) for r in rows for c in (4, 6)) < 1e-12
    _, rows = read_csv(out / "duals.csv")
    assert max(abs(float(r[5])) for r in rows) < 1e-12
    _, rows = read_csv(out / "vertices.csv")
    assert max(abs(float(r[1])) for r in rows) < 1e-12


def test_csv_floats_round_trip(mesh, tmp_path):
    path = mesh("5cell", "--perturb", "0.05")
    out = tmp_path / "c"
    assert cli.run(["curvature", str(path), "--out", str(out)]) == 0
    _, rows = read_csv(out / "edges.csv")
    _, m = load_mesh(path)
    np.testing.assert_array_equal([float(r[3]) for r in rows], m.lengths)


def test_malformed_json_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dimension": 3, "tetrahedra": [[0,1,2,3]')
    assert cli.run(["curvature", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 1" in capsys.readouterr().err


def test_missing_mesh_exits_1(tmp_path):
    assert cli.run(["curvature", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 1


def test_usage_error_exits_2():
    assert cli.run(["flow"]) == 2
    assert cli.run(["curvature", "x.json", "--out", "o", "--bogus"]) == 2


def test_flow_edge_collapse_exit_3(mesh, tmp_path):
    out = tmp_path / "f"
    code = cli.run(["flow", str(mesh("5cell")), "--out", str(out), "--t-end", "1", "--stop-min-edge", "0.5"])
    assert code == 3
    header, rows = read_csv(out / "trajectory.csv")
    assert header == ["t", "edge_id", "length", "deficit", "rc_edge"]
    sheader, srows = read_csv(out / "summary.csv")
    assert sheader[:5] == ["t", "min_len", "max_len", "action", "termination"]
    assert len(rows) == 10 * len(srows)
    assert srows[-1][4] == "edge_collapse"
    times = [float(r[0]) for r in srows]
    assert all(b > a for a, b in zip(times, times[1:]))
    assert json.loads((out / "summary.json").read_text())["termination"] == "edge_collapse"


def test_flow_reached_end_exit_0_on_flat_mesh(mesh, tmp_path):
    out = tmp_path / "f"
    assert cli.run(["flow", str(mesh("bcc")), "--out", str(out), "--t-end", "0.5"]) == 0
    _, srows = read_csv(out / "summary.csv")
    assert srows[-1][4] == "reached_t_end"
    assert len({r[1] for r in srows}) == 1


def test_flow_matrix_singular_exit_5(mesh, tmp_path):
    assert cli.run(["flow", str(mesh("16cell")), "--out", str(tmp_path / "f"), "--t-end", "0.01"]) == 5


def test_flow_nonrealizable_exit_4(mesh, tmp_path):
    code = cli.run(["flow", str(mesh("5cell")), "--out", str(tmp_path / "f"), "--integrator", "explicit_euler",
                    "--dt", "0.01", "--dt-max", "0.01", "--stop-min-edge", "0", "--t-end", "1"])
    assert code == 4


def test_flow_config_file_and_unknown_keys(mesh, tmp_path):
    path = mesh("5cell")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"t_end": 0.002, "integrator": "rk4", "dt_initial": 0.001}))
    out = tmp_path / "f"
    assert cli.run(["flow", str(path), "--out", str(out), "--config", str(cfg)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["integrator"] == "rk4"
    assert summary["steps_accepted"] == 2
    cfg.write_text(json.dumps({"t_end": 0.1, "colour": "red"}))
    assert cli.run(["flow", str(path), "--out", str(out), "--config", str(cfg)]) == 2
    assert cli.run(["flow", str(path), "--out", str(out), "--dt", "-1"]) == 2


def test_flow_is_deterministic_and_thread_independent(mesh, tmp_path, monkeypatch):
    path = mesh("5cell", "--perturb", "0.02")
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run(["--threads", "1", "flow", str(path), "--out", str(a), "--t-end", "0.003"]) == 0
    monkeypatch.setenv("REGGE_FLOW_THREADS", "4")
    assert cli.run(["flow", str(path), "--out", str(b), "--t-end", "0.003"]) == 0
    for name in ("trajectory.csv", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    monkeypatch.setenv("REGGE_FLOW_THREADS", "zero")
    assert cli.run(["flow", str(path), "--out", str(b), "--t-end", "0.003"]) == 2


def test_stability(mesh, tmp_path, capsys):
    out = tmp_path / "s"
    assert cli.run(["stability", str(mesh("5cell")), "--out", str(out)]) == 0
    header, rows = read_csv(out / "spectrum.csv")
    assert header == ["index", "real", "imag"]
    assert len(rows) == 10
    reals = [float(r[1]) for r in rows]
    assert reals == sorted(reals, reverse=True)
    summary = json.loads((out / "stability.json").read_text())
    assert summary["n_eigenvalues"] == 10
    assert summary["n_positive_real"] == sum(x > 0 for x in reals)
    assert "10 eigenvalues" in capsys.readouterr().out


def test_stability_singular_exit_5(mesh, tmp_path):
    assert cli.run(["stability", str(mesh("16cell")), "--out", str(tmp_path / "s")]) == 5
    assert cli.run(["stability", str(mesh("bcc")), "--out", str(tmp_path / "s")]) == 5


def test_reproduce_s3_table(tmp_path):
    code = cli.run(["reproduce", "s3_table", "--out", str(tmp_path)])
    report = json.loads((tmp_path / "s3_report.json").read_text())
    assert code == (0 if report["pass"] else 1)
    assert report["deficits_5dp"] == {"5-cell": "2.59031", "16-cell": "1.35935", "600-cell": "0.12839"}
    header, rows = read_csv(tmp_path / "s3_table.csv")
    assert [r[0] for r in rows] == ["5-cell", "16-cell", "600-cell"]
    np.testing.assert_allclose([float(r[5]) for r in rows], [41.0, 20.5, 2.02], atol=0.1)
    assert "| 600-cell |" in (tmp_path / "s3_table.md").read_text()
    assert report["slope"] == pytest.approx(models.pcell_deviation_table().slope)


def test_reproduce_cylinder(tmp_path):
    code = cli.run(["reproduce", "cylinder", "--out", str(tmp_path)])
    report = json.loads((tmp_path / "cylinder_report.json").read_text())
    assert code == (0 if report["pass"] else 1)
    checks = {c["check"]: c for c in report["checks"]}
    assert checks["ds^2/dt"]["pass"]
    assert checks["a'/a + s'/s"]["pass"]
    assert checks["dr_eff^2/dt"]["target"] == -2.0
    header, rows = read_csv(tmp_path / "cylinder.csv")
    assert header == ["t", "s_sq", "a", "r_sq"]


def test_models_closed_form_and_cylinder_lattice(tmp_path):
    out = tmp_path / "cyl.csv"
    assert cli.run(["models", "closed-form", "cylinder", "--out", str(out), "--samples", "5"]) == 0
    header, rows = read_csv(out)
    assert header == ["t", "s_sq", "a", "r_sq"] and len(rows) == 5
    out = tmp_path / "p.csv"
    assert cli.run(["models", "closed-form", "600cell", "--out", str(out)]) == 0
    header, rows = read_csv(out)
    assert header == ["t", "ell_sq", "a_sq"]
    assert float(rows[0][1]) == 1.0
    out = tmp_path / "prisms.json"
    assert cli.run(["models", "generate", "cylinder", "--rings", "4", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert len(data["prisms"]) == 80


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "reggeflow.cli", "models", "generate", "5cell", "--out", str(tmp_path / "m.json")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "reggeflow.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "curvature" in proc.stdout
