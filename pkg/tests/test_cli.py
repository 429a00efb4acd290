import json
from pathlib import Path

import pandas as pd
import pytest

import main
import reports

GOLDEN = Path(__file__).parent / "golden" / "report_schema.json"

SERRIN = """
[problem]
n = 2
F = 1
f0 = 0
f1 = 1
b = 0, 0

[run]
eps = 0.05
lambda_bar = 0.5
p0 = 0, 0

[resolution]
degree = 12
inner = 8
mid = 8
outer = 12
"""

TORSION_PROFILE = """
[problem]
n = 2
F = 1
f0 = 0
f1 = 1

[run]
lambda_bar = 0.5
p0 = 0, 0

[resolution]
degree = 8
"""


def _run(mode, config, out):
    return main.main([mode, "--config", str(config), "--out", str(out), "--quiet"])


def test_malformed_expression_exits_2(write_config, tmp_path, capsys):
    config = write_config(SERRIN.replace("f0 = 0", "f0 = x1 + y"))
    assert _run("solve", config, tmp_path / "out") == 2
    err = capsys.readouterr().err
    assert "UnknownIdentifier" in err
    assert "position 6" in err


def test_non_numeric_matrix_exits_2(write_config, tmp_path, capsys):
    config = write_config(SERRIN.replace("b = 0, 0", "b = 0, 0\nA = x1, 0; 0, 1"))
    assert _run("solve", config, tmp_path / "out") == 2
    assert "constant numeric matrix" in capsys.readouterr().err


def test_missing_fields_exit_2(write_config, tmp_path, capsys):
    config = write_config(SERRIN.replace("eps = 0.05\n", ""))
    assert _run("solve", config, tmp_path / "out") == 2
    assert "needs eps" in capsys.readouterr().err
    assert _run("solve", tmp_path / "absent.ini", tmp_path / "out") == 2


def test_supercritical_profile_exits_3(write_config, tmp_path, capsys):
    config = write_config(TORSION_PROFILE.replace("F = 1", "F = exp(u)").replace("0.5", "50"))
    assert _run("profile", config, tmp_path / "out") == 3
    assert "NoConvergence in radial.solve_phi" in capsys.readouterr().err


def test_profile_mode(write_config, tmp_path):
    out = tmp_path / "out"
    assert _run("profile", write_config(TORSION_PROFILE), out) == 0
    table = pd.read_csv(out / "profile.csv")
    assert list(table.columns) == ["r", "phi", "dphi", "ddphi", "W1", "W2"]
    assert table["phi"].iloc[0] == pytest.approx(0.125, abs=1e-10)
    payload = json.loads((out / "profile.json").read_text())
    assert payload["mode"] == "profile"
    assert payload["result"]["c_bar"] == pytest.approx(0.25, abs=1e-10)
    assert payload["result"]["degree_one_ratio"] == pytest.approx(1.0, abs=1e-9)


def test_hp_spectrum_mode(write_config, tmp_path):
    out = tmp_path / "out"
    assert _run("hp-spectrum", write_config(TORSION_PROFILE), out) == 0
    table = pd.read_csv(out / "hp_spectrum.csv")
    assert list(table["l"]) == list(range(9))
    assert table["multiplier"].to_numpy() == pytest.approx(0.25 * (table["l"].to_numpy() - 1), abs=1e-9)
    assert table["dtn"].to_numpy() == pytest.approx(table["l"].to_numpy())


def test_serrin_solve_is_reproducible(write_config, tmp_path):
    config = write_config(SERRIN)
    first, second = tmp_path / "a", tmp_path / "b"
    assert _run("solve", config, first) == 0
    assert _run("solve", config, second) == 0
    for name in ("solution.json", "report.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()

    solution = json.loads((first / "solution.json").read_text())
    assert solution["p"] == [0.0, 0.0]
    assert all(v == 0.0 for _, _, v in solution["B"])
    assert solution["c_bar"] == pytest.approx(0.25, abs=1e-10)
    report = json.loads((first / "report.json").read_text())
    assert report["result"]["certificate"]["certified"]
    assert report["config"]["tolerances"]["certify"] == 1e-6


def test_report_schema_is_stable(write_config, tmp_path):
    out = tmp_path / "out"
    assert _run("solve", write_config(SERRIN), out) == 0
    report = json.loads((out / "report.json").read_text())
    assert reports.key_paths(report) == json.loads(GOLDEN.read_text())


def test_verify_mode(write_config, tmp_path):
    solved = tmp_path / "solved"
    assert _run("solve", write_config(SERRIN), solved) == 0
    config = write_config(f"[run]\nsolution = {solved / 'solution.json'}\n", name="verify.ini")
    out = tmp_path / "verify"
    assert _run("verify", config, out) == 0
    report = json.loads((out / "verify.json").read_text())["result"]
    assert report["certified"]
    assert report["provenance_match"]


def test_verify_rejects_unreadable_solution(write_config, tmp_path, capsys):
    bad = tmp_path / "broken.json"
    bad.write_text("{not json", encoding="utf-8")
    config = write_config(f"[run]\nsolution = {bad}\n", name="verify.ini")
    assert _run("verify", config, tmp_path / "out") == 2
    assert "cannot read solution" in capsys.readouterr().err


def test_scan_mode(write_config, tmp_path):
    config = write_config(
        """
[problem]
n = 2
F = 1
f0 = x1
f1 = exp(-(x1^2 + x2^2)/2)

[run]
variant = torsion
kappa = 0.5
scan_lower = 1, -1
scan_upper = 3, 1
scan_points = 4
"""
    )
    out = tmp_path / "out"
    assert _run("scan", config, out) == 0
    payload = json.loads((out / "scan.json").read_text())["result"]
    assert payload["lambda_bar"] == pytest.approx(1.0)
    assert [c["seed"] for c in payload["cells"]] == [pytest.approx([2.0, 0.0])]
    assert len(pd.read_csv(out / "scan.csv")) == 16


@pytest.mark.parametrize("key", ["degree", "outer"])
def test_non_positive_resolution_exits_2(write_config, tmp_path, capsys, key):
    config = write_config(SERRIN.replace(f"{key} = 12", f"{key} = 0"))
    assert _run("solve", config, tmp_path / "out") == 2
    assert f"{key} must be a positive integer" in capsys.readouterr().err


def test_find_point_mode(write_config, tmp_path):
    out = tmp_path / "out"
    assert _run("find-point", write_config(SERRIN), out) == 0
    payload = json.loads((out / "find_point.json").read_text())
    assert payload["mode"] == "find-point"
    assert payload["result"]["p"] == pytest.approx([0.0, 0.0], abs=1e-12)
    assert payload["result"]["c_bar"] == pytest.approx(0.25, abs=1e-10)


def test_sweep_mode(write_config, tmp_path):
    config = write_config(SERRIN.replace("eps = 0.05", "eps_list = 0.05, 0.025"))
    out = tmp_path / "out"
    assert _run("sweep", config, out) == 0
    payload = json.loads((out / "sweep.json").read_text())["result"]
    assert [row["eps"] for row in payload["rows"]] == [0.05, 0.025]
    assert all(row["error"] is None and row["certified"] for row in payload["rows"])
    assert all(row["c_bar"] == pytest.approx(0.25, abs=1e-10) for row in payload["rows"])
    assert {key: len(v) for key, v in payload["orders"].items()} == {
        "y_error": 1, "neumann_error": 1, "initial_defect": 1, "B_norm": 1,
    }
    assert len(payload["solutions"]) == 2
    table = pd.read_csv(out / "sweep.csv")
    assert len(table) == 2
    assert {"eps", "c_bar", "B_over_eps", "relative_defect"} <= set(table.columns)
