import csv
import json
import os
import subprocess
import sys

import pytest

from renorm_lab import cli
from renorm_lab.reports import SCHEMA


def run(*argv):
    return cli.run([str(a) for a in argv])


def test_graphs_order7_table(tmp_path):
    out = tmp_path / "table.json"
    assert run("graphs", "--order", 7, "--emit", out) == 0
    doc = json.loads(out.read_text())
    assert doc["config"]["schema"] == SCHEMA
    assert doc["config"]["params"]["order"] == 7
    rows = doc["result"]["rows"]
    assert rows and all(r["match"] for r in rows)
    row = next(r for r in rows if r["class"] == "<5,1,1>")
    assert row["coefficient"] == row["paper"] == "-2*s*r"


def test_identical_config_gives_identical_bytes(tmp_path):
    out = tmp_path / "ids.json"
    assert run("verify", "--suite", "identities", "--seed", 7, "--sites", 6, "--report", out) == 0
    first = out.read_bytes()
    assert run("verify", "--suite", "identities", "--seed", 7, "--sites", 6, "--report", out) == 0
    assert out.read_bytes() == first
    rows = json.loads(first)["result"]["rows"]
    assert {"check", "residual", "tolerance", "pass"} <= set(rows[0])


def test_unknown_flag_is_config_error(tmp_path):
    assert run("graphs", "--order", 7, "--emit", tmp_path / "t.json", "--bogus") == 2
    assert os.listdir(tmp_path) == []


def test_seed_is_mandatory_for_stochastic_suites(tmp_path):
    assert run("probability", "--suite", "bonami") == 2
    assert run("simulate", "--out", tmp_path / "d.json") == 2
    assert run("extstate") == 2
    assert os.listdir(tmp_path) == []


def test_threads_env_validated(monkeypatch):
    monkeypatch.setenv("RENORM_LAB_THREADS", "0")
    assert run("verify-offsets") == 2
    monkeypatch.setenv("RENORM_LAB_THREADS", "two")
    assert run("verify-offsets") == 2


def test_failed_check_exit_code(tmp_path):
    out = tmp_path / "off.json"
    assert run("verify-offsets", "--eta-shift", 1, "--no-control", "--report", out) == 1
    assert json.loads(out.read_text())["pass"] is False


def test_numerical_failure_exit_code():
    # a radius-4 free kernel leaves a cubic tail above 1e-8
    assert run("constants", "--d", 5, "--R", 4) == 3


def test_config_error_from_library():
    assert run("kernel", "--d", 3, "--geometry", "torus", "--mass", 0) == 2


def test_kernel_csv(tmp_path):
    out = tmp_path / "k.csv"
    assert run("kernel", "--d", 3, "--R", 2, "--format", "csv", "--out", out) == 0
    rows = list(csv.reader(out.read_text().splitlines()))
    assert rows[0] == ["n1", "n2", "n3", "value"]
    assert rows[1][:3] == ["0", "0", "0"]
    assert float(rows[1][3]) == pytest.approx(0.25273100985865554, abs=1e-12)
    assert len(rows) == 11


def test_constants_json(tmp_path):
    out = tmp_path / "c.json"
    assert run("constants", "--d", 3, "--geometry", "torus", "--L", 8, "--mass", 0.5,
               "--out", out) == 0
    res = json.loads(out.read_text())["result"]
    assert {"d", "sigma", "rho", "eta", "residual_M0", "residual_N0"} <= set(res)
    assert res["residual_M0"] < 1e-8


def test_probability_report(tmp_path):
    out = tmp_path / "p.json"
    assert run("probability", "--suite", "bonami", "--trials", 20, "--m", 8, "--smax", 3,
               "--seed", 42, "--report", out) == 0
    res = json.loads(out.read_text())["result"]
    assert len(res["ratios"]) == 20 and res["max_ratio"] <= 1


def test_verify_offsets_passes():
    assert run("verify-offsets") == 0


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "renorm_lab.cli", "graphs", "--order", "6",
                           "--emit", str(tmp_path / "t6.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "order 6" in proc.stderr
