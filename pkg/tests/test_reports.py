import json
import os
from fractions import Fraction

import numpy as np
from hypothesis import given, strategies as st

from renorm_lab import reports


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_floats_roundtrip_exactly(x):
    assert json.loads(reports.dumps({"x": x}))["x"] == x


def test_nonfinite_become_strings():
    doc = json.loads(reports.dumps([float("nan"), float("inf"), -float("inf")]))
    assert doc == ["nan", "inf", "-inf"]


def test_plain_conversions():
    obj = {"a": np.float64(0.1), "b": np.arange(3), "c": Fraction(1, 3), "d": np.bool_(True)}
    assert reports.plain(obj) == {"a": 0.1, "b": [0, 1, 2], "c": "1/3", "d": True}


def test_seventeen_digits():
    assert "0.10000000000000001" in reports.dumps({"x": 0.1})


def test_write_atomic_replaces_and_cleans(tmp_path):
    p = tmp_path / "sub" / "r.json"
    reports.write_atomic(str(p), "one")
    reports.write_atomic(str(p), "two")
    assert p.read_text() == "two"
    assert os.listdir(p.parent) == ["r.json"]


def test_report_embeds_config(tmp_path):
    cfg = reports.RunConfig("demo", {"seed": 1})
    p = tmp_path / "r.json"
    reports.write_report(str(p), cfg, {"value": 1.5}, True)
    doc = json.loads(p.read_text())
    assert doc["config"]["subcommand"] == "demo" and doc["pass"] is True
