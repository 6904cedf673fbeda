import json

import numpy as np
from hypothesis import given, strategies as st

from sizepop import __version__
from sizepop.io import fmt, header_line, jsonable, read_csv, write_csv, write_json


def test_header_line():
    assert header_line("norms", "ab12") == f"# sizepop {__version__} artifact=norms config_sha256=ab12"


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_format_round_trips(v):
    assert float(fmt(v)) == v
    assert float(fmt(np.float64(v))) == v


def test_fmt_types():
    assert fmt(True) == "1" and fmt(np.int64(3)) == "3" and fmt("ok") == "ok"


def test_csv_round_trip(tmp_path):
    rows = [(0.1, 1, 1 / 3), (2.0, -4, np.pi)]
    p = write_csv(tmp_path / "a.csv", ["t", "k", "v"], rows, "test", "h")
    cols, data = read_csv(p)
    assert cols == ["t", "k", "v"]
    np.testing.assert_array_equal(data, np.array(rows, dtype=float))
    assert p.read_text().splitlines()[0].endswith("artifact=test config_sha256=h")


def test_json_non_finite_values(tmp_path):
    obj = {"a": np.array([1.0, np.inf, -np.inf, np.nan]), "b": (np.int32(2), None), 3: np.bool_(True)}
    assert jsonable(obj) == {"a": [1.0, "inf", "-inf", "nan"], "b": [2, None], "3": True}
    p = write_json(tmp_path / "x.json", obj, "x", "h")
    doc = json.loads(p.read_text())
    assert doc["header"].endswith("config_sha256=h") and doc["a"][1] == "inf"
