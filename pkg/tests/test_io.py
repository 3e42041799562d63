import json
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nongibrat import io as nio
from nongibrat.balance import PairedPanel
from nongibrat.errors import DomainError

positive = st.floats(min_value=1e-300, max_value=1e300, allow_nan=False, allow_infinity=False)


@given(st.lists(st.tuples(positive, positive), min_size=1, max_size=50))
def test_csv_round_trip_exact(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "p.csv"
    x1, x2 = (np.array(c) for c in zip(*rows))
    nio.write_panel_csv(path, PairedPanel(x1, x2))
    panel, stats = nio.read_panel_csv(path)
    assert np.array_equal(panel.x1, x1) and np.array_equal(panel.x2, x2)
    assert stats.n_skipped == 0


def test_csv_format(tmp_path):
    path = nio.write_panel_csv(tmp_path / "p.csv", PairedPanel(np.array([1.5, 2.0]), np.array([3.0, 0.1])))
    raw = path.read_bytes()
    assert raw.startswith(b"x1,x2\n")
    assert b"\r" not in raw
    assert raw.decode("utf-8").splitlines()[1] == "1.5,3"


def test_csv_skips_bad_rows(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("x1,x2\n1,2\n\n-3,4\n5,0\nabc,1\n1,2,3\nnan,1\ninf,2\n7,8\n", encoding="utf-8")
    panel, stats = nio.read_panel_csv(path)
    np.testing.assert_array_equal(panel.x1, [1.0, 7.0])
    assert stats.to_dict() == {"n_rows": 8, "n_unparseable": 4, "n_nonpositive": 2}
    assert stats.n_skipped == 6


def test_csv_without_header(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("1,2\n3,4\n", encoding="utf-8")
    panel, stats = nio.read_panel_csv(path)
    assert len(panel) == 2 and stats.n_rows == 2


@pytest.mark.parametrize("text", ["", "x1,x2\n", "x1,x2\n0,1\n-1,-1\n"])
def test_csv_no_usable_rows(tmp_path, text):
    path = tmp_path / "p.csv"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(DomainError, match="no usable rows"):
        nio.read_panel_csv(path)


def test_tsv_headerless(tmp_path):
    p = nio.write_tsv(tmp_path / "t.tsv", [np.array([1.0, 2.0]), np.array([0.5, 0.25]), np.array([3, 4])])
    lines = p.read_text().splitlines()
    assert lines == ["1\t0.5\t3", "2\t0.25\t4"]


def test_json_cleans_nonfinite(tmp_path):
    p = nio.write_json(tmp_path / "r.json", {"a": np.float64(np.nan), "b": np.int64(3), "c": np.array([1.0, np.inf]),
                                            "d": np.bool_(True), "e": (1, 2)})
    assert json.loads(p.read_text()) == {"a": None, "b": 3, "c": [1.0, None], "d": True, "e": [1, 2]}


def test_sha256(tmp_path):
    p = tmp_path / "f"
    p.write_bytes(b"abc")
    assert nio.sha256_file(p) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_atomic_write_failure_keeps_original(tmp_path, monkeypatch):
    target = tmp_path / "out.json"
    target.write_text("original", encoding="utf-8")

    def boom(fd):
        raise OSError("disk full")

    monkeypatch.setattr(os, "fsync", boom)
    with pytest.raises(OSError, match="disk full"):
        nio.atomic_write_text(target, "replacement")
    assert target.read_text(encoding="utf-8") == "original"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["out.json"]


def test_atomic_write_creates_parent(tmp_path):
    p = nio.atomic_write_text(tmp_path / "a" / "b" / "c.txt", "hi")
    assert p.read_text() == "hi"
    assert len(list((tmp_path / "a" / "b").iterdir())) == 1
