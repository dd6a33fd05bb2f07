import io

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from knowflow.errors import EpochViolationError, MalformedInputError, NotFoundError
from knowflow.ingest import (ClassificationTable, firm_activity_series, parse_spells,
                             worker_history, write_spells)

from conftest import make_panel

HEADER = "worker_id,firm_id,year,industry,occupation,region,wage,schooling_years\n"


def test_parse_basic_and_sorted_categories():
    text = HEADER + "w2,f1,2010,B,o1,r1,100.5,12\nw1,f1,2010,A,o1,r1,200,8\n"
    p = parse_spells(io.StringIO(text))
    assert len(p) == 2
    assert p.labels("worker_id") == ["w1", "w2"]
    assert p.labels("industry") == ["A", "B"]
    assert p.spells["wage"].tolist() == [200.0, 100.5]
    assert p.report.n_accepted == 2


def test_schema_mapping_and_semicolon_delimiter():
    text = "pis;cnpj;ano;cnae;cbo;micro;salario;escol\nw1;f1;2010;A;o1;r1;10;5\n"
    schema = {"worker_id": "pis", "firm_id": "cnpj", "year": "ano", "industry": "cnae",
              "occupation": "cbo", "region": "micro", "wage": "salario", "schooling_years": "escol"}
    p = parse_spells(io.StringIO(text), schema, delimiter=";")
    assert p.spells.iloc[0]["firm_id"] == "f1"


def test_missing_header_column_reports_line_one():
    with pytest.raises(MalformedInputError, match="line 1"):
        parse_spells(io.StringIO("worker_id,firm_id\nw,f\n"))


def test_empty_input():
    with pytest.raises(MalformedInputError):
        parse_spells(io.StringIO(""))


def test_malformed_rows_within_tolerance_are_dropped():
    good = "".join(f"w{k},f1,2010,A,o1,r1,100,10\n" for k in range(200))
    text = HEADER + good + "wx,f1,20x0,A,o1,r1,100,10\n"
    p = parse_spells(io.StringIO(text), tolerance=0.01)
    assert len(p) == 200
    assert p.report.n_malformed == 1
    assert p.report.rejected_lines == [202]


def test_malformed_rows_over_tolerance_raise_with_first_line():
    text = HEADER + "w1,f1,2010,A,o1,r1,100,10\nw2,f1,2010,A,o1,r1,-5,10\nw3,f1,2010\n"
    with pytest.raises(MalformedInputError) as exc:
        parse_spells(io.StringIO(text), tolerance=0.1)
    assert exc.value.line == 3


@pytest.mark.parametrize("row", [
    "w,f,2010,A,o,r,100,31",   # schooling above range
    "w,f,2010,A,o,r,nan,10",   # non-finite wage
    "w,f,2010.5,A,o,r,100,10",  # fractional year
    ",f,2010,A,o,r,100,10",    # empty id
])
def test_invalid_values_are_malformed(row):
    with pytest.raises(MalformedInputError):
        parse_spells(io.StringIO(HEADER + row + "\n"), tolerance=0.0)


def test_duplicates_keep_highest_wage():
    text = HEADER + "w1,f1,2010,A,o1,r1,100,10\nw1,f1,2010,B,o2,r1,300,10\n"
    p = parse_spells(io.StringIO(text))
    assert len(p) == 1
    assert p.spells.iloc[0]["industry"] == "B"
    assert p.report.n_deduplicated == 1


def test_duplicate_resolution_independent_of_row_order():
    rows = ["w1,f1,2010,A,o1,r1,100,10", "w1,f1,2010,B,o2,r1,100,12", "w1,f1,2010,C,o2,r1,90,12"]
    a = parse_spells(io.StringIO(HEADER + "\n".join(rows) + "\n")).spells
    b = parse_spells(io.StringIO(HEADER + "\n".join(rows[::-1]) + "\n")).spells
    pd.testing.assert_frame_equal(a, b)


def test_classification_rollup_and_unresolved_rejection(tmp_path):
    (tmp_path / "l0.csv").write_text("code,parent_code\nS1,\nS2,\n")
    (tmp_path / "l1.csv").write_text("code,parent_code\nA,S1\nB,S2\n")
    (tmp_path / "l2.csv").write_text("code,parent_code\nA1,A\nA2,A\nB1,B\n")
    table = ClassificationTable.from_files("industry", [tmp_path / "l0.csv", tmp_path / "l1.csv",
                                                        tmp_path / "l2.csv"], analysis_level=1)
    assert table.resolve("A2") == "A"
    assert table.resolve("S1") is None
    assert table.top_level("B") == "S2"
    text = HEADER + "w1,f1,2010,A1,o,r,1,1\nw2,f1,2010,A2,o,r,1,1\nw3,f1,2010,ZZ,o,r,1,1\n"
    p = parse_spells(io.StringIO(text), tables={"industry": table})
    assert p.labels("industry") == ["A"]
    assert len(p) == 2
    assert p.report.n_rejected == 1


def test_classification_rejects_orphan_parent(tmp_path):
    (tmp_path / "l0.csv").write_text("S1,\n")
    (tmp_path / "l1.csv").write_text("A,S9\n")
    with pytest.raises(ValueError, match="parents absent"):
        ClassificationTable.from_files("industry", [tmp_path / "l0.csv", tmp_path / "l1.csv"])


def test_epochs_and_history_window():
    p = make_panel([
        ("w1", "f1", 2004, "A", "o1", "r1"),
        ("w1", "f1", 2005, "A", "o1", "r1"),
        ("w1", "f2", 2006, "B", "o2", "r2"),
        ("w1", "f3", 2007, "C", "o3", "r1"),
    ], epochs=(2006,))
    assert p.same_epoch(2004, 2005) and not p.same_epoch(2005, 2006)
    with pytest.raises(EpochViolationError):
        p.require_same_epoch(2005, 2006)
    # the 2007 window stops at the 2006 epoch start
    assert worker_history(p, "w1", 2007, 2) == [(2006, "B", "o2", "r2")]
    assert worker_history(p, "w1", 2006, 2) == []
    assert worker_history(p, "w1", 2006, 1) == []
    assert worker_history(p, "nobody", 2007) == []


def test_activity_series_fills_gaps():
    p = make_panel([("w1", "f1", 2001, "A", "o", "r"), ("w2", "f1", 2003, "A", "o", "r"),
                    ("w3", "f2", 2002, "A", "o", "r")])
    assert firm_activity_series(p, "f1") == {2001: 1, 2002: 0, 2003: 1}
    with pytest.raises(NotFoundError):
        firm_activity_series(p, "zz")


def test_write_read_round_trip(tmp_path, small_synth):
    panel, _ = small_synth
    path = tmp_path / "spells.csv"
    write_spells(panel, path)
    again = parse_spells(path, epoch_boundaries=panel.epoch_boundaries)
    pd.testing.assert_frame_equal(panel.spells, again.spells)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=0, max_value=1e7, allow_nan=False, allow_infinity=False),
                min_size=1, max_size=30))
def test_wages_survive_write_and_parse_exactly(wages):
    rows = [(f"w{k}", "f", 2010, "A", "o", "r", w, 10.0) for k, w in enumerate(wages)]
    p = make_panel(rows)
    buf = io.StringIO()
    write_spells(p, buf)
    again = parse_spells(io.StringIO(buf.getvalue()))
    assert np.array_equal(again.spells["wage"].to_numpy(), p.spells["wage"].to_numpy())


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 3), st.integers(2000, 2004),
                          st.floats(0, 100, allow_nan=False)), min_size=1, max_size=40))
def test_panel_has_unique_worker_firm_year(rows):
    p = make_panel([(f"w{w}", f"f{f}", y, "A", "o", "r", wage) for w, f, y, wage in rows])
    key = p.spells[["worker_id", "firm_id", "year"]].astype(str)
    assert not key.duplicated().any()
    assert len(p) == len({(w, f, y) for w, f, y, _ in rows})
