import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hotspot_tensor import HotspotReport, ParameterError, ShapeError, localize
from hotspot_tensor.localizer import REPORT_CSV_HEADER

slabs = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 3)), elements=st.floats(-3, 3))


def test_zero_hotspot_gives_empty_report():
    rep = localize(np.zeros((4, 5, 2)), 2)
    assert rep.cells == () and rep.cell_set == set()


def test_single_entry():
    h = np.zeros((6, 4, 3))
    h[4, 2, 2] = 0.7
    h[1, 1, 1] = 5.0  # another year, ignored
    h[0, 0, 2] = -2.0  # downward, ignored
    rep = localize(h, 3, winner=(0.1, 0.2))
    assert rep.cell_set == {(5, 3)} and rep.winner == (0.1, 0.2)
    assert rep.cells[0][2] == pytest.approx(0.7)


def test_year_offset_for_trailing_window():
    h = np.zeros((2, 2, 2))
    h[0, 1, 1] = 1.0
    assert localize(h, 9, year_offset=7).cell_set == {(1, 2)}
    with pytest.raises(ShapeError):
        localize(h, 3)


def test_sorted_descending_with_stable_ties():
    h = np.zeros((3, 3, 1))
    h[2, 0, 0] = h[0, 2, 0] = 1.0
    h[1, 1, 0] = 2.0
    rep = localize(h, 1)
    assert [c[:2] for c in rep.cells] == [(2, 2), (1, 3), (3, 1)]


def test_report_invariants_enforced():
    with pytest.raises(ParameterError):
        HotspotReport(1, None, ((1, 1, 0.1),), 0.5)
    with pytest.raises(ParameterError):
        HotspotReport(1, None, ((1, 1, 0.1), (1, 2, 0.3)), 0.0)
    with pytest.raises(ParameterError):
        localize(np.ones((1, 1, 1)), 1, zero_tol=-1.0)


def test_report_files(tmp_path):
    h = np.zeros((2, 3, 1))
    h[1, 2, 0] = 0.25
    rep = localize(h, 1, winner=(0.1, 0.5))
    rep.write_csv(tmp_path / "r.csv", labels=["AL", "AK"], year_label=2015)
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert tuple(rows[0]) == REPORT_CSV_HEADER
    assert rows[1] == ["AK", "3", "2015", "0.25"]
    rep.write_json(tmp_path / "r.json", labels=["AL", "AK"])
    doc = json.load(open(tmp_path / "r.json"))
    assert doc["cells"] == [{"state": 2, "state_label": "AK", "week": 3, "magnitude": 0.25}]
    assert doc["winner_lambda1"] == 0.1 and doc["t_star"] == 1


@given(slabs, st.floats(0, 2), st.floats(0, 2))
def test_raising_tolerance_never_adds_cells(h, a, b):
    lo, hi = sorted((a, b))
    k = h.shape[2]
    assert localize(h, k, zero_tol=hi).cell_set <= localize(h, k, zero_tol=lo).cell_set


@given(slabs, st.randoms(use_true_random=False))
def test_permuting_states_permutes_cells(h, rnd):
    perm = list(range(h.shape[0]))
    rnd.shuffle(perm)
    k = h.shape[2]
    base = localize(h, k, zero_tol=0.1).cell_set
    moved = localize(h[perm], k, zero_tol=0.1).cell_set
    # row r of the permuted tensor is row perm[r] of the original
    assert {(perm[i - 1] + 1, j) for i, j in moved} == base
