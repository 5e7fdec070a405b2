"""Turn the winning hot-spot fit at a signal year into a list of cells."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .estimator import ModelFit
from .exceptions import ParameterError, ShapeError
from .tensor_core import as_tensor3

__all__ = ["HotspotReport", "localize", "REPORT_CSV_HEADER"]

REPORT_CSV_HEADER = ("state_label", "week", "year", "magnitude")


@dataclass(frozen=True)
class HotspotReport:
    """Cells flagged at ``t_star``; ``cells`` holds 1-based ``(state, week, magnitude)``."""

    t_star: int
    winner: Optional[tuple]
    cells: tuple
    threshold: float

    def __post_init__(self):
        mags = [c[2] for c in self.cells]
        if any(m <= self.threshold for m in mags):
            raise ParameterError("every reported magnitude must exceed the threshold")
        if any(a < b for a, b in zip(mags, mags[1:])):
            raise ParameterError("cells must be sorted by descending magnitude")

    @property
    def cell_set(self) -> set:
        return {(i, j) for i, j, _ in self.cells}

    def to_dict(self, labels: Optional[Sequence[str]] = None, year_label=None) -> dict:
        return {
            "t_star": self.t_star,
            "year_label": year_label,
            "winner_lambda1": None if self.winner is None else self.winner[0],
            "winner_lambda2": None if self.winner is None else self.winner[1],
            "threshold": self.threshold,
            "cells": [
                {"state": i, "state_label": _label(labels, i), "week": j, "magnitude": m}
                for i, j, m in self.cells
            ],
        }

    def write_json(self, path, labels=None, year_label=None) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(labels, year_label), fh, indent=2)

    def write_csv(self, path, labels=None, year_label=None) -> None:
        year = self.t_star if year_label is None else year_label
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_CSV_HEADER)
            for i, j, m in self.cells:
                w.writerow([_label(labels, i), j, year, repr(float(m))])


def _label(labels, i):
    return str(i) if labels is None else labels[i - 1]


def localize(fit, t_star: int, winner=None, zero_tol: Optional[float] = None, year_offset: int = 0) -> HotspotReport:
    """Report cells whose fitted hot-spot exceeds ``zero_tol`` in year ``t_star``.

    Parameters
    ----------
    fit : ModelFit or ndarray
        The winning decomposition, or its hot-spot tensor directly.
    t_star : int
        1-based signal year on the series clock.
    winner : tuple, optional
        Penalty pair that produced ``fit``; carried into the report.
    zero_tol : float, optional
        Defaults to ``1e-8 * max |H|``. Only upward entries are reported.
    year_offset : int
        Series year of the fit's first slice minus one, for fits on a
        trailing window.
    """
    h = fit.h if isinstance(fit, ModelFit) else fit
    h = as_tensor3(h)
    k = t_star - year_offset
    if not 1 <= k <= h.shape[2]:
        raise ShapeError(f"year {t_star} is outside the fitted years {year_offset + 1}..{year_offset + h.shape[2]}")
    if zero_tol is None:
        zero_tol = 1e-8 * float(np.abs(h).max())
    if zero_tol < 0:
        raise ParameterError(f"zero_tol must be nonnegative, got {zero_tol}")
    slab = h[:, :, k - 1]
    ii, jj = np.nonzero(slab > zero_tol)
    mags = slab[ii, jj]
    order = np.lexsort((jj, ii, -mags))
    cells = tuple((int(ii[o]) + 1, int(jj[o]) + 1, float(mags[o])) for o in order)
    return HotspotReport(int(t_star), None if winner is None else tuple(winner), cells, float(zero_tol))
