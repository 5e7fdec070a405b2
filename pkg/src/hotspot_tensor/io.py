"""Reading surveillance tables and writing run artifacts.

Two long-format inputs are accepted:

* ``unit,year,week,cumulative_count``: running totals within each year;
  weekly counts are differences of consecutive weeks, so a year with
  ``W`` reported weeks yields ``W - 1`` weekly values.
* ``unit,year,week,count``: weekly values used as is (this is what the
  ``simulate`` command writes).
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import states as _states
from .exceptions import DataError, ParameterError
from .operators import great_circle_distances

__all__ = [
    "CoverageReport",
    "ingest_csv",
    "write_long_csv",
    "load_locations",
    "load_distance_matrix",
    "distances_for",
    "RunConfig",
    "load_config",
    "CUSUM_CSV_HEADER",
    "write_cusum_csv",
    "write_json",
]

CUMULATIVE_HEADER = ("unit", "year", "week", "cumulative_count")
WEEKLY_HEADER = ("unit", "year", "week", "count")
CUSUM_CSV_HEADER = ("t", "p_tilde", "W", "limit")


@dataclass
class CoverageReport:
    """What ingestion had to repair."""

    n_records: int = 0
    missing: List[Tuple[str, int, int]] = field(default_factory=list)
    corrections: List[Tuple[str, int, int]] = field(default_factory=list)
    padded_years: List[int] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not (self.missing or self.corrections or self.padded_years)


def _read_rows(path) -> Tuple[str, list]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if header == CUMULATIVE_HEADER:
            kind = "cumulative"
        elif header == WEEKLY_HEADER:
            kind = "weekly"
        else:
            raise DataError(
                f"{path}: header must be {','.join(CUMULATIVE_HEADER)} or {','.join(WEEKLY_HEADER)}, got {','.join(header)}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            unit = row[0].strip()
            try:
                year, week = int(row[1]), int(row[2])
                value = float(row[3])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not 1 <= week <= 53:
                raise DataError(f"{path}:{lineno}: week {week} outside 1..53")
            if not np.isfinite(value):
                raise DataError(f"{path}:{lineno}: non-finite value")
            if kind == "cumulative" and (value < 0 or value != int(value)):
                raise DataError(f"{path}:{lineno}: cumulative_count must be a nonnegative integer")
            rows.append((unit, year, week, value))
    return kind, rows


def ingest_csv(path, weeks_kept: Optional[int] = 51, pad: bool = False, units: Optional[Sequence[str]] = None):
    """Build the ``(units, weeks, years)`` tensor from a long-format CSV.

    Parameters
    ----------
    path : path-like
    weeks_kept : int or None
        Weekly values kept per year (the first ``weeks_kept``). ``None``
        keeps every available week.
    pad : bool
        Allow years with fewer weeks than ``weeks_kept``; the gap is
        filled with zeros and the year listed in ``padded_years``.
    units : sequence of str, optional
        Row order of the tensor. Defaults to order of first appearance.

    Returns
    -------
    tensor : ndarray
    labels : list of str
    years : list of int
    report : CoverageReport

    Raises
    ------
    DataError
        Malformed rows, duplicate ``(unit, year, week)`` keys, or ragged
        years without ``pad``.
    """
    kind, rows = _read_rows(path)
    if not rows:
        raise DataError(f"{path} has no data rows")
    table: Dict[Tuple[str, int, int], float] = {}
    seen_units: List[str] = []
    for unit, year, week, value in rows:
        key = (unit, year, week)
        if key in table:
            raise DataError(f"duplicate record for unit {unit!r}, year {year}, week {week}")
        table[key] = value
        if unit not in seen_units:
            seen_units.append(unit)
    labels = list(units) if units is not None else seen_units
    missing_units = set(seen_units) - set(labels)
    if missing_units:
        raise DataError(f"units not in the requested order: {sorted(missing_units)}")
    years = sorted({y for _, y, _ in table})
    max_week = {y: max(w for (_, yy, w) in table if yy == y) for y in years}
    offset = 1 if kind == "cumulative" else 0
    avail = {y: max_week[y] - offset for y in years}
    n_weeks = weeks_kept if weeks_kept is not None else max(avail.values())
    if n_weeks < 1:
        raise ParameterError("weeks_kept must be positive")
    report = CoverageReport(n_records=len(rows))
    for y in years:
        if avail[y] < n_weeks:
            if not pad:
                raise DataError(
                    f"year {y} provides {avail[y]} weekly values but {n_weeks} are kept; pass pad=True to zero-fill"
                )
            report.padded_years.append(y)

    out = np.zeros((len(labels), n_weeks, len(years)))
    for k, y in enumerate(years):
        top = max_week[y]
        for i, unit in enumerate(labels):
            series = np.empty(top)
            prev = 0.0
            for w in range(1, top + 1):
                v = table.get((unit, y, w))
                if v is None:
                    report.missing.append((unit, y, w))
                    # carry the running total forward so the gap contributes no cases
                    v = prev if kind == "cumulative" else 0.0
                series[w - 1] = v
                prev = v
            if kind == "cumulative":
                weekly = np.diff(series)
                neg = np.flatnonzero(weekly < 0)
                for j in neg:
                    report.corrections.append((unit, y, int(j) + 2))
                weekly[neg] = 0.0
            else:
                weekly = series
            m = min(n_weeks, weekly.size)
            out[i, :m, k] = weekly[:m]
    if report.missing:
        warnings.warn(f"{len(report.missing)} missing cells imputed as zero new cases", RuntimeWarning)
    if report.corrections:
        warnings.warn(f"{len(report.corrections)} negative weekly differences set to zero", RuntimeWarning)
    return out, labels, years, report


def write_long_csv(path, tensor, labels=None, years=None, value_name="count") -> None:
    """Write ``tensor`` as ``unit,year,week,<value_name>`` rows with round-trip floats."""
    t = np.asarray(tensor, dtype=float)
    n1, n2, n3 = t.shape
    labels = [str(i + 1) for i in range(n1)] if labels is None else list(labels)
    years = list(range(1, n3 + 1)) if years is None else list(years)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("unit", "year", "week", value_name))
        for k in range(n3):
            for i in range(n1):
                for j in range(n2):
                    w.writerow((labels[i], years[k], j + 1, repr(float(t[i, j, k]))))


def load_locations(path) -> Dict[str, Tuple[float, float]]:
    """Read ``unit,lat,lon`` rows."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["unit", "lat", "lon"]:
            raise DataError(f"{path}: header must be unit,lat,lon")
        out = {}
        for row in reader:
            try:
                out[row["unit"].strip()] = (float(row["lat"]), float(row["lon"]))
            except ValueError as exc:
                raise DataError(f"{path}: {exc}") from None
    return out


def load_distance_matrix(path, labels: Sequence[str]) -> np.ndarray:
    """Read an ``n x n`` CSV whose header row names the units; reorder to ``labels``."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    try:
        mat = np.array([[float(x) for x in r] for r in rows[1:]])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    n = len(header)
    if len(set(header)) != n or mat.shape != (n, n):
        raise DataError(f"{path}: expected a square matrix under {n} distinct unit labels, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)) or np.any(mat < 0) or not np.allclose(mat, mat.T):
        raise DataError(f"{path}: distances must be finite, nonnegative and symmetric")
    missing = [u for u in labels if u not in header]
    if missing:
        raise DataError(f"{path}: no distances for units {missing}")
    idx = [header.index(u) for u in labels]
    return mat[np.ix_(idx, idx)]


def distances_for(labels: Sequence[str], locations: Optional[Dict[str, Tuple[float, float]]] = None) -> np.ndarray:
    """Great-circle distances (km) between units.

    Without ``locations`` the built-in state table is used; labels may be
    postal codes or full state names.
    """
    if locations is None:
        lookup = {}
        for code, name, lat, lon in _states.STATES:
            lookup[code] = lookup[name] = lookup[name.upper()] = (lat, lon)
        locations = lookup
    try:
        coords = [locations[u] for u in labels]
    except KeyError as exc:
        raise DataError(f"no coordinates for unit {exc.args[0]!r}; pass a locations file") from None
    lat, lon = zip(*coords)
    return great_circle_distances(lat, lon)


@dataclass
class RunConfig:
    """Flat run configuration; every key can also be set on the command line."""

    data: Optional[str] = None
    distances: Optional[str] = None
    locations: Optional[str] = None
    out_dir: str = "."
    weeks_kept: Optional[int] = 51
    pad: bool = False
    flip_sign: bool = False
    bandwidth: Optional[float] = None
    bandwidth_grid: Optional[List[float]] = None
    spatial_ridge: float = 1.0
    lambda1: float = 0.01
    lambda2: float = 0.1
    lambda1_factors: List[float] = field(default_factory=lambda: [0.01, 0.05, 0.1, 0.5])
    lambda2_factors: List[float] = field(default_factory=lambda: [0.5, 2.5])
    d: object = "auto"
    target_arl0: float = 200.0
    phase1_years: Optional[int] = None
    reps: int = 30
    calibration_reps: int = 500
    window: Optional[int] = None
    calibration: Optional[str] = None
    stop_at_signal: bool = True
    seed: int = 0

    def validate(self) -> "RunConfig":
        for name in ("data", "distances", "locations", "calibration"):
            p = getattr(self, name)
            if p is not None and not os.path.exists(p):
                raise DataError(f"{name} file {p} does not exist")
        if not self.lambda1_factors or not self.lambda2_factors:
            raise ParameterError("penalty factor lists must be non-empty")
        if self.bandwidth_grid is not None and not self.bandwidth_grid:
            raise ParameterError("bandwidth_grid must be non-empty")
        return self


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Read a flat JSON object and apply non-``None`` overrides on top."""
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise DataError("config must be a flat JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ParameterError(f"unknown config keys: {sorted(unknown)}")
    for k, v in (overrides or {}).items():
        if v is not None and k in known:
            doc[k] = v
    return RunConfig(**doc)


def write_cusum_csv(path, history, limit: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CUSUM_CSV_HEADER)
        for t, p_tilde, _winner, W in history:
            w.writerow((t, repr(float(p_tilde)), repr(float(W)), repr(float(limit))))


def write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
