"""Approximate geographic centres of the 50 US states.

Used to build simulation distance matrices when no distance file is given.
Coordinates are decimal degrees and only need to be accurate to a few tens
of kilometres for kernel construction.
"""

from __future__ import annotations

import numpy as np

from .operators import great_circle_distances

# (code, surveillance-table label, latitude, longitude)
STATES = (
    ("AL", "Ala.", 32.79, -86.83),
    ("AK", "Alaska", 64.73, -152.47),
    ("AZ", "Ariz.", 34.29, -111.66),
    ("AR", "Ark.", 34.90, -92.44),
    ("CA", "Calif.", 37.18, -119.47),
    ("CO", "Colo.", 38.99, -105.55),
    ("CT", "Conn.", 41.62, -72.73),
    ("DE", "Del.", 38.99, -75.51),
    ("FL", "Fla.", 28.63, -82.45),
    ("GA", "Ga.", 32.64, -83.44),
    ("HI", "Hawaii", 20.29, -156.37),
    ("ID", "Idaho", 44.35, -114.61),
    ("IL", "Ill.", 40.04, -89.20),
    ("IN", "Ind.", 39.89, -86.28),
    ("IA", "Iowa", 42.08, -93.50),
    ("KS", "Kans.", 38.49, -98.38),
    ("KY", "Ky.", 37.53, -85.30),
    ("LA", "La.", 31.07, -92.00),
    ("ME", "Maine", 45.37, -69.24),
    ("MD", "Md.", 39.06, -76.80),
    ("MA", "Mass.", 42.26, -71.81),
    ("MI", "Mich.", 44.35, -85.41),
    ("MN", "Minn.", 46.28, -94.31),
    ("MS", "Miss.", 32.74, -89.67),
    ("MO", "Mo.", 38.36, -92.46),
    ("MT", "Mont.", 47.05, -109.63),
    ("NE", "Nebr.", 41.54, -99.80),
    ("NV", "Nev.", 39.33, -116.63),
    ("NH", "N.H.", 43.68, -71.58),
    ("NJ", "N.J.", 40.19, -74.67),
    ("NM", "N.Mex.", 34.41, -106.11),
    ("NY", "N.Y.", 42.95, -75.53),
    ("NC", "N.C.", 35.56, -79.39),
    ("ND", "N.Dak.", 47.45, -100.47),
    ("OH", "Ohio", 40.29, -82.79),
    ("OK", "Okla.", 35.59, -97.49),
    ("OR", "Oreg.", 43.93, -120.56),
    ("PA", "Pa.", 40.88, -77.80),
    ("RI", "R.I.", 41.68, -71.56),
    ("SC", "S.C.", 33.92, -80.90),
    ("SD", "S.Dak.", 44.44, -100.23),
    ("TN", "Tenn.", 35.86, -86.35),
    ("TX", "Tex.", 31.48, -99.33),
    ("UT", "Utah", 39.31, -111.67),
    ("VT", "Vt.", 44.07, -72.67),
    ("VA", "Va.", 37.52, -78.85),
    ("WA", "Wash.", 47.38, -120.45),
    ("WV", "W.Va.", 38.64, -80.62),
    ("WI", "Wis.", 44.62, -89.99),
    ("WY", "Wyo.", 42.99, -107.55),
)

CODES = tuple(s[0] for s in STATES)
LABELS = tuple(s[1] for s in STATES)

# hot-spot states of the benchmark protocol
BENCHMARK_HOT_STATES = ("CT", "OH", "WV", "TX", "HI")
BENCHMARK_HOT_WEEKS = tuple(range(1, 11)) + tuple(range(41, 52))


def state_index(code: str) -> int:
    """1-based position of a state code in :data:`STATES`."""
    return CODES.index(code) + 1


def state_distances() -> np.ndarray:
    """50 x 50 great-circle distances (km) between state centres."""
    lat = [s[2] for s in STATES]
    lon = [s[3] for s in STATES]
    return great_circle_distances(lat, lon)
