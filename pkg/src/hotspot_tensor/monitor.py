"""Year-by-year CUSUM monitoring of the positive hot-spot statistic.

For every penalty pair in a grid the decomposition is refit as each new
year arrives. The fitted hot-spot slice of the newest year is projected
onto that year's residual, standardized with in-control moments, and the
largest standardized value over the grid feeds a one-sided CUSUM.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from .estimator import FistaConfig, ModelFit, fit
from .exceptions import CalibrationError, ParameterError, ShapeError
from .operators import BasisSet, DifferenceSet, projection_factors
from .tensor_core import as_tensor3
from .validation import seed_sequence

__all__ = [
    "DEFAULT_LAMBDA1_FACTORS",
    "DEFAULT_LAMBDA2_FACTORS",
    "LambdaGrid",
    "Phase1Stats",
    "CusumConfig",
    "CusumState",
    "Pipeline",
    "YearResult",
    "MonitorResult",
    "positive_part_statistic",
    "evaluate_year",
    "phase1_calibrate",
    "standardized_max",
    "cusum_update",
    "run_lengths",
    "calibrate_limit",
    "normal_stream",
    "bootstrap_stream",
    "monitor_run",
    "resolve_allowance",
    "HotspotMonitor",
]

DEFAULT_LAMBDA1_FACTORS = (0.01, 0.05, 0.1, 0.5)
DEFAULT_LAMBDA2_FACTORS = (0.5, 2.5)


# --- configuration types ----------------------------------------------------


@dataclass(frozen=True)
class LambdaGrid:
    """Ordered, distinct ``(lambda1, lambda2)`` pairs."""

    pairs: tuple

    def __post_init__(self):
        pairs = tuple((float(a), float(b)) for a, b in self.pairs)
        if not pairs:
            raise ParameterError("the penalty grid is empty")
        if len(set(pairs)) != len(pairs):
            raise ParameterError("penalty pairs must be distinct")
        if any(a < 0 or b < 0 or not np.isfinite(a + b) for a, b in pairs):
            raise ParameterError("penalty levels must be finite and nonnegative")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def scaled(
        cls,
        scale: float,
        lambda1_factors: Sequence[float] = DEFAULT_LAMBDA1_FACTORS,
        lambda2_factors: Sequence[float] = DEFAULT_LAMBDA2_FACTORS,
    ) -> "LambdaGrid":
        """Product grid ``scale * (a, b)`` over the two factor lists."""
        if not scale > 0:
            raise ParameterError(f"grid scale must be positive, got {scale}")
        return cls(tuple((scale * a, scale * b) for a in lambda1_factors for b in lambda2_factors))

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def to_list(self) -> list:
        return [list(p) for p in self.pairs]


@dataclass(frozen=True)
class Phase1Stats:
    """In-control mean and variance of the statistic for each grid pair.

    Pairs whose in-control variance is zero (for instance because the fit
    shrinks everything to zero) are kept but marked unusable.
    """

    grid: LambdaGrid
    mean: np.ndarray
    var: np.ndarray
    n_phase1: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).copy()
        var = np.asarray(self.var, dtype=float).copy()
        if mean.shape != (len(self.grid),) or var.shape != mean.shape:
            raise ShapeError("moments must have one entry per grid pair")
        if np.any(var < 0) or not np.all(np.isfinite(mean)):
            raise ParameterError("moments must be finite with nonnegative variance")
        mean.flags.writeable = False
        var.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def usable(self) -> np.ndarray:
        return self.var > _VAR_FLOOR * np.maximum(1.0, self.mean**2)

    def standardize(self, P: np.ndarray) -> np.ndarray:
        """``(P - mean) / sd`` per pair; unusable pairs become ``-inf``."""
        P = np.asarray(P, dtype=float)
        usable = self.usable
        sd = np.where(usable, np.sqrt(self.var), 1.0)
        z = (P - self.mean) / sd
        return np.where(usable & np.isfinite(z), z, -np.inf)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_list(),
            "mean": self.mean.tolist(),
            "var": self.var.tolist(),
            "usable": self.usable.tolist(),
            "n_phase1": int(self.n_phase1),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Phase1Stats":
        return cls(LambdaGrid(tuple(map(tuple, doc["grid"]))), doc["mean"], doc["var"], int(doc["n_phase1"]))


_VAR_FLOOR = 1e-24


@dataclass(frozen=True)
class CusumConfig:
    d: float = 0.5
    L_limit: float = 1.0
    target_arl0: float = 200.0

    def __post_init__(self):
        if not self.d > 0:
            raise ParameterError(f"allowance d must be positive, got {self.d}")
        if not self.L_limit > 0:
            raise ParameterError(f"control limit must be positive, got {self.L_limit}")
        if not self.target_arl0 > 1:
            raise ParameterError(f"target ARL0 must exceed 1, got {self.target_arl0}")


@dataclass(frozen=True)
class CusumState:
    """CUSUM value after ``t`` updates, with the full history."""

    W: float = 0.0
    t: int = 0
    history: tuple = ()
    signaled: bool = False

    def __post_init__(self):
        if self.W < 0:
            raise ParameterError("CUSUM value must be nonnegative")


@dataclass(frozen=True)
class Pipeline:
    """Everything needed to turn a year-indexed tensor into statistics.

    ``mean_basis`` gives the spatial and weekly trend factors; its year
    factor is replaced by an identity of the right size at each fit.
    ``window=None`` refits on all years up to ``t``; an integer keeps only
    the most recent ``window`` years.
    """

    mean_basis: BasisSet
    hotspot_basis: Optional[BasisSet] = None
    ridge: object = None
    fista: FistaConfig = FistaConfig(max_outer=300, max_inner=300, outer_tol=1e-5, inner_tol=1e-6)
    window: Optional[int] = None

    def __post_init__(self):
        if self.window is not None and self.window < 1:
            raise ParameterError(f"window must be a positive integer, got {self.window}")

    @property
    def dims(self) -> tuple:
        return self.mean_basis.dims[:2]

    def bases(self, n_years: int):
        mean = self.mean_basis.with_years(n_years)
        if self.hotspot_basis is None:
            hot = BasisSet.identity((*self.dims, n_years))
        else:
            hot = self.hotspot_basis.with_years(n_years)
        return mean, hot


# --- statistic --------------------------------------------------------------


def positive_part_statistic(h_t, r_t) -> float:
    """Projection of the residual onto the positive part of the hot-spot.

    Returns 0 when the hot-spot estimate has no positive entry.
    """
    h = np.asarray(h_t, dtype=float).ravel()
    r = np.asarray(r_t, dtype=float).ravel()
    if h.shape != r.shape:
        raise ShapeError(f"hot-spot of length {h.size} and residual of length {r.size} differ")
    hp = np.maximum(h, 0.0)
    norm = np.sqrt(float(hp @ hp))
    if norm == 0.0:
        return 0.0
    return float(hp @ r) / norm


@dataclass
class YearResult:
    """Per-pair statistics for one year, with the fits that produced them."""

    t: int
    P: np.ndarray
    fits: list
    failed: list = field(default_factory=list)
    first_year: int = 1


def _pad_years(theta: Optional[np.ndarray], n_years: int) -> Optional[np.ndarray]:
    if theta is None:
        return None
    have = theta.shape[2]
    if have == n_years:
        return theta
    if have > n_years:
        return theta[:, :, have - n_years:]
    return np.concatenate([theta, np.zeros(theta.shape[:2] + (n_years - have,))], axis=2)


def evaluate_year(
    series: np.ndarray,
    t: int,
    pipeline: Pipeline,
    grid: LambdaGrid,
    warm: Optional[list] = None,
    cache: Optional[dict] = None,
) -> YearResult:
    """Fit every grid pair on years ``..t`` and compute the statistic for year ``t``.

    ``t`` is 1-based. ``warm`` may hold the previous year's fits (one per
    pair) to warm-start from. A pair whose fit raises is reported in
    ``failed`` with a ``nan`` statistic.
    """
    series = as_tensor3(series)
    if series.shape[:2] != pipeline.dims:
        raise ShapeError(f"series {series.shape[:2]} does not match pipeline dims {pipeline.dims}")
    if not 1 <= t <= series.shape[2]:
        raise ShapeError(f"year {t} outside the series horizon 1..{series.shape[2]}")
    start = 0 if pipeline.window is None else max(0, t - pipeline.window)
    y = series[:, :, start:t]
    n_years = y.shape[2]
    cache = {} if cache is None else cache
    if n_years not in cache:
        mean, hot = pipeline.bases(n_years)
        pf = projection_factors(mean, hot, pipeline.ridge)
        cache[n_years] = (mean, hot, pf, DifferenceSet.standard(y.shape))
    mean, hot, pf, d = cache[n_years]

    P = np.full(len(grid), np.nan)
    fits: list = [None] * len(grid)
    failed = []
    prev_theta = None
    for k, (l1, l2) in enumerate(grid):
        theta0 = None
        if warm is not None and warm[k] is not None:
            theta0 = _pad_years(warm[k].theta_h, n_years)
        elif prev_theta is not None:
            theta0 = prev_theta
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                res = fit(y, mean, hot, d, l1, l2, pipeline.fista, pf=pf, theta0=theta0)
        except (ArithmeticError, ValueError) as exc:
            warnings.warn(f"fit for pair ({l1:g}, {l2:g}) at year {t} failed: {exc}", RuntimeWarning)
            failed.append(k)
            continue
        fits[k] = res
        prev_theta = res.theta_h
        P[k] = positive_part_statistic(res.h[:, :, -1], y[:, :, -1] - res.mu[:, :, -1])
    return YearResult(t=t, P=P, fits=fits, failed=failed, first_year=start + 1)


def _year_statistics(series, pipeline, grid, years: Iterable[int]) -> np.ndarray:
    out = []
    warm = None
    cache: dict = {}
    for t in years:
        res = evaluate_year(series, t, pipeline, grid, warm=warm, cache=cache)
        warm = res.fits
        out.append(res.P)
    return np.asarray(out)


def phase1_calibrate(
    generator: Callable[[np.random.Generator], np.ndarray],
    grid: LambdaGrid,
    reps: int,
    pipeline: Pipeline,
    years: int = 1,
    seed=0,
    return_samples: bool = False,
):
    """Estimate in-control moments of the statistic for every grid pair.

    Parameters
    ----------
    generator : callable
        ``generator(rng)`` returns an in-control tensor with at least
        ``years`` years.
    grid : LambdaGrid
    reps : int
        Replications; at least 30.
    pipeline : Pipeline
    years : int
        Years evaluated per replication. Moments are pooled across years.
    seed : int or SeedSequence
    return_samples : bool
        Also return the ``(reps * years, n_pairs)`` matrix of raw values.

    Returns
    -------
    Phase1Stats, optionally with the raw samples.
    """
    if reps < 30:
        raise ParameterError(f"phase-I calibration needs at least 30 replications, got {reps}")
    if years < 1:
        raise ParameterError("years must be positive")
    ss = seed_sequence(seed)
    rows = []
    for child in ss.spawn(reps):
        y = as_tensor3(generator(np.random.default_rng(child)))
        if y.shape[2] < years:
            raise ShapeError(f"generator produced {y.shape[2]} years, need {years}")
        rows.append(_year_statistics(y, pipeline, grid, range(1, years + 1)))
    samples = np.concatenate(rows, axis=0)
    stats = _moments(grid, samples)
    if not stats.usable.any():
        warnings.warn("no grid pair has positive in-control variance", RuntimeWarning)
    elif not stats.usable.all():
        bad = [grid.pairs[k] for k in np.flatnonzero(~stats.usable)]
        warnings.warn(f"pairs with zero in-control variance are unusable: {bad}", RuntimeWarning)
    return (stats, samples) if return_samples else stats


def _moments(grid: LambdaGrid, samples: np.ndarray) -> Phase1Stats:
    samples = np.asarray(samples, dtype=float)
    mean = np.nanmean(samples, axis=0)
    var = np.nanvar(samples, axis=0, ddof=1)
    var = np.where(np.isfinite(var), var, 0.0)
    mean = np.where(np.isfinite(mean), mean, 0.0)
    return Phase1Stats(grid, mean, var, samples.shape[0])


def standardized_max(P_values, stats: Phase1Stats):
    """Largest standardized statistic over usable pairs and the pair attaining it.

    Ties go to the lexicographically smallest ``(lambda1, lambda2)``.
    """
    P = np.asarray(P_values, dtype=float)
    if P.shape != (len(stats.grid),):
        raise ShapeError(f"expected {len(stats.grid)} statistics, got shape {P.shape}")
    z = stats.standardize(P)
    if not np.isfinite(z).any():
        raise CalibrationError("no usable grid pair to standardize")
    best = np.max(z)
    ties = [stats.grid.pairs[k] for k in np.flatnonzero(z == best)]
    return float(best), min(ties)


def cusum_update(state: CusumState, P_tilde: float, cfg: CusumConfig, winner=None) -> CusumState:
    """One step of ``W_t = max(0, W_{t-1} + P_tilde - d)``."""
    W = max(0.0, state.W + float(P_tilde) - cfg.d)
    t = state.t + 1
    return CusumState(
        W=W,
        t=t,
        history=state.history + ((t, float(P_tilde), winner, W),),
        signaled=state.signaled or W > cfg.L_limit,
    )


# --- control limit ----------------------------------------------------------


def run_lengths(streams: np.ndarray, d: float, limit: float) -> np.ndarray:
    """First 1-based index where the CUSUM of each row exceeds ``limit``.

    Rows that never signal get ``streams.shape[1]`` (the cap).
    """
    streams = np.atleast_2d(np.asarray(streams, dtype=float))
    reps, cap = streams.shape
    W = np.zeros(reps)
    out = np.full(reps, cap)
    alive = np.ones(reps, dtype=bool)
    for t in range(cap):
        W = np.maximum(0.0, W + streams[:, t] - d)
        hit = alive & (W > limit)
        out[hit] = t + 1
        alive &= ~hit
        if not alive.any():
            break
    return out


def normal_stream(rng: np.random.Generator, n: int) -> np.ndarray:
    """Unit-variance standardized in-control stream."""
    return rng.standard_normal(n)


def bootstrap_stream(samples) -> Callable[[np.random.Generator, int], np.ndarray]:
    """Stream generator resampling observed in-control values with replacement."""
    pool = np.asarray(samples, dtype=float).ravel()
    pool = pool[np.isfinite(pool)]
    if pool.size == 0:
        raise CalibrationError("no finite in-control values to resample")

    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        return pool[rng.integers(0, pool.size, size=n)]

    return draw


def calibrate_limit(
    generator: Callable[[np.random.Generator, int], np.ndarray],
    cfg: CusumConfig = CusumConfig(),
    target_arl0: Optional[float] = None,
    reps: int = 500,
    seed=0,
    max_iter: int = 60,
) -> float:
    """Control limit whose in-control mean run length matches ``target_arl0``.

    ``generator(rng, n)`` returns ``n`` in-control values of the
    standardized statistic. The same ``reps`` streams (capped at
    ``10 * target_arl0``) are reused for every trial limit, so the
    Monte-Carlo ARL is monotone in the limit and bisection is well posed.

    Raises
    ------
    CalibrationError
        When no limit brackets the target.
    """
    target = float(cfg.target_arl0 if target_arl0 is None else target_arl0)
    if not target > 1:
        raise ParameterError(f"target ARL0 must exceed 1, got {target}")
    if reps < 1:
        raise ParameterError("reps must be positive")
    cap = int(np.ceil(10 * target))
    ss = seed_sequence(seed)
    streams = np.stack([np.asarray(generator(np.random.default_rng(c), cap), float) for c in ss.spawn(reps)])
    if streams.shape != (reps, cap) or not np.all(np.isfinite(streams)):
        raise CalibrationError("stream generator must return finite arrays of the requested length")

    def arl(limit):
        return float(run_lengths(streams, cfg.d, limit).mean())

    lo, hi = 0.0, 1.0
    arl_lo = arl(lo)
    if arl_lo > target * 1.1:
        raise CalibrationError(
            f"even a zero limit gives ARL0 {arl_lo:.2f} above target {target:g}; "
            f"the allowance d={cfg.d:g} is too large for this stream"
        )
    arl_hi = arl(hi)
    while arl_hi < target and hi < 1e6:
        lo, arl_lo = hi, arl_hi
        hi *= 2.0
        arl_hi = arl(hi)
    if arl_hi < target * 0.9:
        raise CalibrationError(
            f"limit {hi:g} only reaches ARL0 {arl_hi:.2f} < target {target:g} (cap {cap})"
        )
    if arl_lo > arl_hi:
        raise CalibrationError(f"ARL0 not monotone: {arl_lo:.2f} at {lo:g} vs {arl_hi:.2f} at {hi:g}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        a = arl(mid)
        if a < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-6 * max(1.0, hi):
            break
    # pick whichever bracket end lands closer to the target
    best = min((lo, hi), key=lambda L: abs(arl(L) - target))
    if abs(arl(best) - target) > 0.1 * target:
        raise CalibrationError(f"closest ARL0 {arl(best):.2f} misses target {target:g} by more than 10%")
    return float(best) if best > 0 else float(hi)


def resolve_allowance(d, phase1_tilde, k: float = 0.5) -> float:
    """Numeric allowance; ``"auto"`` gives in-control mean + ``k`` sd of ``phase1_tilde``.

    The grid maximum of standardized statistics is not itself centred, so
    a fixed allowance below its in-control mean makes the CUSUM drift
    upward; the automatic choice puts the allowance above that mean.
    """
    if d != "auto":
        return float(d)
    z = np.asarray(phase1_tilde, dtype=float)
    z = z[np.isfinite(z)]
    if z.size < 2:
        raise CalibrationError("need at least two finite phase-I values for an automatic allowance")
    return float(z.mean() + k * z.std(ddof=1))


# --- monitoring -------------------------------------------------------------


@dataclass
class MonitorResult:
    """Outcome of a monitoring run.

    ``t_star`` is the 1-based signal year or ``None``. ``fit`` is the
    winning pair's decomposition at ``t_star`` (its last year is
    ``t_star``), ``first_year`` the series year of its first slice.
    """

    t_star: Optional[int]
    state: CusumState
    statistics: np.ndarray
    winner: Optional[tuple] = None
    fit: Optional[ModelFit] = None
    first_year: int = 1


def monitor_run(
    series: np.ndarray,
    pipeline: Pipeline,
    stats: Phase1Stats,
    cfg: CusumConfig,
    max_years: Optional[int] = None,
    stop_at_signal: bool = True,
) -> MonitorResult:
    """Refit year by year and update the CUSUM.

    Stops at the first signal unless ``stop_at_signal`` is false, in which
    case the whole series is charted; ``t_star`` is the first signal
    either way.
    """
    series = as_tensor3(series)
    grid = stats.grid
    horizon = series.shape[2] if max_years is None else min(series.shape[2], max_years)
    state = CusumState()
    warm = None
    cache: dict = {}
    rows = []
    hit = None
    for t in range(1, horizon + 1):
        res = evaluate_year(series, t, pipeline, grid, warm=warm, cache=cache)
        warm = res.fits
        rows.append(res.P)
        P = np.where(np.isnan(res.P), -np.inf, res.P)
        try:
            p_tilde, winner = standardized_max(P, stats)
        except CalibrationError:
            warnings.warn(f"no usable pair produced a statistic at year {t}", RuntimeWarning)
            p_tilde, winner = 0.0, None
        state = cusum_update(state, p_tilde, cfg, winner)
        if state.signaled and hit is None:
            k = grid.pairs.index(winner)
            hit = (t, winner, res.fits[k], res.first_year)
            if stop_at_signal:
                break
    if hit is None:
        return MonitorResult(None, state, np.asarray(rows))
    return MonitorResult(hit[0], state, np.asarray(rows), hit[1], hit[2], hit[3])


# --- estimator facade -------------------------------------------------------


class HotspotMonitor(BaseEstimator):
    """CUSUM hot-spot chart with an sklearn-style interface.

    ``fit`` takes in-control phase-I data, estimates the grid moments from
    every phase-I year and sets the control limit by resampling the
    standardized phase-I maxima. ``predict`` runs the chart on a new
    series and returns a 0/1 signal indicator per year (all years after a
    signal are 1).

    Parameters
    ----------
    mean_basis : BasisSet
    hotspot_basis : BasisSet, optional
    grid : LambdaGrid, optional
        Defaults to the scaled product grid, scaled by the median
        ``max |y*|`` over phase-I years.
    d : float or "auto"
        CUSUM allowance; see :func:`resolve_allowance`.
    target_arl0 : float
    ridge : float or sequence, optional
    window : int, optional
    calibration_reps : int
        Monte-Carlo streams used for the control limit.
    random_state : int

    Attributes
    ----------
    stats_ : Phase1Stats
    d_ : float
    limit_ : float
    cusum_ : CusumConfig
    result_ : MonitorResult
        Result of the most recent ``predict``.
    """

    def __init__(
        self,
        mean_basis=None,
        hotspot_basis=None,
        grid=None,
        d="auto",
        target_arl0=200.0,
        ridge=None,
        window=None,
        calibration_reps=500,
        random_state=0,
    ):
        self.mean_basis = mean_basis
        self.hotspot_basis = hotspot_basis
        self.grid = grid
        self.d = d
        self.target_arl0 = target_arl0
        self.ridge = ridge
        self.window = window
        self.calibration_reps = calibration_reps
        self.random_state = random_state

    def _pipeline(self) -> Pipeline:
        if self.mean_basis is None:
            raise ParameterError("mean_basis is required")
        return Pipeline(self.mean_basis, self.hotspot_basis, self.ridge, window=self.window)

    def fit(self, X, y=None):
        """``X``: one phase-I tensor ``(n1, n2, T0)`` or a stack ``(reps, n1, n2, T0)``."""
        X = np.asarray(X, dtype=float)
        runs = [X] if X.ndim == 3 else list(X)
        if any(r.ndim != 3 for r in runs):
            raise ShapeError("phase-I data must be order-3 tensors")
        pipeline = self._pipeline()
        grid = self.grid
        if grid is None:
            grid = LambdaGrid.scaled(_reference_scale(runs, pipeline))
        samples = np.concatenate(
            [_year_statistics(r, pipeline, grid, range(1, r.shape[2] + 1)) for r in runs], axis=0
        )
        if samples.shape[0] < 30:
            raise ParameterError(f"phase-I data hold {samples.shape[0]} years; at least 30 are needed")
        self.stats_ = _moments(grid, samples)
        z = self.stats_.standardize(samples)
        if not np.isfinite(z).any():
            raise CalibrationError("no usable grid pair in phase-I data")
        tilde = np.max(z, axis=1)
        self.d_ = resolve_allowance(self.d, tilde)
        self.limit_ = calibrate_limit(
            bootstrap_stream(tilde),
            CusumConfig(d=self.d_, target_arl0=self.target_arl0),
            reps=self.calibration_reps,
            seed=self.random_state,
        )
        self.cusum_ = CusumConfig(d=self.d_, L_limit=self.limit_, target_arl0=self.target_arl0)
        self.phase1_tilde_ = tilde
        return self

    def decision_function(self, X) -> np.ndarray:
        """CUSUM values per year, up to and including the first signal."""
        check_is_fitted(self, "stats_")
        self.result_ = monitor_run(as_tensor3(X), self._pipeline(), self.stats_, self.cusum_)
        return np.array([h[3] for h in self.result_.state.history])

    def predict(self, X) -> np.ndarray:
        X = as_tensor3(X)
        self.decision_function(X)
        out = np.zeros(X.shape[2], dtype=int)
        if self.result_.t_star is not None:
            out[self.result_.t_star - 1:] = 1
        return out


def _reference_scale(runs, pipeline: Pipeline) -> float:
    """Median over phase-I years of ``max |y*|`` from single-year fits."""
    mean, hot = pipeline.bases(1)
    pf = projection_factors(mean, hot, pipeline.ridge)
    vals = [np.abs(pf.residual(r[:, :, k:k + 1])).max() for r in runs for k in range(r.shape[2])]
    scale = float(np.median(vals))
    if not scale > 0:
        raise CalibrationError("phase-I data carry no signal after removing the trend")
    return scale
