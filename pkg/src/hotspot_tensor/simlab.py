"""Simulation study: data generator, detection metrics, baselines, benchmark.

Each simulated year is a state-by-week slab: a smooth background, plus a
shift of size ``delta`` on a fixed set of hot cells from year ``tau`` on,
plus Gaussian noise. Methods are compared on detection delay when the
change is present from the first monitored year, and (when they can
localize) on precision and recall of the reported cells.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import linalg, stats

from . import states as _states
from .exceptions import ParameterError, ShapeError
from .localizer import localize
from .monitor import (
    DEFAULT_LAMBDA1_FACTORS,
    DEFAULT_LAMBDA2_FACTORS,
    CusumConfig,
    LambdaGrid,
    Phase1Stats,
    Pipeline,
    _moments,
    _reference_scale,
    _year_statistics,
    bootstrap_stream,
    calibrate_limit,
    evaluate_year,
    monitor_run,
    resolve_allowance,
    standardized_max,
)
from .operators import BasisSet, gaussian_kernel_basis
from .validation import seed_sequence

__all__ = [
    "SimConfig",
    "benchmark_hot_cells",
    "generate",
    "generate_phase1",
    "Metrics",
    "metrics",
    "Detection",
    "SSRMethod",
    "ShewhartAblation",
    "T2Method",
    "PCAMethod",
    "t2_baseline",
    "pca_baseline",
    "shewhart_ablation",
    "arl1",
    "BenchmarkResult",
    "benchmark",
    "BENCHMARK_CSV_HEADER",
]

BENCHMARK_CSV_HEADER = (
    "method", "delta", "precision", "precision_sd", "recall", "recall_sd",
    "f_arith", "f_harm", "arl1", "arl1_sd", "reps", "seed",
)


def benchmark_hot_cells() -> tuple:
    """The 5 states x 21 weeks hot set used at full scale (1-based)."""
    return tuple(
        (_states.state_index(code), w)
        for code in _states.BENCHMARK_HOT_STATES
        for w in _states.BENCHMARK_HOT_WEEKS
    )


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the generator.

    ``hot_cells`` are 1-based ``(state, week)`` pairs; ``None`` uses the
    full-scale set and requires ``n1 = 50``. ``distances`` defaults to
    great-circle distances between the first ``n1`` states and
    ``bandwidth`` to their median. ``trend`` is the amplitude of a
    spatially smooth within-year decline added to the background.
    """

    n1: int = 50
    n2: int = 51
    T: int = 100
    tau: int = 50
    delta: float = 0.5
    sigma: float = 0.1
    hot_cells: Optional[tuple] = None
    bandwidth: Optional[float] = None
    trend: float = 0.0
    seed: int = 0
    distances: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 2 or self.T < 1:
            raise ParameterError("need n1 >= 1, n2 >= 2 and T >= 1")
        if not 1 <= self.tau <= self.T:
            raise ParameterError(f"tau must lie in 1..T, got {self.tau}")
        if self.delta < 0 or not self.sigma > 0:
            raise ParameterError("need delta >= 0 and sigma > 0")
        cells = self.hot_cells
        if cells is None:
            if self.n1 > len(_states.STATES) or self.n1 < 50 or self.n2 < 51:
                raise ParameterError("default hot cells need n1 = 50 and n2 >= 51; pass hot_cells")
            cells = benchmark_hot_cells()
        cells = tuple(sorted({(int(i), int(j)) for i, j in cells}))
        if not cells:
            raise ParameterError("hot_cells is empty")
        if any(not (1 <= i <= self.n1 and 1 <= j <= self.n2) for i, j in cells):
            raise ShapeError("hot cells fall outside the state-by-week grid")
        object.__setattr__(self, "hot_cells", cells)
        if self.distances is None and self.n1 > len(_states.STATES):
            raise ParameterError(f"pass distances for more than {len(_states.STATES)} units")

    @property
    def dist(self) -> np.ndarray:
        if self.distances is not None:
            d = np.asarray(self.distances, dtype=float)
            if d.shape != (self.n1, self.n1):
                raise ShapeError(f"distances must be {self.n1} x {self.n1}")
            return d
        return _states.state_distances()[: self.n1, : self.n1]

    @property
    def kernel_bandwidth(self) -> float:
        if self.bandwidth is not None:
            return float(self.bandwidth)
        d = self.dist
        off = d[np.triu_indices(self.n1, 1)]
        return float(np.median(off)) if off.size else 1.0

    def kernel(self) -> np.ndarray:
        return gaussian_kernel_basis(self.dist, self.kernel_bandwidth)

    def hot_mask(self) -> np.ndarray:
        mask = np.zeros((self.n1, self.n2), dtype=bool)
        for i, j in self.hot_cells:
            mask[i - 1, j - 1] = True
        return mask

    def post_change(self) -> "SimConfig":
        """Variant with the change present from year 1 over the post-change horizon."""
        return replace(self, T=max(1, self.T - self.tau), tau=1)


def _streams(seed) -> tuple:
    ss = seed_sequence(seed)
    return tuple(np.random.default_rng(c) for c in ss.spawn(3))


def _background(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    K = cfg.kernel()
    theta = rng.standard_normal((cfg.n1, cfg.n2)) / np.sqrt(cfg.n1 * cfg.n2)
    bg = K @ theta
    if cfg.trend:
        profile = K.sum(axis=1) / K.sum(axis=1).max()
        decline = 1.0 - np.arange(cfg.n2) / (cfg.n2 - 1)
        bg = bg + cfg.trend * np.outer(profile, decline)
    return bg


def generate(cfg: SimConfig, seed=None) -> np.ndarray:
    """Simulated series of shape ``(n1, n2, T)``; deterministic given the seed."""
    rng_bg, rng_noise, _ = _streams(cfg.seed if seed is None else seed)
    bg = _background(cfg, rng_bg)
    noise = rng_noise.normal(0.0, cfg.sigma, size=(cfg.n1, cfg.n2, cfg.T))
    y = bg[:, :, None] + noise
    if cfg.delta > 0:
        y[:, :, cfg.tau - 1:] += cfg.delta * cfg.hot_mask()[:, :, None]
    return y


def generate_phase1(cfg: SimConfig, n_years: int, seed=None) -> np.ndarray:
    """In-control years sharing the background of :func:`generate` for the same seed."""
    rng_bg, _, rng_p1 = _streams(cfg.seed if seed is None else seed)
    bg = _background(cfg, rng_bg)
    return bg[:, :, None] + rng_p1.normal(0.0, cfg.sigma, size=(cfg.n1, cfg.n2, n_years))


def _in_control_sampler(cfg: SimConfig, seed) -> Callable[[np.random.Generator, int], np.ndarray]:
    rng_bg, _, _ = _streams(seed)
    bg = _background(cfg, rng_bg).ravel(order="F")

    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        return bg[None, :] + rng.normal(0.0, cfg.sigma, size=(n, bg.size))

    return draw


# --- metrics ----------------------------------------------------------------


class Metrics(NamedTuple):
    precision: float
    recall: float
    f_arith: float
    f_harm: float
    delay: int
    empty: bool


def metrics(detected_cells, true_cells, detected_t: Optional[int], tau: int, cap: int) -> Metrics:
    """Localization and timing scores for one run.

    An empty detection gets precision 0 and ``empty=True``. ``delay`` is
    ``detected_t - tau + 1`` capped at ``cap``; a miss counts as ``cap``.
    """
    truth = set(map(tuple, true_cells))
    if not truth:
        raise ParameterError("the true hot set is empty")
    found = set(map(tuple, detected_cells))
    hit = len(found & truth)
    empty = not found
    p = 0.0 if empty else hit / len(found)
    r = hit / len(truth)
    f_harm = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    if detected_t is None:
        delay = cap
    else:
        if detected_t < tau:
            raise ParameterError(f"detection at {detected_t} precedes the change at {tau}; it is a false alarm")
        delay = min(detected_t - tau + 1, cap)
    return Metrics(p, r, (p + r) / 2, f_harm, int(delay), empty)


# --- methods ----------------------------------------------------------------


class Detection(NamedTuple):
    t_star: Optional[int]
    cells: Optional[tuple]


class _Method:
    name = "method"
    localizes = False

    def calibrate(self, cfg: SimConfig, seed) -> "_Method":
        return self

    def run(self, series: np.ndarray, cfg: SimConfig, seed) -> Detection:
        raise NotImplementedError


@dataclass
class SSRMethod(_Method):
    """The decomposition + CUSUM pipeline.

    Phase-I moments use ``phase1_reps`` independent in-control series of
    ``phase1_years`` years; the CUSUM limit comes from resampling the
    standardized phase-I maxima. Calibration happens once per benchmark,
    on backgrounds independent of the monitored replications.
    """

    lambda1_factors: Sequence[float] = DEFAULT_LAMBDA1_FACTORS
    lambda2_factors: Sequence[float] = DEFAULT_LAMBDA2_FACTORS
    spatial_ridge: float = 1.0
    d: object = "auto"
    target_arl0: float = 200.0
    phase1_reps: int = 30
    phase1_years: int = 2
    window: Optional[int] = None
    calibration_reps: int = 500
    name: str = "SSR-tensor"
    localizes = True

    def pipeline(self, cfg: SimConfig) -> Pipeline:
        mean = BasisSet(cfg.kernel(), np.eye(cfg.n2), np.eye(1), role="mean")
        return Pipeline(mean, ridge=(self.spatial_ridge, None, None), window=self.window)

    def _grid(self, scale):
        return LambdaGrid.scaled(scale, self.lambda1_factors, self.lambda2_factors)

    def calibrate(self, cfg: SimConfig, seed) -> "SSRMethod":
        ic = replace(cfg, delta=0.0, T=self.phase1_years, tau=1)
        pipe = self.pipeline(cfg)
        ss = seed_sequence(seed)
        runs = [generate(ic, seed=c) for c in ss.spawn(self.phase1_reps)]
        self.grid_ = self._grid(_reference_scale(runs, pipe))
        samples = np.concatenate(
            [_year_statistics(r, pipe, self.grid_, range(1, r.shape[2] + 1)) for r in runs], axis=0
        )
        self.stats_ = _moments(self.grid_, samples)
        self.phase1_tilde_ = np.max(self.stats_.standardize(samples), axis=1)
        self._set_limit(seed)
        return self

    def _set_limit(self, seed):
        d = resolve_allowance(self.d, self.phase1_tilde_)
        limit = calibrate_limit(
            bootstrap_stream(self.phase1_tilde_),
            CusumConfig(d=d, target_arl0=self.target_arl0),
            reps=self.calibration_reps,
            seed=seed,
        )
        self.cusum_ = CusumConfig(d, limit, self.target_arl0)

    def run(self, series, cfg, seed=None) -> Detection:
        res = monitor_run(series, self.pipeline(cfg), self.stats_, self.cusum_)
        if res.t_star is None:
            return Detection(None, None)
        rep = localize(res.fit, res.t_star, res.winner, year_offset=res.first_year - 1)
        return Detection(res.t_star, tuple(rep.cell_set))


@dataclass
class ShewhartAblation(SSRMethod):
    """Same fits with the fused penalty off and a memoryless chart.

    Signals when a single year's standardized maximum exceeds a limit set
    from a Gaussian fit to the phase-I maxima at tail mass ``1/target_arl0``.
    """

    lambda2_factors: Sequence[float] = (0.0,)
    name: str = "Shewhart-ablation"

    def _set_limit(self, seed):
        z = self.phase1_tilde_[np.isfinite(self.phase1_tilde_)]
        q = stats.norm.ppf(1.0 - 1.0 / self.target_arl0)
        self.limit_ = float(z.mean() + z.std(ddof=1) * q)

    def run(self, series, cfg, seed=None) -> Detection:
        pipe = self.pipeline(cfg)
        warm, cache = None, {}
        for t in range(1, series.shape[2] + 1):
            res = evaluate_year(series, t, pipe, self.grid_, warm=warm, cache=cache)
            warm = res.fits
            P = np.where(np.isnan(res.P), -np.inf, res.P)
            p_tilde, winner = standardized_max(P, self.stats_)
            if p_tilde > self.limit_:
                k = self.grid_.pairs.index(winner)
                rep = localize(res.fits[k], t, winner, year_offset=res.first_year - 1)
                return Detection(t, tuple(rep.cell_set))
        return Detection(None, None)


def _shrunk_cov(phase1: np.ndarray, gamma: float) -> tuple:
    mean = phase1.mean(axis=0)
    X = phase1 - mean
    S = X.T @ X / max(1, phase1.shape[0] - 1)
    S = (1.0 - gamma) * S + gamma * np.diag(np.diag(S))
    return mean, S


def _mc_quantile(stat: Callable[[np.ndarray], np.ndarray], sampler, target_arl0, draws, rng, batch=500):
    vals = []
    left = draws
    while left > 0:
        n = min(batch, left)
        vals.append(stat(sampler(rng, n)))
        left -= n
    return float(np.quantile(np.concatenate(vals), 1.0 - 1.0 / target_arl0))


def t2_baseline(series, phase1, target_arl0=200.0, gamma=0.1, sampler=None, draws=4000, seed=0, limit=None):
    """Hotelling chart on whole-year vectors.

    Parameters
    ----------
    series : ndarray (n1, n2, T)
    phase1 : ndarray (n1, n2, m)
        In-control years for the mean and covariance.
    gamma : float
        Diagonal shrinkage ``S <- (1 - gamma) S + gamma diag(S)``.
    sampler : callable, optional
        ``sampler(rng, n)`` returning ``n`` in-control vectors, used to set
        the limit by Monte Carlo. Defaults to resampling phase-I noise
        under a Gaussian with the shrunk covariance.
    limit : float, optional
        Skip calibration and use this limit.

    Returns
    -------
    (t_star or None, statistics, limit)
    """
    Y = _as_rows(series)
    P1 = _as_rows(phase1)
    if P1.shape[1] != Y.shape[1]:
        raise ShapeError("series and phase-I slices differ in size")
    if P1.shape[0] < 2:
        raise ParameterError("phase-I data need at least two years")
    mean, S = _shrunk_cov(P1, gamma)
    try:
        chol = linalg.cho_factor(S, lower=True)
    except linalg.LinAlgError as exc:
        raise ParameterError("phase-I covariance is singular; use gamma > 0") from exc

    def stat(V):
        C = (V - mean).T
        return np.einsum("ij,ij->j", C, linalg.cho_solve(chol, C))

    if limit is None:
        sampler = sampler or _gaussian_sampler(mean, S)
        limit = _mc_quantile(stat, sampler, target_arl0, draws, np.random.default_rng(seed))
    s = stat(Y)
    return _first_above(s, limit), s, limit


def pca_baseline(series, phase1, k=5, target_arl0=200.0, sampler=None, draws=4000, seed=0, limit=None):
    """Chart on the squared standardized scores of the top ``k`` phase-I components.

    Returns ``(t_star or None, statistics, limit)``.
    """
    Y = _as_rows(series)
    P1 = _as_rows(phase1)
    if P1.shape[1] != Y.shape[1]:
        raise ShapeError("series and phase-I slices differ in size")
    mean = P1.mean(axis=0)
    _, sv, Vt = np.linalg.svd(P1 - mean, full_matrices=False)
    rank = int(np.sum(sv > sv[0] * 1e-10)) if sv.size else 0
    if not 1 <= k <= rank:
        raise ParameterError(f"k={k} must lie in 1..{rank} (phase-I rank)")
    V = Vt[:k].T
    var = sv[:k] ** 2 / max(1, P1.shape[0] - 1)

    def stat(X):
        scores = (X - mean) @ V
        return np.sum(scores**2 / var, axis=1)

    if limit is None:
        if sampler is None:
            raise ParameterError("pca_baseline needs an in-control sampler or an explicit limit")
        limit = _mc_quantile(stat, sampler, target_arl0, draws, np.random.default_rng(seed))
    s = stat(Y)
    return _first_above(s, limit), s, limit


def _gaussian_sampler(mean, S):
    L = np.linalg.cholesky(S)

    def draw(rng, n):
        return mean[None, :] + rng.standard_normal((n, mean.size)) @ L.T

    return draw


def _as_rows(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.ndim != 3:
        raise ShapeError("expected an order-3 tensor")
    return np.reshape(t, (-1, t.shape[2]), order="F").T


def _first_above(s, limit) -> Optional[int]:
    hits = np.flatnonzero(np.asarray(s) > limit)
    return int(hits[0]) + 1 if hits.size else None


@dataclass
class T2Method(_Method):
    phase1_years: int = 50
    gamma: float = 0.1
    target_arl0: float = 200.0
    draws: int = 4000
    name: str = "T2"

    def run(self, series, cfg, seed) -> Detection:
        phase1 = generate_phase1(cfg, self.phase1_years, seed=seed)
        t, _, _ = t2_baseline(
            series, phase1, self.target_arl0, self.gamma, _in_control_sampler(cfg, seed), self.draws, seed
        )
        return Detection(t, None)


@dataclass
class PCAMethod(_Method):
    phase1_years: int = 50
    k: int = 5
    target_arl0: float = 200.0
    draws: int = 4000
    name: str = "PCA"

    def run(self, series, cfg, seed) -> Detection:
        phase1 = generate_phase1(cfg, self.phase1_years, seed=seed)
        t, _, _ = pca_baseline(
            series, phase1, self.k, self.target_arl0, _in_control_sampler(cfg, seed), self.draws, seed
        )
        return Detection(t, None)


def shewhart_ablation(series, method: ShewhartAblation, cfg: SimConfig) -> Optional[int]:
    """Detection year of a calibrated :class:`ShewhartAblation`, or ``None``."""
    return method.run(series, cfg).t_star


# --- benchmark --------------------------------------------------------------


def _rep_seeds(seed, reps):
    return seed_sequence(seed).spawn(reps)


def arl1(method: _Method, cfg: SimConfig, reps: int, seed=0) -> tuple:
    """Mean and sd of the detection delay with the change present from year 1.

    The horizon (and cap) is the post-change span ``T - tau`` of ``cfg``;
    a run that never signals counts as the cap.
    """
    if reps < 1:
        raise ParameterError("reps must be positive")
    post = cfg.post_change()
    delays = []
    for child in _rep_seeds(seed, reps):
        series = generate(post, seed=child)
        det = method.run(series, post, child)
        delays.append(post.T if det.t_star is None else min(det.t_star, post.T))
    d = np.asarray(delays, dtype=float)
    return float(d.mean()), float(d.std(ddof=1)) if d.size > 1 else 0.0


@dataclass
class BenchmarkResult:
    """Aggregated scores per method; ``per_rep`` keeps the raw rows."""

    rows: List[dict]
    per_rep: dict
    lost: dict
    reps: int
    seed: int

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=BENCHMARK_CSV_HEADER)
            w.writeheader()
            for row in self.rows:
                w.writerow({k: _fmt(row[k]) for k in BENCHMARK_CSV_HEADER})


def _fmt(v):
    if isinstance(v, float):
        return "" if np.isnan(v) else f"{v:.6g}"
    return v


def _mean_sd(x):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return float("nan"), float("nan")
    return float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0


def benchmark(
    cfg: SimConfig,
    methods: Sequence[_Method],
    reps: int,
    seed: int = 0,
    calibrate: bool = True,
    progress: Optional[Callable[[str], None]] = None,
) -> BenchmarkResult:
    """Run every method on ``reps`` replications of the post-change variant of ``cfg``.

    Methods are calibrated first (from a seed independent from the
    replications) unless ``calibrate`` is false. A replication that raises
    is recorded as lost for that method and excluded from its averages.
    """
    if reps < 1:
        raise ParameterError("reps must be positive")
    post = cfg.post_change()
    cal_seed, run_seed = seed_sequence(seed).spawn(2)
    if calibrate:
        for m in methods:
            m.calibrate(cfg, cal_seed)
    truth = post.hot_cells
    per_rep = {m.name: [] for m in methods}
    lost = {m.name: 0 for m in methods}
    for r, child in enumerate(run_seed.spawn(reps)):
        series = generate(post, seed=child)
        for m in methods:
            t0 = time.perf_counter()
            try:
                det = m.run(series, post, child)
            except Exception as exc:  # noqa: BLE001 - a lost rep is reported, not fatal
                warnings.warn(f"{m.name} failed on replication {r}: {exc}", RuntimeWarning)
                lost[m.name] += 1
                continue
            if m.localizes:
                sc = metrics(det.cells or (), truth, det.t_star, 1, post.T)
                row = sc._asdict()
            else:
                delay = post.T if det.t_star is None else min(det.t_star, post.T)
                row = dict(precision=np.nan, recall=np.nan, f_arith=np.nan, f_harm=np.nan, delay=delay, empty=False)
            row["t_star"] = det.t_star
            row["seconds"] = time.perf_counter() - t0
            per_rep[m.name].append(row)
            if progress is not None:
                progress(f"{m.name} rep {r}: t*={det.t_star} p={row['precision']:.3f} r={row['recall']:.3f}")
    rows = []
    for m in methods:
        got = per_rep[m.name]
        col = lambda k: [g[k] for g in got]  # noqa: E731
        p, p_sd = _mean_sd(col("precision"))
        rc, rc_sd = _mean_sd(col("recall"))
        a, a_sd = _mean_sd(col("delay"))
        rows.append(
            dict(
                method=m.name, delta=float(cfg.delta), precision=p, precision_sd=p_sd,
                recall=rc, recall_sd=rc_sd,
                f_arith=(p + rc) / 2 if m.localizes else float("nan"),
                f_harm=(2 * p * rc / (p + rc) if p + rc > 0 else 0.0) if m.localizes else float("nan"),
                arl1=a, arl1_sd=a_sd, reps=len(got), seed=int(seed),
            )
        )
    return BenchmarkResult(rows, per_rep, lost, reps, int(seed))
