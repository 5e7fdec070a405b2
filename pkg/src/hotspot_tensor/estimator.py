"""Penalized smooth/sparse decomposition of a count tensor.

The model is ``y = B_m theta_m + B_h theta_h + e`` and the estimate
minimizes::

    ||e||^2 + lambda1 ||theta_h||_1 + lambda2 ||D theta_h||_1

``theta_m`` is profiled out in closed form, leaving a sparse regression of
the mean-residualized data on ``X = (I - H_m) B_h`` which is solved with
an accelerated proximal-gradient loop. Its proximal step is a fused-lasso
proximal point computed on the dual.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from .exceptions import DivergenceError, IdentifiabilityError, ParameterError, ShapeError
from .operators import (
    BasisSet,
    DifferenceSet,
    ProjectionFactors,
    projection_factors,
    spectral_bound,
)
from .tensor_core import as_tensor3, tucker_apply
from .validation import check_tensor3

__all__ = [
    "FistaConfig",
    "ModelFit",
    "solve_theta_m",
    "residual_transform",
    "soft_threshold",
    "prox_fused",
    "prox_combined",
    "fit",
    "objective",
    "loss_and_gradient",
    "HotspotDecomposition",
]


@dataclass(frozen=True)
class FistaConfig:
    """Iteration caps and stopping thresholds.

    ``max_outer``/``max_inner`` cap the accelerated loop and the dual
    proximal loop. ``L0`` is the initial Lipschitz estimate for the
    smooth term; ``None`` derives a guaranteed upper bound from the
    hot-spot basis. ``outer_tol`` is on the relative change of
    ``theta_h``; ``inner_tol`` bounds the relative duality gap of each
    proximal subproblem. ``restart`` resets the momentum whenever it
    points uphill, which leaves fixed points unchanged.
    """

    max_outer: int = 500
    max_inner: int = 200
    L0: Optional[float] = None
    outer_tol: float = 1e-6
    inner_tol: float = 1e-8
    restart: bool = True

    def __post_init__(self):
        if self.max_outer < 1 or self.max_inner < 1:
            raise ParameterError("iteration caps must be positive")
        if self.L0 is not None and not self.L0 > 0:
            raise ParameterError(f"L0 must be positive, got {self.L0}")
        for name in ("outer_tol", "inner_tol"):
            tol = getattr(self, name)
            if not 0 < tol < 1:
                raise ParameterError(f"{name} must lie in (0, 1), got {tol}")


@dataclass
class ModelFit:
    """Result of one decomposition at a fixed ``(lambda1, lambda2)``."""

    theta_m: np.ndarray
    theta_h: np.ndarray
    mu: np.ndarray
    h: np.ndarray
    residual: np.ndarray
    objective: float
    lambda1: float
    lambda2: float
    iterations_used: int
    converged: bool = True
    inner_converged: bool = True
    dual: Optional[tuple] = field(default=None, repr=False)


# --- closed-form pieces ---------------------------------------------------


def solve_theta_m(
    y: np.ndarray,
    theta_h: np.ndarray,
    mean: BasisSet,
    hotspot: BasisSet,
    ridge=None,
    pf: Optional[ProjectionFactors] = None,
) -> np.ndarray:
    """Least-squares trend coefficients given the hot-spot coefficients.

    ``(B_m'B_m + eps I)^-1 B_m'(y - B_h theta_h)``, one solve per mode.
    """
    y = as_tensor3(y)
    theta_h = as_tensor3(theta_h)
    if y.shape != mean.dims or theta_h.shape != hotspot.dims:
        raise ShapeError(f"y {y.shape} / theta_h {theta_h.shape} do not match bases {mean.dims}")
    if pf is None:
        pf = projection_factors(mean, hotspot, ridge)
    return tucker_apply(y - hotspot.apply(theta_h), *pf.solve)


def residual_transform(y: np.ndarray, pf: ProjectionFactors) -> np.ndarray:
    """``y* = (I - H_m) y``."""
    y = as_tensor3(y)
    if y.shape != pf.dims:
        raise ShapeError(f"y {y.shape} does not match projection dims {pf.dims}")
    return pf.residual(y)


def soft_threshold(v: np.ndarray, thresh: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


# --- proximal operators -----------------------------------------------------


class ProxResult(NamedTuple):
    theta: np.ndarray
    dual: tuple
    converged: bool
    iterations: int


def _gap_tolerance(v: np.ndarray, tol: float) -> float:
    return tol * (1.0 + 0.5 * float(np.vdot(v, v)))


def _dual_blocks(v, blocks, lams, lip, tol, max_iter, z0) -> ProxResult:
    """Accelerated projected gradient on ``min_{|z_k|<=lam_k} 1/2 ||sum A_k'z_k - v||^2``.

    ``blocks`` holds ``(apply, apply_transpose)`` pairs. The primal point is
    ``theta = v - sum A_k'z_k`` and the stopping rule is the duality gap
    ``sum lam_k ||A_k theta||_1 - <z_k, A_k theta>``.
    """
    gap_tol = _gap_tolerance(v, tol)

    def primal(zs):
        theta = v
        for (_, at), z in zip(blocks, zs):
            theta = theta - at(z)
        return theta

    def gap_of(theta, zs):
        out = 0.0
        for (ap, _), z, lam in zip(blocks, zs, lams):
            u = ap(theta)
            out += lam * np.abs(u).sum() - float(np.vdot(z, u))
        return out

    z = [np.clip(z0k, -lam, lam) for z0k, lam in zip(z0, lams)]
    zeta = [zk.copy() for zk in z]
    t = 1.0
    it = 0
    theta = primal(z)
    converged = gap_of(theta, z) <= gap_tol
    while not converged and it < max_iter:
        it += 1
        th_zeta = primal(zeta)
        z_new = [
            np.clip(zk + ap(th_zeta) / lip, -lam, lam)
            for (ap, _), zk, lam in zip(blocks, zeta, lams)
        ]
        uphill = sum(float(np.vdot(a - b, b - c)) for a, b, c in zip(zeta, z_new, z)) > 0
        if uphill:
            t_next = 1.0
            zeta = z_new
        else:
            t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
            beta = (t - 1.0) / t_next
            zeta = [b + beta * (b - c) for b, c in zip(z_new, z)]
        z, t = z_new, t_next
        if it % 5 == 0 or it == max_iter:
            theta = primal(z)
            converged = gap_of(theta, z) <= gap_tol
    if not converged or it % 5:
        theta = primal(z)
    return ProxResult(theta, tuple(z), converged, it)


def _prox_fused_dual(v, lam2, d: DifferenceSet, tol, max_iter, z0=None, lip=None) -> ProxResult:
    """Dual solve of ``min_theta 1/2 ||theta - v||^2 + lam2 ||D theta||_1``."""
    lip = spectral_bound(d) if lip is None else lip
    z0 = (np.zeros(d.out_dims),) if z0 is None else (z0,)
    return _dual_blocks(v, [(d.apply, d.apply_transpose)], (lam2,), lip, tol, max_iter, z0)


def _identity(x):
    return x


def _prox_stacked_dual(v, lam1, lam2, d: DifferenceSet, tol, max_iter, dual0=None, lip=None) -> ProxResult:
    """Exact proximal point of ``lam1 |.|_1 + lam2 |D.|_1`` for any ``D``.

    Dual of the stacked operator ``[I; D]``.
    """
    lip = 1.0 + (spectral_bound(d) if lip is None else lip)
    if dual0 is None or len(dual0) != 2:
        dual0 = (np.zeros_like(v), np.zeros(d.out_dims))
    blocks = [(_identity, _identity), (d.apply, d.apply_transpose)]
    return _dual_blocks(v, blocks, (lam1, lam2), lip, tol, max_iter, dual0)


def prox_fused(
    v: np.ndarray,
    lambda2: float,
    d: DifferenceSet,
    cfg: FistaConfig = FistaConfig(),
    z0: Optional[np.ndarray] = None,
    full_output: bool = False,
):
    """``argmin_theta 1/2 ||theta - v||^2 + lambda2 ||D theta||_1``.

    Solved on the dual by projected gradient with step ``1 / bound(DD')``
    and primal recovery ``theta = v - D'z``. Warns with
    :class:`~sklearn.exceptions.ConvergenceWarning` when the duality gap
    is not closed within ``cfg.max_inner`` steps. With ``full_output``
    the raw :class:`ProxResult` is returned instead.
    """
    v = as_tensor3(v)
    if lambda2 < 0:
        raise ParameterError(f"lambda2 must be nonnegative, got {lambda2}")
    if v.shape != d.dims:
        raise ShapeError(f"v {v.shape} does not match difference dims {d.dims}")
    if lambda2 == 0:
        res = ProxResult(v.copy(), (np.zeros(d.out_dims),), True, 0)
    else:
        res = _prox_fused_dual(v, lambda2, d, cfg.inner_tol, cfg.max_inner, z0)
    if not res.converged:
        warnings.warn("fused proximal step hit max_inner before closing the duality gap", ConvergenceWarning)
    return res if full_output else res.theta


def prox_combined(
    v: np.ndarray,
    lambda1: float,
    lambda2: float,
    d: DifferenceSet,
    cfg: FistaConfig = FistaConfig(),
    dual0: Optional[tuple] = None,
    full_output: bool = False,
    _lip: Optional[float] = None,
    _warn: bool = True,
):
    """Proximal point of ``lambda1 ||.||_1 + lambda2 ||D .||_1``.

    When every row of ``D`` is a signed unit vector or a difference of two
    unit vectors, this soft-thresholds the fused-only proximal point by
    ``lambda1``. Otherwise (e.g. the week-by-year Kronecker operator with
    more than one year) that shortcut is not exact and the stacked dual is
    solved instead.
    """
    v = as_tensor3(v)
    if lambda1 < 0 or lambda2 < 0:
        raise ParameterError("penalty levels must be nonnegative")
    if v.shape != d.dims:
        raise ShapeError(f"v {v.shape} does not match difference dims {d.dims}")
    if lambda2 == 0:
        res = ProxResult(soft_threshold(v, lambda1), (), True, 0)
    elif lambda1 == 0 or d.is_graph_like:
        z0 = dual0[-1] if dual0 else None
        fused = _prox_fused_dual(v, lambda2, d, cfg.inner_tol, cfg.max_inner, z0, _lip)
        res = fused._replace(theta=soft_threshold(fused.theta, lambda1))
    else:
        res = _prox_stacked_dual(v, lambda1, lambda2, d, cfg.inner_tol, cfg.max_inner, dual0, _lip)
    if _warn and not res.converged:
        warnings.warn("proximal step hit max_inner before closing the duality gap", ConvergenceWarning)
    return res if full_output else res.theta


# --- outer solver -----------------------------------------------------------


def loss_and_gradient(theta: np.ndarray, ystar: np.ndarray, pf: ProjectionFactors):
    """Profiled loss ``||(I - H_m) B_h theta - y*||^2`` and its gradient.

    ``ystar`` is ``pf.residual(y)``. Both pieces are evaluated with mode
    products only.
    """
    r = pf.design(theta) - ystar
    return float(np.vdot(r, r)), 2.0 * pf.design_transpose(r)


def objective(y: np.ndarray, fit_: ModelFit, lambda1: float, lambda2: float, d: DifferenceSet) -> float:
    """``||y - mu - h||^2 + lambda1 ||theta_h||_1 + lambda2 ||D theta_h||_1``."""
    e = as_tensor3(y) - fit_.mu - fit_.h
    return float(
        np.vdot(e, e)
        + lambda1 * np.abs(fit_.theta_h).sum()
        + lambda2 * np.abs(d.apply(fit_.theta_h)).sum()
    )


# iterates can jitter at the prox precision once the objective has settled
_STALL_WINDOW = 25
_STALL_RTOL = 1e-2


def _lipschitz_bound(hotspot: BasisSet) -> float:
    # ||I - H_m|| <= 1, so 2 * prod ||B_{h,d}||^2 bounds the Hessian of ||y* - X theta||^2
    return 2.0 * spectral_bound(hotspot, inflate=1.0)


def fit(
    y: np.ndarray,
    mean: BasisSet,
    hotspot: BasisSet,
    d: DifferenceSet,
    lambda1: float,
    lambda2: float,
    cfg: FistaConfig = FistaConfig(),
    ridge=None,
    pf: Optional[ProjectionFactors] = None,
    theta0: Optional[np.ndarray] = None,
    dual0: Optional[tuple] = None,
) -> ModelFit:
    """Decompose ``y`` at one ``(lambda1, lambda2)``.

    Parameters
    ----------
    y : ndarray of shape (n1, n2, n3)
    mean, hotspot : BasisSet
    d : DifferenceSet
    lambda1, lambda2 : float
        LASSO and fused-LASSO levels.
    cfg : FistaConfig
    ridge : float, optional
        Passed to :func:`projection_factors` when ``pf`` is not given.
    pf : ProjectionFactors, optional
        Precomputed projections (reused across a penalty grid).
    theta0, dual0 : optional
        Warm starts for ``theta_h`` and the proximal dual variables.

    Returns
    -------
    ModelFit

    Raises
    ------
    IdentifiabilityError
        Both penalties are zero while the mean basis spans everything.
    DivergenceError
        The objective became non-finite; raise ``cfg.L0``.
    """
    y = as_tensor3(y)
    if lambda1 < 0 or lambda2 < 0:
        raise ParameterError("penalty levels must be nonnegative")
    if y.shape != mean.dims or y.shape != hotspot.dims or y.shape != d.dims:
        raise ShapeError(
            f"data {y.shape}, mean {mean.dims}, hot-spot {hotspot.dims} and "
            f"difference {d.dims} dims must agree"
        )
    if pf is None:
        pf = projection_factors(mean, hotspot, ridge)
    if lambda1 == 0 and lambda2 == 0 and all(
        np.max(np.abs(np.eye(h.shape[0]) - h)) < 1e-6 for h in pf.H
    ):
        raise IdentifiabilityError("mean basis saturates model: both penalties are zero")

    ystar = pf.residual(y)
    lip_d = spectral_bound(d) if lambda2 > 0 else 1.0
    L = cfg.L0 if cfg.L0 is not None else _lipschitz_bound(hotspot)

    def smooth(theta):
        r = pf.design(theta) - ystar
        return float(np.vdot(r, r))

    def penalty(theta):
        out = lambda1 * np.abs(theta).sum()
        if lambda2 > 0:
            out += lambda2 * np.abs(d.apply(theta)).sum()
        return float(out)

    theta = np.zeros(y.shape) if theta0 is None else as_tensor3(theta0).copy()
    theta_prev = theta.copy()
    dual = dual0
    t_prev, t_cur = 1.0, 1.0
    f_theta = smooth(theta)
    best_val = f_theta + penalty(theta)
    best_theta = theta
    zero_val = float(np.vdot(ystar, ystar))
    scale_floor = 1e-3 * np.sqrt(zero_val) if zero_val > 0 else np.finfo(float).tiny
    if zero_val < best_val:
        best_val, best_theta = zero_val, np.zeros(y.shape)
    converged = False
    inner_ok = True
    it = 0
    last_gain = 0
    for it in range(1, cfg.max_outer + 1):
        eta = theta + ((t_prev - 1.0) / t_cur) * (theta - theta_prev)
        f_eta, grad = loss_and_gradient(eta, ystar, pf)
        while True:
            res = prox_combined(
                eta - grad / L, lambda1 / L, lambda2 / L, d, cfg,
                dual0=dual, full_output=True, _lip=lip_d, _warn=False,
            )
            step = res.theta - eta
            f_new = smooth(res.theta)
            if not np.isfinite(f_new):
                raise DivergenceError("objective is not finite; increase L0")
            model = f_eta + float(np.vdot(grad, step)) + 0.5 * L * float(np.vdot(step, step))
            if f_new <= model * (1 + 1e-12) + 1e-300:
                break
            L *= 2.0
        inner_ok &= res.converged
        dual = res.dual
        if cfg.restart and float(np.vdot(eta - res.theta, res.theta - theta)) > 0:
            t_prev, t_cur = 1.0, 1.0
        else:
            t_prev, t_cur = t_cur, (1.0 + np.sqrt(1.0 + 4.0 * t_cur**2)) / 2.0
        theta_prev, theta = theta, res.theta
        val = f_new + penalty(theta)
        if not np.isfinite(val):
            raise DivergenceError("objective is not finite; increase L0")
        if val < best_val:
            if val < best_val - _STALL_RTOL * cfg.outer_tol * abs(best_val):
                last_gain = it
            best_val, best_theta = val, theta
        change = np.linalg.norm(theta - theta_prev)
        # the floor keeps inexact-prox jitter around a zero solution from stalling the stop
        scale = max(np.linalg.norm(theta_prev), np.linalg.norm(theta), scale_floor)
        stalled = it - last_gain >= _STALL_WINDOW
        if change <= cfg.outer_tol * scale or stalled:
            converged = True
            break
    if not converged:
        warnings.warn(f"outer loop stopped at max_outer={cfg.max_outer}", ConvergenceWarning)
    if not inner_ok:
        warnings.warn("some proximal steps hit max_inner before closing the duality gap", ConvergenceWarning)

    theta_h = best_theta
    theta_m = tucker_apply(y - hotspot.apply(theta_h), *pf.solve)
    mu = mean.apply(theta_m)
    h = hotspot.apply(theta_h)
    residual = y - mu - h
    out = ModelFit(
        theta_m=theta_m,
        theta_h=theta_h,
        mu=mu,
        h=h,
        residual=residual,
        objective=0.0,
        lambda1=float(lambda1),
        lambda2=float(lambda2),
        iterations_used=it,
        converged=converged,
        inner_converged=bool(inner_ok),
        dual=dual,
    )
    out.objective = objective(y, out, lambda1, lambda2, d)
    return out


# --- estimator facade -------------------------------------------------------


class HotspotDecomposition(TransformerMixin, BaseEstimator):
    """Smooth-trend plus sparse-hot-spot decomposition of an order-3 tensor.

    Parameters
    ----------
    mean_basis : BasisSet
        Trend basis; its year factor is replaced by an identity matching
        the data when the sizes differ.
    hotspot_basis : BasisSet, optional
        Defaults to identity factors.
    lambda1, lambda2 : float
        LASSO and fused-LASSO levels.
    ridge : float, optional
        Ridge added to the per-mode mean Gram matrices.
    max_outer, max_inner, outer_tol, inner_tol, L0
        See :class:`FistaConfig`.

    Attributes
    ----------
    fit_ : ModelFit
    theta_h_, theta_m_, mean_, hotspot_, residual_ : ndarray
    objective_ : float
    n_iter_ : int
    """

    def __init__(
        self,
        mean_basis=None,
        hotspot_basis=None,
        lambda1=0.1,
        lambda2=0.1,
        ridge=None,
        max_outer=500,
        max_inner=200,
        outer_tol=1e-6,
        inner_tol=1e-8,
        L0=None,
    ):
        self.mean_basis = mean_basis
        self.hotspot_basis = hotspot_basis
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.ridge = ridge
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.outer_tol = outer_tol
        self.inner_tol = inner_tol
        self.L0 = L0

    def _config(self) -> FistaConfig:
        return FistaConfig(
            max_outer=self.max_outer,
            max_inner=self.max_inner,
            L0=self.L0,
            outer_tol=self.outer_tol,
            inner_tol=self.inner_tol,
        )

    def _bases(self, dims):
        if self.mean_basis is None:
            raise ParameterError("mean_basis is required")
        mean = self.mean_basis
        if mean.dims[2] != dims[2]:
            mean = mean.with_years(dims[2])
        hot = self.hotspot_basis if self.hotspot_basis is not None else BasisSet.identity(dims)
        if hot.dims[2] != dims[2]:
            hot = hot.with_years(dims[2])
        return mean, hot

    def fit(self, X, y=None):
        """Decompose the tensor ``X`` of shape (n_units, n_weeks, n_years)."""
        X = check_tensor3(X)
        mean, hot = self._bases(X.shape)
        d = DifferenceSet.standard(X.shape)
        self.fit_ = fit(X, mean, hot, d, self.lambda1, self.lambda2, self._config(), ridge=self.ridge)
        self.theta_h_ = self.fit_.theta_h
        self.theta_m_ = self.fit_.theta_m
        self.mean_ = self.fit_.mu
        self.hotspot_ = self.fit_.h
        self.residual_ = self.fit_.residual
        self.objective_ = self.fit_.objective
        self.n_iter_ = self.fit_.iterations_used
        self.n_features_in_ = int(np.prod(X.shape[:2]))
        return self

    def transform(self, X):
        """Return the hot-spot component of ``X`` (refit warm-started)."""
        check_is_fitted(self, "fit_")
        X = check_tensor3(X)
        mean, hot = self._bases(X.shape)
        d = DifferenceSet.standard(X.shape)
        theta0 = self.theta_h_ if self.theta_h_.shape == X.shape else None
        res = fit(X, mean, hot, d, self.lambda1, self.lambda2, self._config(), ridge=self.ridge, theta0=theta0)
        return res.h
