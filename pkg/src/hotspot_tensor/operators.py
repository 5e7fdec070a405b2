"""Per-mode bases, difference operators and projection factors.

Every Kronecker-structured operator in the model is stored as its three
per-mode factors and applied with :func:`~hotspot_tensor.tensor_core.tucker_apply`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from sklearn.model_selection import KFold

from .exceptions import ConditioningError, ParameterError, ShapeError
from .tensor_core import as_tensor3, mode_n_product, tucker_apply

__all__ = [
    "BasisSet",
    "DifferenceSet",
    "ProjectionFactors",
    "gaussian_kernel_basis",
    "great_circle_distances",
    "circular_difference",
    "forward_difference_anchored",
    "projection_factors",
    "spectral_bound",
    "select_bandwidth",
    "default_ridge",
]

EARTH_RADIUS_KM = 6371.0088


def _is_identity(m: np.ndarray) -> bool:
    return m.shape[0] == m.shape[1] and np.array_equal(m, np.eye(m.shape[0]))


@dataclass(frozen=True)
class BasisSet:
    """Spatial, weekly and yearly factors of a Kronecker basis.

    The full basis acting on the canonical vectorization is
    ``kron(y, kron(w, s))``; it is never formed.
    """

    s: np.ndarray
    w: np.ndarray
    y: np.ndarray
    role: str = "mean"

    def __post_init__(self):
        if self.role not in ("mean", "hotspot"):
            raise ParameterError(f"role must be 'mean' or 'hotspot', got {self.role!r}")
        for name in ("s", "w", "y"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ShapeError(f"basis factor {name!r} must be square, got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ParameterError(f"basis factor {name!r} has non-finite entries")
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @classmethod
    def identity(cls, dims: Sequence[int], role: str = "hotspot") -> "BasisSet":
        n1, n2, n3 = dims
        return cls(np.eye(n1), np.eye(n2), np.eye(n3), role=role)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return (self.s.shape[0], self.w.shape[0], self.y.shape[0])

    @property
    def factors(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.s, self.w, self.y)

    def _lean(self, transpose: bool = False):
        out = []
        for m in self.factors:
            out.append(None if _is_identity(m) else (m.T if transpose else m))
        return out

    def apply(self, t: np.ndarray) -> np.ndarray:
        """``B @ vec(t)`` in tensor form."""
        return tucker_apply(t, *self._lean())

    def apply_transpose(self, t: np.ndarray) -> np.ndarray:
        """``B' @ vec(t)`` in tensor form."""
        return tucker_apply(t, *self._lean(transpose=True))

    def with_years(self, n3: int) -> "BasisSet":
        """Same spatial/weekly factors with an ``n3 x n3`` identity year factor."""
        return BasisSet(self.s, self.w, np.eye(n3), role=self.role)


def circular_difference(n: int) -> np.ndarray:
    """``(D v)_i = v_i - v_{(i+1) mod n}``."""
    if n < 2:
        raise ParameterError(f"circular difference needs n >= 2, got {n}")
    return np.eye(n) - np.roll(np.eye(n), 1, axis=1)


def forward_difference_anchored(n: int) -> np.ndarray:
    """Upper-bidiagonal forward difference whose last row is ``e_n'``."""
    if n < 1:
        raise ParameterError(f"anchored difference needs n >= 1, got {n}")
    return np.eye(n) - np.eye(n, k=1)


def _factor_kind(m: np.ndarray) -> str:
    n = m.shape[1]
    if m.shape[0] != n:
        return "general"
    if np.array_equal(m, np.eye(n)):
        return "identity"
    if n >= 2 and np.array_equal(m, circular_difference(n)):
        return "circular"
    if np.array_equal(m, forward_difference_anchored(n)):
        return "anchored"
    return "general"


def _along(ndim: int, axis: int, sl) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = sl
    return tuple(idx)


def _diff_along(x: np.ndarray, kind: str, mat, axis: int, transpose: bool) -> np.ndarray:
    if kind == "identity":
        return x
    if kind in ("circular", "anchored"):
        n, nd = x.shape[axis], x.ndim
        out = x.copy()
        if transpose:
            out[_along(nd, axis, slice(1, n))] -= x[_along(nd, axis, slice(0, n - 1))]
            if kind == "circular":
                out[_along(nd, axis, slice(0, 1))] -= x[_along(nd, axis, slice(n - 1, n))]
        else:
            out[_along(nd, axis, slice(0, n - 1))] -= x[_along(nd, axis, slice(1, n))]
            if kind == "circular":
                out[_along(nd, axis, slice(n - 1, n))] -= x[_along(nd, axis, slice(0, 1))]
        return out
    return mode_n_product(x, mat, axis + 1)


@dataclass(frozen=True)
class DifferenceSet:
    """Factors of the fused-penalty operator ``D = kron(y, kron(w, s))``."""

    s: np.ndarray
    w: np.ndarray
    y: np.ndarray
    _ops: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ops = []
        for name in ("s", "w", "y"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.ndim != 2:
                raise ShapeError(f"difference factor {name!r} must be a matrix")
            m.setflags(write=False)
            object.__setattr__(self, name, m)
            kind = _factor_kind(m)
            if kind == "general":
                a = sp.csr_array(m)
                ops.append((kind, a, sp.csr_array(m.T)))
            else:
                ops.append((kind, None, None))
        object.__setattr__(self, "_ops", tuple(ops))

    @classmethod
    def standard(cls, dims: Sequence[int]) -> "DifferenceSet":
        """Identity in space, circular in week, anchored forward difference in year."""
        n1, n2, n3 = dims
        return cls(np.eye(n1), circular_difference(n2), forward_difference_anchored(n3))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return (self.s.shape[1], self.w.shape[1], self.y.shape[1])

    @property
    def out_dims(self) -> Tuple[int, int, int]:
        return (self.s.shape[0], self.w.shape[0], self.y.shape[0])

    @property
    def factors(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.s, self.w, self.y)

    def with_years(self, n3: int) -> "DifferenceSet":
        return DifferenceSet(self.s, self.w, forward_difference_anchored(n3))

    def apply(self, t: np.ndarray) -> np.ndarray:
        """``D @ vec(t)`` in tensor form."""
        out = as_tensor3(t)
        for axis, (kind, m, _) in enumerate(self._ops):
            out = _diff_along(out, kind, m, axis, transpose=False)
        return out

    def apply_transpose(self, t: np.ndarray) -> np.ndarray:
        """``D' @ vec(t)`` in tensor form."""
        out = as_tensor3(t)
        for axis, (kind, _, mt) in enumerate(self._ops):
            out = _diff_along(out, kind, mt, axis, transpose=True)
        return out

    @cached_property
    def is_graph_like(self) -> bool:
        """True when every row of the Kronecker product is ``+-e_i`` or
        ``e_i - e_j``.

        Soft-thresholding the fused-only proximal point is then the exact
        proximal point of the combined penalty.
        """
        rows = []
        for m in self.factors:
            patterns = set()
            for row in m:
                nz = row[row != 0]
                if nz.size > 2 or not np.all(np.abs(nz) == 1):
                    return False
                patterns.add(tuple(np.sort(nz)))
            rows.append(patterns)
        for a in rows[0]:
            for b in rows[1]:
                for c in rows[2]:
                    nnz = len(a) * len(b) * len(c)
                    if nnz > 2:
                        return False
                    if nnz == 2:
                        signs = np.multiply.outer(np.multiply.outer(a, b), c).ravel()
                        if signs.sum() != 0:
                            return False
        return True


def gaussian_kernel_basis(dist: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gaussian kernel ``exp(-d_ij^2 / (2 c^2))`` from a distance matrix."""
    dist = np.asarray(dist, dtype=float)
    if bandwidth is None or not np.isfinite(bandwidth) or bandwidth <= 0:
        raise ParameterError(f"bandwidth must be positive, got {bandwidth!r}")
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ParameterError(f"distance matrix must be square, got {dist.shape}")
    if not np.allclose(dist, dist.T) or np.any(np.diag(dist) != 0) or np.any(dist < 0):
        raise ParameterError("distance matrix must be symmetric, nonnegative, zero-diagonal")
    return np.exp(-(dist**2) / (2.0 * bandwidth**2))


def great_circle_distances(lat: Sequence[float], lon: Sequence[float]) -> np.ndarray:
    """Pairwise haversine distances in kilometres between points in degrees."""
    lat = np.radians(np.asarray(lat, dtype=float))
    lon = np.radians(np.asarray(lon, dtype=float))
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    a = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    np.fill_diagonal(d, 0.0)
    return (d + d.T) / 2


def default_ridge(b: np.ndarray) -> float:
    """``1e-8 * trace(B'B) / n``."""
    b = np.asarray(b, dtype=float)
    return 1e-8 * float(np.sum(b * b)) / b.shape[1]


@dataclass(frozen=True)
class ProjectionFactors:
    """Per-mode projections ``H_d = B_d (B_d'B_d + eps I)^-1 B_d'``.

    ``solve`` holds ``(B_d'B_d + eps I)^-1 B_d'`` and ``P`` the per-mode
    products ``(I - H_d) B_{h,d}``. Note that
    ``I - kron(H)`` is *not* ``kron(I - H_d)``; :meth:`design` and
    :meth:`design_transpose` apply the exact reduced design
    ``X = (I - H_m) B_h``.
    """

    H: Tuple[np.ndarray, np.ndarray, np.ndarray]
    P: Tuple[np.ndarray, np.ndarray, np.ndarray]
    ridge: Tuple[float, float, float]
    hotspot: BasisSet
    solve: Tuple[np.ndarray, np.ndarray, np.ndarray] = ()

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(h.shape[0] for h in self.H)

    @cached_property
    def _lean(self):
        # scaled-identity factors (identity mean factors under a ridge) become one scalar
        scale, mats = 1.0, []
        for h in self.H:
            c = h[0, 0]
            if np.array_equal(h, c * np.eye(h.shape[0])):
                scale *= c
                mats.append(None)
            else:
                mats.append(h)
        return scale, tuple(mats)

    def project(self, t: np.ndarray) -> np.ndarray:
        """``H_m @ vec(t)``."""
        scale, mats = self._lean
        out = tucker_apply(t, *mats)
        return out * scale if scale != 1.0 else out

    def residual(self, t: np.ndarray) -> np.ndarray:
        """``(I - H_m) @ vec(t)``."""
        t = as_tensor3(t)
        return t - self.project(t)

    def design(self, theta: np.ndarray) -> np.ndarray:
        """``X theta`` with ``X = (I - H_m) B_h``."""
        return self.residual(self.hotspot.apply(theta))

    def design_transpose(self, u: np.ndarray) -> np.ndarray:
        """``X' u``; ``I - H_m`` is symmetric."""
        return self.hotspot.apply_transpose(self.residual(u))


def _ridge_solve_factor(b: np.ndarray, eps: float, mode: int) -> np.ndarray:
    """``(B'B + eps I)^-1 B'`` for one mode."""
    gram = b.T @ b
    if eps == 0:
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e12:
            raise ConditioningError(
                f"mode-{mode} mean Gram matrix is singular (cond={cond:.3g}); "
                "use a positive ridge"
            )
    gram = gram + eps * np.eye(gram.shape[0])
    try:
        c = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(
            f"mode-{mode} mean Gram matrix is not positive definite; use a larger ridge"
        ) from exc
    return scipy.linalg.cho_solve(c, b.T)


def projection_factors(
    mean: BasisSet,
    hotspot: BasisSet,
    ridge: Optional[float | Sequence[float]] = None,
) -> ProjectionFactors:
    """Build per-mode projection and residual-transformed hot-spot factors.

    Parameters
    ----------
    mean, hotspot : BasisSet
        Bases for the global trend and the hot-spots.
    ridge : float or sequence of 3 (float or None), optional
        Tikhonov term added to each ``B_d'B_d``. ``None`` (globally or per
        mode) uses :func:`default_ridge`; ``0`` demands well-conditioned
        Gram matrices.
    """
    if mean.dims != hotspot.dims:
        raise ShapeError(f"mean basis dims {mean.dims} != hot-spot basis dims {hotspot.dims}")
    if ridge is None or np.ndim(ridge) == 0:
        ridge = (ridge,) * 3
    if len(ridge) != 3:
        raise ParameterError(f"ridge must be a scalar or three values, got {ridge!r}")
    eps = tuple(
        default_ridge(b) if r is None else float(r) for b, r in zip(mean.factors, ridge)
    )
    if any(e < 0 for e in eps):
        raise ParameterError(f"ridge must be nonnegative, got {ridge!r}")
    hs, ps, solves = [], [], []
    for mode, (b, bh, e) in enumerate(zip(mean.factors, hotspot.factors, eps), start=1):
        s = _ridge_solve_factor(b, e, mode)
        s.setflags(write=False)
        solves.append(s)
        h = b @ s
        h = (h + h.T) / 2
        h.setflags(write=False)
        p = bh - h @ bh
        p.setflags(write=False)
        hs.append(h)
        ps.append(p)
    return ProjectionFactors(
        H=tuple(hs), P=tuple(ps), ridge=eps, hotspot=hotspot, solve=tuple(solves)
    )


def _lambda_max_gram(m: np.ndarray) -> float:
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return 0.0
    small = m @ m.T if m.shape[0] <= m.shape[1] else m.T @ m
    return float(scipy.linalg.eigvalsh(small)[-1])


def spectral_bound(d, inflate: float = 1.01) -> float:
    """Upper bound on the largest eigenvalue of ``D D'`` for Kronecker ``D``.

    ``d`` is a :class:`DifferenceSet` (or any object with ``factors``) or a
    single matrix. The bound is the product of per-mode largest
    eigenvalues, inflated by 1%.
    """
    factors = getattr(d, "factors", None)
    if factors is None:
        factors = (np.asarray(d),)
    return inflate * float(np.prod([_lambda_max_gram(m) for m in factors]))


def select_bandwidth(
    y: np.ndarray,
    dist: np.ndarray,
    grid: Optional[Sequence[float]] = None,
    n_folds: int = 5,
    ridge: float = 1e-3,
    random_state: int = 0,
) -> Tuple[float, np.ndarray]:
    """Pick a Gaussian-kernel bandwidth by K-fold CV over spatial units.

    Each fold holds out a set of units and predicts their values (as
    columns over every week/year) by kernel ridge regression from the
    remaining units. Returns the bandwidth with the smallest mean squared
    error and the per-candidate CV errors.
    """
    y = as_tensor3(y)
    dist = np.asarray(dist, dtype=float)
    n1 = y.shape[0]
    if dist.shape != (n1, n1):
        raise ShapeError(f"distance matrix {dist.shape} does not match {n1} units")
    if grid is None:
        off = dist[np.triu_indices(n1, 1)]
        med = float(np.median(off[off > 0])) if np.any(off > 0) else 1.0
        grid = np.geomspace(med / 10, med * 10, 8)
    grid = np.asarray(grid, dtype=float)
    n_folds = min(n_folds, n1)
    if n_folds < 2:
        raise ParameterError("bandwidth cross-validation needs at least two units")
    cols = y.reshape(n1, -1)
    folds = list(KFold(n_folds, shuffle=True, random_state=random_state).split(np.arange(n1)))
    errors = np.zeros(grid.size)
    for g, c in enumerate(grid):
        k = gaussian_kernel_basis(dist, c)
        sq = 0.0
        for train, test in folds:
            ktt = k[np.ix_(train, train)] + ridge * np.eye(train.size)
            alpha = scipy.linalg.solve(ktt, cols[train], assume_a="pos")
            sq += float(np.sum((k[np.ix_(test, train)] @ alpha - cols[test]) ** 2))
        errors[g] = sq / cols.size
    return float(grid[int(np.argmin(errors))]), errors
