"""Order-3 tensor algebra.

Tensors are plain ``numpy.ndarray`` objects of shape ``(n1, n2, n3)``
(space, week, year). The canonical vectorization runs mode 1 fastest and
mode 3 slowest, i.e. column-major (``order="F"``) flattening, so that::

    vectorize(tucker_apply(t, A1, A2, A3)) == kron(A3, kron(A2, A1)) @ vectorize(t)

Modes are numbered 1, 2, 3 on every public interface.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .exceptions import ShapeError

MatrixLike = Union[np.ndarray, sp.spmatrix, sp.sparray]

__all__ = [
    "ShapeError",
    "as_tensor3",
    "mode_n_product",
    "unfold",
    "fold",
    "vectorize",
    "tensorize",
    "linear_index",
    "tucker_apply",
    "kron_factors",
]


def as_tensor3(t) -> np.ndarray:
    """Return ``t`` as a float ndarray of order 3, or raise ``ShapeError``."""
    arr = np.asarray(t, dtype=float)
    if arr.ndim != 3:
        raise ShapeError(f"expected an order-3 tensor, got ndim={arr.ndim}")
    return arr


def _check_mode(mode: int) -> int:
    if mode not in (1, 2, 3):
        raise ShapeError(f"mode must be one of 1, 2, 3; got {mode!r}")
    return mode - 1


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding.

    Columns are the mode-``mode`` fibers, ordered by the canonical linear
    order of the remaining indices (lowest remaining mode fastest).
    """
    t = as_tensor3(t)
    ax = _check_mode(mode)
    return np.reshape(np.moveaxis(t, ax, 0), (t.shape[ax], -1), order="F")


def fold(m: np.ndarray, mode: int, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    ax = _check_mode(mode)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ShapeError(f"dims must have length 3, got {dims}")
    m = np.asarray(m, dtype=float)
    rest = [d for i, d in enumerate(dims) if i != ax]
    if m.ndim != 2 or m.shape != (dims[ax], rest[0] * rest[1]):
        raise ShapeError(
            f"matrix of shape {m.shape} cannot be folded along mode {mode} "
            f"into dims {dims}"
        )
    moved = np.reshape(m, (dims[ax], rest[0], rest[1]), order="F")
    return np.moveaxis(moved, 0, ax)


def vectorize(t: np.ndarray) -> np.ndarray:
    """Flatten with mode 1 fastest."""
    return np.reshape(as_tensor3(t), -1, order="F")


def tensorize(v: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    v = np.asarray(v, dtype=float).ravel()
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or v.size != int(np.prod(dims)):
        raise ShapeError(f"vector of length {v.size} does not match dims {dims}")
    return np.reshape(v, dims, order="F")


def linear_index(i: int, j: int, k: int, dims: Sequence[int]) -> int:
    """1-based position of entry ``(i, j, k)`` (1-based) in the vectorization."""
    n1, n2, n3 = dims
    if not (1 <= i <= n1 and 1 <= j <= n2 and 1 <= k <= n3):
        raise ShapeError(f"index {(i, j, k)} out of range for dims {tuple(dims)}")
    return (k - 1) * n1 * n2 + (j - 1) * n1 + i


def mode_n_product(t: np.ndarray, m: Optional[MatrixLike], mode: int) -> np.ndarray:
    """Multiply tensor ``t`` by matrix ``m`` along ``mode``.

    ``result[..., j, ...] = sum_i t[..., i, ...] * m[j, i]``. ``m=None`` is
    treated as the identity and returns ``t`` itself. Sparse matrices are
    accepted and applied without densifying.
    """
    t = as_tensor3(t)
    ax = _check_mode(mode)
    if m is None:
        return t
    if m.ndim != 2 or m.shape[1] != t.shape[ax]:
        raise ShapeError(
            f"mode-{mode} product: matrix has {m.shape[1] if m.ndim == 2 else '?'} "
            f"columns but the tensor has size {t.shape[ax]} along mode {mode}"
        )
    if sp.issparse(m):
        out = np.asarray(m @ unfold(t, mode))
        dims = list(t.shape)
        dims[ax] = m.shape[0]
        return fold(out, mode, dims)
    # tensordot contracts the mode and appends the new axis last
    out = np.tensordot(t, np.asarray(m, dtype=float), axes=([ax], [1]))
    return np.moveaxis(out, -1, ax)


def tucker_apply(
    t: np.ndarray,
    a1: Optional[MatrixLike],
    a2: Optional[MatrixLike],
    a3: Optional[MatrixLike],
) -> np.ndarray:
    """Return ``t x1 a1 x2 a2 x3 a3``; ``None`` factors are skipped."""
    out = as_tensor3(t)
    for mode, a in ((1, a1), (2, a2), (3, a3)):
        out = mode_n_product(out, a, mode)
    return out


def kron_factors(a1: np.ndarray, a2: np.ndarray, a3: np.ndarray) -> np.ndarray:
    """Dense ``a3 (x) a2 (x) a1``, the matrix acting on canonical vectors.

    Only meant for small reference computations.
    """
    return np.kron(np.asarray(a3), np.kron(np.asarray(a2), np.asarray(a1)))
