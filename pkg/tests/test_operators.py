import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hotspot_tensor import (
    BasisSet,
    ConditioningError,
    DifferenceSet,
    ParameterError,
    ShapeError,
    circular_difference,
    forward_difference_anchored,
    gaussian_kernel_basis,
    projection_factors,
    select_bandwidth,
    spectral_bound,
)
from hotspot_tensor.operators import great_circle_distances
from hotspot_tensor.tensor_core import vectorize
from oracles import dense_hat, kron3, vec

vectors = arrays(np.float64, st.integers(2, 12), elements=st.floats(-5, 5, allow_nan=False))


def test_kernel_closed_forms():
    c = 1.7
    dist = np.array([[0.0, c, 1e6], [c, 0.0, 2.0], [1e6, 2.0, 0.0]])
    k = gaussian_kernel_basis(dist, c)
    np.testing.assert_array_equal(np.diag(k), 1.0)
    assert k[0, 1] == pytest.approx(np.exp(-0.5), abs=1e-12)
    assert k[0, 1] == pytest.approx(0.60653, abs=1e-5)
    assert k[0, 2] == 0.0


def test_kernel_tends_to_identity():
    dist = 1e4 * (1 - np.eye(4))
    np.testing.assert_allclose(gaussian_kernel_basis(dist, 1.0), np.eye(4), atol=1e-300)


@pytest.mark.parametrize("c", [0.0, -1.0, np.inf])
def test_kernel_rejects_bad_bandwidth(c):
    with pytest.raises(ParameterError):
        gaussian_kernel_basis(np.zeros((2, 2)), c)


def test_kernel_rejects_asymmetric():
    with pytest.raises(ParameterError):
        gaussian_kernel_basis(np.array([[0.0, 1.0], [2.0, 0.0]]), 1.0)


def test_circular_difference_examples():
    dw = circular_difference(3)
    np.testing.assert_array_equal(dw @ np.array([1.0, 2.0, 3.0]), [-1.0, -1.0, 2.0])
    np.testing.assert_array_equal(dw @ np.full(3, 4.2), 0.0)
    d7 = circular_difference(7)
    np.testing.assert_array_equal(d7.sum(axis=1), 0.0)
    for row in d7:
        assert sorted(row[row != 0]) == [-1.0, 1.0]
    assert d7[6, 0] == -1.0 and d7[6, 6] == 1.0


def test_circular_difference_needs_two():
    with pytest.raises(ParameterError):
        circular_difference(1)


def test_anchored_difference_examples():
    dy = forward_difference_anchored(3)
    np.testing.assert_array_equal(dy @ np.full(3, 2.5), [0.0, 0.0, 2.5])
    np.testing.assert_array_equal(forward_difference_anchored(1), [[1.0]])
    for n in range(1, 9):
        assert np.linalg.det(forward_difference_anchored(n)) == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        forward_difference_anchored(0)


def test_standard_difference_set():
    d = DifferenceSet.standard((3, 4, 2))
    np.testing.assert_array_equal(d.s, np.eye(3))
    np.testing.assert_array_equal(d.w, circular_difference(4))
    np.testing.assert_array_equal(d.y, forward_difference_anchored(2))
    assert d.dims == d.out_dims == (3, 4, 2)


def test_difference_apply_matches_dense(rng):
    d = DifferenceSet.standard((3, 4, 3))
    t = rng.standard_normal((3, 4, 3))
    dense = kron3(d.s, d.w, d.y)
    np.testing.assert_allclose(vectorize(d.apply(t)), dense @ vec(t), atol=1e-12)
    np.testing.assert_allclose(vectorize(d.apply_transpose(t)), dense.T @ vec(t), atol=1e-12)


def test_general_difference_factor(rng):
    dw = (np.eye(6) - np.eye(6, k=1))[:5]
    d = DifferenceSet(np.eye(2), dw, np.eye(1))
    assert d.dims == (2, 6, 1) and d.out_dims == (2, 5, 1)
    t = rng.standard_normal((2, 6, 1))
    np.testing.assert_allclose(vectorize(d.apply(t)), kron3(np.eye(2), dw, np.eye(1)) @ vec(t))


def test_graph_like_detection():
    assert DifferenceSet.standard((4, 5, 1)).is_graph_like
    assert not DifferenceSet.standard((4, 5, 2)).is_graph_like


def test_spectral_bound_examples(rng):
    eye = DifferenceSet(np.eye(3), np.eye(4), np.eye(2))
    assert spectral_bound(eye) == pytest.approx(1.01)
    assert spectral_bound(circular_difference(4), inflate=1.0) == pytest.approx(4.0, abs=1e-12)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((5, 2))
    dense = np.kron(a, b)
    exact = np.linalg.eigvalsh(dense @ dense.T)[-1]
    assert spectral_bound(np.kron(a, b), inflate=1.0) == pytest.approx(exact, rel=1e-10)
    assert spectral_bound(a, 1.0) * spectral_bound(b, 1.0) == pytest.approx(exact, rel=1e-10)


def test_spectral_bound_standard_below_sixteen():
    for dims in [(3, 4, 2), (5, 51, 13), (2, 2, 1)]:
        assert spectral_bound(DifferenceSet.standard(dims)) <= 16 * 1.01


def _random_bases(rng, dims):
    mean = BasisSet(*(rng.standard_normal((n, n)) + 2 * np.eye(n) for n in dims), role="mean")
    hot = BasisSet(*(rng.standard_normal((n, n)) for n in dims), role="hotspot")
    return mean, hot


def test_projection_factors_match_dense_hat(rng):
    dims = (3, 4, 2)
    mean, hot = _random_bases(rng, dims)
    pf = projection_factors(mean, hot, ridge=0.0)
    H = dense_hat(kron3(*mean.factors))
    t = rng.standard_normal(dims)
    np.testing.assert_allclose(vectorize(pf.project(t)), H @ vec(t), atol=1e-8)
    X = (np.eye(H.shape[0]) - H) @ kron3(*hot.factors)
    np.testing.assert_allclose(vectorize(pf.design(t)), X @ vec(t), atol=1e-8)
    np.testing.assert_allclose(vectorize(pf.design_transpose(t)), X.T @ vec(t), atol=1e-8)
    for h, p, b, bh in zip(pf.H, pf.P, mean.factors, hot.factors):
        np.testing.assert_allclose(h @ h, h, atol=1e-8)
        np.testing.assert_allclose(h, h.T, atol=1e-12)
        np.testing.assert_allclose(p, (np.eye(b.shape[0]) - h) @ bh, atol=1e-12)


def test_projection_orthonormal_basis(rng):
    full = [np.linalg.qr(rng.standard_normal((n, n)))[0] for n in (3, 4, 2)]
    mean = BasisSet(*full, role="mean")
    hot = BasisSet(*(rng.standard_normal((n, n)) for n in (3, 4, 2)))
    pf = projection_factors(mean, hot, ridge=0.0)
    for h, q, p, bh in zip(pf.H, full, pf.P, hot.factors):
        np.testing.assert_allclose(h, q @ q.T, atol=1e-12)
        np.testing.assert_allclose(p, (np.eye(q.shape[0]) - q @ q.T) @ bh, atol=1e-12)


def test_saturated_mean_absorbs_everything(rng):
    dims = (3, 4, 2)
    pf = projection_factors(BasisSet.identity(dims, "mean"), BasisSet.identity(dims), ridge=0.0)
    y = rng.standard_normal(dims)
    np.testing.assert_allclose(pf.residual(y), 0.0, atol=1e-14)


def test_singular_gram_needs_ridge():
    s = np.ones((3, 3))
    mean = BasisSet(s, np.eye(2), np.eye(1), role="mean")
    hot = BasisSet.identity((3, 2, 1))
    with pytest.raises(ConditioningError, match="ridge"):
        projection_factors(mean, hot, ridge=0.0)
    pf = projection_factors(mean, hot, ridge=1e-6)
    assert np.all(np.isfinite(pf.H[0]))


def test_projection_rejects_bad_input():
    m = BasisSet.identity((2, 3, 1), "mean")
    with pytest.raises(ShapeError):
        projection_factors(m, BasisSet.identity((2, 3, 2)))
    with pytest.raises(ParameterError):
        projection_factors(m, BasisSet.identity((2, 3, 1)), ridge=-1.0)


def test_basis_must_be_square():
    with pytest.raises(ShapeError):
        BasisSet(np.zeros((2, 3)), np.eye(2), np.eye(1))
    with pytest.raises(ParameterError):
        BasisSet(np.eye(2), np.eye(2), np.eye(1), role="other")


def test_with_years_replaces_year_factor(small_kernel):
    b = BasisSet(small_kernel, np.eye(4), np.eye(1), role="mean").with_years(5)
    assert b.dims == (10, 4, 5)
    np.testing.assert_array_equal(b.y, np.eye(5))


def test_great_circle_quarter_meridian():
    d = great_circle_distances([0.0, 0.0], [0.0, 90.0])
    assert d[0, 1] == pytest.approx(np.pi / 2 * 6371.0088, rel=1e-12)
    assert d[0, 0] == 0.0 and d[1, 0] == d[0, 1]


def test_select_bandwidth_picks_from_grid(small_kernel, rng):
    x = np.linspace(0.0, 9.0, 10)
    dist = np.abs(x[:, None] - x[None, :])
    smooth = small_kernel @ rng.standard_normal((10, 6)) / 3
    y = (smooth + 0.01 * rng.standard_normal((10, 6)))[:, :, None]
    c, errors = select_bandwidth(y, dist)
    assert errors.shape == (8,)
    grid = np.geomspace(np.median(dist[np.triu_indices(10, 1)]) / 10, np.median(dist[np.triu_indices(10, 1)]) * 10, 8)
    assert c == pytest.approx(grid[np.argmin(errors)])
    # a narrow kernel cannot predict held-out units of a smooth field
    assert errors[np.argmin(errors)] < errors[0]


# --- properties --------------------------------------------------------------


@given(vectors, st.integers(0, 100))
def test_circular_penalty_rotation_invariant(v, k):
    dw = circular_difference(v.size)
    a = np.abs(dw @ v).sum()
    b = np.abs(dw @ np.roll(v, k)).sum()
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


@given(vectors)
def test_anchored_penalty_zero_iff_zero(v):
    dy = forward_difference_anchored(v.size)
    pen = np.abs(dy @ v).sum()
    assert (pen == 0) == (not v.any())
    expect = np.abs(np.diff(v)).sum() + abs(v[-1])
    assert pen == pytest.approx(expect, rel=1e-12, abs=1e-12)
