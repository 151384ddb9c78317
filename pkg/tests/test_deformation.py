import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from depthadjust.deformation import (
    ScaleGridParams,
    apply_deformation,
    default_grid_shape,
    knot_coordinates,
    pullback_gradient,
    spline_basis,
    upsample_scale,
)
from depthadjust.errors import InvalidInputError

finite_grids = arrays(
    np.float64,
    st.tuples(st.integers(2, 6), st.integers(2, 6)),
    elements=st.floats(-3, 3, allow_nan=False),
)


def test_default_grid_by_orientation():
    assert default_grid_shape(480, 640) == (8, 10)
    assert default_grid_shape(640, 480) == (10, 8)


def test_zero_log_scale_is_unit_scale():
    S = upsample_scale(ScaleGridParams.zeros((8, 10)), 30, 40)
    assert np.array_equal(S, np.ones((30, 40)))


def test_constant_log_scale():
    S = upsample_scale(np.full((8, 10), 0.7), 30, 40)
    np.testing.assert_allclose(S, np.exp(0.7), rtol=1e-14)


def test_interpolates_after_exponentiating():
    # knots at columns 0 and 8 of a 9-wide image: column 4 is the midpoint
    l = np.array([[0.0, np.log(2.0)], [0.0, np.log(2.0)]])
    S = upsample_scale(l, 5, 9)
    np.testing.assert_allclose(S[:, 4], 1.5, rtol=1e-14)


def test_knot_coordinates_are_corner_aligned():
    k = knot_coordinates(29, 8)
    assert k[0] == 0.0 and k[-1] == 7.0
    np.testing.assert_allclose(np.diff(k), 7 / 28)


def test_field_is_resolution_free():
    rng = np.random.default_rng(0)
    l = rng.normal(0, 0.3, (8, 10))
    work = upsample_scale(l, 30, 40)
    full = upsample_scale(l, 120, 160, ref_shape=(30, 40), pixel_scale=0.25)
    np.testing.assert_allclose(full[::4, ::4], work, rtol=1e-13)


def test_apply_deformation_examples():
    d0 = np.full((3, 4), 2.0)
    d0[1, 1] = 0.0
    D = apply_deformation(d0, np.full((3, 4), 1.5))
    assert D[1, 1] == 0.0
    assert np.all(D[d0 > 0] == 3.0)
    assert np.array_equal(apply_deformation(d0, np.ones((3, 4))), d0)


def test_apply_deformation_shape_mismatch():
    with pytest.raises(InvalidInputError):
        apply_deformation(np.ones((3, 4)), np.ones((4, 3)))


def test_params_validation():
    with pytest.raises(InvalidInputError):
        ScaleGridParams(np.zeros((1, 5)))
    with pytest.raises(InvalidInputError):
        ScaleGridParams(np.array([[0.0, np.nan], [0.0, 0.0]]))


def test_pullback_on_knot_pixel():
    l = np.zeros((4, 5))
    G = np.zeros((13, 17))
    G[4, 8] = 2.5  # knot (1, 2): rows 0,4,8,12 and columns 0,4,8,12,16
    g = pullback_gradient(G, l)
    expected = np.zeros((4, 5))
    expected[1, 2] = 2.5
    np.testing.assert_allclose(g, expected, atol=1e-15)
    assert not pullback_gradient(np.zeros((13, 17)), l).any()


def test_pullback_frozen_is_zero():
    p = ScaleGridParams(np.ones((3, 3)), frozen=True)
    assert np.array_equal(pullback_gradient(np.ones((10, 10)), p), np.zeros((3, 3)))


def test_pullback_matches_finite_differences():
    rng = np.random.default_rng(2)
    l = rng.normal(0, 0.2, (5, 6))
    V = rng.normal(size=(21, 26))
    g = pullback_gradient(V, l)
    h = 1e-6
    fd = np.zeros_like(l)
    for k in np.ndindex(l.shape):
        lp, lm = l.copy(), l.copy()
        lp[k] += h
        lm[k] -= h
        fd[k] = ((upsample_scale(lp, 21, 26) - upsample_scale(lm, 21, 26)) * V).sum() / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-4)


@settings(max_examples=60, deadline=None)
@given(finite_grids, st.integers(2, 40), st.integers(2, 40))
def test_positivity_and_bounds(l, H, W):
    S = upsample_scale(l, H, W)
    assert np.all(S > 0)
    assert S.min() >= np.exp(l.min()) * (1 - 1e-12)
    assert S.max() <= np.exp(l.max()) * (1 + 1e-12)


@settings(max_examples=60, deadline=None)
@given(finite_grids, st.integers(0, 2**32 - 1))
def test_knot_interpolation_exact(l, seed):
    h, w = l.shape
    # (k-1)*m + 1 pixels put knot k on pixel k*m exactly
    m = 1 + seed % 4
    S = upsample_scale(l, (h - 1) * m + 1, (w - 1) * m + 1)
    np.testing.assert_allclose(S[::m, ::m], np.exp(l), rtol=1e-13)


@settings(max_examples=60, deadline=None)
@given(finite_grids, st.integers(2, 30), st.integers(2, 30), st.integers(0, 2**32 - 1))
def test_adjoint_identity(l, H, W, seed):
    rng = np.random.default_rng(seed)
    dl = rng.normal(size=l.shape)
    v = rng.normal(size=(H, W))
    # directional derivative of upsample at l along dl is B(exp(l) * dl)
    By, Bx = spline_basis(H, W, *l.shape)
    lhs = float(((By @ (np.exp(l) * dl) @ Bx.T) * v).sum())
    rhs = float((dl * pullback_gradient(v, l)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(finite_grids, st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_pullback_is_linear(l, a, b, seed):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=(2, 12, 15))
    lhs = pullback_gradient(a * u + b * v, l)
    rhs = a * pullback_gradient(u, l) + b * pullback_gradient(v, l)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * np.abs(rhs).max() + 1e-12)
