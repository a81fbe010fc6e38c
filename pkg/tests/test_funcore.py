import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from dfmim.errors import InvalidArgument
from dfmim.funcore import (
    Curve,
    MultiCurve,
    beta_curve,
    beta_function,
    inner_product,
    make_grid,
    pointwise_transform,
)


def test_grid_endpoints_only():
    assert list(make_grid(2).points) == [0.0, 1.0]


def test_grid_midpoint():
    assert list(make_grid(3).points) == [0.0, 0.5, 1.0]


def test_grid_thirty_points():
    g = make_grid(30)
    assert g.n == 30
    assert g.points[0] == 0.0 and g.points[-1] == 1.0
    assert np.max(np.abs(np.diff(g.points) - 1 / 29)) < 1e-12


@pytest.mark.parametrize("n", [1, 0, -3])
def test_grid_too_small(n):
    with pytest.raises(InvalidArgument):
        make_grid(n)


def test_inner_product_constants():
    for n in (2, 7, 30):
        g = make_grid(n)
        assert inner_product(Curve.constant(g, 1.0), Curve.constant(g, 1.0)) == pytest.approx(1.0, abs=1e-14)


def _exact_gram():
    # closed forms of the pairwise integrals over [0, 1]
    return np.array([
        [12.5, 0.0, 0.0, -12.0 / math.pi],
        [0.0, 12.5, 18.0 / math.pi, 0.0],
        [0.0, 18.0 / math.pi, 4.5, 0.0],
        [-12.0 / math.pi, 0.0, 0.0, 4.5],
    ])


def test_closed_forms_agree_with_adaptive_quadrature():
    exact = _exact_gram()
    for i in range(4):
        for j in range(4):
            val, _ = quad(lambda t: beta_function(i + 1, t) * beta_function(j + 1, t), 0, 1, limit=200)
            assert val == pytest.approx(exact[i, j], abs=1e-9)


def test_beta1_norm_on_thirty_points():
    g = make_grid(30)
    b1 = beta_curve(1, g)
    assert abs(inner_product(b1, b1) - 12.5) / 12.5 < 1e-2


def test_beta1_beta3_orthogonal():
    g = make_grid(30)
    assert abs(inner_product(beta_curve(1, g), beta_curve(3, g))) < 1e-2


def test_pairwise_gram_against_closed_forms():
    g = make_grid(30)
    betas = [beta_curve(j, g) for j in range(1, 5)]
    gram = np.array([[inner_product(a, b) for b in betas] for a in betas])
    exact = _exact_gram()
    mixed = np.abs(gram - exact) / np.maximum(1.0, np.abs(exact))
    assert mixed.max() < 1e-2


def test_grid_refinement_is_stable():
    for n in (30, 59):
        coarse, fine = make_grid(n), make_grid(2 * n - 1)
        for i in range(1, 5):
            for j in range(1, 5):
                a = inner_product(beta_curve(i, coarse), beta_curve(j, coarse))
                b = inner_product(beta_curve(i, fine), beta_curve(j, fine))
                assert abs(a - b) <= 1e-2 * max(1.0, abs(b))


def test_inner_product_grid_mismatch():
    with pytest.raises(InvalidArgument):
        inner_product(Curve.constant(make_grid(5), 1.0), Curve.constant(make_grid(6), 1.0))


@pytest.mark.parametrize("j,t,expected", [(1, 0.0, 0.0), (3, 0.0, 3.0), (2, 0.5, -5.0)])
def test_beta_values(j, t, expected):
    assert beta_function(j, t) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("j", [0, 5, -1])
def test_beta_index_out_of_range(j):
    with pytest.raises(InvalidArgument):
        beta_curve(j, make_grid(4))


def test_pointwise_transforms():
    g = make_grid(3)
    c = Curve(g, [-2.0, 0.0, 3.0])
    assert list(pointwise_transform(c, "square").values) == [4.0, 0.0, 9.0]
    assert list(pointwise_transform(c, "abs").values) == [2.0, 0.0, 3.0]
    sq = pointwise_transform(c, "square")
    assert np.array_equal(pointwise_transform(sq, "abs").values, sq.values)
    assert pointwise_transform(c, "abs").grid is g


def test_unknown_transform():
    with pytest.raises(InvalidArgument):
        pointwise_transform(Curve.constant(make_grid(3), 1.0), "cube")


def test_curve_invariants():
    g = make_grid(4)
    with pytest.raises(InvalidArgument):
        Curve(g, [1.0, 2.0, 3.0])
    with pytest.raises(InvalidArgument):
        Curve(g, [1.0, np.nan, 0.0, 0.0])
    c = Curve(g, [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ValueError):
        c.values[0] = 5.0


def test_multicurve_shared_grid():
    with pytest.raises(InvalidArgument):
        MultiCurve((Curve.constant(make_grid(3), 1.0), Curve.constant(make_grid(4), 1.0)))
    with pytest.raises(InvalidArgument):
        MultiCurve(())
    g = make_grid(5)
    m = np.arange(10.0).reshape(5, 2)
    mc = MultiCurve.from_matrix(g, m)
    assert mc.p == 2 and mc.grid == g
    assert np.array_equal(mc.as_matrix(), m)


_values = st.lists(st.floats(-100, 100, allow_nan=False), min_size=9, max_size=9)


@settings(max_examples=60, deadline=None)
@given(_values, _values, _values, st.floats(-10, 10, allow_nan=False))
def test_bilinear_and_symmetric(a, b, c, alpha):
    g = make_grid(9)
    A, B, C = Curve(g, a), Curve(g, b), Curve(g, c)
    lhs = inner_product(Curve(g, alpha * np.asarray(a) + np.asarray(c)), B)
    rhs = alpha * inner_product(A, B) + inner_product(C, B)
    scale = max(1.0, abs(lhs), abs(rhs))
    assert abs(lhs - rhs) < 1e-10 * scale
    assert inner_product(A, B) == pytest.approx(inner_product(B, A), rel=1e-15, abs=1e-12)
    assert inner_product(A, A) >= 0.0
