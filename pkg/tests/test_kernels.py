import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from nlrbf.geometry import Rect2
from nlrbf.kernels import (BumpKernel, ConstantCoefficient, LinearCoefficient, MaternKernel,
                           NonlocalKernel, TpsKernel, gamma_eval, make_coefficient,
                           make_rbf_kernel, matern_eval, matern_normalization, sigma, tps_eval)

OUTER = Rect2((-0.25, -0.25), (1.25, 1.25))


def test_tps_values():
    assert tps_eval(2, 1.0) == 0.0
    assert tps_eval(2, np.e) == pytest.approx(np.e ** 2, rel=1e-15)
    assert tps_eval(2, 0.0) == 0.0
    assert tps_eval(3, 2.0) == pytest.approx(16 * np.log(2.0), rel=1e-15)


def test_tps_rejects_low_order():
    with pytest.raises(ValueError):
        tps_eval(1, 0.5)
    with pytest.raises(ValueError):
        TpsKernel(1)


def test_tps_continuous_at_origin():
    assert abs(tps_eval(2, 1e-12)) <= 1e-20


def test_matern_normalized_at_origin():
    assert matern_eval(2, 0.0) == 1.0
    assert matern_eval(2, 1e-8) == pytest.approx(1.0, abs=1e-12)


def test_matern_matches_high_precision_bessel():
    mpmath.mp.dps = 30
    oracle = float(mpmath.besselk(1, 1)) * matern_normalization(2)
    assert matern_eval(2, 1.0) == pytest.approx(oracle, rel=1e-12)
    oracle = float(mpmath.besselk(2, 3) * mpmath.mpf(3) ** 2) * matern_normalization(3)
    assert matern_eval(3, 3.0) == pytest.approx(oracle, rel=1e-12)


def test_matern_decreasing():
    v = matern_eval(2, np.array([0.5, 1.0, 2.0]))
    assert v[0] > v[1] > v[2] > 0


def test_matern_rejects_negative_radius():
    with pytest.raises(ValueError):
        matern_eval(2, -1.0)
    assert MaternKernel(2).poly_degree == -1


def test_gamma_examples():
    eps = 0.3
    k = NonlocalKernel(BumpKernel(eps), LinearCoefficient())
    assert gamma_eval(k, (0, 0), (0, 0)) == pytest.approx(2 / np.e, rel=1e-15)
    assert gamma_eval(k, (0.1, 0.2), (0.1 + eps, 0.2)) == 0.0
    x, y = np.array([0.1, 0.2]), np.array([0.1, 0.2 + eps / 2])
    expected = (1 + 0.3 + 1 + 0.2 + eps / 2 + 0.1) * np.exp(-4 / 3)
    assert gamma_eval(k, x, y) == pytest.approx(expected, rel=1e-14)


def test_bump_bounds():
    b = BumpKernel(0.2)
    r = np.linspace(0, 0.3, 1001)
    v = b(r)
    assert np.all(v >= 0) and np.all(v <= np.exp(-1))
    assert np.all(v[r >= 0.2] == 0)


def test_gamma_exactly_symmetric(rng):
    k = NonlocalKernel(BumpKernel(0.4), make_coefficient("exponential"))
    x = rng.uniform(-0.25, 1.25, (1000, 2))
    y = x + rng.uniform(-0.3, 0.3, (1000, 2))
    np.testing.assert_array_equal(k(x, y), k(y, x))
    assert np.all(k(x, y) >= 0)


def test_gamma_compact_support(rng):
    eps = 0.125
    k = NonlocalKernel(BumpKernel(eps), LinearCoefficient())
    x = rng.uniform(0, 1, (500, 2))
    theta = rng.uniform(0, 2 * np.pi, 500)
    r = eps * (1 + rng.uniform(0, 1, 500))
    y = x + r[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
    far = np.linalg.norm(x - y, axis=1) >= eps
    assert np.all(k(x, y)[far] == 0.0)


def test_bump_derivatives_bounded_near_edge():
    eps = 0.125
    b = BumpKernel(eps)
    r, d = eps * (1 - 1e-3), eps * 1e-5
    first = (b(r + d) - b(r - d)) / (2 * d)
    second = (b(r + d) - 2 * b(r) + b(r - d)) / d ** 2
    assert abs(first) < 1e6 and abs(second) < 1e6


def test_sigma_matches_radial_integral_and_is_constant():
    eps = 0.125
    k = NonlocalKernel(BumpKernel(eps), ConstantCoefficient(0.5))
    oracle = 2 * np.pi * quad(lambda r: float(BumpKernel(eps)(r)) * r, 0, eps,
                              epsabs=0, epsrel=1e-13, limit=200)[0]
    a = sigma(k, (0.5, 0.5), OUTER)
    b = sigma(k, (0.2, 0.8), OUTER)
    assert a == pytest.approx(oracle, rel=1e-8)
    assert b == pytest.approx(oracle, rel=1e-8)


def test_sigma_vanishes_for_zero_kernel():
    k = NonlocalKernel(BumpKernel(0.125), ConstantCoefficient(0.0))
    assert sigma(k, (0.5, 0.5), OUTER) == 0.0


def test_sigma_lower_bound(rng):
    eps = 0.125
    k = NonlocalKernel(BumpKernel(eps), LinearCoefficient())
    delta = eps / 2
    for x in rng.uniform(-0.25, 1.25, (10, 2)):
        theta = rng.uniform(0, 2 * np.pi, 400)
        rad = delta * np.sqrt(rng.uniform(0, 1, 400))
        y = np.clip(x + rad[:, None] * np.column_stack([np.cos(theta), np.sin(theta)]), -0.25, 1.25)
        ys = np.vstack([y, x + [delta, 0], x + [0, delta]])
        ys = np.clip(ys, -0.25, 1.25)
        c0 = k(x, ys).min() * (1 - 1e-9)
        # Only a quarter of the ball is guaranteed inside the domain at a corner.
        assert sigma(k, x, OUTER) >= c0 * np.pi * delta ** 2 / 4


def test_kernel_factories():
    assert make_rbf_kernel("tps", 2) == TpsKernel(2)
    assert make_rbf_kernel("matern", 2) == MaternKernel(2)
    assert make_coefficient("constant", 2.5)(np.zeros((3, 2))).tolist() == [2.5] * 3
    with pytest.raises(ValueError):
        make_rbf_kernel("gaussian")
    with pytest.raises(ValueError):
        make_coefficient("quadratic")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-0.25, 1.25), min_size=4, max_size=4), st.floats(0.01, 0.5))
def test_gamma_symmetric_nonnegative_property(coords, eps):
    x, y = np.array(coords[:2]), np.array(coords[2:])
    k = NonlocalKernel(BumpKernel(eps), make_coefficient("exponential"))
    g = gamma_eval(k, x, y)
    assert g == gamma_eval(k, y, x) and g >= 0
    if np.linalg.norm(x - y) >= eps:
        assert g == 0.0
