"""Higher-order kernel construction and bandwidth rules.

The moment conditions are checked two ways: through the exact moment
formula on the stored coefficients and through brute-force quadrature,
so a bug in either path cannot hide itself.
"""

from __future__ import annotations

import numpy as np
import pytest

import mqfactor as mq

# integral of z^8 k(z) for the minimal order-8 kernel, computed once with
# exact rational arithmetic and frozen here
ORDER8_MOMENT8 = -0.0010319917440497761


def _quad_moment(kernel, s: int, n: int = 200_001) -> float:
    z = np.linspace(-1.0, 1.0, n)
    return float(np.trapezoid(z**s * kernel.density(z), z))


@pytest.mark.parametrize("m", [2, 4, 6, 8])
def test_moment_conditions(m):
    kernel = mq.build_kernel(m, 1.0)
    assert kernel.moment(0) == pytest.approx(1.0, abs=1e-12)
    for s in range(1, m):
        assert abs(kernel.moment(s)) < 1e-12, f"moment {s} should vanish"
        assert abs(_quad_moment(kernel, s)) < 1e-8
    assert abs(kernel.moment(m)) > 1e-8
    assert _quad_moment(kernel, 0) == pytest.approx(1.0, abs=1e-8)


def test_order2_closed_form():
    # k(z) = (35/32)(1 - z^2)^3 is the unique minimal order-2 member
    kernel = mq.build_kernel(2, 1.0)
    c = 35.0 / 32.0
    np.testing.assert_allclose(kernel.coeffs, [c, 0.0, -3 * c, 0.0, 3 * c, 0.0, -c], atol=1e-14)
    z = np.linspace(-1, 1, 101)
    np.testing.assert_allclose(kernel.density(z), c * (1 - z**2) ** 3, atol=1e-13)


def test_order8_top_moment_frozen_value():
    kernel = mq.build_kernel(8, 1.0)
    assert kernel.moment(8) == pytest.approx(ORDER8_MOMENT8, rel=1e-12)
    assert _quad_moment(kernel, 8) == pytest.approx(ORDER8_MOMENT8, abs=1e-9)


@pytest.mark.parametrize("m", [2, 4, 8])
def test_boundary_smoothness(m):
    kernel = mq.build_kernel(m, 1.0)
    for z in (-1.0, 1.0):
        assert kernel.density(z) == pytest.approx(0.0, abs=1e-12)
        assert kernel.density_derivative(z) == pytest.approx(0.0, abs=1e-12)
    # support ends exactly at [-1, 1]
    assert kernel.density(1.0001) == 0.0
    assert kernel.density_derivative(-1.2) == 0.0
    assert kernel.survival(-1.5) == 1.0
    assert kernel.survival(1.5) == 0.0


def test_survival_properties():
    kernel = mq.build_kernel(8, 1.0)
    assert kernel.survival(-1.0) == pytest.approx(1.0, abs=1e-12)
    assert kernel.survival(1.0) == pytest.approx(0.0, abs=1e-12)
    assert kernel.survival(0.0) == pytest.approx(0.5, abs=1e-12)  # symmetry
    # K' = -k on the interior
    z = np.linspace(-0.95, 0.95, 39)
    h = 1e-6
    num = (kernel.survival(z + h) - kernel.survival(z - h)) / (2 * h)
    np.testing.assert_allclose(num, -kernel.density(z), atol=1e-6)


def test_density_derivative_matches_finite_differences():
    kernel = mq.build_kernel(8, 1.0)
    z = np.linspace(-0.95, 0.95, 39)
    h = 1e-6
    num = (kernel.density(z + h) - kernel.density(z - h)) / (2 * h)
    np.testing.assert_allclose(kernel.density_derivative(z), num, atol=1e-5)
    # scalar in, scalar out
    assert isinstance(kernel.density_derivative(0.3), float)


def test_build_kernel_validation():
    for bad in (1, 3, 0, -2, 7):
        with pytest.raises(ValueError):
            mq.build_kernel(bad, 1.0)
    with pytest.raises(ValueError):
        mq.build_kernel(2, 0.0)
    with pytest.raises(ValueError):
        mq.KernelSpec(order=2, coeffs=(1.0, float("nan")), bandwidth=1.0)


def test_default_bandwidth_rule():
    # h = scale * T^(-2c), with 1/m < c < 1/6 strictly
    assert mq.default_bandwidth(50, 8, 0.15) == pytest.approx(50.0 ** (-0.3))
    assert mq.default_bandwidth(50, 8, 0.15, scale=2.0) == pytest.approx(2.0 * 50.0 ** (-0.3))
    for bad_c in (1.0 / 8.0, 1.0 / 6.0, 0.05, 0.4):
        with pytest.raises(ValueError):
            mq.default_bandwidth(50, 8, bad_c)
    with pytest.raises(ValueError):
        mq.default_bandwidth(50, 7, 0.15)
    with pytest.raises(ValueError):
        mq.default_bandwidth(0, 8, 0.15)
    with pytest.raises(ValueError):
        mq.default_bandwidth(50, 8, 0.15, scale=-1.0)
    # below order 8 the window (1/m, 1/6) is empty; no exponent is valid
    for c in (0.15, 0.3, 0.5):
        with pytest.raises(ValueError):
            mq.default_bandwidth(100, 2, c)
    assert mq.default_bandwidth(50, 10, 0.12) == pytest.approx(50.0 ** (-0.24))
