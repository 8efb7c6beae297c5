"""Reference-solution fixtures and internal cross-checks."""

import numpy as np
import pytest

from evoheat.oracles import (
    circle_kernel,
    circle_kernel_fourier,
    interval_kernel,
    interval_kernel_mass,
    scaling_mass_law,
)

# values computed from the series/image definitions at 30 digits
CIRCLE_PEAK_005 = 1.27856699941568
DIRICHLET_CENTER_005 = 1.24456553300560
DIRICHLET_MASS_02 = 0.176867139747616


def test_circle_kernel_peak_value():
    v = circle_kernel(1.0, 0.05, np.array([0.5]), 0.5)[0]
    assert v == pytest.approx(CIRCLE_PEAK_005, abs=1e-12)


def test_circle_kernel_long_time_flattens():
    x = np.linspace(0.0, 1.0, 64, endpoint=False)
    v = circle_kernel(1.0, 5.0, x, 0.3)
    assert np.max(np.abs(v - 1.0)) < 1e-12


@pytest.mark.parametrize("tau", [1e-3, 1e-2, 0.1, 1.0, 10.0])
def test_image_sum_matches_fourier_series(tau):
    x = np.linspace(0.0, 1.0, 97, endpoint=False)
    a = circle_kernel(1.0, tau, x, 0.37)
    b = circle_kernel_fourier(1.0, tau, x, 0.37)
    assert np.max(np.abs(a - b)) < 1e-12


def test_circle_kernel_mass_is_one():
    n = 512
    x = np.linspace(0.0, 1.0, n, endpoint=False)
    for tau in (0.01, 0.1, 1.0):
        v = circle_kernel(1.0, tau, x, 0.5)
        assert np.sum(v) / n == pytest.approx(1.0, abs=1e-12)


def test_circle_kernel_semigroup_property():
    # integrating kernel(t1) against kernel(t2) advances the time
    n = 512
    x = np.linspace(0.0, 1.0, n, endpoint=False)
    k_a = circle_kernel(1.0, 0.03, x, 0.2)
    for target in (0.2, 0.55):
        k_b = circle_kernel(1.0, 0.04, x, target)
        conv = np.dot(k_a, k_b) / n
        direct = circle_kernel(1.0, 0.07, np.array([target]), 0.2)[0]
        assert conv == pytest.approx(direct, abs=1e-12)


def test_interval_dirichlet_center_value():
    v = interval_kernel(1.0, 0.05, np.array([0.5]), 0.5, "dirichlet")[0]
    assert v == pytest.approx(DIRICHLET_CENTER_005, abs=1e-12)


def test_interval_dirichlet_images_cross_check():
    # reflect the line kernel across both ends and compare with the series
    x = np.linspace(0.0, 1.0, 101)
    tau, x0 = 0.03, 0.4
    img = np.zeros_like(x)
    for m in range(-30, 31):
        img += (np.exp(-((x - x0 - 2 * m) ** 2) / (4 * tau))
                - np.exp(-((x + x0 - 2 * m) ** 2) / (4 * tau)))
    img /= np.sqrt(4 * np.pi * tau)
    ser = interval_kernel(1.0, tau, x, x0, "dirichlet")
    assert np.max(np.abs(img - ser)) < 1e-12


def test_interval_dirichlet_mass_decays():
    m = [interval_kernel_mass(1.0, tau, 0.5, "dirichlet")
         for tau in (0.01, 0.05, 0.1, 0.2)]
    assert m[0] < 1.0
    assert all(a > b for a, b in zip(m, m[1:]))
    assert m[-1] == pytest.approx(DIRICHLET_MASS_02, abs=1e-12)


def test_interval_neumann_mass_is_one():
    x = np.linspace(0.0, 1.0, 2001)
    v = interval_kernel(1.0, 0.07, x, 0.5, "neumann")
    assert np.trapezoid(v, x) == pytest.approx(1.0, abs=1e-8)
    assert interval_kernel_mass(1.0, 0.07, 0.5, "neumann") == 1.0


def test_interval_boundary_values_vanish_for_dirichlet():
    v = interval_kernel(1.0, 0.02, np.array([0.0, 1.0]), 0.5, "dirichlet")
    assert np.max(np.abs(v)) < 1e-13


def test_scaling_mass_law():
    rho = lambda tau: 1.0 + 0.1 * tau
    assert scaling_mass_law(rho, 1.0, "trace") == 1.0
    assert scaling_mass_law(rho, 1.0, "zero") == pytest.approx(1.1, abs=1e-15)
    with pytest.raises(ValueError):
        scaling_mass_law(rho, 1.0, "other")
