"""Discrete operator identities and accuracy."""

import numpy as np
import pytest

from evoheat.expressions import family_from_expression
from evoheat.meshes import build_mesh
from evoheat.metrics import MetricFamily, sample_metric
from evoheat.operators import (
    advection_matrix,
    divergence_of,
    grad_norm_sq,
    gradient_term,
    laplace_beltrami,
    laplacian_matrix,
    measure_weights,
    volume_integral,
)

WAVY = family_from_expression("density", "1.5 + 0.5*sin(2*pi*x)")


def circle_setup(n=64):
    mesh = build_mesh("circle", 1.0, n)
    return mesh, sample_metric(WAVY, mesh, 0.0)


def test_laplacian_self_adjoint_on_circle():
    mesh, s = circle_setup()
    u = np.sin(2 * np.pi * mesh.x) + 0.3 * np.cos(6 * np.pi * mesh.x)
    w = np.cos(4 * np.pi * mesh.x) + 0.1 * mesh.x * (1 - mesh.x)
    lhs = volume_integral(w * laplace_beltrami(u, s, mesh), s, mesh)
    rhs = volume_integral(u * laplace_beltrami(w, s, mesh), s, mesh)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_laplacian_integrates_to_zero_on_closed_meshes():
    mesh, s = circle_setup()
    u = np.exp(np.sin(2 * np.pi * mesh.x))
    assert volume_integral(laplace_beltrami(u, s, mesh), s, mesh) == \
        pytest.approx(0.0, abs=1e-12)

    tm = build_mesh("torus2", 1.0, 24)
    fam = MetricFamily("conformal",
                       value=lambda x, y, tau: 0.1 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y))
    ts = sample_metric(fam, tm, 0.0)
    v = np.cos(2 * np.pi * tm.x) * np.sin(4 * np.pi * tm.y)
    assert volume_integral(laplace_beltrami(v, ts, tm), ts, tm) == \
        pytest.approx(0.0, abs=1e-12)


def test_divergence_theorem_exact_on_circle():
    mesh, s = circle_setup()
    u = np.cos(2 * np.pi * mesh.x) + 0.2 * np.sin(8 * np.pi * mesh.x)
    X = 0.7 + 0.3 * np.sin(2 * np.pi * mesh.x)
    adv = volume_integral(gradient_term(u, s, mesh, X), s, mesh)
    div = volume_integral(u * divergence_of(X, s, mesh), s, mesh)
    assert adv == pytest.approx(-div, abs=1e-12)


def test_divergence_theorem_exact_on_torus():
    tm = build_mesh("torus2", 1.0, 16)
    fam = MetricFamily("conformal",
                       value=lambda x, y, tau: 0.15 * np.cos(2 * np.pi * (x + y)))
    ts = sample_metric(fam, tm, 0.0)
    u = np.sin(2 * np.pi * tm.x) + np.cos(2 * np.pi * tm.y)
    X = (0.4 * np.sin(2 * np.pi * tm.y), -0.2 + 0.1 * np.cos(2 * np.pi * tm.x))
    adv = volume_integral(gradient_term(u, ts, tm, X), ts, tm)
    div = volume_integral(u * divergence_of(X, ts, tm), ts, tm)
    assert adv == pytest.approx(-div, abs=1e-12)


def test_constant_density_quarter_laplacian():
    # with density 2 the operator reduces to a quarter of the flat one
    mesh = build_mesh("circle", 1.0, 256)
    fam = family_from_expression("density", "2")
    s = sample_metric(fam, mesh, 0.0)
    u = np.cos(2 * np.pi * mesh.x)
    exact = -0.25 * (2 * np.pi) ** 2 * u
    got = laplace_beltrami(u, s, mesh)
    assert np.max(np.abs(got - exact)) < 2e-3


def test_laplacian_second_order_convergence():
    def sup_error(n):
        mesh = build_mesh("circle", 1.0, n)
        s = sample_metric(WAVY, mesh, 0.0)
        x = mesh.x
        u = np.cos(2 * np.pi * x) + 0.3 * np.sin(4 * np.pi * x)
        rho = 1.5 + 0.5 * np.sin(2 * np.pi * x)
        drho = np.pi * np.cos(2 * np.pi * x)
        du = -2 * np.pi * np.sin(2 * np.pi * x) + 1.2 * np.pi * np.cos(4 * np.pi * x)
        d2u = -(2 * np.pi) ** 2 * np.cos(2 * np.pi * x) \
            - 0.3 * (4 * np.pi) ** 2 * np.sin(4 * np.pi * x)
        exact = d2u / rho ** 2 - drho * du / rho ** 3
        return np.max(np.abs(laplace_beltrami(u, s, mesh) - exact))

    e1, e2 = sup_error(64), sup_error(128)
    assert np.log2(e1 / e2) > 1.9


def test_torus_laplacian_second_order_convergence():
    def sup_error(n):
        mesh = build_mesh("torus2", 1.0, n)
        fam = MetricFamily(
            "conformal",
            value=lambda x, y, tau: 0.1 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y))
        s = sample_metric(fam, mesh, 0.0)
        u = np.sin(2 * np.pi * mesh.x) * np.sin(4 * np.pi * mesh.y)
        flat = -((2 * np.pi) ** 2 + (4 * np.pi) ** 2) * u
        exact = np.exp(-2 * s.factor) * flat
        return np.max(np.abs(laplace_beltrami(u, s, mesh) - exact))

    e1, e2 = sup_error(24), sup_error(48)
    assert np.log2(e1 / e2) > 1.9


def test_divergence_example_flat_density():
    mesh = build_mesh("circle", 1.0, 256)
    fam = family_from_expression("density", "1")
    s = sample_metric(fam, mesh, 0.0)
    X = np.sin(2 * np.pi * mesh.x)
    exact = 2 * np.pi * np.cos(2 * np.pi * mesh.x)
    assert np.max(np.abs(divergence_of(X, s, mesh) - exact)) < 1e-3


def test_neumann_interval_fluxes_telescope():
    mesh = build_mesh("interval", 1.0, 64)
    fam = family_from_expression("density", "1 + 0.3*x")
    s = sample_metric(fam, mesh, 0.0)
    u = np.cos(np.pi * mesh.x) + 0.5 * mesh.x
    lap = laplace_beltrami(u, s, mesh, boundary="neumann")
    assert volume_integral(lap, s, mesh) == pytest.approx(0.0, abs=1e-12)


def test_dirichlet_rows_are_empty():
    mesh = build_mesh("interval", 1.0, 32)
    s = sample_metric(family_from_expression("density", "1"), mesh, 0.0)
    L = laplacian_matrix(s, mesh, boundary="dirichlet")
    assert abs(L[0]).sum() == 0 and abs(L[-1]).sum() == 0


def test_volume_integral_scaled_circle():
    mesh = build_mesh("circle", 1.0, 64)
    fam = family_from_expression("density", "1 + 0.1*tau")
    s = sample_metric(fam, mesh, 1.0)
    assert volume_integral(np.ones(mesh.n_nodes), s, mesh) == \
        pytest.approx(1.1, rel=1e-12)


def test_volume_integral_region_mask():
    mesh = build_mesh("circle", 1.0, 64)
    s = sample_metric(family_from_expression("density", "1"), mesh, 0.0)
    region = mesh.x < 0.5
    assert volume_integral(np.ones(mesh.n_nodes), s, mesh, region) == \
        pytest.approx(0.5, rel=1e-12)


def test_grad_norm_matches_metric():
    mesh, s = circle_setup(256)
    u = np.sin(2 * np.pi * mesh.x)
    rho = s.factor
    exact = (2 * np.pi * np.cos(2 * np.pi * mesh.x)) ** 2 / rho ** 2
    assert np.max(np.abs(grad_norm_sq(u, s, mesh) - exact)) < 5e-2


def test_advection_matrix_matches_gradient_term():
    mesh, s = circle_setup()
    u = np.cos(4 * np.pi * mesh.x)
    X = 0.3 * np.ones(mesh.n_nodes)
    A = advection_matrix(s, mesh, X)
    assert np.allclose(A @ u, gradient_term(u, s, mesh, X))


def test_measure_weights_sum_to_total_volume():
    mesh, s = circle_setup()
    assert measure_weights(s, mesh).sum() == pytest.approx(
        volume_integral(np.ones(mesh.n_nodes), s, mesh))
