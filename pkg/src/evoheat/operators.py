"""Discrete geometric operators on metric samples.

The stencils are chosen conservative so that two summation identities
hold exactly (to rounding) on closed meshes, with the volume weights of
the same metric sample:

* the Laplace-Beltrami matrix is self-adjoint: ``sum(w * Lap u) ==
  sum(u * Lap w)`` against the metric measure;
* advection and divergence are exact negative transposes:
  ``integral(X . grad u) == -integral(u * div X)``.

On the interval the Laplacian keeps the flux form at zero-flux ends
(half cells), matching the trapezoid quadrature weights; advection and
divergence fall back to one-sided second order differences there.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sparse

from .meshes import Mesh
from .metrics import MetricSample

BOUNDARY_KINDS = ("closed", "dirichlet", "neumann")


def measure_weights(sample: MetricSample, mesh: Mesh) -> np.ndarray:
    """Quadrature weight of the metric volume measure per node."""
    return mesh.cell_volume * sample.sqrt_det


def volume_integral(u: np.ndarray, sample: MetricSample, mesh: Mesh,
                    region=None) -> float:
    """Integral of a node field against the metric volume measure.

    ``region`` restricts the sum to a boolean mask or index array.
    """
    w = measure_weights(sample, mesh)
    if region is None:
        return float(np.dot(u, w))
    return float(np.dot(u[region], w[region]))


def laplacian_matrix(sample: MetricSample, mesh: Mesh,
                     boundary: str = "closed"):
    """Sparse Laplace-Beltrami operator for one metric sample.

    Dirichlet boundary rows are left zero; the time stepper installs
    identity rows there. Neumann rows carry the half-cell flux stencil,
    which keeps the matrix self-adjoint against the trapezoid measure.
    """
    if boundary not in BOUNDARY_KINDS:
        raise ValueError(f"unknown boundary {boundary!r}")
    if mesh.dim == 1:
        return _laplacian_1d(sample, mesh, boundary)
    return _laplacian_torus(sample, mesh)


def _laplacian_1d(sample: MetricSample, mesh: Mesh, boundary: str):
    rho = sample.factor
    n = mesh.n_nodes
    h = mesh.spacing[0]

    if mesh.topology == "circle":
        rho_e = 0.5 * (rho + np.roll(rho, -1))      # edge i -> i+1
        a_plus = 1.0 / (rho * rho_e * h * h)
        a_minus = 1.0 / (rho * np.roll(rho_e, 1) * h * h)
        rows = np.concatenate([np.arange(n)] * 3)
        cols = np.concatenate([np.arange(n),
                               (np.arange(n) + 1) % n,
                               (np.arange(n) - 1) % n])
        vals = np.concatenate([-(a_plus + a_minus), a_plus, a_minus])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

    # interval: edges 0..n-2 between consecutive nodes
    rho_e = 0.5 * (rho[:-1] + rho[1:])
    rows, cols, vals = [], [], []
    idx = np.arange(1, n - 1)
    a_plus = 1.0 / (rho[idx] * rho_e[idx] * h * h)
    a_minus = 1.0 / (rho[idx] * rho_e[idx - 1] * h * h)
    rows.append(idx); cols.append(idx + 1); vals.append(a_plus)
    rows.append(idx); cols.append(idx - 1); vals.append(a_minus)
    rows.append(idx); cols.append(idx); vals.append(-(a_plus + a_minus))
    if boundary == "neumann":
        a0 = 2.0 / (rho[0] * rho_e[0] * h * h)
        an = 2.0 / (rho[-1] * rho_e[-1] * h * h)
        rows.append(np.array([0, 0, n - 1, n - 1]))
        cols.append(np.array([0, 1, n - 1, n - 2]))
        vals.append(np.array([-a0, a0, -an, an]))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _torus_neighbors(mesh: Mesh):
    nx, ny = mesh.node_count
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ix = ix.ravel()
    iy = iy.ravel()
    east = ((ix + 1) % nx) * ny + iy
    west = ((ix - 1) % nx) * ny + iy
    north = ix * ny + (iy + 1) % ny
    south = ix * ny + (iy - 1) % ny
    return east, west, north, south


def _laplacian_torus(sample: MetricSample, mesh: Mesh):
    n = mesh.n_nodes
    hx, hy = mesh.spacing
    east, west, north, south = _torus_neighbors(mesh)
    pref = np.exp(-2.0 * sample.factor)
    cx = pref / (hx * hx)
    cy = pref / (hy * hy)
    rows = np.concatenate([np.arange(n)] * 5)
    cols = np.concatenate([np.arange(n), east, west, north, south])
    vals = np.concatenate([-2.0 * (cx + cy), cx, cx, cy, cy])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def advection_matrix(sample: MetricSample, mesh: Mesh, x_vec):
    """Sparse directional derivative ``u -> X . grad u``.

    ``x_vec`` is a node array in 1D or a pair of node arrays in 2D
    (coordinate components of the vector field). Centered differences,
    one-sided second order at interval ends.
    """
    n = mesh.n_nodes
    if mesh.dim == 1:
        X = np.asarray(x_vec[0] if isinstance(x_vec, (tuple, list)) else x_vec,
                       dtype=float)
        h = mesh.spacing[0]
        if mesh.topology == "circle":
            rows = np.concatenate([np.arange(n)] * 2)
            cols = np.concatenate([(np.arange(n) + 1) % n,
                                   (np.arange(n) - 1) % n])
            vals = np.concatenate([X / (2 * h), -X / (2 * h)])
            return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        rows, cols, vals = [], [], []
        idx = np.arange(1, n - 1)
        rows.append(idx); cols.append(idx + 1); vals.append(X[idx] / (2 * h))
        rows.append(idx); cols.append(idx - 1); vals.append(-X[idx] / (2 * h))
        rows.append(np.array([0, 0, 0]))
        cols.append(np.array([0, 1, 2]))
        vals.append(X[0] * np.array([-3.0, 4.0, -1.0]) / (2 * h))
        rows.append(np.array([n - 1, n - 1, n - 1]))
        cols.append(np.array([n - 1, n - 2, n - 3]))
        vals.append(X[-1] * np.array([3.0, -4.0, 1.0]) / (2 * h))
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n))

    X1 = np.asarray(x_vec[0], dtype=float)
    X2 = np.asarray(x_vec[1], dtype=float)
    hx, hy = mesh.spacing
    east, west, north, south = _torus_neighbors(mesh)
    rows = np.concatenate([np.arange(n)] * 4)
    cols = np.concatenate([east, west, north, south])
    vals = np.concatenate([X1 / (2 * hx), -X1 / (2 * hx),
                           X2 / (2 * hy), -X2 / (2 * hy)])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def laplace_beltrami(u: np.ndarray, sample: MetricSample, mesh: Mesh,
                     boundary: str = "closed") -> np.ndarray:
    return laplacian_matrix(sample, mesh, boundary) @ u


def gradient_term(u: np.ndarray, sample: MetricSample, mesh: Mesh,
                  x_vec) -> np.ndarray:
    return advection_matrix(sample, mesh, x_vec) @ u


def _centered_dx_1d(f: np.ndarray, mesh: Mesh) -> np.ndarray:
    h = mesh.spacing[0]
    if mesh.topology == "circle":
        return (np.roll(f, -1) - np.roll(f, 1)) / (2 * h)
    d = np.empty_like(f)
    d[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    d[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    d[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    return d


def coordinate_gradient(u: np.ndarray, mesh: Mesh):
    """Centered coordinate derivatives, one array per axis."""
    if mesh.dim == 1:
        return (_centered_dx_1d(u, mesh),)
    nx, ny = mesh.shape
    hx, hy = mesh.spacing
    U = u.reshape(nx, ny)
    du = (np.roll(U, -1, 0) - np.roll(U, 1, 0)) / (2 * hx)
    dv = (np.roll(U, -1, 1) - np.roll(U, 1, 1)) / (2 * hy)
    return du.ravel(), dv.ravel()


def grad_norm_sq(u: np.ndarray, sample: MetricSample, mesh: Mesh) -> np.ndarray:
    """Pointwise squared metric norm of the gradient of ``u``."""
    grads = coordinate_gradient(u, mesh)
    out = np.zeros(mesh.n_nodes)
    for d in grads:
        out += d * d
    return out / sample.g


def divergence_of(x_vec, sample: MetricSample, mesh: Mesh) -> np.ndarray:
    """Metric divergence of a coordinate vector field.

    Computed in conservation form, ``div X = (1/sqrt_det) d_i (sqrt_det
    X^i)``, with the same centered stencils as ``advection_matrix`` so
    the discrete divergence theorem holds exactly on closed meshes.
    """
    sd = sample.sqrt_det
    if mesh.dim == 1:
        X = np.asarray(x_vec[0] if isinstance(x_vec, (tuple, list)) else x_vec,
                       dtype=float)
        return _centered_dx_1d(sd * X, mesh) / sd
    X1 = np.asarray(x_vec[0], dtype=float)
    X2 = np.asarray(x_vec[1], dtype=float)
    nx, ny = mesh.shape
    hx, hy = mesh.spacing
    F1 = (sd * X1).reshape(nx, ny)
    F2 = (sd * X2).reshape(nx, ny)
    d1 = (np.roll(F1, -1, 0) - np.roll(F1, 1, 0)) / (2 * hx)
    d2 = (np.roll(F2, -1, 1) - np.roll(F2, 1, 1)) / (2 * hy)
    return (d1 + d2).ravel() / sd
