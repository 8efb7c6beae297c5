"""Time-dependent metrics on the model meshes.

Two families are supported, matching the two mesh dimensions:

* ``density``: a 1D metric ``(rho dx)^2`` described by a positive density
  ``rho(x, tau)``; arc length is the integral of ``rho``.
* ``conformal``: a 2D metric ``exp(2 phi) (dx^2 + dy^2)`` described by the
  conformal exponent ``phi(x, y, tau)``.

A metric sample at fixed ``tau`` bundles the pointwise quantities the
discrete operators need: the metric coefficient, the volume density, the
half time derivative of the metric (a symmetric tensor, stored through its
conformal factor), and its trace.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .meshes import Mesh

MIN_METRIC_EIGENVALUE = 1e-10


@dataclass(frozen=True)
class MetricFamily:
    """A one-parameter family of metrics over backward time.

    Parameters
    ----------
    kind : str
        ``density`` (1D) or ``conformal`` (2D).
    value : callable
        ``rho(x, tau)`` for density metrics, ``phi(x, y, tau)`` for
        conformal ones. Must accept numpy arrays in the space arguments.
    dvalue_dtau : callable, optional
        Analytic time derivative with the same signature. When absent,
        samples fall back to central differences in ``tau``.
    name : str
        Label used in reports.
    """

    kind: str
    value: Callable
    dvalue_dtau: Callable | None = None
    name: str = "metric"

    def __post_init__(self):
        if self.kind not in ("density", "conformal"):
            raise ValueError(f"unknown metric kind {self.kind!r}")


@dataclass(frozen=True)
class MetricSample:
    """Pointwise metric data at a single time.

    Attributes
    ----------
    tau : float
        Sample time.
    kind : str
        Family kind, ``density`` or ``conformal``.
    factor : ndarray
        ``rho`` (density) or ``phi`` (conformal) per node.
    g : ndarray
        Diagonal metric coefficient per node (``rho**2`` or ``exp(2 phi)``).
    sqrt_det : ndarray
        Volume density per node (``rho`` or ``exp(2 phi)``).
    r_conformal : ndarray
        Scalar ``c`` with ``half d(g)/dtau = c * g`` per node. Both
        families evolve conformally, so the tensor is determined by it.
    trace_r : ndarray
        Metric trace of the half time derivative, ``n * c``.
    """

    tau: float
    kind: str
    factor: np.ndarray
    g: np.ndarray
    sqrt_det: np.ndarray
    r_conformal: np.ndarray
    trace_r: np.ndarray

    @property
    def dim(self) -> int:
        return 2 if self.kind == "conformal" else 1

    @property
    def r_tensor_norm(self) -> np.ndarray:
        """Metric norm of the half time derivative tensor per node."""
        return np.abs(self.r_conformal) * np.sqrt(self.dim)

    @property
    def inv_g(self) -> np.ndarray:
        return 1.0 / self.g


def sample_metric(family: MetricFamily, mesh: Mesh, tau: float,
                  fd_step: float = 1e-4) -> MetricSample:
    """Evaluate a metric family on a mesh at one time.

    The time derivative uses the analytic callable when the family has
    one and a centered difference of half width ``fd_step`` otherwise.
    """
    if family.kind == "density":
        if mesh.dim != 1:
            raise ValueError("density metrics require a 1D mesh")
        args = (mesh.x,)
    else:
        if mesh.dim != 2:
            raise ValueError("conformal metrics require a 2D mesh")
        args = (mesh.x, mesh.y)

    val = _as_field(family.value(*args, tau), mesh)
    if family.dvalue_dtau is not None:
        dval = _as_field(family.dvalue_dtau(*args, tau), mesh)
    else:
        lo = _as_field(family.value(*args, tau - fd_step), mesh)
        hi = _as_field(family.value(*args, tau + fd_step), mesh)
        dval = (hi - lo) / (2.0 * fd_step)

    if family.kind == "density":
        if np.min(val) <= 0:
            raise ValueError("density must stay positive")
        g = val * val
        sqrt_det = val
        r_conf = dval / val          # half d(rho^2)/dtau = rho rhodot = c g
        trace_r = r_conf
    else:
        g = np.exp(2.0 * val)
        sqrt_det = g
        r_conf = dval                # half d(e^{2phi})/dtau = phidot g
        trace_r = 2.0 * dval

    if np.min(g) < MIN_METRIC_EIGENVALUE:
        raise ValueError("metric eigenvalue below positivity floor")

    return MetricSample(tau=float(tau), kind=family.kind, factor=val, g=g,
                        sqrt_det=sqrt_det, r_conformal=r_conf, trace_r=trace_r)


def _as_field(v, mesh: Mesh) -> np.ndarray:
    out = np.asarray(v, dtype=float)
    if out.shape != mesh.x.shape:
        out = np.full_like(mesh.x, float(out))
    return out.copy()


def static_density(rho_fn: Callable | None = None,
                   name: str = "static") -> MetricFamily:
    """Density family frozen in time; rho_fn takes x only (default 1)."""
    if rho_fn is None:
        rho_fn = lambda x: np.ones_like(np.asarray(x, dtype=float))
    return MetricFamily(
        kind="density",
        value=lambda x, tau: rho_fn(x),
        dvalue_dtau=lambda x, tau: np.zeros_like(np.asarray(x, dtype=float)),
        name=name,
    )


def flat_circle_family() -> MetricFamily:
    return static_density(lambda x: np.ones_like(np.asarray(x, dtype=float)),
                          name="flat")


def ricci_scalar(sample: MetricSample, mesh: Mesh) -> np.ndarray:
    """Scalar curvature proxy of the spatial metric per node.

    1D metrics are flat, so the result is zero. For conformal 2D metrics
    the Gauss curvature is ``-exp(-2 phi)`` times the flat Laplacian of
    ``phi``, evaluated with centered differences.
    """
    if sample.kind == "density":
        return np.zeros(mesh.n_nodes)
    nx, ny = mesh.shape
    hx, hy = mesh.spacing
    phi = sample.factor.reshape(nx, ny)
    lap = ((np.roll(phi, -1, 0) - 2 * phi + np.roll(phi, 1, 0)) / hx**2
           + (np.roll(phi, -1, 1) - 2 * phi + np.roll(phi, 1, 1)) / hy**2)
    return (-np.exp(-2.0 * phi) * lap).ravel()


def ricci_norm(sample: MetricSample, mesh: Mesh) -> np.ndarray:
    """Metric norm of the Ricci tensor per node (zero in 1D)."""
    if sample.kind == "density":
        return np.zeros(mesh.n_nodes)
    # In 2D the Ricci tensor is the Gauss curvature times the metric.
    return np.abs(ricci_scalar(sample, mesh)) * np.sqrt(2.0)


def vector_norm(x_vec, sample: MetricSample) -> np.ndarray:
    """Metric length of a coordinate vector field, per node."""
    comps = np.broadcast_arrays(*x_vec) if len(x_vec) > 1 else x_vec
    sq = sum(np.asarray(c, dtype=float) ** 2 for c in comps)
    return np.sqrt(sample.g * sq)


def metric_equivalence_constant(family: MetricFamily, mesh: Mesh, taus,
                                region: np.ndarray | None = None) -> float:
    """Smallest C with g0 / C <= g(tau) <= C g0 over the sampled times."""
    region = slice(None) if region is None else region
    base = sample_metric(family, mesh, taus[0])
    c0 = 1.0
    for tau in taus:
        s = sample_metric(family, mesh, tau)
        ratio = s.g[region] / base.g[region]
        c0 = max(c0, float(np.max(ratio)), float(np.max(1.0 / ratio)))
    return c0


def curvature_bound(family: MetricFamily, mesh: Mesh, taus,
                    region: np.ndarray | None = None) -> float:
    """Sup over times and region of the metric speed and Ricci norms."""
    region = slice(None) if region is None else region
    k_star = 0.0
    for tau in taus:
        s = sample_metric(family, mesh, tau)
        k_star = max(k_star, float(np.max(s.r_tensor_norm[region])),
                     float(np.max(ricci_norm(s, mesh)[region])))
    return k_star
