"""Structured lattices for the 1D and 2D model geometries.

Three topologies are supported: a periodic circle, a closed interval with
two boundary nodes, and a doubly periodic torus. Node coordinates, cell
quadrature weights, and boundary bookkeeping live here; metric data is
layered on top by :mod:`evoheat.metrics`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TOPOLOGIES = ("circle", "interval", "torus2")

MIN_NODES = 16


@dataclass(frozen=True)
class Mesh:
    """Lattice of sample nodes on one of the model topologies.

    Attributes
    ----------
    topology : str
        One of ``circle``, ``interval``, ``torus2``.
    extent : tuple of float
        Coordinate length per axis (circumference for periodic axes).
    node_count : tuple of int
        Lattice resolution per axis. Periodic axes carry exactly
        ``node_count`` nodes; the interval carries ``node_count + 1``
        so that both endpoints are represented.
    origin : float
        Coordinate of the first node on the x axis.
    x, y : ndarray
        Flat coordinate arrays, one entry per node (``y`` is None in 1D).
    cell_volume : ndarray
        Coordinate measure of the cell owned by each node (trapezoid
        halving at interval endpoints). Metric volume weights multiply
        this by the volume density.
    boundary_nodes : ndarray
        Flat indices of boundary nodes; empty on closed topologies.
    """

    topology: str
    extent: tuple[float, ...]
    node_count: tuple[int, ...]
    origin: float = 0.0
    x: np.ndarray = field(repr=False, default=None)
    y: np.ndarray | None = field(repr=False, default=None)
    cell_volume: np.ndarray = field(repr=False, default=None)
    boundary_nodes: np.ndarray = field(repr=False, default=None)

    @property
    def dim(self) -> int:
        return 2 if self.topology == "torus2" else 1

    @property
    def n_nodes(self) -> int:
        return self.x.size

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.extent, self.node_count))

    @property
    def closed(self) -> bool:
        return self.topology != "interval"

    @property
    def shape(self) -> tuple[int, ...]:
        if self.topology == "torus2":
            return self.node_count
        if self.topology == "interval":
            return (self.node_count[0] + 1,)
        return (self.node_count[0],)

    def interior_mask(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return mask

    def nearest_node(self, x: float, y: float = 0.0) -> int:
        """Flat index of the node closest to the given coordinates."""
        if self.dim == 1:
            d = np.abs(self.x - x)
            if self.closed:
                d = np.minimum(d, self.extent[0] - d)
            return int(np.argmin(d))
        dx = np.abs(self.x - x)
        dx = np.minimum(dx, self.extent[0] - dx)
        dy = np.abs(self.y - y)
        dy = np.minimum(dy, self.extent[1] - dy)
        return int(np.argmin(dx * dx + dy * dy))


def build_mesh(topology: str, extent, node_count, origin: float = 0.0) -> Mesh:
    """Construct a validated mesh.

    Parameters
    ----------
    topology : str
        ``circle``, ``interval``, or ``torus2``.
    extent : float or pair of float
        Axis length(s); must be positive.
    node_count : int or pair of int
        Nodes per axis, at least 16.
    origin : float
        First node coordinate on the x axis (useful for intervals
        centered away from zero).
    """
    if topology not in TOPOLOGIES:
        raise ValueError(f"unknown topology {topology!r}")

    if topology == "torus2":
        ext = tuple(float(e) for e in np.atleast_1d(extent))
        cnt = tuple(int(n) for n in np.atleast_1d(node_count))
        if len(ext) == 1:
            ext = ext * 2
        if len(cnt) == 1:
            cnt = cnt * 2
        if len(ext) != 2 or len(cnt) != 2:
            raise ValueError("torus2 needs one or two extents and node counts")
    else:
        ext = (float(np.atleast_1d(extent)[0]),)
        cnt = (int(np.atleast_1d(node_count)[0]),)

    if any(e <= 0 for e in ext):
        raise ValueError("extent must be positive")
    if any(n < MIN_NODES for n in cnt):
        raise ValueError(f"node_count must be at least {MIN_NODES} per axis")

    if topology == "circle":
        h = ext[0] / cnt[0]
        x = origin + h * np.arange(cnt[0])
        cell = np.full(cnt[0], h)
        boundary = np.zeros(0, dtype=int)
        y = None
    elif topology == "interval":
        n = cnt[0]
        h = ext[0] / n
        x = origin + h * np.arange(n + 1)
        cell = np.full(n + 1, h)
        cell[0] = cell[-1] = h / 2.0
        boundary = np.array([0, n], dtype=int)
        y = None
    else:
        hx = ext[0] / cnt[0]
        hy = ext[1] / cnt[1]
        gx = origin + hx * np.arange(cnt[0])
        gy = hy * np.arange(cnt[1])
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        x = X.ravel()
        y = Y.ravel()
        cell = np.full(x.size, hx * hy)
        boundary = np.zeros(0, dtype=int)

    return Mesh(
        topology=topology,
        extent=ext,
        node_count=cnt,
        origin=origin,
        x=x,
        y=y,
        cell_volume=cell,
        boundary_nodes=boundary,
    )
