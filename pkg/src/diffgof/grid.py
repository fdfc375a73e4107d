"""Spatial grids and the policy that chooses them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

MASS_TOL = 1e-10
QUAD_TOL = 1e-6
ROOT_TOL = 1e-10
WEIGHT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    nodes: np.ndarray
    lower: float
    upper: float

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ConfigError("grid needs a 1-d node vector")
        if not np.all(np.diff(nodes) > 0):
            raise ConfigError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))

    def __len__(self):
        return self.nodes.size

    def __eq__(self, other):
        return (
            isinstance(other, SpatialGrid)
            and self.nodes.shape == other.nodes.shape
            and bool(np.all(self.nodes == other.nodes))
        )

    __hash__ = None

    @property
    def spacing(self) -> float:
        return float(np.max(np.diff(self.nodes)))

    @property
    def is_uniform(self) -> bool:
        d = np.diff(self.nodes)
        return bool(np.ptp(d) <= 1e-9 * d.mean())

    def refined(self, factor: int = 2) -> "SpatialGrid":
        """Same range, ``factor`` times as many intervals."""
        x = self.nodes
        t = np.linspace(0.0, 1.0, factor + 1)[:-1]
        fine = (x[:-1, None] + np.diff(x)[:, None] * t[None, :]).ravel()
        return SpatialGrid(np.append(fine, x[-1]), self.lower, self.upper)


@dataclass(frozen=True)
class GridPolicy:
    """How :func:`~diffgof.law.build_law` lays out its grid.

    ``refine`` is the number of quadrature sub-intervals per output cell.
    """

    n_nodes: int = 4096
    width_sd: float = 15.0
    refine: int = 8
    mass_tol: float = MASS_TOL
    weight_tol: float = WEIGHT_TOL

    def __post_init__(self):
        if self.n_nodes < 512:
            raise ConfigError("grid policy needs at least 512 nodes")
        if self.refine < 2 or self.refine % 2:
            raise ConfigError("refine must be an even integer >= 2")

    def key(self) -> str:
        return f"n{self.n_nodes}-w{self.width_sd:g}-r{self.refine}-m{self.mass_tol:g}-t{self.weight_tol:g}"


def aligned_grid(lower: float, upper: float, n: int, anchor: float) -> SpatialGrid:
    """Uniform ``n``-node grid covering [lower, upper] with a node exactly at ``anchor``."""
    h = (upper - lower) / (n - 2)
    k0 = np.floor((lower - anchor) / h)
    nodes = anchor + h * (k0 + np.arange(n))
    if nodes[-1] < upper:
        nodes = nodes + h * np.ceil((upper - nodes[-1]) / h)
    i = int(np.argmin(np.abs(nodes - anchor)))
    nodes[i] = anchor
    return SpatialGrid(nodes, lower, upper)
