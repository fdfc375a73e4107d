"""Empirical estimators built from one observed path.

All estimators treat the path as the piecewise-constant (left-point) process
of its Euler samples; stochastic integrals are left-point Ito sums.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GridTooNarrow, WeightVanishes
from .grid import SpatialGrid
from .kernels import below_sums, kde_sorted
from .law import InvariantLaw
from .model import DiffusionModel
from .simulate import SamplePath

log = logging.getLogger(__name__)

OUTSIDE_TOL = 0.01
WEIGHT_FLOOR = 1e-8


def _nodes(grid) -> np.ndarray:
    if isinstance(grid, SpatialGrid):
        return grid.nodes
    if isinstance(grid, InvariantLaw):
        return grid.x
    nodes = np.asarray(grid, dtype=float)
    if nodes.ndim != 1 or nodes.size < 1 or np.any(np.diff(nodes) <= 0):
        raise ConfigError("evaluation points must be a strictly increasing 1-d array")
    return nodes


def sigma2_at(source, x) -> np.ndarray:
    """sigma^2 at ``x`` from a model (exact) or a law (interpolated)."""
    if isinstance(source, DiffusionModel):
        return source.sigma2(np.asarray(x, dtype=float))
    if isinstance(source, InvariantLaw):
        return source.pieces_at(x)[5]
    raise ConfigError("need a DiffusionModel or InvariantLaw for sigma^2")


def _left(path: SamplePath) -> np.ndarray:
    return path.values[:-1]


def edf(path: SamplePath, grid) -> np.ndarray:
    """Occupation-time CDF: (1/T) * time spent strictly below each node."""
    nodes = _nodes(grid)
    x = _left(path)
    outside = np.count_nonzero((x < nodes[0]) | (x > nodes[-1])) / x.shape[0]
    if outside > OUTSIDE_TOL:
        raise GridTooNarrow(f"{100 * outside:.2f}% of the occupation time lies outside the grid")
    counts = below_sums(x, np.ones((x.shape[0], 1)), nodes)[:, 0]
    return counts / x.shape[0]


def _lte_at(path: SamplePath, nodes: np.ndarray, below_dx: np.ndarray, s2: np.ndarray) -> np.ndarray:
    x0, xN = path.values[0], path.values[-1]
    num = np.abs(xN - nodes) - np.abs(x0 - nodes) - (xN - x0) + 2.0 * below_dx
    return num / (path.T * s2)


def lte_with_clip(path: SamplePath, grid, sigma2_source) -> tuple[np.ndarray, float]:
    """Local-time density estimate and the mass removed by clipping at zero.

    Uses the discrete Tanaka formula
    ``|X_T - x| - |X_0 - x| - sum sgn(X_k - x) dX_k`` divided by ``T sigma^2(x)``.
    """
    nodes = _nodes(grid)
    x = _left(path)
    dx = path.increments
    below = below_sums(x, dx[:, None], nodes)[:, 0]
    vals = _lte_at(path, nodes, below, sigma2_at(sigma2_source, nodes))
    neg = np.minimum(vals, 0.0)
    clip_mass = float(np.trapezoid(-neg, nodes)) if nodes.size > 1 else float(-neg.sum())
    if clip_mass > 0:
        log.debug("local-time estimate clipped, mass %.3g", clip_mass)
    return np.maximum(vals, 0.0), clip_mass


def lte(path: SamplePath, grid, sigma2_source) -> np.ndarray:
    """Local-time density estimate f-hat on the grid nodes (clipped at 0)."""
    return lte_with_clip(path, grid, sigma2_source)[0]


class PathSorter:
    """Exact evaluation of the occupation CDF and local-time estimate at arbitrary points.

    Sorting the left-point samples once makes ``sum_{X_k < y} (.)`` a prefix
    sum lookup, so both estimators can be evaluated at the sample points
    themselves without interpolation.
    """

    def __init__(self, path: SamplePath):
        self.path = path
        x = _left(path)
        order = np.argsort(x, kind="stable")
        self.xs = x[order]
        self.cum_dx = np.concatenate(([0.0], np.cumsum(path.increments[order])))

    def count_below(self, y, side: str = "left") -> np.ndarray:
        """Number of samples < y (``side="left"``) or <= y (``side="right"``, the right limit)."""
        return np.searchsorted(self.xs, np.asarray(y, dtype=float), side=side)

    def edf(self, y) -> np.ndarray:
        return self.count_below(y) / self.xs.shape[0]

    def lte(self, y, s2, side: str = "left") -> np.ndarray:
        y = np.asarray(y, dtype=float)
        below = self.cum_dx[self.count_below(y, side)]
        return np.maximum(_lte_at(self.path, y, below, s2), 0.0)


def kernel_density(path: SamplePath, grid, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian kernel estimate with bandwidth 1/sqrt(T) by default."""
    nodes = _nodes(grid)
    bw = 1.0 / np.sqrt(path.T) if bandwidth is None else float(bandwidth)
    if not bw > 0:
        raise ConfigError("bandwidth must be positive")
    xs = np.sort(_left(path))
    return kde_sorted(xs, nodes, bw) / xs.shape[0]


def unbiased_density(path: SamplePath, grid, model0: DiffusionModel, weight=None) -> np.ndarray:
    """Unbiased density estimate with a smooth weight function.

    ``weight`` is a pair ``(h, dh)`` of callables; the default ``h == 1``
    gives ``2/(T sigma^2(x)) * sum_{X_k < x} dX_k``.  The estimate is

        [2 sum 1{X_k<x} h(X_k) dX_k + sum 1{X_k<x} h'(X_k) sigma^2(X_k) dt] / (T sigma^2(x) h(x)).
    """
    nodes = _nodes(grid)
    x = _left(path)
    dx = path.increments
    if weight is None:
        hx = np.ones_like(x)
        hn = np.ones_like(nodes)
        dhx = np.zeros_like(x)
    else:
        h, dh = weight
        hx, hn, dhx = np.asarray(h(x), float), np.asarray(h(nodes), float), np.asarray(dh(x), float)
        if np.any(np.abs(hn) < WEIGHT_FLOOR):
            raise WeightVanishes(f"weight function below {WEIGHT_FLOOR:g} at some grid node")
    cols = np.stack([2.0 * hx * dx, dhx * model0.sigma2(x) * path.dt], axis=1)
    sums = below_sums(x, cols, nodes)
    return (sums[:, 0] + sums[:, 1]) / (path.T * model0.sigma2(nodes) * hn)


def f_star(path: SamplePath, grid, model0: DiffusionModel) -> np.ndarray:
    """Drift-based estimate (2/(T sigma^2(x))) sum_{X_k < x} S0(X_k) dt."""
    nodes = _nodes(grid)
    x = _left(path)
    sums = below_sums(x, (model0.S(x) * path.dt)[:, None], nodes)[:, 0]
    return 2.0 * sums / (path.T * model0.sigma2(nodes))


@dataclass(frozen=True, eq=False)
class EmpiricalCurves:
    x: np.ndarray
    F_hat: np.ndarray
    f_hat: np.ndarray
    f_kernel: np.ndarray
    f0: np.ndarray
    F0: np.ndarray
    clip_mass: float = 0.0

    def to_csv(self, file) -> None:
        with open(file, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "F_hat", "f_hat", "f_kernel", "f0", "F0"])
            for row in zip(self.x, self.F_hat, self.f_hat, self.f_kernel, self.f0, self.F0):
                w.writerow([repr(float(v)) for v in row])


def empirical_curves(path: SamplePath, law: InvariantLaw, model0: DiffusionModel | None = None) -> EmpiricalCurves:
    src = law if model0 is None else model0
    f_hat, clip = lte_with_clip(path, law.grid, src)
    return EmpiricalCurves(
        x=law.x.copy(),
        F_hat=edf(path, law.grid),
        f_hat=f_hat,
        f_kernel=kernel_density(path, law.grid),
        f0=law.f0.copy(),
        F0=law.F0.copy(),
        clip_mass=clip,
    )


__all__ = [
    "EmpiricalCurves",
    "PathSorter",
    "edf",
    "empirical_curves",
    "f_star",
    "kernel_density",
    "lte",
    "lte_with_clip",
    "sigma2_at",
    "unbiased_density",
]
