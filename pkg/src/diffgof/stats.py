"""Test statistics and the decision rule.

Every statistic is a nonnegative float; large values speak against the
hypothesis.  The limit functional each one is compared with is listed in
:data:`STAT_TABLES`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericalFailure
from .estimate import PathSorter, edf, lte, sigma2_at
from .law import InvariantLaw, _trapezoid_weights
from .model import DiffusionModel
from .simulate import SamplePath

# statistic -> limit functional of its critical-value table
STAT_TABLES: dict[str, str] = {
    "cvm_lte": "int_exp",
    "cvm_lte_empirical": "int_exp",
    "cvm_edf": "int_exp",
    "cvm_edf_empirical": "int_exp",
    "ks_lte": "sup_exp",
    "nn": "sup_01",
    "dk_integral": "int_01",
    "dk_sup": "sup_01",
}


def _upper_weights(law: InvariantLaw) -> tuple[np.ndarray, np.ndarray]:
    """Indices of nodes at/above the median and quadrature weights for int_mu^inf over them.

    Trapezoid over the nodes, with the partial cell between the median and the first node
    folded into that node's weight (rectangle rule, O(dx^2) for Lipschitz integrands).
    """
    idx = np.nonzero(law.upper_mask)[0]
    w = _trapezoid_weights(law.x[idx])
    w[0] += law.x[idx[0]] - law.mu
    return idx, w


def _finite(value: float, name: str) -> float:
    if not np.isfinite(value):
        raise NumericalFailure(f"{name} evaluated to {value}")
    return float(value)


# -- statistics from estimated curves (also usable with synthetic curves) ------

def cvm_lte_from(f_hat: np.ndarray, law: InvariantLaw, T: float) -> float:
    """T * int_{x >= mu} h (f_hat - f0)^2 f0 dx on the law's nodes."""
    idx, w = _upper_weights(law)
    d = np.asarray(f_hat)[idx] - law.f0[idx]
    return _finite(T * float(np.sum(w * law.h[idx] * d * d * law.f0[idx])), "cvm_lte")


def cvm_edf_from(F_hat: np.ndarray, law: InvariantLaw, T: float) -> float:
    """T * int_{x >= mu} H (F_hat - F0)^2 f0 dx on the law's nodes."""
    idx, w = _upper_weights(law)
    d = np.asarray(F_hat)[idx] - law.F0[idx]
    return _finite(T * float(np.sum(w * law.H[idx] * d * d * law.f0[idx])), "cvm_edf")


def ks_lte_from(f_hat: np.ndarray, law: InvariantLaw, T: float) -> float:
    """sqrt(T) * max_{x >= mu} g |f_hat - f0| over the law's nodes."""
    idx = np.nonzero(law.upper_mask)[0]
    d = np.abs(np.asarray(f_hat)[idx] - law.f0[idx])
    return _finite(math.sqrt(T) * float(np.max(law.g[idx] * d)), "ks_lte")


# -- path statistics -------------------------------------------------------------

def cvm_lte(path: SamplePath, model0: DiffusionModel, law0: InvariantLaw) -> float:
    return cvm_lte_from(lte(path, law0.grid, model0), law0, path.T)


def cvm_edf(path: SamplePath, model0: DiffusionModel, law0: InvariantLaw) -> float:
    return cvm_edf_from(edf(path, law0.grid), law0, path.T)


def ks_lte(path: SamplePath, model0: DiffusionModel, law0: InvariantLaw) -> float:
    """sqrt(T) sup_{x >= mu} g |f_hat - f0| over the grid nodes and every sample point above the median.

    The local-time estimate jumps at each sample value, so a grid maximum
    alone keeps growing under refinement; adding both one-sided limits at
    the samples makes the supremum exact for the piecewise estimator.
    """
    grid_part = ks_lte_from(lte(path, law0.grid, model0), law0, path.T)
    y = _upper_samples(path, law0)
    if y.size == 0:
        return grid_part
    sorter = PathSorter(path)
    s2 = sigma2_at(model0, y)
    g = np.exp(law0.weights_at(y)["log_g"])
    f0 = law0.f0_at(y)
    d = np.maximum(np.abs(sorter.lte(y, s2, "left") - f0), np.abs(sorter.lte(y, s2, "right") - f0))
    return _finite(max(grid_part, math.sqrt(path.T) * float(np.max(g * d))), "ks_lte")


def _upper_samples(path: SamplePath, law0: InvariantLaw) -> np.ndarray:
    x = path.values[:-1]
    return x[(x >= law0.mu) & (x <= law0.x[-1])]


def cvm_lte_empirical(path: SamplePath, model0: DiffusionModel, law0: InvariantLaw) -> float:
    """sum_k h(X_k) (f_hat(X_k) - f0(X_k))^2 dt over samples above the median."""
    y = _upper_samples(path, law0)
    if y.size == 0:
        return 0.0
    f_hat = PathSorter(path).lte(y, sigma2_at(model0, y))
    log_h = law0.weights_at(y)["log_h"]
    d = f_hat - law0.f0_at(y)
    return _finite(float(np.sum(np.exp(log_h) * d * d)) * path.dt, "cvm_lte_empirical")


def cvm_edf_empirical(path: SamplePath, model0: DiffusionModel, law0: InvariantLaw) -> float:
    """sum_k H(X_k) (F_hat(X_k) - F0(X_k))^2 dt over samples above the median."""
    y = _upper_samples(path, law0)
    if y.size == 0:
        return 0.0
    F_hat = PathSorter(path).edf(y)
    log_H = law0.weights_at(y)["log_H"]
    d = F_hat - law0.F0_at(y)
    return _finite(float(np.sum(np.exp(log_H) * d * d)) * path.dt, "cvm_edf_empirical")


def _martingale_residual(path: SamplePath, model0: DiffusionModel) -> np.ndarray:
    """dX_k - S0(X_k) dt for each step."""
    return path.increments - model0.S(path.values[:-1]) * path.dt


def nn(path: SamplePath, model0: DiffusionModel, law0: InvariantLaw) -> float:
    """(T E0 sigma^2)^(-1/2) sup_x |sum_{X_k < x} (dX_k - S0(X_k) dt)|.

    The supremum over all x is exact: the partial sums only change at the
    sample values, so it is the largest absolute prefix sum in sorted order.
    """
    x = path.values[:-1]
    m = _martingale_residual(path, model0)[np.argsort(x, kind="stable")]
    prefix = np.concatenate(([0.0], np.cumsum(m)))
    return _finite(float(np.max(np.abs(prefix))) / math.sqrt(path.T * law0.mean_sigma2), "nn")


def _dk_process(path: SamplePath, model0: DiffusionModel) -> np.ndarray:
    return np.concatenate(([0.0], np.cumsum(_martingale_residual(path, model0))))


def dk_integral(path: SamplePath, model0: DiffusionModel, law0: InvariantLaw) -> float:
    """(T^2 E0 sigma^2)^(-1) int_0^T M_t^2 dt with M_t = X_t - X_0 - int_0^t S0(X_s) ds."""
    M = _dk_process(path, model0)
    return _finite(float(np.sum(M[:-1] ** 2)) * path.dt / (path.T ** 2 * law0.mean_sigma2), "dk_integral")


def dk_sup(path: SamplePath, model0: DiffusionModel, law0: InvariantLaw) -> float:
    """(T E0 sigma^2)^(-1/2) sup_t |M_t|."""
    M = _dk_process(path, model0)
    return _finite(float(np.max(np.abs(M))) / math.sqrt(path.T * law0.mean_sigma2), "dk_sup")


STATISTICS: dict[str, Callable[[SamplePath, DiffusionModel, InvariantLaw], float]] = {
    "cvm_lte": cvm_lte,
    "cvm_lte_empirical": cvm_lte_empirical,
    "cvm_edf": cvm_edf,
    "cvm_edf_empirical": cvm_edf_empirical,
    "ks_lte": ks_lte,
    "nn": nn,
    "dk_integral": dk_integral,
    "dk_sup": dk_sup,
}


def compute(name: str, path: SamplePath, model0: DiffusionModel, law0: InvariantLaw) -> float:
    try:
        fn = STATISTICS[name]
    except KeyError:
        raise ConfigError(f"unknown statistic {name!r}; choose from {sorted(STATISTICS)}") from None
    return fn(path, model0, law0)


def compute_all(path: SamplePath, model0: DiffusionModel, law0: InvariantLaw, names=None) -> dict[str, float]:
    return {n: compute(n, path, model0, law0) for n in (names or STATISTICS)}


@dataclass(frozen=True)
class TestResult:
    statistic_name: str
    value: float
    epsilon: float
    critical_value: float
    reject: bool
    metadata: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.reject != (self.value > self.critical_value):
            raise ConfigError("reject must equal value > critical_value")

    def to_row(self) -> dict:
        row = asdict(self)
        meta = row.pop("metadata")
        row.update({f"meta_{k}": v for k, v in sorted(meta.items())})
        return row


def decide(name: str, value: float, table, epsilon: float, **metadata) -> TestResult:
    """Compare ``value`` with the table's (1 - epsilon)-quantile."""
    crit = table.critical_value(epsilon)
    return TestResult(name, float(value), float(epsilon), float(crit), bool(value > crit), dict(metadata))


def run_test(name: str, path: SamplePath, model0: DiffusionModel, law0: InvariantLaw, table, epsilon: float,
             **metadata) -> TestResult:
    if table.functional_id != STAT_TABLES.get(name, table.functional_id):
        raise ConfigError(f"{name} needs the {STAT_TABLES[name]} table, got {table.functional_id}")
    value = compute(name, path, model0, law0)
    metadata.setdefault("T", path.T)
    metadata.setdefault("dt", path.dt)
    metadata.setdefault("model_hash", law0.model_hash)
    return decide(name, value, table, epsilon, **metadata)


__all__ = [
    "STATISTICS",
    "STAT_TABLES",
    "TestResult",
    "compute",
    "compute_all",
    "cvm_edf",
    "cvm_edf_empirical",
    "cvm_edf_from",
    "cvm_lte",
    "cvm_lte_empirical",
    "cvm_lte_from",
    "decide",
    "dk_integral",
    "dk_sup",
    "ks_lte",
    "ks_lte_from",
    "nn",
    "run_test",
]
