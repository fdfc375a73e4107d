"""Composite hypotheses: drift known up to a scalar parameter theta.

Builtin families:

* ``ou_rate``          S(theta, x) = -theta (x - b), b fixed (median b does not move with theta)
* ``switching_shift``  S(theta, x) = -a sgn(x - theta), a fixed (theta is the median)
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .errors import ConfigError, MedianDependsOnTheta
from .estimate import lte
from .law import InvariantLaw, build_law, _trapezoid_weights
from .model import DiffusionModel, DiffusionSpec, DriftSpec
from .simulate import SamplePath
from .stats import cvm_lte_from

log = logging.getLogger(__name__)

PROFILE_POINTS = 256
FD_REL_STEP = 1e-4
STATIONARITY_TOL = 1e-6


@dataclass(frozen=True)
class ParametricModel:
    family: str
    lower: float
    upper: float
    fixed: float
    diffusion: DiffusionSpec = field(default_factory=lambda: DiffusionSpec.constant(1.0))

    def __post_init__(self):
        if self.family not in ("ou_rate", "switching_shift"):
            raise ConfigError(f"unknown parametric family {self.family!r}")
        if not (math.isfinite(self.lower) and math.isfinite(self.upper) and self.lower < self.upper):
            raise ConfigError("theta bounds must be finite with lower < upper")
        if self.family == "ou_rate" and self.lower <= 0:
            raise ConfigError("ou_rate needs theta > 0 (ergodicity)")
        if self.family == "switching_shift" and self.fixed <= 0:
            raise ConfigError("switching_shift needs a > 0")

    @classmethod
    def ou_rate(cls, b: float = 0.0, sigma: float = math.sqrt(2.0), bounds=(0.05, 10.0)) -> "ParametricModel":
        return cls("ou_rate", bounds[0], bounds[1], b, DiffusionSpec.constant(sigma))

    @classmethod
    def switching_shift(cls, a: float = 1.0, sigma: float = 1.0, bounds=(-5.0, 5.0)) -> "ParametricModel":
        return cls("switching_shift", bounds[0], bounds[1], a, DiffusionSpec.constant(sigma))

    @property
    def median_depends_on_theta(self) -> bool:
        return self.family == "switching_shift"

    def model_at(self, theta: float) -> DiffusionModel:
        if self.family == "ou_rate":
            drift = DriftSpec.ou(theta, self.fixed)
        else:
            drift = DriftSpec.switching(self.fixed, theta)
        return DiffusionModel(drift, self.diffusion, f"{self.family}(theta={theta:.6g})")

    def S(self, theta, x):
        x = np.asarray(x, dtype=float)
        if self.family == "ou_rate":
            return -theta * (x - self.fixed)
        return -self.fixed * np.sign(x - theta)

    def dS(self, theta, x):
        """dS/dtheta (the switching shift has a point mass there; its regular part is 0)."""
        x = np.asarray(x, dtype=float)
        if self.family == "ou_rate":
            return -(x - self.fixed)
        return np.zeros_like(x)

    def dS_dx(self, theta, x):
        """d^2 S / (dtheta dx)."""
        x = np.asarray(x, dtype=float)
        if self.family == "ou_rate":
            return -np.ones_like(x)
        return np.zeros_like(x)

    def sigma(self, x):
        return self.diffusion.sigma_of(x)

    def sigma2(self, x):
        return self.diffusion.sigma2(x)

    def dsigma(self, x):
        return self.diffusion.dsigma(x)


@dataclass(frozen=True)
class CompositeFit:
    theta_hat: float
    fisher_info: float
    r_value: float
    boundary: bool
    profile_theta: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))
    profile_loglik: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))

    def to_row(self) -> dict:
        return {"theta_hat": self.theta_hat, "fisher_info": self.fisher_info, "r_over_T": self.r_value,
                "boundary": self.boundary}


# ---------------------------------------------------------------------------


def loglik(path: SamplePath, pmodel: ParametricModel, theta: float) -> float:
    """Discretised log-likelihood sum (S/sigma^2) dX - 1/2 sum (S^2/sigma^2) dt (left points)."""
    x = path.values[:-1]
    s = pmodel.S(theta, x)
    s2 = pmodel.sigma2(x)
    return float(np.sum(s * path.increments / s2) - 0.5 * path.dt * np.sum(s * s / s2))


def maximize_profile(fn, lower: float, upper: float, n: int = PROFILE_POINTS, xtol: float = 1e-10):
    """Grid search over ``n`` points then golden-section refinement in the winning bracket.

    Returns ``(theta, boundary, grid, values)``; ``boundary`` flags a grid maximum at an end point.
    """
    grid = np.linspace(lower, upper, n)
    vals = np.array([fn(t) for t in grid])
    i = int(np.nanargmax(vals))
    boundary = i in (0, n - 1)
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n - 1)]
    res = optimize.minimize_scalar(lambda t: -fn(t), bounds=(lo, hi), method="bounded", options={"xatol": xtol})
    theta = float(res.x) if -res.fun >= vals[i] else float(grid[i])
    return theta, boundary, grid, vals


def _shift_mle(path: SamplePath, pmodel: ParametricModel):
    """Exact maximiser for the switching shift.

    The log-likelihood equals const + (2a/sigma^2) sum_{X_k < theta} dX_k, a
    step function of theta, so the maximiser is found from prefix sums over
    the sorted sample; the midpoint of the best interval is returned.
    """
    x = path.values[:-1]
    if pmodel.diffusion.family != "constant":
        raise ConfigError("switching_shift needs a constant diffusion")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    pref = np.concatenate(([0.0], np.cumsum(path.increments[order])))
    # candidate intervals (xs[j-1], xs[j]) with the end intervals clipped to the bounds
    left = np.concatenate(([pmodel.lower], xs))
    right = np.concatenate((xs, [pmodel.upper]))
    ok = (right > pmodel.lower) & (left < pmodel.upper)
    j = int(np.flatnonzero(ok)[np.argmax(pref[ok])])
    a, b = max(left[j], pmodel.lower), min(right[j], pmodel.upper)
    theta = 0.5 * (a + b)
    boundary = a <= pmodel.lower or b >= pmodel.upper
    return theta, boundary


def fisher_info(pmodel: ParametricModel, theta: float, law: InvariantLaw | None = None) -> float:
    """Stationary Fisher information int (dS/dtheta / sigma)^2 f_theta dx."""
    if pmodel.family == "switching_shift":
        return math.inf
    law = law or build_law(pmodel.model_at(theta))
    x = law.x
    integrand = pmodel.dS(theta, x) ** 2 / pmodel.sigma2(x) * law.f0
    return float(np.sum(_trapezoid_weights(x) * integrand))


def mle_fit(path: SamplePath, pmodel: ParametricModel, law: InvariantLaw | None = None) -> CompositeFit:
    if pmodel.family == "switching_shift":
        theta, boundary = _shift_mle(path, pmodel)
        grid = np.linspace(pmodel.lower, pmodel.upper, PROFILE_POINTS)
        prof = np.array([loglik(path, pmodel, t) for t in grid])
        fit = CompositeFit(theta, math.inf, 0.0, boundary, grid, prof)
    else:
        theta, boundary, grid, prof = maximize_profile(lambda t: loglik(path, pmodel, t), pmodel.lower, pmodel.upper)
        law = law if law is not None else build_law(pmodel.model_at(theta))
        fit = CompositeFit(theta, fisher_info(pmodel, theta, law), r_statistic(path, pmodel, theta) / path.T,
                           boundary, grid, prof)
    if fit.boundary:
        warnings.warn(f"MLE at the boundary of ({pmodel.lower}, {pmodel.upper})", RuntimeWarning, stacklevel=2)
    return fit


def _space_integral(pmodel: ParametricModel, theta: float, x0: float, x1: float) -> float:
    if pmodel.family == "ou_rate" and pmodel.diffusion.family == "constant":
        s2 = float(pmodel.sigma2(0.0))
        b = pmodel.fixed
        return -((x1 - b) ** 2 - (x0 - b) ** 2) / (2.0 * s2)
    val, _ = integrate.quad(lambda y: float(pmodel.dS(theta, y) / pmodel.sigma2(y)), x0, x1, epsabs=1e-12, epsrel=1e-12,
                            limit=200)
    return float(val)


def r_statistic(path: SamplePath, pmodel: ParametricModel, theta: float) -> float:
    """R_T(theta) in its stochastic-integral-free form.

    int_{X_0}^{X_T} dS/sigma^2 dy - int (dS' sigma - 2 dS sigma') / (2 sigma) dt - int dS S / sigma^2 dt,
    with the lower space limit pinned at the path's X_0 and the time integrals as left Riemann sums.
    """
    x = path.values[:-1]
    ds = pmodel.dS(theta, x)
    if not np.any(ds):
        return 0.0
    sig = pmodel.sigma(x)
    term1 = _space_integral(pmodel, theta, path.values[0], path.values[-1])
    term2 = np.sum((pmodel.dS_dx(theta, x) * sig - 2.0 * ds * pmodel.dsigma(x)) / (2.0 * sig)) * path.dt
    term3 = np.sum(ds * pmodel.S(theta, x) / (sig * sig)) * path.dt
    return float(term1 - term2 - term3)


def ito_score(path: SamplePath, pmodel: ParametricModel, theta: float) -> float:
    """Direct Ito sum of int dS/sigma^2 (dX - S dt)."""
    x = path.values[:-1]
    return float(np.sum(pmodel.dS(theta, x) / pmodel.sigma2(x) * (path.increments - pmodel.S(theta, x) * path.dt)))


def law_derivative(pmodel: ParametricModel, theta: float, law: InvariantLaw) -> np.ndarray:
    """d f0(theta, x) / d theta at the law's nodes by a centred difference of the law builder."""
    h = FD_REL_STEP * max(abs(theta), 1.0)
    lo = build_law(pmodel.model_at(theta - h), law.policy, grid=law.grid)
    hi = build_law(pmodel.model_at(theta + h), law.policy, grid=law.grid)
    if abs(hi.mu - lo.mu) > 1e-8 * max(1.0, abs(law.mu)):
        raise MedianDependsOnTheta(
            "the median moves with theta; the correction term is only defined when it does not "
            "(use shift_corrected_cvm for the switching shift)"
        )
    return (hi.f0 - lo.f0) / (2.0 * h)


def corrected_cvm(path: SamplePath, pmodel: ParametricModel, fit: CompositeFit, law: InvariantLaw | None = None,
                  *, f_hat: np.ndarray | None = None, r_value: float | None = None, zero_correction: bool = False) -> float:
    """T int_{x>=mu} h (f_hat - f0 + df0/dtheta I^{-1} R_T/T)^2 dF0, all at theta_hat."""
    if pmodel.median_depends_on_theta:
        raise MedianDependsOnTheta(f"{pmodel.family}: the median depends on theta; corrected statistic refused")
    theta = fit.theta_hat
    model = pmodel.model_at(theta)
    law = law if law is not None else build_law(model)
    f_hat = lte(path, law.grid, model) if f_hat is None else np.asarray(f_hat)
    if zero_correction:
        return cvm_lte_from(f_hat, law, path.T)
    r = fit.r_value if r_value is None else r_value
    corr = law_derivative(pmodel, theta, law) * (r / fit.fisher_info)
    return cvm_lte_from(f_hat + corr, law, path.T)


def plugin_cvm(path: SamplePath, pmodel: ParametricModel, fit: CompositeFit, law: InvariantLaw | None = None) -> float:
    """Plug-in statistic: the simple-hypothesis statistic evaluated at theta_hat."""
    model = pmodel.model_at(fit.theta_hat)
    law = law if law is not None else build_law(model)
    return cvm_lte_from(lte(path, law.grid, model), law, path.T)


def shift_corrected_cvm(path: SamplePath, pmodel: ParametricModel, fit: CompositeFit, theta: float | None = None,
                        *, f_hat: np.ndarray | None = None) -> float:
    """T int_{theta_hat}^inf h (f_hat - f0)^2 dF0 at theta_hat (no correction term)."""
    if pmodel.family != "switching_shift":
        raise ConfigError("shift_corrected_cvm needs the switching_shift family")
    th = fit.theta_hat if theta is None else float(theta)
    model = pmodel.model_at(th)
    law = build_law(model)
    f_hat = lte(path, law.grid, model) if f_hat is None else np.asarray(f_hat)
    return cvm_lte_from(f_hat, law, path.T)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PseudoTrue:
    theta: float
    distance: float
    r_value: float
    boundary: bool


def _drift_distance(pmodel: ParametricModel, theta: float, true_model: DiffusionModel, law_true: InvariantLaw) -> float:
    x = law_true.x
    d = (pmodel.S(theta, x) - true_model.S(x)) ** 2 / pmodel.sigma2(x)
    return float(np.sum(_trapezoid_weights(x) * d * law_true.f0))


def pseudo_true_theta(pmodel: ParametricModel, true_model: DiffusionModel, law_true: InvariantLaw | None = None,
                      stationarity_tol: float = STATIONARITY_TOL) -> PseudoTrue:
    """argmin_theta || (S(theta, .) - S*) / sigma ||_* under the true invariant law."""
    law_true = law_true or build_law(true_model)
    theta, boundary, _, _ = maximize_profile(
        lambda t: -_drift_distance(pmodel, t, true_model, law_true), pmodel.lower, pmodel.upper
    )
    x = law_true.x
    r = float(np.sum(_trapezoid_weights(x) * pmodel.dS(theta, x) * (true_model.S(x) - pmodel.S(theta, x))
                     / pmodel.sigma2(x) * law_true.f0))
    if boundary:
        warnings.warn("pseudo-true parameter at the boundary", RuntimeWarning, stacklevel=2)
    elif abs(r) > stationarity_tol:
        log.warning("R(theta*) = %.3g exceeds the stationarity tolerance %.1g", r, stationarity_tol)
    return PseudoTrue(theta, math.sqrt(_drift_distance(pmodel, theta, true_model, law_true)), r, boundary)


__all__ = [
    "CompositeFit",
    "ParametricModel",
    "PseudoTrue",
    "corrected_cvm",
    "fisher_info",
    "ito_score",
    "law_derivative",
    "loglik",
    "maximize_profile",
    "mle_fit",
    "plugin_cvm",
    "pseudo_true_theta",
    "r_statistic",
    "shift_corrected_cvm",
]
