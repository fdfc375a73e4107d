"""Drift and diffusion descriptors for scalar diffusions dX = S(X)dt + sigma(X)dW.

Drifts are restricted to a small set of declarative families so that a
model can be serialized, hashed and compiled into a flat array "program"
that the numba kernels evaluate without Python callbacks.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, QuadratureDivergence
from .grid import SpatialGrid, aligned_grid

# program opcodes shared with kernels.py
OP_OU, OP_SWITCH, OP_POLYTRIG = 1, 2, 3
OP_ONESIDED, OP_OSC = 10, 11
DIFF_CONST, DIFF_QUAD = 0, 1

_LEAVES = {"ou": ("a", "b"), "switching": ("a", "b"), "poly_trig": ("poly", "cos", "sin")}
_WRAPPERS = {"one_sided": ("base", "factor", "split"), "oscillating": ("base", "alpha", "n")}


@dataclass(frozen=True, eq=False)
class DriftSpec:
    """A drift S(x) from one of the builtin families.

    ``ou``          S(x) = -a (x - b)
    ``switching``   S(x) = -a sgn(x - b)
    ``poly_trig``   S(x) = sum_k poly[k] x^k + sum_j cos[j-1] cos(jx) + sin[j-1] sin(jx)
    ``one_sided``   S(x) = base(x) for x < split, factor * base(x) for x >= split
    ``oscillating`` S(x) = base(x) + alpha sigma(x)^2 cos(n x)
    """

    family: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.family in _LEAVES:
            names = _LEAVES[self.family]
        elif self.family in _WRAPPERS:
            names = _WRAPPERS[self.family]
        else:
            raise ConfigError(f"unknown drift family {self.family!r}")
        params = dict(self.params)
        if self.family == "poly_trig":
            for key in names:
                params[key] = tuple(float(c) for c in params.get(key, ()))
            if not any(params[k] for k in names):
                raise ConfigError("poly_trig drift needs at least one coefficient")
        else:
            missing = [k for k in names if k not in params]
            if missing:
                raise ConfigError(f"{self.family} drift missing parameters {missing}")
            for key in names:
                if key == "base":
                    base = params[key]
                    params[key] = base if isinstance(base, DriftSpec) else DriftSpec.from_dict(base)
                else:
                    params[key] = float(params[key])
        extra = set(params) - set(names)
        if extra:
            raise ConfigError(f"{self.family} drift got unexpected parameters {sorted(extra)}")
        object.__setattr__(self, "params", params)

    # convenience constructors
    @classmethod
    def ou(cls, a: float, b: float = 0.0) -> "DriftSpec":
        return cls("ou", {"a": a, "b": b})

    @classmethod
    def switching(cls, a: float, b: float = 0.0) -> "DriftSpec":
        return cls("switching", {"a": a, "b": b})

    @classmethod
    def poly_trig(cls, poly=(), cos=(), sin=()) -> "DriftSpec":
        return cls("poly_trig", {"poly": poly, "cos": cos, "sin": sin})

    @classmethod
    def one_sided(cls, base: "DriftSpec", factor: float, split: float) -> "DriftSpec":
        return cls("one_sided", {"base": base, "factor": factor, "split": split})

    @classmethod
    def oscillating(cls, base: "DriftSpec", alpha: float, n: float) -> "DriftSpec":
        return cls("oscillating", {"base": base, "alpha": alpha, "n": n})

    def __eq__(self, other):
        return isinstance(other, DriftSpec) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(json.dumps(self.to_dict(), sort_keys=True))

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"family": self.family}
        for key, value in self.params.items():
            if isinstance(value, DriftSpec):
                out[key] = value.to_dict()
            elif isinstance(value, tuple):
                out[key] = list(value)
            else:
                out[key] = value
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DriftSpec":
        data = dict(data)
        try:
            family = data.pop("family")
        except KeyError:
            raise ConfigError("drift descriptor needs a 'family' key") from None
        return cls(family, data)

    def breakpoints(self) -> tuple[float, ...]:
        """Points where S is discontinuous (grids align a node on them)."""
        p = self.params
        if self.family == "switching":
            return (p["b"],)
        if self.family == "one_sided":
            return (p["split"],) + p["base"].breakpoints()
        if self.family == "oscillating":
            return p["base"].breakpoints()
        return ()

    def evaluate(self, x, sigma2=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.params
        fam = self.family
        if fam == "ou":
            return -p["a"] * (x - p["b"])
        if fam == "switching":
            return -p["a"] * np.sign(x - p["b"])
        if fam == "poly_trig":
            out = np.zeros_like(x)
            for c in reversed(p["poly"]):
                out = out * x + c
            for j, c in enumerate(p["cos"], start=1):
                out = out + c * np.cos(j * x)
            for j, c in enumerate(p["sin"], start=1):
                out = out + c * np.sin(j * x)
            return out
        base = p["base"].evaluate(x, sigma2)
        if fam == "one_sided":
            return np.where(x >= p["split"], p["factor"] * base, base)
        # oscillating
        s2 = sigma2(x) if sigma2 is not None else 1.0
        return base + p["alpha"] * s2 * np.cos(p["n"] * x)

    def _program(self, ops, pars, coef):
        p = self.params
        fam = self.family
        if fam in ("one_sided", "oscillating"):
            p["base"]._program(ops, pars, coef)
        if fam == "ou":
            ops.append(OP_OU)
            pars.append((p["a"], p["b"], 0.0, 0.0))
        elif fam == "switching":
            ops.append(OP_SWITCH)
            pars.append((p["a"], p["b"], 0.0, 0.0))
        elif fam == "poly_trig":
            ops.append(OP_POLYTRIG)
            pars.append((len(coef), len(p["poly"]), len(p["cos"]), len(p["sin"])))
            coef.extend(p["poly"])
            coef.extend(p["cos"])
            coef.extend(p["sin"])
        elif fam == "one_sided":
            ops.append(OP_ONESIDED)
            pars.append((p["factor"], p["split"], 0.0, 0.0))
        else:
            ops.append(OP_OSC)
            pars.append((p["alpha"], p["n"], 0.0, 0.0))


@dataclass(frozen=True)
class DiffusionSpec:
    """sigma(x): ``constant`` (param ``sigma``) or ``quadratic`` with
    sigma(x)^2 = s0 + s1 x + s2 x^2 (positive everywhere)."""

    family: str = "constant"
    sigma: float = 1.0
    s0: float = 1.0
    s1: float = 0.0
    s2: float = 0.0

    def __post_init__(self):
        if self.family == "constant":
            if not self.sigma > 0:
                raise ConfigError("constant diffusion needs sigma > 0")
        elif self.family == "quadratic":
            if self.s2 > 0:
                positive = self.s0 - self.s1 ** 2 / (4.0 * self.s2) > 0
            else:
                positive = self.s2 == 0 and self.s1 == 0 and self.s0 > 0
            if not positive:
                raise ConfigError("quadratic diffusion s0 + s1 x + s2 x^2 must be positive for all x")
        else:
            raise ConfigError(f"unknown diffusion family {self.family!r}")

    @classmethod
    def constant(cls, sigma: float) -> "DiffusionSpec":
        return cls("constant", sigma=float(sigma))

    @classmethod
    def quadratic(cls, s0: float, s1: float = 0.0, s2: float = 0.0) -> "DiffusionSpec":
        return cls("quadratic", s0=float(s0), s1=float(s1), s2=float(s2))

    def sigma2(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.family == "constant":
            return np.full_like(x, self.sigma ** 2)
        return self.s0 + x * (self.s1 + x * self.s2)

    def sigma_of(self, x) -> np.ndarray:
        return np.sqrt(self.sigma2(x))

    def dsigma(self, x) -> np.ndarray:
        """sigma'(x)."""
        x = np.asarray(x, dtype=float)
        if self.family == "constant":
            return np.zeros_like(x)
        return (self.s1 + 2.0 * self.s2 * x) / (2.0 * self.sigma_of(x))

    def dsigma2(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.family == "constant":
            return np.zeros_like(x)
        return self.s1 + 2.0 * self.s2 * x

    def to_dict(self) -> dict:
        if self.family == "constant":
            return {"family": "constant", "sigma": self.sigma}
        return {"family": "quadratic", "s0": self.s0, "s1": self.s1, "s2": self.s2}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DiffusionSpec":
        data = dict(data)
        family = data.pop("family", "constant")
        allowed = {"constant": {"sigma"}, "quadratic": {"s0", "s1", "s2"}}.get(family)
        if allowed is None:
            raise ConfigError(f"unknown diffusion family {family!r}")
        if set(data) - allowed:
            raise ConfigError(f"{family} diffusion got unexpected parameters {sorted(set(data) - allowed)}")
        return cls(family, **{k: float(v) for k, v in data.items()})

    def program(self):
        if self.family == "constant":
            return DIFF_CONST, np.array([self.sigma, 0.0, 0.0])
        return DIFF_QUAD, np.array([self.s0, self.s1, self.s2])


@dataclass(frozen=True)
class DiffusionModel:
    drift: DriftSpec
    diffusion: DiffusionSpec = field(default_factory=DiffusionSpec)
    label: str = ""

    def S(self, x) -> np.ndarray:
        return self.drift.evaluate(x, self.diffusion.sigma2)

    def sigma(self, x) -> np.ndarray:
        return self.diffusion.sigma_of(x)

    def sigma2(self, x) -> np.ndarray:
        return self.diffusion.sigma2(x)

    def breakpoints(self) -> tuple[float, ...]:
        return self.drift.breakpoints()

    def to_dict(self) -> dict:
        return {"label": self.label, "drift": self.drift.to_dict(), "diffusion": self.diffusion.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DiffusionModel":
        if "drift" not in data:
            raise ConfigError("model descriptor needs a 'drift' entry")
        return cls(
            DriftSpec.from_dict(data["drift"]),
            DiffusionSpec.from_dict(data.get("diffusion", {"family": "constant", "sigma": 1.0})),
            str(data.get("label", "")),
        )

    @cached_property
    def model_hash(self) -> str:
        payload = {"drift": self.drift.to_dict(), "diffusion": self.diffusion.to_dict()}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    @cached_property
    def program(self):
        """Flat arrays (ops, pars, coef, dcode, dpar) consumed by the kernels."""
        ops: list[int] = []
        pars: list[tuple] = []
        coef: list[float] = []
        self.drift._program(ops, pars, coef)
        dcode, dpar = self.diffusion.program()
        return (
            np.asarray(ops, dtype=np.int64),
            np.asarray(pars, dtype=np.float64).reshape(-1, 4),
            np.asarray(coef if coef else [0.0], dtype=np.float64),
            np.int64(dcode),
            dpar,
        )


# convenience builders for the two worked examples
def ou_model(a: float = 1.0, b: float = 0.0, sigma: float = np.sqrt(2.0), label: str = "") -> DiffusionModel:
    return DiffusionModel(DriftSpec.ou(a, b), DiffusionSpec.constant(sigma), label or f"OU(a={a:g},b={b:g},sigma={sigma:g})")


def switching_model(a: float = 1.0, b: float = 0.0, sigma: float = 1.0, label: str = "") -> DiffusionModel:
    return DiffusionModel(
        DriftSpec.switching(a, b), DiffusionSpec.constant(sigma), label or f"switching(a={a:g},b={b:g},sigma={sigma:g})"
    )


def eval_drift(model: DiffusionModel, x):
    """S(x) for scalar or array ``x``."""
    out = model.S(x)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# existence / ergodicity checks


@dataclass(frozen=True)
class ConditionsReport:
    es_A: float
    es_pass: bool
    rp_left_diverges: bool
    rp_right_diverges: bool
    G: float
    G_converged: bool
    sigma2_positive: bool
    locally_bounded: bool

    @property
    def rp_pass(self) -> bool:
        return self.rp_left_diverges and self.rp_right_diverges and self.G_converged

    @property
    def all_pass(self) -> bool:
        return self.es_pass and self.rp_pass

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(rp_pass=self.rp_pass, all_pass=self.all_pass)
        return d


def _log_speed_density(model: DiffusionModel, x: np.ndarray) -> np.ndarray:
    """2 int_{x[0]}^x S/sigma^2 dy on the nodes ``x`` (midpoint rule, exact across jumps at nodes)."""
    mid = 0.5 * (x[1:] + x[:-1])
    ratio = 2.0 * model.S(mid) / model.sigma2(mid)
    out = np.empty_like(x)
    out[0] = 0.0
    np.cumsum(ratio * np.diff(x), out=out[1:])
    return out


def _anchor_at_zero(model: DiffusionModel, x: np.ndarray, integral: np.ndarray) -> np.ndarray:
    """Shift a cumulative integral started at x[0] so that it starts at 0."""
    if x[0] <= 0.0 <= x[-1]:
        return integral - np.interp(0.0, x, integral)
    from scipy.integrate import quad

    offset, _ = quad(lambda y: 2.0 * float(model.S(y)) / float(model.sigma2(y)), 0.0, float(x[0]), limit=200)
    return integral + offset


def _log_G(model: DiffusionModel, x: np.ndarray) -> tuple[float, np.ndarray]:
    """log G(S) on the node set and the log integrand."""
    from scipy.special import logsumexp

    expo = _anchor_at_zero(model, x, _log_speed_density(model, x))
    log_integrand = expo - np.log(model.sigma2(x))
    w = np.empty_like(x)
    dx = np.diff(x)
    w[0] = dx[0] / 2
    w[-1] = dx[-1] / 2
    w[1:-1] = (dx[1:] + dx[:-1]) / 2
    return float(logsumexp(log_integrand, b=w)), log_integrand


def preliminary_scale(model: DiffusionModel, half_width: float = 200.0, n: int = 40001) -> tuple[float, float]:
    """(median, standard deviation) of the invariant law from a coarse scan.

    Raises QuadratureDivergence when the scan finds no normalizable mass.
    """
    center, width = 0.0, half_width
    for _ in range(2):
        x = np.linspace(center - width, center + width, n)
        logp = _log_speed_density(model, x) - np.log(model.sigma2(x))
        if not np.all(np.isfinite(logp)):
            raise QuadratureDivergence(f"non-finite invariant density exponent for {model.label or 'model'}")
        imax = int(np.argmax(logp))
        p = np.exp(logp - logp[imax])
        if p[0] > 1e-8 or p[-1] > 1e-8:
            raise QuadratureDivergence(f"invariant density of {model.label or 'model'} does not decay on the scan window")
        mass = np.cumsum(p)
        mass /= mass[-1]
        median = float(np.interp(0.5, mass, x))
        mean = float(np.sum(x * p) / np.sum(p))
        sd = float(np.sqrt(np.sum((x - mean) ** 2 * p) / np.sum(p)))
        if sd <= 0 or not np.isfinite(sd):
            raise QuadratureDivergence("degenerate invariant law in scale scan")
        center, width = median, 40.0 * sd
        if 40.0 * sd > half_width:
            break
    return median, sd


def condition_grid(model: DiffusionModel, n: int = 4096, width_sd: float = 15.0) -> SpatialGrid:
    """Check grid [median - 15 s, median + 15 s]; falls back to [-50, 50]."""
    try:
        m, s = preliminary_scale(model)
        lo, hi = m - width_sd * s, m + width_sd * s
    except QuadratureDivergence:
        lo, hi = -50.0, 50.0
    return _check_grid(model, lo, hi, n)


def _check_grid(model: DiffusionModel, lo: float, hi: float, n: int) -> SpatialGrid:
    """Uniform grid with a node on the first interior breakpoint (or on 0)."""
    inside = [b for b in model.breakpoints() if lo < b < hi]
    anchor = inside[0] if inside else (0.0 if lo < 0.0 < hi else 0.5 * (lo + hi))
    return aligned_grid(lo, hi, n, anchor)


def _tail_diverges(log_q: np.ndarray) -> bool:
    """True if the integrand (given in logs) does not decay over its outer tenth."""
    k = max(len(log_q) // 10, 2)
    tail = log_q[-k:]
    return bool(tail[-1] >= tail[0] - 1e-12)


def check_conditions(model: DiffusionModel, grid: SpatialGrid | None = None) -> ConditionsReport:
    """Numerical evidence for conditions ES and RP on ``grid``.

    ES: smallest A with x S(x) + sigma^2 <= A (1 + x^2) on the nodes, with a
    check that the ratio is not still growing at the edges.
    RP: the scale-function integrand exp(-2 int S/sigma^2) must not decay at
    either edge (so V(S, x) -> +-inf) and G(S) must be stable when the check
    window is doubled.
    """
    if grid is None:
        grid = condition_grid(model)
        for _ in range(6):  # widen until the G integrand is negligible at both edges
            li = _log_G(model, grid.nodes)[1]
            if not np.all(np.isfinite(li)) or max(li[0], li[-1]) - li.max() < np.log(1e-12):
                break
            c, half = 0.5 * (grid.lower + grid.upper), 0.75 * (grid.upper - grid.lower)
            grid = _check_grid(model, c - half, c + half, len(grid))
    x = np.asarray(grid.nodes, dtype=float)
    S = model.S(x)
    s2 = model.sigma2(x)
    locally_bounded = bool(np.all(np.isfinite(S)))
    sigma2_positive = bool(np.all(s2 > 0) and np.all(np.isfinite(s2)))

    ratio = (x * S + s2) / (1.0 + x ** 2)
    es_A = float(max(np.max(ratio), np.finfo(float).tiny))
    k = max(len(x) // 20, 2)
    growing_right = np.all(np.diff(ratio[-k:]) > 0) and ratio[-1] >= np.max(ratio) and ratio[-1] > 2 * ratio[-k]
    growing_left = np.all(np.diff(ratio[:k]) < 0) and ratio[0] >= np.max(ratio) and ratio[0] > 2 * ratio[k]
    es_pass = locally_bounded and sigma2_positive and np.isfinite(es_A) and not (growing_right or growing_left)

    expo = _log_speed_density(model, x)
    log_q = -expo  # scale density exp(-2 int S/sigma^2), up to a constant
    rp_right = _tail_diverges(log_q)
    rp_left = _tail_diverges(log_q[::-1])

    logG, log_int = _log_G(model, x)
    tails_small = (log_int[0] - log_int.max() < np.log(1e-12)) and (log_int[-1] - log_int.max() < np.log(1e-12))
    # same spacing, twice the span: isolates the truncation error of G
    h = (x[-1] - x[0]) / (len(x) - 1)
    ext = h * np.arange(len(x) // 2, 0, -1)
    wide = np.concatenate((x[0] - ext, x, x[-1] + ext[::-1]))
    logG_wide, _ = _log_G(model, wide)
    converged = bool(
        np.isfinite(logG) and np.isfinite(logG_wide) and tails_small and abs(np.expm1(logG_wide - logG)) < 1e-6
    )
    report = ConditionsReport(
        es_A=es_A,
        es_pass=bool(es_pass),
        rp_left_diverges=rp_left,
        rp_right_diverges=rp_right,
        G=float(np.exp(logG)) if converged else float("inf"),
        G_converged=converged,
        sigma2_positive=sigma2_positive,
        locally_bounded=locally_bounded,
    )
    if not converged:
        raise QuadratureDivergence(
            f"G(S) does not converge under grid refinement for {model.label or 'model'}: the model is not ergodic",
            report,
        )
    return report
