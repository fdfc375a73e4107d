"""Invariant law of a diffusion and every quantity derived from it.

The law is tabulated on a uniform grid of output nodes. All integrals are
computed on a finer grid (``policy.refine`` sub-intervals per output cell)
with composite Simpson sums, then sampled at the output nodes. Between
nodes, values are reconstructed with cubic Hermite interpolation using the
exact derivatives (every tabulated quantity is an antiderivative of a known
integrand), so evaluation at arbitrary points keeps the quadrature accuracy.

Tail quantities are always integrated from the tail they describe: F0 from
the left edge and Fb = 1 - F0 from the right edge, which keeps both
relatively accurate where they are small. Likewise the left piece A of
Phi is accumulated from the left and the right piece B from the right.
"""
from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import (
    CorruptFile,
    DomainError,
    GridMismatch,
    NormalizationFailure,
    QuadratureDivergence,
    TailDivergence,
    VersionMismatch,
)
from .grid import ROOT_TOL, GridPolicy, SpatialGrid, aligned_grid
from .model import DiffusionModel, preliminary_scale

LAW_VERSION = 1
_LOG_TINY = -745.0  # below this exp() underflows to zero


# ---------------------------------------------------------------------------
# quadrature helpers on a uniform fine grid


def cumsimpson(y: np.ndarray, h: float, y_left: np.ndarray | None = None) -> np.ndarray:
    """Cumulative integral of samples ``y`` (odd length, spacing ``h``).

    Even indices get the composite Simpson value; odd indices add the
    one-cell rule h/12 (5 y0 + 8 y1 - y2) to the preceding even value.
    For an integrand with jumps at even indices, ``y`` holds the limits from
    the right and ``y_left`` the limits from the left; each panel then uses
    the limit from inside the panel at its ends.
    """
    n = y.shape[0]
    if n % 2 == 0:
        raise ValueError("cumsimpson needs an odd number of samples")
    yl = y if y_left is None else y_left
    out = np.empty(n)
    out[0] = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        pair = (h / 3.0) * (y[0:-1:2] + 4.0 * y[1::2] + yl[2::2])
        out[2::2] = np.cumsum(pair)
        out[1::2] = out[0:-1:2] + (h / 12.0) * (5.0 * y[0:-1:2] + 8.0 * y[1::2] - yl[2::2])
    return out


def rcumsimpson(y: np.ndarray, h: float, y_left: np.ndarray | None = None) -> np.ndarray:
    """Cumulative integral from each sample to the right end."""
    if y_left is None:
        return cumsimpson(y[::-1], h)[::-1]
    return cumsimpson(y_left[::-1], h, y[::-1])[::-1]


def hermite(x, nodes, y, d_right, d_left=None):
    """Cubic Hermite interpolation on ``nodes``.

    ``d_right[i]`` is the derivative at node i seen from the right (used as
    the left end of cell i), ``d_left[i]`` the derivative seen from the left.
    Points outside the node range are clamped to the end cells' polynomials.
    """
    if d_left is None:
        d_left = d_right
    x = np.asarray(x, dtype=float)
    i = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, nodes.shape[0] - 2)
    x0 = nodes[i]
    hc = nodes[i + 1] - x0
    t = (x - x0) / hc
    t2 = t * t
    t3 = t2 * t
    return (
        (2 * t3 - 3 * t2 + 1) * y[i]
        + (t3 - 2 * t2 + t) * hc * d_right[i]
        + (-2 * t3 + 3 * t2) * y[i + 1]
        + (t3 - t2) * hc * d_left[i + 1]
    )


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    dx = np.diff(x)
    w = np.empty_like(x)
    w[0] = dx[0] / 2
    w[-1] = dx[-1] / 2
    w[1:-1] = (dx[1:] + dx[:-1]) / 2
    return w


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


# ---------------------------------------------------------------------------
# the law object


@dataclass(frozen=True, eq=False)
class InvariantLaw:
    """Tabulated invariant law. Arrays are indexed by ``grid.nodes``.

    ``logf0`` log-density; ``F0``/``Fb`` CDF and survival function;
    ``A``/``B`` the left and right pieces of Phi (Phi = A + B);
    ``C`` the running integral of F0 Fb/(sigma^2 f0) (covariance helper);
    ``U0``/``Ub`` running integrals of F0/(sigma^2 f0) from the left edge
    and of Fb/(sigma^2 f0) towards the right edge; ``s2`` = sigma^2 and
    ``S`` the drift at the nodes; ``dlog_r``/``dlog_l`` the one-sided
    derivatives of logf0.
    """

    grid: SpatialGrid
    logf0: np.ndarray
    F0: np.ndarray
    Fb: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    U0: np.ndarray
    Ub: np.ndarray
    s2: np.ndarray
    S: np.ndarray
    dlog_r: np.ndarray
    dlog_l: np.ndarray
    mu: float
    G: float
    PhiMu: float
    PsiMu: float
    mean_sigma2: float
    tail_ok: bool = True
    model_hash: str = ""
    label: str = ""
    policy: GridPolicy = field(default_factory=GridPolicy)
    diagnostics: dict = field(default_factory=dict)

    # -- tabulated derived arrays ------------------------------------------
    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    @cached_property
    def f0(self) -> np.ndarray:
        return np.exp(self.logf0)

    @cached_property
    def Phi(self) -> np.ndarray:
        return self.A + self.B

    @cached_property
    def Psi(self) -> np.ndarray:
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return _psi_from(self.A, self.B, self.F0, self.Fb)

    @cached_property
    def dPsi(self) -> np.ndarray:
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return np.exp(self.log_dPsi)

    @cached_property
    def log_dPsi(self) -> np.ndarray:
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return np.log(2.0) + _log(self.F0) + self.logf0 + _log(self.B) - 3.0 * _log(self.Fb)

    @cached_property
    def upper_mask(self) -> np.ndarray:
        """Nodes at or above the median."""
        return self.x >= self.mu

    @cached_property
    def log_h(self) -> np.ndarray:
        return _log_h(self, self.F0, self.Fb, self.Phi, self.s2, self.logf0, self.upper_mask)

    @cached_property
    def log_H(self) -> np.ndarray:
        return _log_H(self, self.F0, self.Fb, self.B, self.Psi, self.upper_mask)

    @cached_property
    def log_g(self) -> np.ndarray:
        return _log_g(self, self.Phi, self.logf0, self.upper_mask)

    @cached_property
    def h(self) -> np.ndarray:
        return np.exp(self.log_h)

    @cached_property
    def H(self) -> np.ndarray:
        return np.exp(self.log_H)

    @cached_property
    def g(self) -> np.ndarray:
        return np.exp(self.log_g)

    # -- pointwise evaluation ----------------------------------------------
    def _check_range(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.grid.lower) or np.any(x > self.grid.upper):
            raise DomainError(f"x outside the law's truncation bounds [{self.grid.lower:g}, {self.grid.upper:g}]")
        return x

    def logf0_at(self, x):
        return hermite(x, self.x, self.logf0, self.dlog_r, self.dlog_l)

    def f0_at(self, x):
        return np.exp(self.logf0_at(x))

    def F0_at(self, x):
        return np.clip(hermite(x, self.x, self.F0, self.f0), 0.0, 1.0)

    def Fb_at(self, x):
        return np.clip(hermite(x, self.x, self.Fb, -self.f0), 0.0, 1.0)

    @cached_property
    def _integrands(self) -> dict[str, np.ndarray]:
        with np.errstate(divide="ignore", over="ignore"):
            base = -np.log(self.s2) - self.logf0
            return {
                "a": np.exp(2 * _log(self.F0) + base),
                "b": np.exp(2 * _log(self.Fb) + base),
                "c": np.exp(_log(self.F0) + _log(self.Fb) + base),
                "u0": np.exp(_log(self.F0) + base),
                "ub": np.exp(_log(self.Fb) + base),
            }

    def A_at(self, x):
        return hermite(x, self.x, self.A, self._integrands["a"])

    def B_at(self, x):
        return hermite(x, self.x, self.B, -self._integrands["b"])

    def C_at(self, x):
        return hermite(x, self.x, self.C, self._integrands["c"])

    def U0_at(self, x):
        return hermite(x, self.x, self.U0, self._integrands["u0"])

    def Ub_at(self, x):
        return hermite(x, self.x, self.Ub, -self._integrands["ub"])

    def pieces_at(self, x):
        """(logf0, F0, Fb, A, B, s2) at arbitrary points (clamped to the grid)."""
        x = np.clip(np.asarray(x, dtype=float), self.x[0], self.x[-1])
        s2 = hermite(x, self.x, self.s2, self._ds2, self._ds2)
        return self.logf0_at(x), self.F0_at(x), self.Fb_at(x), self.A_at(x), self.B_at(x), s2

    @cached_property
    def _ds2(self) -> np.ndarray:
        return np.gradient(self.s2, self.x, edge_order=2)

    def weights_at(self, x) -> dict[str, np.ndarray]:
        """log h, log H, log g at arbitrary points (-inf below the median or outside the grid)."""
        x = np.asarray(x, dtype=float)
        logf, F0, Fb, A, B, s2 = self.pieces_at(x)
        Phi = A + B
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            Psi = _psi_from(A, B, F0, Fb)
        up = (x >= self.mu) & (x <= self.x[-1]) & (x >= self.x[0])
        return {
            "log_h": _log_h(self, F0, Fb, Phi, s2, logf, up),
            "log_H": _log_H(self, F0, Fb, B, Psi, up),
            "log_g": _log_g(self, Phi, logf, up),
        }

    # -- misc ------------------------------------------------------------------
    def quantile(self, u):
        """Inverse CDF by safeguarded root finding on the Hermite cells."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        x = self.x
        lower = u <= 0.5
        out = np.empty_like(u)
        for mask, vals, tab, deriv, sign in (
            (lower, u, self.F0, self.f0, 1.0),
            (~lower, 1.0 - u, self.Fb, -self.f0, -1.0),
        ):
            if not mask.any():
                continue
            target = vals[mask]
            if sign > 0:
                i = np.searchsorted(tab, target, side="right") - 1
            else:
                # Fb decreasing: find i with Fb[i] >= target > Fb[i+1]
                i = (tab.shape[0] - 1) - np.searchsorted(tab[::-1], target, side="left")
            i = np.clip(i, 0, x.shape[0] - 2)
            lo = x[i].copy()
            hi = x[i + 1].copy()
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                fm = hermite(mid, x, tab, deriv)
                go_right = (fm < target) if sign > 0 else (fm > target)
                lo = np.where(go_right, mid, lo)
                hi = np.where(go_right, hi, mid)
            out[mask] = 0.5 * (lo + hi)
        out[u == 0.5] = self.mu
        return out

    def to_npz(self, path) -> None:
        arrays = {k: getattr(self, k) for k in _ARRAY_FIELDS}
        meta = {k: getattr(self, k) for k in _SCALAR_FIELDS}
        meta.update(
            version=LAW_VERSION,
            grid_lower=self.grid.lower,
            grid_upper=self.grid.upper,
            policy=self.policy.__dict__,
            diagnostics=self.diagnostics,
        )
        buf = io.BytesIO()
        np.savez(buf, nodes=self.x, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
        tmp = Path(str(path) + ".tmp")
        tmp.write_bytes(buf.getvalue())
        os.replace(tmp, path)

    @classmethod
    def from_npz(cls, path) -> "InvariantLaw":
        try:
            with np.load(path) as data:
                meta = json.loads(bytes(data["meta"]).decode())
                arrays = {k: np.array(data[k]) for k in _ARRAY_FIELDS}
                nodes = np.array(data["nodes"])
        except Exception as exc:  # noqa: BLE001 - any decoding problem means a bad file
            raise CorruptFile(f"cannot read law cache {path}: {exc}") from exc
        if meta.get("version") != LAW_VERSION:
            raise VersionMismatch(f"law cache {path} has version {meta.get('version')}, expected {LAW_VERSION}")
        grid = SpatialGrid(nodes, meta["grid_lower"], meta["grid_upper"])
        scalars = {k: meta[k] for k in _SCALAR_FIELDS}
        return cls(grid=grid, policy=GridPolicy(**meta["policy"]), diagnostics=meta.get("diagnostics", {}), **arrays, **scalars)


_ARRAY_FIELDS = ("logf0", "F0", "Fb", "A", "B", "C", "U0", "Ub", "s2", "S", "dlog_r", "dlog_l")
_SCALAR_FIELDS = ("mu", "G", "PhiMu", "PsiMu", "mean_sigma2", "tail_ok", "model_hash", "label")


def _psi_from(A, B, F0, Fb):
    return A + (F0 / Fb) ** 2 * B


def _log_h(law, F0, Fb, Phi, s2, logf0, up):
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (
            _log(F0 - Fb)
            - Phi / law.PhiMu
            - math.log(4.0)
            - 2.0 * math.log(law.PhiMu)
            - np.log(s2)
            - 4.0 * logf0
        )
    return np.where(up & np.isfinite(val), val, -np.inf)


def _log_H(law, F0, Fb, B, Psi, up):
    # H = Psi' exp(-Psi/PsiMu) / (4 PsiMu^2 f0 Fb^2) with Psi' = 2 F0 f0 B / Fb^3
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        val = (
            _log(2.0 * F0 * B)
            - Psi / law.PsiMu
            - math.log(4.0)
            - 2.0 * math.log(law.PsiMu)
            - 5.0 * _log(Fb)
        )
    return np.where(up & np.isfinite(val), val, -np.inf)


def _log_g(law, Phi, logf0, up):
    val = -Phi / law.PhiMu - math.log(2.0) - logf0 - 0.5 * math.log(law.PhiMu)
    return np.where(up & np.isfinite(val), val, -np.inf)


# ---------------------------------------------------------------------------
# building


def make_grid(model: DiffusionModel, policy: GridPolicy | None = None, half_width: float | None = None,
              center: float | None = None, anchor: float | None = None) -> SpatialGrid:
    """Output grid for ``model``: ``policy.n_nodes`` uniform nodes over
    [center - half_width, center + half_width] with a node on ``anchor``
    (default: the first drift breakpoint inside the range, else the center)."""
    policy = policy or GridPolicy()
    if half_width is None or center is None:
        m, s = preliminary_scale(model)
        center = m if center is None else center
        half_width = policy.width_sd * s if half_width is None else half_width
    lo, hi = center - half_width, center + half_width
    if anchor is None:
        inside = [b for b in model.breakpoints() if lo < b < hi]
        anchor = inside[0] if inside else center
    return aligned_grid(lo, hi, policy.n_nodes, anchor)


@dataclass
class _Fine:
    x: np.ndarray
    h: float
    S: np.ndarray
    s2: np.ndarray
    ds2: np.ndarray
    E: np.ndarray  # 2 int S/sigma^2 from the left edge
    logf0: np.ndarray
    F0: np.ndarray
    Fb: np.ndarray
    a: np.ndarray
    b: np.ndarray
    A: np.ndarray
    B: np.ndarray
    logG: float
    mean_sigma2: float


def _one_sided_dlog(model: DiffusionModel, x: np.ndarray):
    xr = np.nextafter(x, np.inf)
    xl = np.nextafter(x, -np.inf)
    ds2 = model.diffusion.dsigma2(x)
    s2 = model.sigma2(x)
    return (2.0 * model.S(xr) - ds2) / s2, (2.0 * model.S(xl) - ds2) / s2


def _fine_tabulate(model: DiffusionModel, grid: SpatialGrid, refine: int) -> _Fine:
    nodes = grid.nodes
    h = (nodes[-1] - nodes[0]) / ((nodes.shape[0] - 1) * refine)
    x = nodes[0] + h * np.arange((nodes.shape[0] - 1) * refine + 1)
    x[::refine] = nodes  # keep output nodes (and the anchor) bit-exact
    S = model.S(x)
    s2 = model.sigma2(x)
    if not (np.all(np.isfinite(S)) and np.all(s2 > 0) and np.all(np.isfinite(s2))):
        raise NormalizationFailure("drift or diffusion not finite/positive on the grid")
    ratio_r = 2.0 * model.S(np.nextafter(x, np.inf)) / s2
    ratio_l = 2.0 * model.S(np.nextafter(x, -np.inf)) / s2
    E = cumsimpson(ratio_r, h, ratio_l)
    logq = E - np.log(s2)
    top = float(np.max(logq))
    q = np.exp(logq - top)
    Z = cumsimpson(q, h)[-1]
    if not (Z > 0 and np.isfinite(Z)):
        raise NormalizationFailure("invariant density does not normalise on the grid")
    logf0 = logq - top - math.log(Z)
    f0 = np.exp(logf0)
    F0 = cumsimpson(f0, h)
    Fb = rcumsimpson(f0, h)
    total = 0.5 * (F0[-1] + Fb[0])
    F0 /= total
    Fb /= total
    logf0 -= math.log(total)
    # value of E at 0, to anchor G(S) at the origin as in its definition
    if x[0] <= 0.0 <= x[-1]:
        j = min(int(np.searchsorted(x, 0.0, side="right")) - 1, x.shape[0] - 2)
        piece, _ = quad(lambda y: 2.0 * float(model.S(y)) / float(model.sigma2(y)), x[j], 0.0)
        E0 = E[j] + piece
    else:
        piece, _ = quad(lambda y: 2.0 * float(model.S(y)) / float(model.sigma2(y)), x[0], 0.0, limit=200)
        E0 = piece
    logG = top + math.log(Z) + math.log(total) - E0
    with np.errstate(divide="ignore", over="ignore"):
        base = -np.log(s2) - logf0
        a = np.exp(2.0 * _log(F0) + base)
        b = np.exp(2.0 * _log(Fb) + base)
    A = cumsimpson(a, h)
    B = rcumsimpson(b, h)
    mean_sigma2 = float(cumsimpson(s2 * np.exp(logf0), h)[-1])
    return _Fine(x, h, S, s2, model.diffusion.dsigma2(x), E, logf0, F0, Fb, a, b, A, B, logG, mean_sigma2)


def _median(fine: _Fine) -> float:
    x, F0, f0 = fine.x, fine.F0, np.exp(fine.logf0)
    j = int(np.searchsorted(F0, 0.5, side="left"))
    j = min(max(j, 1), x.shape[0] - 1)
    xs = x[j - 1 : j + 1]

    def resid(t):
        return float(hermite(t, xs, F0[j - 1 : j + 1], f0[j - 1 : j + 1])) - 0.5

    lo, hi = xs
    if resid(lo) > 0:
        return float(lo)
    if resid(hi) < 0:
        return float(hi)
    return float(brentq(resid, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps))


def _at_point(fine: _Fine, t: float, vals: np.ndarray, derivs: np.ndarray) -> float:
    j = min(max(int(np.searchsorted(fine.x, t, side="right")) - 1, 0), fine.x.shape[0] - 2)
    return float(hermite(t, fine.x[j : j + 2], vals[j : j + 2], derivs[j : j + 2]))


def _tail_decays(integrand: np.ndarray, from_right: bool) -> bool:
    """Ratio test: the integrand must be negligible and shrinking at the far edge."""
    y = integrand[::-1] if from_right else integrand
    # y is examined from its far edge (index 0) inwards
    k = max(y.shape[0] // 50, 4)
    peak = np.max(y)
    if not np.isfinite(peak) or peak <= 0:
        return False
    return bool(y[0] <= 1e-8 * peak and y[0] <= y[k])


def build_law(model: DiffusionModel, policy: GridPolicy | None = None, cache_dir: str | os.PathLike | None = None,
              grid: SpatialGrid | None = None) -> InvariantLaw:
    """Tabulate the invariant law of ``model``.

    With ``grid`` given, that grid is used as is (no range search). With
    ``cache_dir`` (or the ``DIFFGOF_LAW_CACHE`` environment variable) laws
    are stored and reused keyed by model hash and grid policy.
    """
    policy = policy or GridPolicy()
    cache_dir = cache_dir if cache_dir is not None else os.environ.get("DIFFGOF_LAW_CACHE")
    cache_path = None
    if cache_dir and grid is None:
        cache_path = Path(cache_dir) / f"law_{model.model_hash}_{policy.key()}_v{LAW_VERSION}.npz"
        if cache_path.exists():
            try:
                return InvariantLaw.from_npz(cache_path)
            except (CorruptFile, VersionMismatch):
                pass
    law = _build(model, policy, grid)
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        law.to_npz(cache_path)
    return law


def _build(model: DiffusionModel, policy: GridPolicy, grid: SpatialGrid | None) -> InvariantLaw:
    if grid is not None:
        fine = _fine_tabulate(model, grid, policy.refine)
        return _assemble(model, policy, grid, fine, {"expansions": 0})
    try:
        center, sd = preliminary_scale(model)
    except QuadratureDivergence as exc:
        raise NormalizationFailure(str(exc)) from exc
    half = policy.width_sd * sd
    log_wtol = math.log(policy.weight_tol)
    for attempt in range(10):
        grid = make_grid(model, policy, half, center)
        fine = _fine_tabulate(model, grid, policy.refine)
        mu = _median(fine)
        phimu = _at_point(fine, mu, fine.A, fine.a) + _at_point(fine, mu, fine.B, -fine.b)
        dlog_r, _ = _one_sided_dlog(model, fine.x[-1:])
        _, dlog_l = _one_sided_dlog(model, fine.x[:1])
        left_mass = math.exp(fine.logf0[0]) / dlog_l[0] if dlog_l[0] > 0 else math.inf
        right_mass = math.exp(fine.logf0[-1]) / -dlog_r[0] if dlog_r[0] < 0 else math.inf
        phi_edges = (fine.A[0] + fine.B[0], fine.A[-1] + fine.B[-1])
        ok = (
            left_mass < policy.mass_tol
            and right_mass < policy.mass_tol
            and all(-p / phimu < log_wtol for p in phi_edges)
        )
        if ok:
            break
        half *= 1.5
    else:
        raise NormalizationFailure(
            f"could not find a grid with tail mass < {policy.mass_tol:g} for {model.label or 'model'}"
        )
    # second pass: put a node exactly on the median unless a breakpoint is the anchor
    inside = [b for b in model.breakpoints() if grid.nodes[0] < b < grid.nodes[-1]]
    if not inside:
        grid = make_grid(model, policy, half, center, anchor=mu)
        fine = _fine_tabulate(model, grid, policy.refine)
    diag = {"expansions": attempt, "left_tail_mass": left_mass, "right_tail_mass": right_mass}
    return _assemble(model, policy, grid, fine, diag)


def _assemble(model: DiffusionModel, policy: GridPolicy, grid: SpatialGrid, fine: _Fine, diag: dict) -> InvariantLaw:
    r = policy.refine
    mu = _median(fine)
    A_mu = _at_point(fine, mu, fine.A, fine.a)
    B_mu = _at_point(fine, mu, fine.B, -fine.b)
    F_mu = _at_point(fine, mu, fine.F0, np.exp(fine.logf0))
    Fb_mu = _at_point(fine, mu, fine.Fb, -np.exp(fine.logf0))
    phimu = A_mu + B_mu
    psimu = A_mu + (F_mu / Fb_mu) ** 2 * B_mu
    if not (np.isfinite(phimu) and phimu > 0):
        raise TailDivergence("Phi(mu) is not finite")
    with np.errstate(divide="ignore", over="ignore"):
        base = -np.log(fine.s2) - fine.logf0
        c = np.exp(_log(fine.F0) + _log(fine.Fb) + base)
        u0 = np.exp(_log(fine.F0) + base)
        ub = np.exp(_log(fine.Fb) + base)
    C = cumsimpson(c, fine.h)
    U0 = cumsimpson(u0, fine.h)
    Ub = rcumsimpson(ub, fine.h)
    tail_ok = bool(
        np.all(np.isfinite(fine.A))
        and np.all(np.isfinite(fine.B))
        and _tail_decays(fine.a, from_right=False)
        and _tail_decays(fine.b, from_right=True)
    )
    nodes = grid.nodes
    dlog_r, dlog_l = _one_sided_dlog(model, nodes)
    diag = dict(diag)
    diag.update(
        fine_step=fine.h,
        median_residual=abs(F_mu - 0.5),
        trapezoid_mass=float(np.sum(_trapezoid_weights(nodes) * np.exp(fine.logf0[::r]))),
    )
    if abs(F_mu - 0.5) > ROOT_TOL:
        raise NormalizationFailure(f"median root not resolved: |F0(mu) - 1/2| = {abs(F_mu - 0.5):.3g}")
    return InvariantLaw(
        grid=grid,
        logf0=fine.logf0[::r].copy(),
        F0=fine.F0[::r].copy(),
        Fb=fine.Fb[::r].copy(),
        A=fine.A[::r].copy(),
        B=fine.B[::r].copy(),
        C=C[::r].copy(),
        U0=U0[::r].copy(),
        Ub=Ub[::r].copy(),
        s2=fine.s2[::r].copy(),
        S=fine.S[::r].copy(),
        dlog_r=dlog_r,
        dlog_l=dlog_l,
        mu=mu,
        G=float(math.exp(fine.logG)),
        PhiMu=float(phimu),
        PsiMu=float(psimu),
        mean_sigma2=fine.mean_sigma2,
        tail_ok=tail_ok,
        model_hash=model.model_hash,
        label=model.label,
        policy=policy,
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# public operations


def median(law: InvariantLaw) -> float:
    return law.mu


def _require_tails(law: InvariantLaw):
    if not law.tail_ok:
        raise TailDivergence(f"Phi/Psi integrals of {law.label or 'law'} do not converge (tail ratio test failed)")


def phi(law: InvariantLaw, x):
    """Phi(x) = int_{-inf}^x F0^2/(sigma^2 f0) + int_x^inf Fb^2/(sigma^2 f0)."""
    _require_tails(law)
    x = law._check_range(x)
    out = law.A_at(x) + law.B_at(x)
    return float(out) if out.ndim == 0 else out


def psi(law: InvariantLaw, x):
    """Psi(x) = A(x) + (F0(x)/Fb(x))^2 B(x) for x >= mu."""
    _require_tails(law)
    x = law._check_range(x)
    if np.any(x < law.mu - ROOT_TOL):
        raise DomainError("psi is defined for x >= mu")
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        out = _psi_from(law.A_at(x), law.B_at(x), law.F0_at(x), law.Fb_at(x))
    return float(out) if out.ndim == 0 else out


def dpsi(law: InvariantLaw, x):
    """Psi'(x) = 2 F0 f0 B / Fb^3 (closed form, no differencing)."""
    x = law._check_range(x)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        out = 2.0 * law.F0_at(x) * law.f0_at(x) * law.B_at(x) / law.Fb_at(x) ** 3
    return float(out) if out.ndim == 0 else out


def _weight(law: InvariantLaw, x, key: str):
    _require_tails(law)
    x = law._check_range(x)
    if np.any(x < law.mu):
        raise DomainError("weights are defined on [mu, inf)")
    out = np.exp(law.weights_at(x)[key])
    return float(out) if out.ndim == 0 else out


def weight_h(law: InvariantLaw, x):
    """h(x) = (2F0-1) exp(-Phi/Phi(mu)) / (4 Phi(mu)^2 sigma^2 f0^4)."""
    return _weight(law, x, "log_h")


def weight_H(law: InvariantLaw, x):
    """H(x) = Psi' exp(-Psi/Psi(mu)) / (4 Psi(mu)^2 f0 (F0-1)^2)."""
    return _weight(law, x, "log_H")


def weight_g(law: InvariantLaw, x):
    """g(x) = exp(-Phi/Phi(mu)) / (2 f0 sqrt(Phi(mu)))."""
    return _weight(law, x, "log_g")


def limit_covariance(law: InvariantLaw, x, y):
    """R(x, y) = int (1{v>x} - F0)(1{v>y} - F0)/(sigma^2 f0) dv.

    For x <= y this splits as A(x) - int_x^y F0 Fb/(sigma^2 f0) + B(y).
    """
    _require_tails(law)
    x = law._check_range(x)
    y = law._check_range(y)
    lo = np.minimum(x, y)
    hi = np.maximum(x, y)
    out = law.A_at(lo) - (law.C_at(hi) - law.C_at(lo)) + law.B_at(hi)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# condition integrals


@dataclass(frozen=True)
class IntegralValue:
    value: float
    converged: bool

    def to_dict(self):
        return {"value": self.value, "converged": self.converged}


def _outer(xs, log_w, inner, tw):
    """sum_i tw_i exp(log_w_i) inner_i with a decay check on the integrand."""
    with np.errstate(over="ignore", invalid="ignore"):
        vals = np.where(np.isfinite(log_w), np.exp(log_w) * inner, 0.0)
    total = float(np.sum(tw * vals))
    peak = float(np.max(np.abs(vals))) if vals.size else 0.0
    converged = bool(np.isfinite(total) and np.all(np.isfinite(vals)) and (peak == 0 or abs(vals[-1]) <= 1e-8 * peak))
    return IntegralValue(total if np.isfinite(total) else math.inf, converged)


def _inner_expectations(law: InvariantLaw, xs: np.ndarray, J_of: Any, chunk: int = 256) -> np.ndarray:
    """E0[J_x(xi)^2] for each x in ``xs`` by trapezoid quadrature against f0."""
    tw = _trapezoid_weights(law.x) * law.f0
    out = np.empty(xs.shape[0])
    for s in range(0, xs.shape[0], chunk):
        J = J_of(xs[s : s + chunk, None])
        with np.errstate(over="ignore", invalid="ignore"):
            out[s : s + chunk] = (J * J) @ tw
    return out


def condition_integrals(law: InvariantLaw) -> dict[str, IntegralValue]:
    """A1, A2 (LTE conditions) and C9, C10 (EDF conditions), each with a convergence flag."""
    x = law.x
    up = law.upper_mask & np.isfinite(law.log_h)
    F0, Fb, U0, Ub = law.F0, law.Fb, law.U0, law.Ub
    tw_all = _trapezoid_weights(x)
    res: dict[str, IntegralValue] = {}

    # A1 and A2 share the outer weight (2F0-1) e^{-Phi/PhiMu} / (PhiMu^2 sigma^2 f0^2)
    xs = x[up]
    idx = np.nonzero(up)[0]
    tw = tw_all[idx]
    with np.errstate(divide="ignore"):
        log_w = (
            _log(F0[idx] - Fb[idx])
            - law.Phi[idx] / law.PhiMu
            - 2 * math.log(law.PhiMu)
            - np.log(law.s2[idx])
            - 2 * law.logf0[idx]
        )
    res["A1"] = _outer(xs, log_w, law.Phi[idx], tw)

    # inner integral int_c^xi (1{v>x} - F0(v))/(sigma^2 f0) dv with reference point c = 0
    # (the median when 0 lies outside the grid), split so that each piece integrates a
    # positive function:  [Ub(max(c,x)) - Ub(max(xi,x))] - [U0(min(xi,x)) - U0(min(c,x))]
    c = 0.0 if x[0] <= 0.0 <= x[-1] else law.mu
    Ub_cx = law.Ub_at(np.maximum(c, xs))
    U0_cx = law.U0_at(np.minimum(c, xs))

    def J_A2(xcol):
        k = np.searchsorted(xs, xcol[:, 0])
        hi = np.maximum(x[None, :], xcol)
        lo = np.minimum(x[None, :], xcol)
        return (Ub_cx[k][:, None] - _node_interp(law, hi, Ub)) - (_node_interp(law, lo, U0) - U0_cx[k][:, None])

    inner = _inner_expectations(law, xs, J_A2)
    res["A2"] = _outer(xs, log_w, inner, tw)

    # EDF conditions: outer weight H f0
    upH = law.upper_mask & np.isfinite(law.log_H)
    idxH = np.nonzero(upH)[0]
    xH = x[idxH]
    twH = tw_all[idxH]
    log_wH = law.log_H[idxH] + law.logf0[idxH]
    # C9 inner: E0[((F0(xi)F0(x) - F0(xi ^ x)) / (sigma f0)(xi))^2]
    a, b = law._integrands["a"], law._integrands["b"]
    # piecewise integrand: F0(xi)^2 Fb(x)^2/(s2 f0) left of x, F0(x)^2 Fb(xi)^2/(s2 f0) right of x;
    # trapezoid on each side of the node x
    cumL = np.concatenate([[0.0], np.cumsum(0.5 * (a[1:] + a[:-1]) * np.diff(x))])
    cumR = np.concatenate([np.cumsum((0.5 * (b[1:] + b[:-1]) * np.diff(x))[::-1])[::-1], [0.0]])
    inner9_vals = Fb[idxH] ** 2 * cumL[idxH] + F0[idxH] ** 2 * cumR[idxH]
    res["C9"] = _outer(xH, log_wH, inner9_vals, twH)

    # C10 inner: E0[(int_mu^xi (F0(y)F0(x) - F0(y ^ x))/(sigma^2 f0)(y) dy)^2]
    #   = E0[( -Fb(x)[U0(min(xi,x)) - U0(mu)] - F0(x)[Ub(x) - Ub(max(xi,x))] )^2]
    U0_mu = float(law.U0_at(law.mu))

    def J_C10(xcol):
        k = np.searchsorted(xH, xcol[:, 0])
        j = idxH[k]
        hi = np.maximum(x[None, :], xcol)
        lo = np.minimum(x[None, :], xcol)
        return -Fb[j][:, None] * (_node_interp(law, lo, U0) - U0_mu) - F0[j][:, None] * (
            Ub[j][:, None] - _node_interp(law, hi, Ub)
        )

    inner10 = _inner_expectations(law, xH, J_C10)
    res["C10"] = _outer(xH, log_wH, inner10, twH)
    return res


def _node_interp(law: InvariantLaw, pts: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Look up ``table`` at points that are grid nodes (exact index match)."""
    idx = np.clip(np.searchsorted(law.x, pts), 0, law.x.shape[0] - 1)
    return table[idx]


# ---------------------------------------------------------------------------
# distances between laws


def distance_norms(lawA: InvariantLaw, lawB: InvariantLaw, modelA: DiffusionModel, modelB: DiffusionModel) -> dict:
    """Distances of model B from the hypothesis A.

    ``density_L2`` = ||f_B - f_A|| and ``cdf_L2`` = ||F_B - F_A|| in L2(dF_A);
    ``drift_KL`` = ||(S_B - S_A)/sigma|| in L2(f_B dx), the weighted drift
    distance of the Kullback-Leibler type.
    """
    lo = max(lawA.x[0], lawB.x[0])
    hi = min(lawA.x[-1], lawB.x[-1])
    if not lo < hi:
        raise GridMismatch("laws have disjoint grids")
    x = lawA.x[(lawA.x >= lo) & (lawA.x <= hi)]
    massA = float(lawA.F0_at(x[-1]) - lawA.F0_at(x[0]))
    massB = float(lawB.F0_at(x[-1]) - lawB.F0_at(x[0]))
    if massA < 1 - 1e-8 or massB < 1 - 1e-8:
        raise GridMismatch(f"grids share too little mass (A: {massA:.3g}, B: {massB:.3g})")
    tw = _trapezoid_weights(x)
    fA = lawA.f0_at(x)
    fB = lawB.f0_at(x)
    FA = lawA.F0_at(x)
    FB = lawB.F0_at(x)
    dS = (modelB.S(x) - modelA.S(x)) ** 2 / modelA.sigma2(x)
    return {
        "density_L2": float(math.sqrt(np.sum(tw * (fB - fA) ** 2 * fA))),
        "cdf_L2": float(math.sqrt(np.sum(tw * (FB - FA) ** 2 * fA))),
        "drift_KL": float(math.sqrt(np.sum(tw * dS * fB))),
    }


__all__ = [
    "InvariantLaw",
    "IntegralValue",
    "build_law",
    "condition_integrals",
    "cumsimpson",
    "distance_norms",
    "dpsi",
    "hermite",
    "limit_covariance",
    "make_grid",
    "median",
    "phi",
    "psi",
    "rcumsimpson",
    "weight_H",
    "weight_g",
    "weight_h",
]
