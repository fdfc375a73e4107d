"""Monte Carlo calibration of the limiting Wiener functionals.

Functionals (``w`` a standard Wiener process):

* ``int_exp``  int_1^inf w(v)^2 e^{-v} dv
* ``sup_exp``  sup_{v >= 1} |w(v)| e^{-v}
* ``int_01``   int_0^1 w(v)^2 dv
* ``sup_01``   sup_{0 <= v <= 1} |w(v)|

Draws are grouped in fixed-size blocks; block ``j`` of functional ``f``
uses its own counter-based stream keyed by ``(master_seed, f, j)``, so the
sample vector does not depend on the number of worker threads.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptFile, InsufficientSamples, LevelNotTabulated, VersionMismatch
from .kernels import wiener_reduce
from .law import InvariantLaw

GENERATOR_VERSION = 1
DEFAULT_EPS = (0.01, 0.025, 0.05, 0.10)
DEFAULT_N_PATHS = 500_000
DEFAULT_TIME_STEP = 5e-4
DEFAULT_TRUNCATION = 35.0
MIN_TABLE_SAMPLES = 100_000
BLOCK = 64
BOOTSTRAP_REPS = 200

# functional id -> (numeric code used in stream keys, starts at v=1 with exp weight, reduction kind)
FUNCTIONALS = {
    "int_exp": (1, True, 0),
    "sup_exp": (2, True, 1),
    "int_01": (3, False, 0),
    "sup_01": (4, False, 1),
}


def _functional(functional_id: str):
    try:
        return FUNCTIONALS[functional_id]
    except KeyError:
        raise ConfigError(f"unknown functional {functional_id!r}; choose from {sorted(FUNCTIONALS)}") from None


def _block_rng(seed: int, code: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(code, block))))


def _grid_weights(exp_weighted: bool, kind: int, time_step: float, truncation_v: float):
    if exp_weighted:
        n = int(math.ceil((truncation_v - 1.0) / time_step - 1e-9))
        v = 1.0 + time_step * np.arange(n + 1)
        e = np.exp(-v)
        emid = np.exp(-(v[:-1] + 0.5 * time_step))
    else:
        n = int(math.ceil(1.0 / time_step - 1e-9))
        v = time_step * np.arange(n + 1)
        e = np.ones(n + 1)
        emid = np.ones(n)
    dv = (v[-1] - v[0]) / n
    if kind == 0:
        tw = np.full(n + 1, dv)
        tw[0] = tw[-1] = 0.5 * dv
        return n, dv, tw * e, emid
    return n, dv, e, emid


def sample_limit(functional_id: str, n_paths: int, time_step: float = DEFAULT_TIME_STEP,
                 truncation_v: float = DEFAULT_TRUNCATION, seed: int = 0, threads: int = 1) -> np.ndarray:
    """``n_paths`` independent draws of the functional.

    Each draw simulates a Wiener path by Gaussian increments of length
    ``time_step``; integrals use the trapezoid rule and suprema add the
    exact Brownian-bridge maximum inside steps that can exceed the running
    maximum.  Exp-weighted functionals start at ``v = 1`` with
    ``w(1) ~ N(0, 1)`` and stop at ``truncation_v``.
    """
    code, exp_weighted, kind = _functional(functional_id)
    if not (0 < time_step <= 1e-3 * (1 + 1e-12)):
        raise ConfigError("time_step must lie in (0, 1e-3]")
    if exp_weighted and truncation_v < 30:
        raise ConfigError("truncation_v must be >= 30 for exp-weighted functionals")
    if n_paths < 0:
        raise ConfigError("n_paths must be nonnegative")
    n, dv, wts, wmid = _grid_weights(exp_weighted, kind, time_step, truncation_v)
    n_blocks = -(-n_paths // BLOCK)

    def run(j: int) -> np.ndarray:
        b = min(BLOCK, n_paths - j * BLOCK)
        rng = _block_rng(seed, code, j)
        w0 = rng.standard_normal(b) if exp_weighted else np.zeros(b)
        keys = rng.integers(0, 2 ** 64 - 1, size=b, dtype=np.uint64, endpoint=True)
        z = rng.standard_normal((b, n))
        return wiener_reduce(w0, z, dv, wts, wmid, kind, keys)

    if threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            parts = list(pool.map(run, range(n_blocks)))
    else:
        parts = [run(j) for j in range(n_blocks)]
    return np.concatenate(parts) if parts else np.empty(0)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CriticalValueTable:
    """(1 - eps)-quantiles of a limit functional plus how they were produced."""

    functional_id: str
    quantiles: dict
    n_paths: int
    time_step: float
    truncation_v: float
    master_seed: int
    generator_version: int = GENERATOR_VERSION
    quantile_se: dict = field(default_factory=dict)
    samples_file: str = ""

    def __post_init__(self):
        q = {float(k): float(v) for k, v in self.quantiles.items()}
        se = {float(k): float(v) for k, v in self.quantile_se.items()}
        object.__setattr__(self, "quantiles", dict(sorted(q.items())))
        object.__setattr__(self, "quantile_se", dict(sorted(se.items())))
        vals = list(self.quantiles.values())
        if not all(np.isfinite(vals)):
            raise ConfigError("quantiles must be finite")
        if any(b > a for a, b in zip(vals, vals[1:])):
            raise ConfigError("quantiles must not increase with eps")

    @property
    def epsilons(self) -> tuple[float, ...]:
        return tuple(self.quantiles)

    def critical_value(self, eps: float) -> float:
        for k, v in self.quantiles.items():
            if abs(k - float(eps)) <= 1e-12:
                return v
        raise LevelNotTabulated(f"eps={eps} not in table {self.functional_id} (has {list(self.quantiles)})")

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["quantiles"] = {repr(k): v for k, v in self.quantiles.items()}
        d["quantile_se"] = {repr(k): v for k, v in self.quantile_se.items()}
        return d


def quantile_table(samples, eps_grid=DEFAULT_EPS, *, functional_id: str = "custom", time_step: float = float("nan"),
                   truncation_v: float = float("nan"), master_seed: int = 0, min_samples: int = MIN_TABLE_SAMPLES,
                   bootstrap: int = BOOTSTRAP_REPS) -> CriticalValueTable:
    """Empirical (1 - eps)-quantiles with bootstrap standard errors."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < min_samples:
        raise InsufficientSamples(f"{x.size} samples; need at least {min_samples}")
    if not np.all(np.isfinite(x)):
        raise ConfigError("samples contain non-finite values")
    eps = np.array(sorted(float(e) for e in eps_grid))
    if np.any((eps <= 0) | (eps >= 1)):
        raise ConfigError("eps values must lie in (0, 1)")
    probs = 1.0 - eps
    q = np.quantile(x, probs)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(master_seed), spawn_key=(999,))))
    boot = np.empty((bootstrap, eps.size))
    for b in range(bootstrap):
        boot[b] = np.quantile(x[rng.integers(0, x.size, x.size)], probs)
    se = boot.std(axis=0, ddof=1) if bootstrap > 1 else np.zeros(eps.size)
    return CriticalValueTable(
        functional_id=functional_id,
        quantiles=dict(zip(eps.tolist(), q.tolist())),
        n_paths=int(x.size),
        time_step=float(time_step),
        truncation_v=float(truncation_v),
        master_seed=int(master_seed),
        generator_version=GENERATOR_VERSION,
        quantile_se=dict(zip(eps.tolist(), se.tolist())),
    )


def _canonical(d: dict) -> bytes:
    return json.dumps(d, sort_keys=True, separators=(",", ":")).encode()


def table_filename(functional_id: str, version: int = GENERATOR_VERSION) -> str:
    return f"{functional_id}_v{version}.json"


def save_table(table: CriticalValueTable, path, samples: np.ndarray | None = None) -> Path:
    """Write the table as JSON with a sha256 checksum; optionally store the raw draws next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if samples is not None:
        sfile = path.with_suffix(".samples.npy")
        np.save(sfile, np.asarray(samples, dtype=np.float64))
        table = CriticalValueTable(**{**asdict(table), "samples_file": sfile.name})
    body = table.to_json_dict()
    body["checksum"] = hashlib.sha256(_canonical(body)).hexdigest()
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")
    os.replace(tmp, path)
    return path


def load_table(path) -> CriticalValueTable:
    path = Path(path)
    try:
        body = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise CorruptFile(f"cannot read table {path}: {exc}") from exc
    if not isinstance(body, dict) or "checksum" not in body:
        raise CorruptFile(f"{path} has no checksum")
    stored = body.pop("checksum")
    if hashlib.sha256(_canonical(body)).hexdigest() != stored:
        raise CorruptFile(f"checksum mismatch in {path}")
    if body.get("generator_version") != GENERATOR_VERSION:
        raise VersionMismatch(
            f"{path} was produced by generator version {body.get('generator_version')}; "
            f"this library uses version {GENERATOR_VERSION} - recalibrate"
        )
    try:
        return CriticalValueTable(**body)
    except TypeError as exc:
        raise CorruptFile(f"unexpected fields in {path}: {exc}") from exc


def load_samples(table: CriticalValueTable, table_path) -> np.ndarray:
    if not table.samples_file:
        raise FileNotFoundError("table records no sample file")
    return np.load(Path(table_path).parent / table.samples_file)


def default_table_dir() -> Path:
    return Path(os.environ.get("DIFFGOF_TABLE_DIR", Path(".diffgof_cache") / "tables"))


def calibrate(functional_id: str, n_paths: int = DEFAULT_N_PATHS, time_step: float = DEFAULT_TIME_STEP,
              truncation_v: float = DEFAULT_TRUNCATION, seed: int = 0, eps_grid=DEFAULT_EPS, threads: int = 1,
              min_samples: int = MIN_TABLE_SAMPLES) -> tuple[CriticalValueTable, np.ndarray]:
    if n_paths < min_samples:
        raise InsufficientSamples(f"n_paths={n_paths}; need at least {min_samples}")
    samples = sample_limit(functional_id, n_paths, time_step, truncation_v, seed, threads)
    table = quantile_table(samples, eps_grid, functional_id=functional_id, time_step=time_step,
                           truncation_v=truncation_v, master_seed=seed, min_samples=min_samples)
    return table, samples


def get_table(functional_id: str, table_dir=None, **params) -> CriticalValueTable:
    """Load ``{functional_id}_v{version}.json`` from the table directory, calibrating it if missing.

    A cached table is reused only when its recorded parameters match the request.
    """
    table_dir = Path(table_dir) if table_dir is not None else default_table_dir()
    path = table_dir / table_filename(functional_id)
    want = {
        "n_paths": params.get("n_paths", DEFAULT_N_PATHS),
        "time_step": params.get("time_step", DEFAULT_TIME_STEP),
        "truncation_v": params.get("truncation_v", DEFAULT_TRUNCATION),
        "master_seed": params.get("seed", 0),
    }
    if path.exists():
        table = load_table(path)
        if all(getattr(table, k) == v for k, v in want.items()):
            return table
    table, samples = calibrate(functional_id, **params)
    save_table(table, path, samples)
    return load_table(path)


# ---------------------------------------------------------------------------
# distribution-free reduction: the limit built from a concrete law


REDUCTIONS = ("delta", "Delta", "gamma")


def _reduction_nodes(law: InvariantLaw, clock: np.ndarray, clock_mu: float, max_dv: float, v_max: float):
    """Law nodes from the median up to clock/clock_mu = v_max, each cell split so the clock moves <= max_dv."""
    idx = np.nonzero(law.upper_mask & np.isfinite(clock))[0]
    v = clock[idx] / clock_mu
    stop = int(np.searchsorted(v, v_max, side="right")) + 1
    idx = idx[: min(stop, idx.size)]
    x = law.x[idx]
    dvs = np.maximum(np.diff(clock[idx]) / clock_mu, 0.0)
    k = np.maximum(1, np.ceil(dvs / max_dv).astype(int))
    parts = [x[i] + (x[i + 1] - x[i]) * np.arange(k[i]) / k[i] for i in range(x.size - 1)]
    parts.append(x[-1:])
    return np.concatenate(parts)


def reduction_design(law: InvariantLaw, kind: str, max_dv: float = 2e-3, v_max: float = DEFAULT_TRUNCATION):
    """x-grid, clock values and weights for :func:`sample_reduction`.

    Returns ``(x, clock, weight)`` where the draw is
    ``sum trapz(weight * W(clock)^2)`` for the integral kinds and
    ``max weight * |W(clock)|`` for ``gamma``.
    """
    if kind not in REDUCTIONS:
        raise ConfigError(f"kind must be one of {REDUCTIONS}")
    if kind == "Delta":
        x = _reduction_nodes(law, law.Psi, law.PsiMu, max_dv, v_max)
    else:
        x = _reduction_nodes(law, law.Phi, law.PhiMu, max_dv, v_max)
    x[0] = law.mu
    logf, F0, Fb, A, B, s2 = law.pieces_at(x)
    w = law.weights_at(x)
    if kind == "delta":
        clock = A + B
        weight = 4.0 * np.exp(w["log_h"] + 3.0 * logf)
    elif kind == "Delta":
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            clock = A + (F0 / Fb) ** 2 * B
        weight = 4.0 * np.exp(w["log_H"] + logf + 2.0 * np.log(np.maximum(Fb, 1e-300)))
    else:
        clock = A + B
        weight = 2.0 * np.exp(w["log_g"] + logf)
    clock = np.maximum.accumulate(clock)  # guard against interpolation wiggle
    return x, clock, weight


def sample_reduction(law: InvariantLaw, kind: str, n_samples: int, seed: int = 0, max_dv: float = 2e-3,
                     v_max: float = DEFAULT_TRUNCATION, chunk: int = 256) -> np.ndarray:
    """Draws of the limit expressed through the law itself.

    ``delta``: 4 int_mu h f0^3 W(Phi(x))^2 dx; ``Delta``: 4 int_mu H f0 Fb^2 W(Psi(x))^2 dx;
    ``gamma``: sup_{x >= mu} 2 g f0 |W(Phi(x))|, with W a standard Wiener process
    sampled on the clock values.  Each should reproduce the universal functional.
    """
    x, clock, weight = reduction_design(law, kind, max_dv, v_max)
    tw = np.empty_like(x)
    dx = np.diff(x)
    tw[0], tw[-1] = dx[0] / 2, dx[-1] / 2
    tw[1:-1] = (dx[1:] + dx[:-1]) / 2
    dclock = np.diff(clock)
    sd = np.sqrt(dclock)
    wmid = np.sqrt(weight[:-1] * weight[1:])
    out = np.empty(n_samples)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(77,))))
    for s in range(0, n_samples, chunk):
        b = min(chunk, n_samples - s)
        W = np.empty((b, x.size))
        W[:, 0] = math.sqrt(clock[0]) * rng.standard_normal(b)
        W[:, 1:] = W[:, :1] + np.cumsum(sd[None, :] * rng.standard_normal((b, x.size - 1)), axis=1)
        if kind == "gamma":
            aw = np.abs(W)
            best = (aw * weight).max(axis=1)
            u = rng.random((b, x.size - 1, 2))
            a, c = W[:, :-1], W[:, 1:]
            d2 = (c - a) ** 2
            top = 0.5 * (a + c + np.sqrt(d2 - 2.0 * dclock * np.log(u[..., 0])))
            bot = 0.5 * (-a - c + np.sqrt(d2 - 2.0 * dclock * np.log(u[..., 1])))
            out[s : s + b] = np.maximum(best, (np.maximum(top, bot) * wmid).max(axis=1))
        else:
            out[s : s + b] = (W * W) @ (tw * weight)
    return out


__all__ = [
    "BLOCK",
    "CriticalValueTable",
    "DEFAULT_EPS",
    "DEFAULT_N_PATHS",
    "DEFAULT_TIME_STEP",
    "DEFAULT_TRUNCATION",
    "FUNCTIONALS",
    "GENERATOR_VERSION",
    "REDUCTIONS",
    "calibrate",
    "default_table_dir",
    "get_table",
    "load_samples",
    "load_table",
    "quantile_table",
    "reduction_design",
    "sample_limit",
    "sample_reduction",
    "save_table",
    "table_filename",
]
