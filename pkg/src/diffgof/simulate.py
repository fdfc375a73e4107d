"""Sample paths: reproducible random streams, stationary starts, Euler-Maruyama."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BlowupError, ConfigError, CorruptFile, VersionMismatch
from .kernels import euler
from .law import InvariantLaw
from .model import DiffusionModel

PATH_FORMAT_VERSION = 1
_MAGIC = b"DIFFGOF-PATH"


@dataclass(frozen=True)
class RngStream:
    """Independent, reproducible random stream number ``index`` under ``master_seed``.

    Streams come from a counter-based generator (Philox) keyed by a
    SeedSequence whose spawn key is the stream index, so stream ``i`` is
    the same no matter how many others exist or in which order they run.
    """

    master_seed: int
    index: int = 0

    def __post_init__(self):
        if not (0 <= int(self.master_seed) < 2 ** 64):
            raise ConfigError("master seed must be a 64-bit unsigned integer")
        if int(self.index) < 0:
            raise ConfigError("stream index must be nonnegative")

    def generator(self, *purpose: int) -> np.random.Generator:
        """Generator for this stream; ``purpose`` selects a sub-stream."""
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.index),) + tuple(int(p) for p in purpose))
        return np.random.Generator(np.random.Philox(ss))


# sub-stream tags
_INIT, _NOISE = 0, 1


def inverse_cdf(law: InvariantLaw, u) -> np.ndarray:
    """F0^{-1}(u) by root finding on the tabulated (Hermite) CDF."""
    return law.quantile(u)


def sample_stationary_init(law: InvariantLaw, stream: RngStream, size: int | None = None):
    """Draw X0 from the invariant law (inverse-CDF method)."""
    u = stream.generator(_INIT).random(1 if size is None else size)
    x = inverse_cdf(law, u)
    return float(x[0]) if size is None else x


@dataclass(frozen=True, eq=False)
class SamplePath:
    dt: float
    values: np.ndarray
    seed: int = 0
    stream_index: int = 0
    model_label: str = ""
    model_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.shape[0] < 2:
            raise ConfigError("a path needs at least two values")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not np.all(np.isfinite(v)):
            raise ConfigError("path contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def N(self) -> int:
        return self.values.shape[0] - 1

    @property
    def T(self) -> float:
        return self.N * self.dt

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def __eq__(self, other):
        return (
            isinstance(other, SamplePath)
            and self.dt == other.dt
            and self.seed == other.seed
            and self.stream_index == other.stream_index
            and self.model_label == other.model_label
            and self.model_hash == other.model_hash
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def _check_step(model: DiffusionModel, T: float, dt: float):
    if not (dt > 0 and T > 0):
        raise ConfigError("T and dt must be positive")
    if T < 100 * dt * (1 - 1e-12):
        raise ConfigError("need T >= 100 dt")
    d = model.drift
    if d.family == "switching" or (d.family in ("one_sided", "oscillating") and d.params["base"].family == "switching"):
        leaf = d if d.family == "switching" else d.params["base"]
        a = abs(leaf.params["a"]) * (abs(d.params.get("factor", 1.0)) if d.family == "one_sided" else 1.0)
        s2min = float(np.min(model.sigma2(np.linspace(-10, 10, 201))))
        if a > 0 and dt > 0.01 * s2min / a ** 2 * (1 + 1e-9):
            raise ConfigError(f"switching drift needs dt <= 0.01 (sigma/a)^2 = {0.01 * s2min / a ** 2:g}")


def blowup_bound(law: InvariantLaw) -> float:
    return 10.0 * max(abs(law.grid.lower), abs(law.grid.upper))


def simulate_paths(model: DiffusionModel, law: InvariantLaw, T: float, dt: float, streams, x0=None) -> list:
    """Simulate one path per stream. Entries are SamplePath or BlowupError."""
    _check_step(model, T, dt)
    N = int(round(T / dt))
    streams = list(streams)
    if not streams:
        return []
    if x0 is None:
        starts = np.array([sample_stationary_init(law, s) for s in streams])
    else:
        starts = np.broadcast_to(np.asarray(x0, dtype=float), (len(streams),)).copy()
    z = np.empty((len(streams), N))
    for r, s in enumerate(streams):
        z[r] = s.generator(_NOISE).standard_normal(N)
    bound = blowup_bound(law)
    paths, status = euler(model.program, starts, z, dt, bound)
    out = []
    for r, s in enumerate(streams):
        if status[r] >= 0:
            out.append(
                BlowupError(
                    f"path {s.index} left |x| <= {bound:g} at step {int(status[r])} (dt too large or model not ergodic)"
                )
            )
        else:
            out.append(
                SamplePath(dt, paths[r], s.master_seed, s.index, model.label, model.model_hash, {"T": N * dt})
            )
    return out


def simulate_path(model: DiffusionModel, law: InvariantLaw, T: float, dt: float, stream: RngStream, x0=None) -> SamplePath:
    """Euler-Maruyama path of length T with step dt and a stationary start."""
    res = simulate_paths(model, law, T, dt, [stream], x0=x0)[0]
    if isinstance(res, Exception):
        raise res
    return res


def brownian_increments(stream: RngStream, N: int) -> np.ndarray:
    """The standard normals that drive :func:`simulate_path` for ``stream``."""
    return stream.generator(_NOISE).standard_normal(N)


def simulate_with_noise(model: DiffusionModel, law: InvariantLaw, x0: float, z: np.ndarray, dt: float,
                        label_stream: RngStream | None = None) -> SamplePath:
    """Euler path from explicit standard normals ``z`` (used for coupled refinements)."""
    paths, status = euler(model.program, np.array([x0]), np.asarray(z)[None, :], dt, blowup_bound(law))
    if status[0] >= 0:
        raise BlowupError(f"path blew up at step {int(status[0])}")
    s = label_stream or RngStream(0, 0)
    return SamplePath(dt, paths[0], s.master_seed, s.index, model.label, model.model_hash)


# ---------------------------------------------------------------------------
# binary dump: magic, a 4-byte header length, a JSON header, then float64 LE values


def dump_path(path: SamplePath, file) -> None:
    header = {
        "format_version": PATH_FORMAT_VERSION,
        "dt": path.dt,
        "T": path.T,
        "n_values": int(path.values.shape[0]),
        "seed": int(path.seed),
        "stream_index": int(path.stream_index),
        "model_hash": path.model_hash,
        "model_label": path.model_label,
    }
    raw = json.dumps(header, sort_keys=True).encode()
    data = path.values.astype("<f8").tobytes()
    Path(file).write_bytes(_MAGIC + struct.pack("<I", len(raw)) + raw + data)


def load_path(file) -> SamplePath:
    blob = Path(file).read_bytes()
    if not blob.startswith(_MAGIC):
        raise CorruptFile(f"{file} is not a path dump")
    off = len(_MAGIC)
    try:
        (hlen,) = struct.unpack_from("<I", blob, off)
        header = json.loads(blob[off + 4 : off + 4 + hlen].decode())
    except (struct.error, ValueError) as exc:
        raise CorruptFile(f"bad header in {file}: {exc}") from exc
    if header.get("format_version") != PATH_FORMAT_VERSION:
        raise VersionMismatch(f"{file} has path format {header.get('format_version')}, expected {PATH_FORMAT_VERSION}")
    values = np.frombuffer(blob[off + 4 + hlen :], dtype="<f8")
    if values.shape[0] != header["n_values"]:
        raise CorruptFile(f"{file}: expected {header['n_values']} values, found {values.shape[0]}")
    return SamplePath(
        header["dt"], values.astype(np.float64), header["seed"], header["stream_index"], header["model_label"],
        header["model_hash"],
    )


__all__ = [
    "RngStream",
    "SamplePath",
    "blowup_bound",
    "brownian_increments",
    "dump_path",
    "inverse_cdf",
    "load_path",
    "sample_stationary_init",
    "simulate_path",
    "simulate_paths",
    "simulate_with_noise",
]
