import json
import math

import numpy as np
import pytest

from diffgof import kernels
from diffgof.calibrate import (
    GENERATOR_VERSION,
    CriticalValueTable,
    calibrate,
    load_samples,
    load_table,
    quantile_table,
    sample_limit,
    save_table,
)
from diffgof.errors import ConfigError, CorruptFile, InsufficientSamples, LevelNotTabulated, VersionMismatch


def sup01_cdf(c):
    """P(sup_{[0,1]} |w| < c) by the reflection-principle series."""
    k = np.arange(60)
    return float(4 / math.pi * np.sum((-1) ** k / (2 * k + 1) * np.exp(-((2 * k + 1) ** 2) * math.pi ** 2 / (8 * c * c))))


def test_int01_mean():
    s = sample_limit("int_01", 20_000, 1e-3, seed=3)
    assert abs(s.mean() - 0.5) < 3 * s.std(ddof=1) / math.sqrt(s.size)


def test_int_exp_mean_small():
    s = sample_limit("int_exp", 5_000, 1e-3, 30.0, seed=3)
    assert abs(s.mean() - 2 / math.e) < 3 * s.std(ddof=1) / math.sqrt(s.size)


def test_sup01_distribution_matches_series():
    s = np.sort(sample_limit("sup_01", 20_000, 1e-3, seed=4))
    grid = np.quantile(s, np.linspace(0.02, 0.98, 25))
    emp = np.searchsorted(s, grid, side="right") / s.size
    theo = np.array([sup01_cdf(c) for c in grid])
    assert np.max(np.abs(emp - theo)) < 0.015


def test_sup_exp_positive_and_finite():
    s = sample_limit("sup_exp", 2_000, 1e-3, 30.0, seed=5)
    assert np.all(np.isfinite(s)) and np.all(s > 0)


def test_parameter_checks():
    with pytest.raises(ConfigError):
        sample_limit("int_01", 10, 2e-3)
    with pytest.raises(ConfigError):
        sample_limit("int_exp", 10, 1e-3, 20.0)
    with pytest.raises(ConfigError):
        sample_limit("nope", 10)


def test_deterministic_and_thread_independent():
    a = sample_limit("sup_01", 300, 1e-3, seed=9)
    b = sample_limit("sup_01", 300, 1e-3, seed=9, threads=3)
    c = sample_limit("sup_01", 300, 1e-3, seed=10)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_wiener_backends_agree():
    rng = np.random.default_rng(0)
    B, n, dv = 8, 4000, 1e-3
    w0, z = rng.standard_normal(B), rng.standard_normal((B, n))
    keys = rng.integers(0, 2 ** 63, B).astype(np.uint64)
    v = 1 + dv * np.arange(n + 1)
    e = np.exp(-v)
    emid = np.exp(-(v[:-1] + dv / 2))
    for kind, wts in ((0, e * dv), (1, e)):
        np.testing.assert_allclose(kernels.wiener_reduce_numba(w0, z, dv, wts, emid, kind, keys),
                                   kernels.wiener_reduce_numpy(w0, z, dv, wts, emid, kind, keys), rtol=1e-12)


def test_quantile_table_basics():
    x = np.random.default_rng(1).standard_normal(10_001)
    t = quantile_table(x, (0.5, 0.05), min_samples=1000)
    assert t.critical_value(0.5) == pytest.approx(np.median(x))
    assert t.quantile_se[0.05] > 0
    with pytest.raises(LevelNotTabulated):
        t.critical_value(0.01)
    flat = quantile_table(np.full(1000, 3.25), (0.01, 0.1), min_samples=1000)
    assert set(flat.quantiles.values()) == {3.25}
    with pytest.raises(InsufficientSamples):
        quantile_table(np.ones(10), min_samples=1000)
    with pytest.raises(ConfigError):
        quantile_table(np.ones(1000), (0.0,), min_samples=1000)


def test_calibrate_refuses_small_runs():
    with pytest.raises(InsufficientSamples):
        calibrate("int_01", n_paths=10)


def test_table_invariants():
    with pytest.raises(ConfigError):
        CriticalValueTable("int_01", {0.01: 1.0, 0.1: 2.0}, 1, 1e-3, 1.0, 0)
    with pytest.raises(ConfigError):
        CriticalValueTable("int_01", {0.01: math.inf}, 1, 1e-3, 1.0, 0)


@pytest.fixture
def saved(tmp_path):
    x = np.random.default_rng(2).exponential(size=2000)
    t = quantile_table(x, min_samples=1000, functional_id="int_exp", master_seed=7)
    path = save_table(t, tmp_path / "int_exp_v1.json", x)
    return t, path, x


def test_table_roundtrip(saved):
    t, path, x = saved
    u = load_table(path)
    assert u.quantiles == t.quantiles and u.quantile_se == t.quantile_se
    assert (u.functional_id, u.n_paths, u.master_seed, u.generator_version) == ("int_exp", 2000, 7, GENERATOR_VERSION)
    np.testing.assert_array_equal(load_samples(u, path), x)


def test_table_tamper_detected(saved):
    _, path, _ = saved
    body = json.loads(path.read_text())
    body["quantiles"]["0.05"] *= 1.01
    path.write_text(json.dumps(body))
    with pytest.raises(CorruptFile):
        load_table(path)
    path.write_text("{not json")
    with pytest.raises(CorruptFile):
        load_table(path)


def test_table_old_version(saved):
    import hashlib

    _, path, _ = saved
    body = json.loads(path.read_text())
    body.pop("checksum")
    body["generator_version"] = GENERATOR_VERSION - 1
    body["checksum"] = hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
    path.write_text(json.dumps(body))
    with pytest.raises(VersionMismatch, match="recalibrate"):
        load_table(path)


def test_table_file_deterministic(tmp_path):
    x = np.random.default_rng(3).exponential(size=1500)
    a = save_table(quantile_table(x, min_samples=1000), tmp_path / "a.json")
    b = save_table(quantile_table(x, min_samples=1000), tmp_path / "b.json")
    assert a.read_bytes() == b.read_bytes()


def test_two_seeds_agree(accept_tables, tmp_path):
    """Two independent 2e5-path calibrations agree on d_0.05 within 1% (the second reuses no draws)."""
    t1, _ = accept_tables["sup_01"]
    t2, _ = calibrate("sup_01", n_paths=200_000, time_step=5e-4, seed=t1.master_seed + 1)
    assert t2.critical_value(0.05) == pytest.approx(t1.critical_value(0.05), rel=0.01)
