import math

import numpy as np
import pytest

from diffgof import kernels
from diffgof.errors import BlowupError, ConfigError, CorruptFile, VersionMismatch
from diffgof.model import DiffusionModel, DiffusionSpec, DriftSpec, switching_model
from diffgof.simulate import (
    RngStream,
    SamplePath,
    dump_path,
    inverse_cdf,
    load_path,
    sample_stationary_init,
    simulate_path,
    simulate_paths,
)


def test_streams_are_reproducible_and_independent_of_order():
    a = RngStream(7, 3).generator(1).standard_normal(5)
    RngStream(7, 4).generator(1).standard_normal(5)
    b = RngStream(7, 3).generator(1).standard_normal(5)
    c = RngStream(7, 4).generator(1).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_bad_seed_rejected():
    with pytest.raises(ConfigError):
        RngStream(-1)
    with pytest.raises(ConfigError):
        RngStream(1, -2)


def test_inverse_cdf_median(ou_law, sw_law):
    for law in (ou_law, sw_law):
        assert inverse_cdf(law, np.array([0.5]))[0] == pytest.approx(law.mu, abs=1e-8)


def test_stationary_draws_match_cdf(ou_law):
    x = np.sort(sample_stationary_init(ou_law, RngStream(1, 0), size=100_000))
    F = ou_law.F0_at(x)
    n = x.size
    d = max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n))
    assert d < 0.01


def test_switching_stationary_mean_abs(sw_law):
    x = sample_stationary_init(sw_law, RngStream(2, 0), size=100_000)
    assert np.mean(np.abs(x)) == pytest.approx(0.5, abs=3 * 0.5 / math.sqrt(1e5))


def test_zero_noise_zero_drift_is_constant():
    m = DiffusionModel(DriftSpec.poly_trig(poly=(0.0,)), DiffusionSpec.constant(1.0))
    ops, pars, coef, dcode, _ = m.program
    z = np.random.default_rng(0).standard_normal((1, 1000))
    for euler in (kernels.euler_numpy, kernels.euler_numba):
        paths, status = euler(ops, pars, coef, dcode, np.zeros(3), np.array([1.5]), z, 0.01, 1e3)
        assert status[0] < 0
        np.testing.assert_array_equal(paths[0], 1.5)


def test_simulation_deterministic(ou, ou_law):
    p1 = simulate_path(ou, ou_law, 100, 0.01, RngStream(11, 5))
    p2 = simulate_path(ou, ou_law, 100, 0.01, RngStream(11, 5))
    p3 = simulate_path(ou, ou_law, 100, 0.01, RngStream(11, 6))
    assert p1 == p2 and not p1 == p3
    assert p1.N == 10_000 and p1.T == pytest.approx(100.0)
    assert not p1.values.flags.writeable


def test_ou_time_average_and_autocorrelation(ou, ou_law):
    p = simulate_path(ou, ou_law, 1000, 0.01, RngStream(3, 0))
    x = p.values
    # batch means over 20 batches of length 50 (>> correlation time 1)
    batches = x[:-1].reshape(20, -1).mean(axis=1)
    se = batches.std(ddof=1) / math.sqrt(20)
    assert abs(x.mean()) < 3 * se
    lag = 100  # tau = 1
    rho = np.corrcoef(x[:-lag], x[lag:])[0, 1]
    assert rho == pytest.approx(math.exp(-1), abs=0.08)


def test_numba_and_numpy_euler_agree(ou, sw):
    rng = np.random.default_rng(4)
    z = rng.standard_normal((3, 5000))
    for m in (ou, sw):
        a = kernels.euler_numba(*m.program, np.zeros(3), z, 0.01, 1e3)
        b = kernels.euler_numpy(*m.program, np.zeros(3), z, 0.01, 1e3)
        np.testing.assert_allclose(a[0], b[0], rtol=0, atol=1e-12)
        np.testing.assert_array_equal(a[1], b[1])


def test_switching_step_rule():
    m = switching_model(a=2.0)
    with pytest.raises(ConfigError):
        simulate_path(m, None, 100, 0.01, RngStream(0))


def test_short_horizon_rejected(ou, ou_law):
    with pytest.raises(ConfigError):
        simulate_path(ou, ou_law, 0.5, 0.01, RngStream(0))


def test_blowup_reported(ou_law):
    explosive = DiffusionModel(DriftSpec.poly_trig(poly=(0.0, 0.0, 0.0, 5.0)), DiffusionSpec.constant(1.0))
    res = simulate_paths(explosive, ou_law, 100, 0.01, [RngStream(0, 0)], x0=3.0)
    assert isinstance(res[0], BlowupError)


def test_dump_roundtrip(tmp_path, ou, ou_law):
    p = simulate_path(ou, ou_law, 10, 0.01, RngStream(9, 2))
    f = tmp_path / "p.bin"
    dump_path(p, f)
    q = load_path(f)
    assert q == p and q.dt == p.dt and q.seed == 9 and q.stream_index == 2


def test_dump_errors(tmp_path, ou, ou_law):
    p = simulate_path(ou, ou_law, 10, 0.01, RngStream(9, 2))
    f = tmp_path / "p.bin"
    dump_path(p, f)
    blob = f.read_bytes()
    (tmp_path / "junk.bin").write_bytes(b"hello" + blob)
    with pytest.raises(CorruptFile):
        load_path(tmp_path / "junk.bin")
    (tmp_path / "short.bin").write_bytes(blob[:-8])
    with pytest.raises(CorruptFile):
        load_path(tmp_path / "short.bin")
    (tmp_path / "old.bin").write_bytes(blob.replace(b'"format_version": 1', b'"format_version": 0'))
    with pytest.raises(VersionMismatch):
        load_path(tmp_path / "old.bin")


def test_samplepath_validation():
    with pytest.raises((ConfigError, ValueError)):
        SamplePath(0.01, np.array([0.0, np.nan, 1.0]), 0, 0, "", "")
