import math

import numpy as np
import pytest

from diffgof.calibrate import quantile_table
from diffgof.errors import ConfigError, LevelNotTabulated
from diffgof.grid import GridPolicy
from diffgof.law import build_law
from diffgof.estimate import f_star, unbiased_density
from diffgof.simulate import RngStream, SamplePath, simulate_path
from diffgof.stats import (
    STAT_TABLES,
    STATISTICS,
    TestResult,
    compute,
    compute_all,
    cvm_edf_from,
    cvm_lte_from,
    decide,
    dk_integral,
    dk_sup,
    ks_lte,
    ks_lte_from,
    nn,
    run_test,
)


@pytest.fixture(scope="module")
def toy_table():
    samples = np.random.default_rng(0).exponential(size=2000)
    return quantile_table(samples, (0.05, 0.1), functional_id="int_exp", min_samples=1000)


@pytest.fixture(scope="module")
def null_path(ou, ou_law):
    return simulate_path(ou, ou_law, 1000, 0.01, RngStream(41, 0))


def test_exact_curves_give_zero(ou_law):
    assert cvm_lte_from(ou_law.f0, ou_law, 1000) == 0.0
    assert cvm_edf_from(ou_law.F0, ou_law, 1000) == 0.0
    assert ks_lte_from(ou_law.f0, ou_law, 1000) == 0.0


def test_monotone_response(ou_law):
    bump = np.where(ou_law.upper_mask, np.exp(-(ou_law.x - 1.0) ** 2), 0.0)
    cs = [0.01, 0.02, 0.05, 0.1]
    d = [cvm_lte_from(ou_law.f0 + c * bump, ou_law, 1000) for c in cs]
    g = [ks_lte_from(ou_law.f0 + c * bump, ou_law, 1000) for c in cs]
    assert all(np.diff(d) > 0) and all(np.diff(g) > 0)


def test_statistics_finite_and_nonnegative(null_path, ou, ou_law):
    vals = compute_all(null_path, ou, ou_law)
    assert set(vals) == set(STATISTICS)
    assert all(np.isfinite(v) and v >= 0 for v in vals.values())


def test_unknown_statistic(null_path, ou, ou_law):
    with pytest.raises(ConfigError):
        compute("nope", null_path, ou, ou_law)


def test_nn_matches_density_difference_form(sw, sw_law):
    # sigma == 1:  nn = (sqrt T / 2) sup |f_bar - f*| with f_bar the unit-weight unbiased estimate
    p = simulate_path(sw, sw_law, 500, 0.01, RngStream(42, 0))
    nodes = np.sort(np.unique(p.values[:-1]))
    nodes = np.concatenate((nodes, [nodes[-1] + 1.0]))
    form = math.sqrt(p.T) / 2 * np.max(np.abs(unbiased_density(p, nodes, sw) - f_star(p, nodes, sw)))
    assert nn(p, sw, sw_law) == pytest.approx(form, rel=1e-9)


def test_drift_exact_path_gives_zero(ou, ou_law):
    x = np.empty(5001)
    x[0] = 1.3
    for k in range(5000):
        x[k + 1] = x[k] + ou.S(x[k]) * 0.01
    p = SamplePath(0.01, x)
    assert nn(p, ou, ou_law) < 1e-12
    assert dk_integral(p, ou, ou_law) < 1e-20 and dk_sup(p, ou, ou_law) < 1e-12


def test_ks_grid_refinement(ou, null_path):
    a = ks_lte(null_path, ou, build_law(ou, GridPolicy(n_nodes=4096)))
    b = ks_lte(null_path, ou, build_law(ou, GridPolicy(n_nodes=8192)))
    assert a == pytest.approx(b, rel=0.01)


def test_decisions(toy_table):
    crit = toy_table.critical_value(0.05)
    assert not decide("cvm_lte", 0.0, toy_table, 0.05).reject
    assert decide("cvm_lte", math.inf, toy_table, 0.05).reject
    assert decide("cvm_lte", np.nextafter(crit, np.inf), toy_table, 0.05).reject
    assert not decide("cvm_lte", np.nextafter(crit, -np.inf), toy_table, 0.05).reject
    with pytest.raises(LevelNotTabulated):
        decide("cvm_lte", 1.0, toy_table, 0.2)


def test_test_result_invariant():
    with pytest.raises(ConfigError):
        TestResult("cvm_lte", 2.0, 0.05, 1.0, False)
    row = TestResult("cvm_lte", 2.0, 0.05, 1.0, True, {"T": 10}).to_row()
    assert row["reject"] is True and row["meta_T"] == 10


def test_run_test_checks_table(null_path, ou, ou_law, toy_table):
    res = run_test("cvm_lte", null_path, ou, ou_law, toy_table, 0.05)
    assert res.metadata["T"] == pytest.approx(1000)
    with pytest.raises(ConfigError):
        run_test("nn", null_path, ou, ou_law, toy_table, 0.05)


def test_table_mapping():
    assert STAT_TABLES["cvm_lte"] == "int_exp" and STAT_TABLES["ks_lte"] == "sup_exp"
    assert STAT_TABLES["nn"] == "sup_01" and STAT_TABLES["dk_integral"] == "int_01"
