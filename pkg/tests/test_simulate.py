import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from genheck.errors import DimensionMismatch, InvalidScenario
from genheck.estimate import fit, fit_classic
from genheck.model import Theta, predictors
from genheck.simulate import (
    McSummary,
    Scenario,
    gen_dataset,
    make_scenario,
    mix_seed,
    monte_carlo,
    normal_stream,
    scenario,
    scenario_designs,
    size_power,
)


def _splitmix_ref(seed, j):
    """Pure-integer SplitMix64 reference for draw j."""
    M = (1 << 64) - 1
    z = (seed + (j + 1) * 0x9E3779B97F4A7C15) & M
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M
    return z ^ (z >> 31)


@given(st.integers(0, 2**64 - 1), st.integers(0, 50))
def test_stream_matches_integer_reference(seed, offset):
    draws = normal_stream(seed, 3, offset)
    for k in range(3):
        u = ((_splitmix_ref(seed, offset + k) >> 11) + 0.5) * 2.0**-53
        assert draws[k] == stats.norm.ppf(u)


def test_stream_offsets_and_normality():
    a = normal_stream(7, 100)
    np.testing.assert_array_equal(a[40:], normal_stream(7, 60, offset=40))
    big = normal_stream(123, 200_000)
    assert abs(big.mean()) < 4 / np.sqrt(big.size)
    assert abs(big.var() - 1) < 0.02
    assert stats.kstest(big[:20000], "norm").pvalue > 1e-3


def test_mix_seed_distinct():
    seeds = {mix_seed(42, k) for k in range(1000)}
    assert len(seeds) == 1000
    assert mix_seed(42, 0) != mix_seed(43, 0)


def _designs(n, s=2, rng=None):
    rng = rng or np.random.default_rng(0)
    x = rng.normal(size=n)
    one = np.ones(n)
    return {"X": np.c_[one, x], "W": np.c_[one, x], "E": np.c_[one, x], "V": np.c_[one, x][:, :s]}


def test_gen_dataset_rho_zero_uncorrelated():
    n = 20000
    th = Theta([0.0, 1.0], [5.0, 0.0], [0.0, 0.0], [0.0, 0.0])
    d = gen_dataset(th, _designs(n), seed=3)
    e1 = d.y - d.X[:, 1]
    e2 = normal_stream(3, 2 * n).reshape(n, 2)[:, 1]
    sel = d.u == 1
    assert abs(np.corrcoef(e1[sel], e2[sel])[0, 1]) < 4 / np.sqrt(sel.sum())


def test_gen_dataset_half_censoring():
    n = 20000
    th = Theta([0.0, 1.0], [0.0, 0.0], [0.0, 0.0], [0.3, 0.0])
    d = gen_dataset(th, _designs(n), seed=4)
    assert abs(1 - d.u.mean() - 0.5) < 4 * np.sqrt(0.25 / n)


def test_gen_dataset_correlation_by_strata():
    """Regenerate both errors from the documented stream and check Corr(e1, e2) = rho per bin."""
    spec = make_scenario(1, 60000)
    designs = scenario_designs(spec, 9)
    d = scenario(spec, 9)
    pr = predictors(spec.theta_true, d)
    draws = normal_stream(9, 2 * spec.n, offset=3 * spec.n).reshape(-1, 2)
    eta, e2 = draws[:, 0], draws[:, 1]
    e1 = pr.sigma * (pr.rho * e2 + np.sqrt(1 - pr.rho**2) * eta)
    sel = d.u == 1
    np.testing.assert_allclose(d.y[sel], (pr.mu1 + e1)[sel])
    idx = designs["V"] @ spec.theta_true.kappa
    for lo, hi in [(-1.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 2.0)]:
        b = (idx > lo) & (idx <= hi)
        # e1/sigma and e2 both have unit variance, so their mean product is mean(rho)
        r = np.mean((e1 / pr.sigma)[b] * e2[b])
        target = np.mean(np.tanh(idx[b]))
        assert abs(r - target) < 4 * np.sqrt(1 + target**2) / np.sqrt(b.sum())


def test_gen_dataset_deterministic_and_checked():
    th = Theta([0.0, 1.0], [0.0, 0.5], [0.0, 0.1], [0.3, 0.0])
    a = gen_dataset(th, _designs(50), seed=11)
    b = gen_dataset(th, _designs(50), seed=11)
    np.testing.assert_array_equal(a.y, b.y)
    with pytest.raises(DimensionMismatch):
        gen_dataset(Theta([0.0], [0.0], [0.0], [0.0]), _designs(50), seed=1)


def test_scenario_table():
    s1 = make_scenario(1, 100)
    np.testing.assert_array_equal(s1.theta_true.beta, [1.1, 0.7, 0.1])
    np.testing.assert_array_equal(s1.theta_true.gamma, [0.9, 0.5, 1.1, 0.6])
    np.testing.assert_array_equal(s1.theta_true.lam, [-0.4, 0.7])
    np.testing.assert_array_equal(s1.theta_true.kappa, [0.3, 0.5])
    assert isinstance(s1, Scenario) and s1.exclusion_restriction
    s2 = make_scenario(2, 100)
    assert not s2.exclusion_restriction
    d2 = scenario(s2, 1)
    np.testing.assert_array_equal(d2.W, d2.X)
    with pytest.raises(InvalidScenario):
        make_scenario(7, 10)
    with pytest.raises(ValueError):
        make_scenario(1, 0)


def test_scenario5_constant_rho():
    d = scenario(make_scenario(5, 500), 2)
    pr = predictors(make_scenario(5, 500).theta_true, d)
    assert np.all(pr.rho == pr.rho[0]) and np.all(pr.sigma == pr.sigma[0])


def test_scenario_censoring():
    s1 = scenario(make_scenario(1, 2000), 5)
    assert 1 - s1.u.mean() < 0.4
    s6 = scenario(make_scenario(6, 2000), 5)
    assert abs(1 - s6.u.mean() - 0.50) < 0.03


def test_censoring_monotone_in_gamma0():
    spec = make_scenario(1, 5000)
    designs = scenario_designs(spec, 1)
    rates = []
    for g0 in (-0.5, 0.0, 0.5, 1.0):
        th = Theta(spec.theta_true.beta, np.r_[g0, spec.theta_true.gamma[1:]], spec.theta_true.lam,
                   spec.theta_true.kappa)
        expected = 1 - stats.norm.cdf(designs["W"] @ th.gamma).mean()
        rates.append(expected)
        assert abs(1 - gen_dataset(th, designs, 1, 15000).u.mean() - expected) < 0.03
    assert np.all(np.diff(rates) < 0)


def test_monte_carlo_single_rep():
    spec = make_scenario(1, 300)
    mc = monte_carlo(spec, 1, master_seed=4)
    designs = scenario_designs(spec, 4)
    est = fit(gen_dataset(spec.theta_true, designs, mix_seed(4, 0))).params
    np.testing.assert_allclose(mc.mean, est)
    np.testing.assert_allclose(mc.rmse, np.abs(est - spec.theta_true.flatten()))


def test_monte_carlo_threads_identical_and_rmse_bound():
    spec = make_scenario(1, 300)
    a = monte_carlo(spec, 6, master_seed=8, threads=1)
    b = monte_carlo(spec, 6, master_seed=8, threads=3)
    assert a.estimates_csv() == b.estimates_csv()
    assert np.all(a.rmse >= np.abs(a.mean - a.true) - 1e-15)
    assert a.n_reps == 6 and a.n_failed == 0
    doc = json.loads(a.to_json())
    assert doc["estimates"][0]["parameter"] == "beta0"


def test_monte_carlo_classic_names():
    mc = monte_carlo(make_scenario(1, 300), 2, master_seed=1, model="classic")
    assert mc.parameters[-2:] == ["lambda0", "kappa0"]
    np.testing.assert_array_equal(mc.true[-2:], [-0.4, 0.3])


def test_size_power_rates():
    spec = make_scenario(1, 300, kappa=(0.0, 0.0))
    res = size_power(spec, 4, master_seed=2, threads=2)
    assert isinstance(res, McSummary)
    assert set(res.rejection) == {(t, lv) for t in ("LR", "Gradient", "Wald") for lv in (0.01, 0.05, 0.1)}
    assert all(0 <= r <= 1 for r in res.rejection.values())
    for t in ("LR", "Gradient", "Wald"):
        assert res.rejection[(t, 0.01)] <= res.rejection[(t, 0.1)]
    lines = res.rejection_csv().splitlines()
    assert lines[0] == "test,level,rejection_rate" and len(lines) == 10


def test_scenario5_generalized_matches_classic_on_average():
    """Estimator sanity: with constant sigma and rho the extra slopes centre on zero."""
    spec = make_scenario(5, 800)
    g = monte_carlo(spec, 8, master_seed=3)
    c = monte_carlo(spec, 8, master_seed=3, model="classic")
    se = g.estimates.std(axis=0) / np.sqrt(8)
    slopes = [g.parameters.index("lambda1"), g.parameters.index("kappa1")]
    assert np.all(np.abs(g.mean[slopes]) < 4 * se[slopes] + 0.05)
    np.testing.assert_allclose(g.mean[:7], c.mean[:7], atol=0.05)


def test_classic_bias_sign_scenario1():
    data = scenario(make_scenario(1, 1000), seed=1)
    assert fit_classic(data).theta_hat.lam[0] > 0
