import io
import math

import numpy as np
import pytest
from scipy import integrate, stats

from gminf import fluid as fl
from gminf.core import CutLaw, RngStream


def test_series_terms():
    assert fl.series_terms(1e-12) == 26
    assert fl.series_terms(0.5) == 1
    with pytest.raises(ValueError):
        fl.series_terms(0.0)


def test_path_validation():
    with pytest.raises(ValueError):
        fl.fluid_simulate(-1.0, 1.0, 10.0, RngStream(0))
    with pytest.raises(ValueError):
        fl.fluid_simulate(0.0, 0.0, 10.0, RngStream(0))
    with pytest.raises(ValueError):
        fl.fluid_simulate(0.0, 1.0, 0.0, RngStream(0))


def test_path_ledger_identity():
    for lam in (1.0, 2.5):
        p = fl.fluid_simulate(0.7, lam, 500.0, RngStream(1))
        assert p.n_jumps > 100
        prev_t = np.concatenate(([0.0], p.tau[:-1]))
        prev_x = np.concatenate(([p.xi0], p.post[:-1]))
        # tau - tau_prev = (pre - post_prev) / lam, up to rounding of the clock
        err = np.abs((p.tau - prev_t) - (p.pre - prev_x) / lam)
        assert np.all(err <= 4 * np.finfo(float).eps * np.maximum(p.tau, 1.0))
        assert np.all(p.post < p.pre) and np.all(p.post > 0)
        assert np.all(np.diff(p.tau) > 0) and p.tau[-1] <= p.horizon


def test_jump_count_grows_linearly():
    # stationary E(eta - xi) = sqrt(2/pi), so about T sqrt(pi/2) jumps by time T
    for i, T in enumerate((1e3, 4e4)):
        n = fl.fluid_simulate(0.0, 1.0, T, RngStream(2, i)).n_jumps
        assert abs(n / (T * math.sqrt(math.pi / 2)) - 1) < 5 / math.sqrt(T)


def test_first_pre_jump_from_zero_is_rayleigh():
    tau, pre, post = fl.first_jumps(20000, 1, 0.0, 1.0, RngStream(3))
    assert stats.kstest(pre[:, 0], stats.rayleigh.cdf).pvalue > 1e-3
    assert np.allclose(tau[:, 0], pre[:, 0])
    r = post[:, 0] / pre[:, 0]
    assert stats.kstest(r, "uniform").pvalue > 1e-3


def test_pre_jump_law_given_post():
    x = 1.3
    y = fl.sample_pre_jump(x, RngStream(4), 20000)
    assert np.all(y >= x)
    assert stats.kstest(y, lambda v: 1.0 - fl.pre_jump_tail(v, x)).pvalue > 1e-3
    assert fl.pre_jump_tail(0.5, x) == 1.0


def test_first_jumps_match_path_sampler_in_law():
    tau, pre, _ = fl.first_jumps(5000, 3, 0.5, 2.0, RngStream(5))
    single = np.array([fl.fluid_simulate(0.5, 2.0, math.inf, RngStream(6, i), max_jumps=3).pre[2]
                       for i in range(3000)])
    assert stats.ks_2samp(pre[:, 2], single).pvalue > 1e-3


def test_beta_cut_mean():
    _, pre, post = fl.first_jumps(20000, 1, 0.0, 1.0, RngStream(7), CutLaw.beta(2.0, 5.0))
    r = post[:, 0] / pre[:, 0]
    assert abs(r.mean() - 2 / 7) < 4 * r.std() / math.sqrt(len(r))


def test_replay_is_bit_identical():
    a = fl.fluid_simulate(0.0, 1.0, 200.0, RngStream(8, 1))
    b = fl.fluid_simulate(0.0, 1.0, 200.0, RngStream(8, 1))
    assert np.array_equal(a.tau, b.tau) and np.array_equal(a.post, b.post)


def test_max_jumps_truncates_horizon():
    p = fl.fluid_simulate(0.0, 1.0, math.inf, RngStream(9), max_jumps=50)
    assert p.n_jumps == 50 and p.horizon == p.tau[-1]
    post, pre = fl.embedded_chain(0.0, 50, RngStream(9))
    assert np.array_equal(post, p.post) and np.array_equal(pre, p.pre)


def test_fluid_value_conventions():
    p = fl.FluidPath(1.0, 0.5, 5.0, np.array([1.0, 3.0]), np.array([1.5, 2.0]), np.array([0.3, 1.0]))
    assert fl.fluid_value(p, 0.0) == 0.5
    assert fl.fluid_value(p, 1.0) == 0.3  # right-continuous
    assert fl.fluid_value(p, 0.999) == pytest.approx(1.499)
    assert np.allclose(fl.fluid_value(p, [2.0, 3.0, 5.0]), [1.3, 1.0, 3.0])
    with pytest.raises(ValueError):
        fl.fluid_value(p, 5.1)
    starts, ends = p.segments()
    assert np.allclose(starts, [0.5, 0.3, 1.0]) and np.allclose(ends, [1.5, 2.0, 3.0])


def test_path_csv():
    p = fl.FluidPath(1.0, 0.0, 2.0, np.array([1.0]), np.array([1.0]), np.array([0.25]))
    buf = io.StringIO()
    p.to_csv(buf, "hdr")
    assert buf.getvalue() == "# hdr\nn,tau,pre,post\n1,1,1,0.25\n"


def test_path_functionals_on_manual_path():
    p = fl.FluidPath(1.0, 0.0, 3.0, np.array([2.0]), np.array([2.0]), np.array([0.0]))
    # level t on [0,2), t-2 on [2,3]
    assert fl.path_time_average(p, lambda x: x) == pytest.approx((2.0 + 0.5) / 3)
    assert np.allclose(fl.path_occupation_tail(p, [0.0, 0.5, 1.0, 2.5]), [1.0, 2.0 / 3, 1.0 / 3, 0.0])


def test_stationary_densities_normalized():
    for f in (fl.stationary_density_xi, fl.stationary_density_eta, fl.rayleigh_density):
        assert integrate.quad(f, 0, np.inf)[0] == pytest.approx(1.0, abs=1e-12)
    y = np.linspace(0.1, 5, 20)
    assert np.allclose(fl.stationary_density_eta(y) / fl.stationary_density_xi(y), y * y)
    assert fl.stationary_density_xi(0.0) == pytest.approx(math.sqrt(2 / math.pi))
    assert fl.stationary_cdf_xi(1.0) == pytest.approx(integrate.quad(fl.stationary_density_xi, 0, 1)[0])


def test_ode_residual_is_second_order():
    for x in (0.5, 1.0, 2.0, 3.0):
        r1 = abs(fl.ode_residual(x, 1e-2))
        r2 = abs(fl.ode_residual(x, 5e-3))
        assert r1 < 1e-4
        assert 3.0 < r1 / r2 < 5.0
    with pytest.raises(ValueError):
        fl.ode_residual(0.01, 0.1)


def test_gauss_legendre_exact_for_polynomials():
    a, b = np.array([0.0, 1.0]), np.array([2.0, 3.5])
    got = fl.integrate_between(lambda x: x ** 5 - 3 * x, a, b)
    assert np.allclose(got, (b ** 6 - a ** 6) / 6 - 1.5 * (b ** 2 - a ** 2), rtol=1e-14)


@pytest.fixture(scope="module")
def stationary_sample():
    return fl.embedded_stationary_sampler(200_000, RngStream(10))


def test_sampler_marginals(stationary_sample):
    s = stationary_sample
    assert s.terms == 26 and len(s) == 200_000
    assert np.all(s.eta > s.xi)
    assert stats.kstest(s.xi, fl.stationary_cdf_xi).pvalue > 1e-3
    assert stats.kstest(s.eta, stats.maxwell.cdf).pvalue > 1e-3
    se = s.xi.std() / math.sqrt(len(s))
    assert abs(s.xi.mean() - math.sqrt(2 / math.pi)) < 4 * se


def test_occupation_ratio_matches_rayleigh(stationary_sample):
    for f in (lambda x: x, lambda x: x * x, lambda x: np.exp(-x)):
        c = fl.occupation_ratio(f, stationary_sample)
        assert abs(c.z_score) < 4
        assert c.n == len(stationary_sample)
    assert fl.rayleigh_expectation(lambda x: x * x) == pytest.approx(2.0, rel=1e-10)


def test_long_path_occupation_is_rayleigh():
    p = fl.fluid_simulate(0.0, 1.0, 2e5, RngStream(11))
    grid = np.linspace(0.1, 3.0, 30)
    tail = fl.path_occupation_tail(p, grid)
    assert np.max(np.abs(tail - np.exp(-grid ** 2 / 2))) < 0.01


def test_embedded_chain_forgets_start():
    post, _ = fl.embedded_chain(5.0, 20000, RngStream(12))
    # marginal of a long chain, after burn-in, is half-normal
    assert stats.kstest(post[1000:], fl.stationary_cdf_xi).statistic < 0.03


def test_comparison_z_score_edge_cases():
    assert fl.OccupationComparison(1.0, 1.0, 0.0, 5).z_score == 0.0
    assert fl.OccupationComparison(1.0, 2.0, 0.0, 5).z_score == math.inf
