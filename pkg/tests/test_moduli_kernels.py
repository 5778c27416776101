import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughldp import (DomainError, covariance, fernique_classify, l2_modulus, make_kernel,
                      make_modulus, variance_function)
from scipy import integrate

import oracles


# --- moduli --------------------------------------------------------------------------

def test_logarithmic_modulus_domain():
    mod = make_modulus("logarithmic", {"beta": 2.0}, 0.04)
    assert mod.mv
    assert 0.04 < math.exp(-3)
    with pytest.raises(DomainError, match="exp"):
        make_modulus("logarithmic", {"beta": 2.0}, 0.06)


def test_power_half_is_brownian_modulus():
    mod = make_modulus("power", {"H": 0.5}, 1.0)
    x = np.linspace(0.01, 1, 7)
    np.testing.assert_allclose(mod.eta(x), np.sqrt(x))
    np.testing.assert_allclose(mod.deta2(x), 1.0)
    assert mod.mv


@pytest.mark.parametrize("H, mv", [(0.1, True), (0.3, True), (0.5, True), (0.7, False)])
def test_power_mv_flag(H, mv):
    assert make_modulus("power", {"H": H}, 1.0).mv is mv


@pytest.mark.parametrize("family, params", [("power", {"H": 0.0}), ("power", {"H": 1.0}),
                                            ("logarithmic", {"beta": -1.0})])
def test_modulus_rejects_bad_parameters(family, params):
    with pytest.raises(DomainError):
        make_modulus(family, params, 0.01)


def test_custom_table_must_increase():
    with pytest.raises(DomainError, match="increasing"):
        make_modulus("custom", {"x": [0, 0.5, 1.0], "eta": [0, 0.8, 0.7]}, 1.0)
    with pytest.raises(DomainError, match="start"):
        make_modulus("custom", {"x": [0.1, 0.5, 1.0], "eta": [0.1, 0.5, 0.7]}, 1.0)


def test_custom_table_reproduces_power_and_mv_flag():
    x = np.concatenate([[0.0], np.geomspace(1e-8, 1.0, 400)])
    mod = make_modulus("custom", {"x": x.tolist(), "eta": (x ** 0.3).tolist()}, 1.0)
    probe = np.geomspace(1e-6, 0.9, 20)
    np.testing.assert_allclose(mod.eta(probe), probe ** 0.3, rtol=1e-3)
    assert mod.mv


def test_fernique_builtin_rules():
    assert fernique_classify(make_modulus("logarithmic", {"beta": 2.0}, 0.04)) == "holds"
    assert fernique_classify(make_modulus("logarithmic", {"beta": 1.0}, 0.1)) == "fails"
    assert fernique_classify(make_modulus("logarithmic", {"beta": 0.5}, 0.2)) == "fails"
    assert fernique_classify(make_modulus("power", {"H": 0.3}, 1.0)) == "holds"


@given(st.floats(0.05, 0.95))
def test_fernique_power_always_holds(H):
    assert fernique_classify(make_modulus("power", {"H": H}, 1.0)) == "holds"


@given(st.floats(0.1, 3.0))
def test_fernique_logarithmic_rule(beta):
    T = 0.5 * math.exp(-beta - 1)
    verdict = fernique_classify(make_modulus("logarithmic", {"beta": beta}, T))
    assert verdict == ("holds" if beta > 1 else "fails")


def _table(fn, lo=1e-9):
    x = np.concatenate([[0.0], np.geomspace(lo, 1.0, 600)])
    return {"x": x.tolist(), "eta": fn(x).tolist()}


def _log_eta(beta):
    def eta(x):
        xs = np.maximum(x, 1e-300)
        return np.where(x > 0, (-np.log(xs * 0.2)) ** (-beta / 2), 0.0)
    return eta


@pytest.mark.parametrize("beta, verdict", [(2.0, "holds"), (3.0, "holds"), (0.5, "fails")])
def test_fernique_custom_log_tables_follow_rule(beta, verdict):
    mod = make_modulus("custom", _table(_log_eta(beta)), 0.1)
    assert fernique_classify(mod) == verdict


def test_fernique_custom_tables():
    holds = make_modulus("custom", _table(lambda x: x ** 0.2), 1.0)
    assert fernique_classify(holds) == "holds"
    # eta(1/u) = (log u)^(-1/2) makes the integrand 1/(u log u): borderline
    slow = make_modulus("custom", _table(_log_eta(1.0), lo=1e-9), 0.1)
    assert fernique_classify(slow) == "undecided"
    short = make_modulus("custom", _table(lambda x: x ** 0.2, lo=1e-4), 1.0)
    assert fernique_classify(short) == "undecided"


# --- kernels -------------------------------------------------------------------------

KERNELS = [("brownian", {}), ("molchan_golosov", {"H": 0.3}), ("molchan_golosov", {"H": 0.7}),
           ("riemann_liouville", {"H": 0.2})]


@pytest.mark.parametrize("family, params", KERNELS)
@given(t=st.floats(0.01, 1.0), s=st.floats(0.0, 1.0))
def test_volterra_property(family, params, t, s):
    k = make_kernel(family, params, 1.0)
    val = float(k(t, s))
    if s >= t:
        assert val == 0.0
    else:
        assert math.isfinite(val)


def test_mg_half_routes_to_brownian():
    assert make_kernel("molchan_golosov", {"H": 0.5}).family == "brownian"


def test_rl_half_is_brownian():
    k = make_kernel("riemann_liouville", {"H": 0.5})
    np.testing.assert_allclose(k(1.0, np.array([0.1, 0.5, 0.9])), 1.0)


@pytest.mark.parametrize("family, params", [("molchan_golosov", {"H": 1.2}),
                                            ("riemann_liouville", {"H": -0.1}),
                                            ("mystery", {})])
def test_kernel_rejects_bad_parameters(family, params):
    with pytest.raises(DomainError):
        make_kernel(family, params)


def test_mv_requires_mv_modulus():
    with pytest.raises(DomainError, match="non-increasing"):
        make_kernel("mv_stationary", {"modulus": make_modulus("power", {"H": 0.7}, 1.0)})


def test_logbm_tau_value(logbm_kernel):
    x = math.exp(-4)
    tau2 = oracles.logbm_tau2(2.0, x)
    assert math.isclose(math.sqrt(tau2), 1.3062, rel_tol=1e-4)
    assert math.isclose(float(logbm_kernel.tau(x)) ** 2, tau2, rel_tol=1e-12)


def test_mv_power_is_multiple_of_rl(power_kernel):
    rl = make_kernel("riemann_liouville", {"H": 0.3})
    s = np.linspace(0.05, 0.9, 9)
    ratio = power_kernel(1.0, s) / rl(1.0, s)
    np.testing.assert_allclose(ratio, ratio[0], rtol=1e-12)


@pytest.mark.parametrize("fixture", ["logbm_kernel", "power_kernel"])
def test_stationary_identity(fixture, request):
    k = request.getfixturevalue(fixture)
    y_max = 600.0
    for t in np.linspace(k.T / 8, k.T, 8):
        # x = exp(-y) maps (e^-600, t] to a finite y-interval with a smooth
        # integrand; the identity is checked on that interval
        quad = integrate.quad(lambda y: float(k.tau(math.exp(-y))) ** 2 * math.exp(-y),
                              -math.log(t), y_max, epsabs=0, epsrel=1e-11, limit=400)[0]
        expect = float(k.eta2(t)) - float(k.eta2(math.exp(-y_max)))
        assert math.isclose(quad, expect, rel_tol=1e-8)


def test_variance_function_values(logbm_kernel):
    fbm = make_kernel("molchan_golosov", {"H": 0.3})
    assert math.isclose(float(variance_function(fbm, 0.5)), 0.5 ** 0.6, rel_tol=1e-6)
    assert math.isclose(0.5 ** 0.6, 0.6598, rel_tol=1e-4)
    rl = make_kernel("riemann_liouville", {"H": 0.3})
    assert math.isclose(float(variance_function(rl, 1.0)), oracles.rl_variance(0.3, 1.0), rel_tol=1e-12)
    assert math.isclose(oracles.rl_variance(0.3, 1.0), 1.2296, rel_tol=1e-4)
    assert math.isclose(float(variance_function(logbm_kernel, 0.04)), 0.0965, rel_tol=1e-3)


def test_variance_function_rejects_outside_domain():
    with pytest.raises(DomainError):
        variance_function(make_kernel("brownian", T=1.0), [0.5, 1.5])


@pytest.mark.parametrize("H", [0.3, 0.7])
def test_mg_covariance_pairs(H):
    k = make_kernel("molchan_golosov", {"H": H})
    for t, s in [(1.0, 0.5), (0.8, 0.1), (0.33, 0.32), (0.05, 0.01)]:
        assert math.isclose(covariance(k, t, s), oracles.fbm_covariance(H, t, s), rel_tol=1e-6)


def test_mg_07_example_value():
    k = make_kernel("molchan_golosov", {"H": 0.7})
    assert math.isclose(covariance(k, 1.0, 0.5), 0.5, rel_tol=1e-8)


def test_l2_modulus_brownian_and_zero():
    k = make_kernel("brownian")
    for lag in [0.05, 0.1, 0.3]:
        assert math.isclose(l2_modulus(k, lag, resolution=40), lag, rel_tol=1e-12)
    assert l2_modulus(k, 0.0) == 0.0


def test_l2_modulus_rl_envelope_and_monotone():
    H = 0.3
    k = make_kernel("riemann_liouville", {"H": H})
    lags = [0.025, 0.05, 0.1, 0.2]
    vals = [l2_modulus(k, lag, resolution=40) for lag in lags]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    # stationary kernel: M_K(lag) is bounded by C lag^{2H} with C from the
    # largest-lag pair; the shape must follow lag^{0.6} within a constant band
    c = np.array(vals) / np.array(lags) ** (2 * H)
    assert c.max() / c.min() < 1.5


@given(st.lists(st.floats(0.01, 0.5), min_size=2, max_size=4, unique=True))
def test_l2_modulus_monotone_property(lags):
    k = make_kernel("riemann_liouville", {"H": 0.4})
    lags = sorted(lags)
    vals = [l2_modulus(k, lag, resolution=16) for lag in lags]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
