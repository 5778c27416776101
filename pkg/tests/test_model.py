import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughldp import (Grid, ModelError, ModelSpec, assumption_c_probe, make_drift, make_kernel,
                      make_modulus, make_volatility, simulate_log_price, sublinear_growth_check)
from roughldp.model import map_log_price_blocks

from factories import abs_linear_model, constant_model


def test_drift_families():
    assert make_drift("constant", {"r": 0.03}).constant_rate == 0.03
    aff = make_drift("affine", {"a0": 0.1, "a1": -0.5})
    np.testing.assert_allclose(aff(0.0, np.array([0.0, 2.0])), [0.1, -0.9])
    np.testing.assert_allclose(aff.du(0.0, np.array([0.0, 2.0])), -0.5)
    assert aff.constant_rate is None
    with pytest.raises(ModelError):
        make_drift("quadratic", {})
    with pytest.raises(ModelError, match="does not take"):
        make_drift("affine", {"a": 0.1})


def test_volatility_families_and_derivatives():
    u = np.linspace(-1.5, 1.5, 7)
    t = 0.3
    mod = make_modulus("power", {"H": 0.3}, 1.0)
    fams = [make_volatility("constant", {"sigma0": 0.2}),
            make_volatility("wick_exp", {"c": 0.8, "modulus": mod}),
            make_volatility("rough_bergomi", {"c": 0.8, "H": 0.1}),
            make_volatility("custom", {"expr": {"exp": {"affine": [0.1, 0.4]}},
                                       "strictly_positive": True})]
    h = 1e-6
    for v in fams:
        num = (v(t, u + h) - v(t, u - h)) / (2 * h)
        np.testing.assert_allclose(v.du(t, u), num, rtol=1e-6, atol=1e-9)
        assert v.strictly_positive and v.zero_set == "empty"
    wick = fams[1]
    assert math.isclose(float(wick(t, 0.0)), math.exp(-0.32 * t ** 0.6), rel_tol=1e-12)
    ab = make_volatility("abs_linear", {"c": 1.5})
    assert ab.zero_set == "u=0" and not ab.strictly_positive
    np.testing.assert_allclose(ab(t, u), 1.5 * np.abs(u))


def test_compiled_expression_power_and_sum():
    v = make_volatility("custom", {"expr": {"sum": [{"const": 0.1},
                                                    {"power": [{"affine": [0, 1]}, 1.5]}]}})
    u = np.array([-2.0, 0.5, 1.0])
    np.testing.assert_allclose(v(0.0, u), 0.1 + np.abs(u) ** 1.5)
    assert v.zero_set == "unknown"
    with pytest.raises(ModelError):
        make_volatility("custom", {"expr": {"log": 1}})


@pytest.mark.parametrize("family, params", [("constant", {"sigma0": 0.0}),
                                            ("rough_bergomi", {"c": 1.0, "H": 0.6}),
                                            ("abs_linear", {"c": -1.0}),
                                            ("wick_exp", {"c": 1.0})])
def test_volatility_rejects_bad_parameters(family, params):
    with pytest.raises(ModelError):
        make_volatility(family, params)


def test_model_spec_validation():
    with pytest.raises(ModelError):
        constant_model(rho=1.0)
    with pytest.raises(ModelError):
        constant_model(T=2.0, kernel=make_kernel("brownian", T=1.0))
    m = constant_model(rho=-0.6, x0=math.log(2))
    assert math.isclose(m.rho_bar, 0.8) and math.isclose(m.s0, 2.0)


@pytest.mark.parametrize("scheme", ["convolution", "cholesky"])
def test_constant_sigma_log_price_law(scheme):
    sigma, eps, rho = 0.2, 0.1, -0.5
    m = constant_model(sigma=sigma, r=0.02, rho=rho)
    grid = Grid(1.0, 16)
    ens = simulate_log_price(m, eps, grid, 40000, seed=3, scheme=scheme)
    xT = ens.values[:, -1]
    mean = 0.02 - 0.5 * eps * sigma ** 2
    var = eps * sigma ** 2
    assert abs(xT.mean() - mean) < 4 * math.sqrt(var / 40000)
    assert abs(xT.var() - var) < 4 * var * math.sqrt(2 / 40000)
    # correlation between the log-price noise and the driver increments
    B = ens.increments.sum(axis=1)
    c = np.corrcoef(xT, B)[0, 1]
    assert abs(c - rho) < 0.02


def test_simulation_worker_and_block_invariance():
    m = abs_linear_model(kernel=make_kernel("riemann_liouville", {"H": 0.2}))
    grid = Grid(1.0, 32)
    a = simulate_log_price(m, 0.3, grid, 5000, 11, workers=1, block_size=512).values
    b = simulate_log_price(m, 0.3, grid, 5000, 11, workers=4, block_size=512).values
    np.testing.assert_array_equal(a, b)
    red = map_log_price_blocks(m, 0.3, grid, 5000, 11, lambda X: X[:, -1].copy(),
                               block_size=512, workers=3)
    np.testing.assert_array_equal(np.concatenate(red), a[:, -1])


def test_simulation_rejects_bad_eps_and_grid():
    m = constant_model()
    with pytest.raises(ModelError):
        simulate_log_price(m, 0.0, Grid(1.0, 8), 10, 0)
    with pytest.raises(ModelError):
        simulate_log_price(m, 0.1, Grid(0.5, 8), 10, 0)
    with pytest.raises(ModelError):
        simulate_log_price(m, 0.1, Grid(1.0, 8), 10, 0, scheme="hybrid")


def test_growth_certificates():
    assert sublinear_growth_check(make_volatility("constant", {"sigma0": 0.3})).holds
    cert = sublinear_growth_check(make_volatility("abs_linear", {"c": 2.0}))
    assert cert.holds and cert.c2 == 4.0
    wick = make_volatility("rough_bergomi", {"c": 1.0, "H": 0.1})
    assert not sublinear_growth_check(wick).holds
    bounded = make_volatility("custom", {"expr": {"sum": [{"const": 1.0}, {"abs": {"affine": [0, 1]}}]},
                                         "strictly_positive": True})
    assert sublinear_growth_check(bounded).holds
    assert not sublinear_growth_check(bounded, c1=1.0, c2=0.5).holds


@given(st.floats(0.2, 3.0))
def test_abs_linear_continuity_constant_is_c(c):
    vol = make_volatility("abs_linear", {"c": c})
    probe = assumption_c_probe(vol)
    assert math.isclose(probe.L, c, rel_tol=1e-9)
    assert not probe.unbounded


def test_wick_continuity_grows_with_radius():
    mod = make_modulus("power", {"H": 0.3}, 1.0)
    vol = make_volatility("wick_exp", {"c": 1.0, "modulus": mod})
    probe = assumption_c_probe(vol, radius=2.0)
    # Lipschitz constant of e^u on |u| <= 2 is e^2; the lattice sees a bit less
    assert 6.5 < probe.L <= math.exp(2) * 1.001
    assert probe.constants[-1] > probe.constants[0]
