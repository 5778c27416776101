"""Model builders shared by the tests."""

from roughldp import ModelSpec, make_drift, make_kernel, make_volatility


def constant_model(sigma=0.2, r=0.0, rho=0.0, T=1.0, kernel=None, x0=0.0):
    kernel = kernel or make_kernel("brownian", T=T)
    return ModelSpec(make_drift("constant", {"r": r}),
                     make_volatility("constant", {"sigma0": sigma}), rho, kernel, T, x0)


def abs_linear_model(c=1.0, r=0.05, rho=0.0, T=1.0, kernel=None):
    kernel = kernel or make_kernel("brownian", T=T)
    return ModelSpec(make_drift("constant", {"r": r}),
                     make_volatility("abs_linear", {"c": c}), rho, kernel, T)
