"""Volterra Gaussian stochastic volatility: simulation, rate functions and
small-noise Monte Carlo checks."""

__version__ = "0.1.0"

from .moduli import DomainError, ModulusOfContinuity, fernique_classify, make_modulus
from .kernels import VolterraKernel, covariance, l2_modulus, make_kernel, variance_function
from .gaussian import (CovarianceMatrix, Grid, IndefiniteCovarianceError, PathEnsemble,
                       canonical_metric, covariance_matrix, metric_sandwich_report,
                       sample_cholesky, sample_convolution)
from .model import (DriftFunction, ModelError, ModelSpec, VolatilityFunction,
                    assumption_c_probe, make_drift, make_volatility, simulate_log_price,
                    sublinear_growth_check)
from .rates import (DiscretePath, RateResult, SolverOptions, VolterraHat, it_hat_rate,
                    it_rate, j_rate, lambda_xf, qt_rate, volterra_hat)
from .applications import (AsymptoticReport, BarrierSpec, barrier_rate, binary_call_rate,
                           call_rate, exit_time_rate)
from .mc import (EventSpec, LDPRateExtrapolator, MCEstimate, SweepTable,
                 analytic_gaussian_probability, compare_rate, estimate_probability, ldp_sweep)
from .diagnostics import (HolderExponentEstimator, RoughnessReport, empirical_modulus,
                          holder_estimate, lil_statistic)
