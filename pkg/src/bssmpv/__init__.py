"""Simulation and inference for moving-average processes with
stochastic volatility.

The package simulates paths driven by a memory kernel and a volatility
process, computes normalized multipower variation statistics on them (or
on ingested series), evaluates the constants appearing in the associated
limit theorems, and runs seeded Monte Carlo experiment suites that turn
those theorems into pass/fail verdicts.

The command-line entry point lives in ``bssmpv.cli`` and is not imported
here, so library use does not pull in the CLI stack.
"""

from .errors import (BssmpvError, ConditionError, ConditionWarning,
                     DataError, DegenerateCovarianceError, QuadratureError,
                     RobustnessWarning, SimulationError, TruncationWarning,
                     ValidationError, VerdictFailure)
from .kernels import (AlphaFit, ConditionReport, CovarianceModel,
                      ExponentialKernel, GammaKernel, KernelSpec,
                      PowerLawKernel, QuadratureConfig, TabulatedKernel,
                      brownian_covariance, build_covariance,
                      check_conditions, eval_kernel, fit_alpha,
                      fractional_covariance, kernel_from_config,
                      kernel_to_config, limit_correlation, pi_tail, r_n,
                      rbar_by_quadrature, tabulated_from_csv, tau_n)
from .gaussmom import (PowerVector, mixed_abs_moment, mu_p, multipower_cov,
                       nabeya_h, psi)
from .pathsim import (ConstantVol, DeterministicVol, ExpFractionalVol,
                      LipschitzDrift, PathBundle, SmootherBssDrift,
                      VolatilityModel, add_drift, bundle_from_binary,
                      bundle_from_csv, bundle_to_binary, bundle_to_csv,
                      linear_vol, simulate_bss, simulate_gaussian_core,
                      simulate_volatility, sinusoid_vol, vol_from_config,
                      vol_to_config)
from .mpv import (MpvResult, RvrResult, bsm_scaled_multipower, centering,
                  estimate_tau, multipower, rvr)
from .asymptotics import (BetaMatrix, CltReport, VarianceProcess,
                          beta_matrix, bsm_constant_A, clt_variance_process,
                          finite_n_realised_variance, studentize_rvr)
from .harness import (DEFAULT_THRESHOLDS, ExperimentConfig,
                      ExperimentReport, load_config, run_experiment,
                      write_report)

__all__ = [name for name in dir() if not name.startswith("_")]
