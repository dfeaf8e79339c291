"""
Linear spectral statistics of multi-level variance-component matrices:
deterministic equivalents, CLT bias and covariance, simulation and
full-sib method-of-moments estimation.
"""
__version__ = "0.1.0"

from .errors import (
    LssCltError,
    ConfigError,
    ConvergenceError,
    NumericalQualityError,
    SingularSystemError
)
from .model import (
    SpectrumSpec,
    VarianceModel,
    NestedDesign,
    build_model,
    full_sib_design,
    random_full_sib_design,
    scalings_from_design,
    model_from_design,
    support_bound,
    t_matrix,
    trace_t,
    trace_t_squared
)
from .fixed_point import (
    FunctionSpec,
    SolverOptions,
    FixedPointSolution,
    DeterministicEquivalent,
    solve_system,
    solve_along_contour,
    stieltjes_transform,
    deterministic_equivalent,
    esd_density,
    esd_cdf,
    lss_centering
)
from .clt_engine import (
    CltKernel,
    CovKernelPoint,
    build_kernel,
    kernel_diagnostics,
    cov_point,
    sigma2,
    sigma2_cauchy,
    cross_check_sigma2
)
from .contour import (
    Contour,
    CltOptions,
    CltSummary,
    trapezoid,
    gamma_vector,
    lambda_matrix,
    clt_summary,
    combine_summaries
)
from .simulate import (
    SimDraw,
    McResult,
    sample_bn,
    sample_nested,
    lss_values,
    mc_experiment,
    nested_moment_draws
)
from .mom import (
    TauParams,
    MomentMap,
    Table1Report,
    expected_moments,
    equivalent_moments,
    estimate_tau,
    model_for_within_families,
    moment_summary,
    theoretical_bias_sd,
    table1_experiment
)

__all__ = [
    'LssCltError',
    'ConfigError',
    'ConvergenceError',
    'NumericalQualityError',
    'SingularSystemError',
    'SpectrumSpec',
    'VarianceModel',
    'NestedDesign',
    'build_model',
    'full_sib_design',
    'random_full_sib_design',
    'scalings_from_design',
    'model_from_design',
    'support_bound',
    't_matrix',
    'trace_t',
    'trace_t_squared',
    'FunctionSpec',
    'SolverOptions',
    'FixedPointSolution',
    'DeterministicEquivalent',
    'solve_system',
    'solve_along_contour',
    'stieltjes_transform',
    'deterministic_equivalent',
    'esd_density',
    'esd_cdf',
    'lss_centering',
    'CltKernel',
    'CovKernelPoint',
    'build_kernel',
    'kernel_diagnostics',
    'cov_point',
    'sigma2',
    'sigma2_cauchy',
    'cross_check_sigma2',
    'Contour',
    'CltOptions',
    'CltSummary',
    'trapezoid',
    'gamma_vector',
    'lambda_matrix',
    'clt_summary',
    'combine_summaries',
    'SimDraw',
    'McResult',
    'sample_bn',
    'sample_nested',
    'lss_values',
    'mc_experiment',
    'nested_moment_draws',
    'TauParams',
    'MomentMap',
    'Table1Report',
    'expected_moments',
    'equivalent_moments',
    'estimate_tau',
    'model_for_within_families',
    'moment_summary',
    'theoretical_bias_sd',
    'table1_experiment'
]
