"""
Full-sibling method-of-moments estimation of (tau1, tau2, tau_e).

Sigma_A has eigenvalues tau1 * exp(-tau2 * i / index_scale) and Sigma_E = tau_e * Id.
The estimator inverts a moment map tau -> (Tr B_p, Tr B_p^2, Tr D_p):

    exact:       the Gaussian expectations of the three traces
    equivalent:  their deterministic-equivalent counterparts, which drop the
                 O(1) term F^{-2} sum_f Tr T_f^2 from the second moment

Theoretical bias and spread follow from the CLT of the three traces through
the Jacobian of the inverse map.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .contour import CltOptions, clt_summary, combine_summaries
from .errors import ConfigError, ConvergenceError, SingularSystemError
from .fixed_point import FunctionSpec
from .model import SpectrumSpec, build_model, model_from_design, random_full_sib_design
from .simulate import nested_moment_draws

logger = logging.getLogger(__name__)

MOMENT_MAPS = ("exact", "equivalent")
TAU_NAMES = ("tau1", "tau2", "tau_e")
MIN_TAU2 = 1e-6
JACOBIAN_STEP = 1e-6


@dataclass(frozen=True)
class TauParams:
    tau1: float
    tau2: float
    tau_e: float

    def __post_init__(self):
        if not (self.tau1 > 0 and self.tau_e > 0):
            raise ConfigError(f"tau1 and tau_e must be positive, got {self.as_array().tolist()}")
        if not self.tau2 >= MIN_TAU2:
            raise ConfigError(f"tau2 must be at least {MIN_TAU2}, got {self.tau2}")

    def as_array(self):
        return np.array([self.tau1, self.tau2, self.tau_e], dtype=float)

    @classmethod
    def from_array(cls, values):
        return cls(*(float(v) for v in values))

    def to_dict(self):
        return dict(zip(TAU_NAMES, self.as_array().tolist()))


def _check_full_sib(design):
    if design.levels != 2 or design.group_counts[1] != design.n_s:
        raise ConfigError("method of moments needs a two-level full-sib design (families, individuals)")


def _trace_terms(tau, design, p, index_scale):
    """Per-family Tr T_f, Tr T_f^2 and Tr((sum_f T_f)^2) for T_f = S_f Sigma_A + Sigma_E."""
    tau1, tau2, tau_e = tau
    sigma = tau1 * np.exp(-tau2 * np.arange(1, p + 1) / index_scale)
    sizes = design.family_sizes.astype(float)
    F = len(sizes)
    trace_a, trace_a2 = sigma.sum(), (sigma ** 2).sum()
    trace_t = sizes * trace_a + p * tau_e
    trace_t2 = sizes ** 2 * trace_a2 + 2.0 * sizes * tau_e * trace_a + p * tau_e ** 2
    total_sq = np.sum((sizes.sum() * sigma + F * tau_e) ** 2)
    return F, trace_t, trace_t2, total_sq


def expected_moments(tau, design, p, index_scale=1.0):
    """
    Exact Gaussian expectations of (Tr B_p, Tr B_p^2, Tr D_p).

    m1 = F^{-1} sum_f Tr T_f
    m2 = F^{-2} [sum_f ((Tr T_f)^2 + 2 Tr T_f^2) + sum_{f != g} Tr(T_f T_g)]
    mD = Tr Sigma_E
    """
    _check_full_sib(design)
    tau = tau.as_array() if isinstance(tau, TauParams) else np.asarray(tau, dtype=float)
    F, trace_t, trace_t2, total_sq = _trace_terms(tau, design, p, index_scale)
    m1 = trace_t.sum() / F
    m2 = (np.sum(trace_t ** 2) + np.sum(trace_t2) + total_sq) / F ** 2
    return np.array([m1, m2, p * tau[2]])


def equivalent_moments(tau, design, p, index_scale=1.0):
    """Deterministic-equivalent moments: the exact ones without F^{-2} sum_f Tr T_f^2."""
    _check_full_sib(design)
    tau = tau.as_array() if isinstance(tau, TauParams) else np.asarray(tau, dtype=float)
    F, trace_t, _, total_sq = _trace_terms(tau, design, p, index_scale)
    m2 = (np.sum(trace_t ** 2) + total_sq) / F ** 2
    return np.array([trace_t.sum() / F, m2, p * tau[2]])


@dataclass(frozen=True, eq=False)
class MomentMap:
    """tau -> moments for one design, with a central-difference Jacobian."""
    design: object
    p: int
    index_scale: float = 1.0
    kind: str = "exact"

    def __post_init__(self):
        if self.kind not in MOMENT_MAPS:
            raise ConfigError(f"Unknown moment map '{self.kind}'; expected one of {MOMENT_MAPS}")
        _check_full_sib(self.design)

    def __call__(self, tau):
        moments = expected_moments if self.kind == "exact" else equivalent_moments
        return moments(tau, self.design, self.p, self.index_scale)

    def jacobian(self, tau, step=JACOBIAN_STEP):
        tau = tau.as_array() if isinstance(tau, TauParams) else np.asarray(tau, dtype=float)
        grad = np.empty((3, 3))
        for col in range(3):
            shift = np.zeros(3)
            shift[col] = max(step, step * abs(tau[col]))
            grad[:, col] = (self(tau + shift) - self(tau - shift)) / (2.0 * shift[col])
        return grad

    def spectra(self, tau):
        """[Sigma_A, Sigma_E] spectra for a parameter value."""
        return [SpectrumSpec.exponential_decay(tau.tau1, tau.tau2, self.index_scale),
                SpectrumSpec.scaled_identity(tau.tau_e)]


def _initial_tau(observed, moment_map):
    """tau_e from mD, tau2 = 0.3, tau1 matching m1 (m1 is linear in tau1)."""
    m1, _, mD = observed
    p = moment_map.p
    tau_e = max(mD / p, 1e-8)
    tau2 = 0.3
    sizes = moment_map.design.family_sizes.astype(float)
    decay = np.exp(-tau2 * np.arange(1, p + 1) / moment_map.index_scale).sum()
    tau1 = (m1 - p * tau_e) * len(sizes) / (sizes.sum() * decay)
    if tau1 <= 0:
        logger.warning(f"initial tau1 {tau1:.3g} not positive; starting from 1e-3")
        tau1 = 1e-3
    return np.array([tau1, tau2, tau_e])


def _project(tau):
    floor = np.array([1e-10, MIN_TAU2, 1e-10])
    projected = np.maximum(tau, floor)
    if np.any(projected != tau):
        logger.warning(f"negative iterate {tau.tolist()} projected to {projected.tolist()}")
    return projected


def estimate_tau(observed, moment_map, tol=1e-10, max_iter=200):
    """
    Invert the moment map by damped Newton iterations.

    Args:
        observed: (Tr B_p, Tr B_p^2, Tr D_p)
        moment_map: MomentMap
        tol: Relative residual tolerance ||m(tau) - observed|| / ||observed||
        max_iter: Newton iteration budget

    Returns:
        TauParams
    """
    observed = np.asarray(observed, dtype=float)
    if observed.shape != (3,) or not np.all(np.isfinite(observed)):
        raise ValueError(f"observed moments must be three finite values, got {observed}")
    scale = max(np.linalg.norm(observed), 1e-300)
    tau = _initial_tau(observed, moment_map)
    gap = moment_map(tau) - observed
    size = np.linalg.norm(gap) / scale

    for iteration in range(1, max_iter + 1):
        if size <= tol:
            logger.debug(f"moment map inverted in {iteration - 1} Newton steps")
            return TauParams.from_array(tau)
        try:
            step = np.linalg.solve(moment_map.jacobian(tau), -gap)
        except np.linalg.LinAlgError as error:
            raise SingularSystemError(f"moment-map Jacobian is singular at tau={tau.tolist()}") from error
        damping = 1.0
        while True:
            candidate = tau + damping * step
            if np.all(candidate > 0) or damping < 1e-6:
                candidate = _project(candidate)
                candidate_gap = moment_map(candidate) - observed
                candidate_size = np.linalg.norm(candidate_gap) / scale
                if candidate_size < size or damping < 1e-6:
                    break
            damping *= 0.5
        tau, gap, size = candidate, candidate_gap, candidate_size

    if size <= tol:
        return TauParams.from_array(tau)
    raise ConvergenceError(f"moment-map inversion did not converge after {max_iter} iterations "
                           f"(relative residual {size:.3e})", solution=tau)


def model_for_within_families(design, sigma_e, p, **bounds):
    """One-level model of D_p: N = n_s - F samples, L = Id, Sigma = Sigma_E."""
    within = design.n_s - design.group_counts[0]
    if within <= 0:
        raise ConfigError("the design has no within-family degrees of freedom (every family has one member)")
    return build_model(p, within, [sigma_e], [np.ones(within)], **bounds)


def moment_summary(design, tau, moment_map, opts=None):
    """Joint CLT summary of (Tr B_p, Tr B_p^2, Tr D_p)."""
    spectra = moment_map.spectra(tau)
    model_b = model_from_design(design, spectra, moment_map.p)
    model_d = model_for_within_families(design, spectra[1], moment_map.p)
    between = clt_summary(model_b, [FunctionSpec.monomial(1), FunctionSpec.monomial(2)], opts)
    within = clt_summary(model_d, [FunctionSpec.monomial(1)], opts)
    return combine_summaries(between, within)


def theoretical_bias_sd(design, tau, clt, moment_map):
    """
    Delta-method bias and two standard deviations of tau_hat in estimator units.

    With alpha_bar the deterministic moments, tau_bar = F(alpha_bar) and
    J_F = (dm/dtau at tau_bar)^{-1}:
        bias   = J_F Gamma' + (tau_bar - tau)
        two_sd = 2 sqrt(diag(J_F Lambda' J_F^T))

    Args:
        design: Full-sib NestedDesign
        tau: True TauParams
        clt: CltSummary of (Tr B_p, Tr B_p^2, Tr D_p)
        moment_map: MomentMap defining the estimator

    Returns:
        (bias, two_sd), each of length 3
    """
    alpha_bar = np.asarray(clt.centering, dtype=float)
    tau_bar = estimate_tau(alpha_bar, moment_map)
    jacobian = moment_map.jacobian(tau_bar)
    if np.linalg.cond(jacobian) > 1e12:
        raise SingularSystemError(f"moment-map Jacobian is singular at tau={tau_bar.as_array().tolist()}")
    inverse = np.linalg.inv(jacobian)
    bias = inverse @ np.asarray(clt.gamma) + (tau_bar.as_array() - tau.as_array())
    covariance = inverse @ np.asarray(clt.lambda_) @ inverse.T
    two_sd = 2.0 * np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    return bias, two_sd


@dataclass(frozen=True, eq=False)
class Table1Report:
    """Empirical and theoretical rows of the estimator bias and 2SD table."""
    tau: TauParams
    empirical_bias: np.ndarray
    empirical_two_sd: np.ndarray
    theoretical_bias: np.ndarray
    theoretical_two_sd: np.ndarray
    estimates: np.ndarray
    moments: np.ndarray
    seeds: np.ndarray
    clt: object
    family_sizes: np.ndarray
    failures: int = 0
    provenance: dict = field(default_factory=dict)

    def to_frame(self):
        """Two-row table: Empirical and Theoretical, bias and 2SD per parameter."""
        columns = [f"bias_{name}" for name in TAU_NAMES] + [f"2sd_{name}" for name in TAU_NAMES]
        rows = [np.concatenate([self.empirical_bias, self.empirical_two_sd]),
                np.concatenate([self.theoretical_bias, self.theoretical_two_sd])]
        return pd.DataFrame(rows, index=pd.Index(["Empirical", "Theoretical"], name="row"), columns=columns)


def empirical_bias_sd(estimates, tau):
    """Mean bias and 2 (R-1)^{-1/2}-normalised SD over finite replicate estimates."""
    finite = estimates[np.all(np.isfinite(estimates), axis=1)]
    if len(finite) == 0:
        return np.full(3, np.nan), np.full(3, np.nan)
    bias = finite.mean(axis=0) - tau.as_array()
    two_sd = 2.0 * finite.std(axis=0, ddof=1) if len(finite) > 1 else np.full(3, np.nan)
    return bias, two_sd


def table1_experiment(config, master_seed, workers=None, clt=None):
    """
    Empirical and theoretical bias/2SD of tau_hat for a full-sib design.

    Config keys:
        F, p: Families and traits
        sibling_probs: Mapping sibling count -> probability
        design_seed: Seed for the family sizes, drawn once
        tau: [tau1, tau2, tau_e]
        index_scale: Decay index scale of Sigma_A
        moment_map: "exact" or "equivalent"
        replicates: Monte Carlo replicate count
        clt_options: Optional CltOptions

    A precomputed joint CltSummary of the three traces may be passed as clt.

    Returns:
        Table1Report
    """
    tau = TauParams.from_array(config["tau"])
    design = random_full_sib_design(config["F"], config["sibling_probs"], config["design_seed"])
    moment_map = MomentMap(design, int(config["p"]), float(config.get("index_scale", 1.0)),
                           config.get("moment_map", "exact"))
    opts = config.get("clt_options") or CltOptions()

    logger.info(f"design: F={design.group_counts[0]}, n_s={design.n_s}, p={moment_map.p}")
    if clt is None:
        clt = moment_summary(design, tau, moment_map, opts)
    theoretical_bias, theoretical_two_sd = theoretical_bias_sd(design, tau, clt, moment_map)

    replicates = int(config.get("replicates", 0))
    seeds, moments = nested_moment_draws(design, moment_map.spectra(tau), moment_map.p,
                                         replicates, master_seed, workers)
    estimates = np.full((replicates, 3), np.nan)
    failures = 0
    for index, observed in enumerate(moments):
        try:
            estimates[index] = estimate_tau(observed, moment_map).as_array()
        except (ConvergenceError, SingularSystemError, ConfigError) as error:
            failures += 1
            logger.warning(f"replicate {index} (seed {seeds[index]}): {error}")
    empirical_bias, empirical_two_sd = empirical_bias_sd(estimates, tau)
    if replicates < 2:
        logger.warning("fewer than two replicates; empirical SD is undefined")

    provenance = {"F": design.group_counts[0], "n_s": design.n_s, "p": moment_map.p,
                  "index_scale": moment_map.index_scale, "moment_map": moment_map.kind,
                  "design_seed": config["design_seed"], "master_seed": master_seed,
                  "replicates": replicates, "failures": failures}
    return Table1Report(tau=tau, empirical_bias=empirical_bias, empirical_two_sd=empirical_two_sd,
                        theoretical_bias=theoretical_bias, theoretical_two_sd=theoretical_two_sd,
                        estimates=estimates, moments=moments, seeds=seeds, clt=clt,
                        family_sizes=design.family_sizes, failures=failures, provenance=provenance)
