"""
Seeded Gaussian simulation of B_n and the Monte Carlo harness.

B_n is drawn in the factored form (1/N) Z^T Z with Z = sum_r L_r X_r Sigma_r^{1/2},
which has the law of (1/N) sum_j T_j^{1/2} x_j x_j^T T_j^{1/2}. Replicate
seeds come from SeedSequence.spawn of the master seed and drive PCG64.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError, SingularSystemError
from .model import support_bound
from .parallel import map_ordered

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "PCG64"
NEGATIVE_EIGENVALUE_ATOL = 1e-9
EDGE_CLEARANCE = 0.5
STANDARDIZE_CONDITION_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class SimDraw:
    """One realised matrix: its seed, nonincreasing eigenvalues and optional LSS values."""
    seed: int
    eigenvalues: np.ndarray
    lss: dict = field(default_factory=dict)
    edge_violation: bool = False

    @property
    def trace(self):
        return float(math.fsum(self.eigenvalues))


def _generator(seed):
    return np.random.Generator(np.random.PCG64(seed))


def replicate_seeds(master_seed, count):
    """Distinct 64-bit replicate seeds derived from the master seed."""
    children = np.random.SeedSequence(master_seed).spawn(int(count))
    return np.array([child.generate_state(1, np.uint64)[0] for child in children], dtype=np.uint64)


def _gram_eigenvalues(factor, scale):
    """Eigenvalues of factor^T factor / scale, nonincreasing, via the smaller Gram matrix."""
    rows, cols = factor.shape
    gram = factor.T @ factor if cols <= rows else factor @ factor.T
    values = np.linalg.eigvalsh(gram / scale)[::-1]
    if cols > rows:
        values = np.concatenate([values, np.zeros(cols - rows)])
    return values


def _check_draw(values, seed, upper=None):
    if values.size and values[-1] < -NEGATIVE_EIGENVALUE_ATOL * max(1.0, values[0]):
        logger.warning(f"seed {seed}: eigenvalue {values[-1]:.3e} below zero beyond roundoff")
    violation = upper is not None and values.size > 0 and values[0] > upper + EDGE_CLEARANCE
    if violation:
        logger.warning(f"seed {seed}: largest eigenvalue {values[0]:.4g} beyond support bound {upper:.4g}")
    return bool(violation)


def sample_bn(model, seed):
    """
    Draw B_n for a VarianceModel and return its spectrum.

    Args:
        model: VarianceModel
        seed: Integer seed for PCG64

    Returns:
        SimDraw
    """
    rng = _generator(seed)
    factor = np.zeros((model.N, model.n))
    for r in range(model.k):
        X = rng.standard_normal((model.N, model.n))
        factor += model.scalings[r][:, None] * (X @ model.sigma_roots[r])
    values = _gram_eigenvalues(factor, model.N)
    violation = _check_draw(values, seed, support_bound(model)[1])
    return SimDraw(seed=int(seed), eigenvalues=values, edge_violation=violation)


def _spectrum_roots(spectra, p):
    roots = []
    for spec in spectra:
        matrix = spec.expand(p)
        values, vectors = np.linalg.eigh(matrix)
        roots.append((vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T)
    return roots


def sample_nested(design, spectra, p, seed, roots=None):
    """
    Draw the nested random-effects data Y = sum_r U_r alpha_r and its two sums of squares.

    B_p = F^{-1} Y^T pi Y with pi the projection onto col(U_1), and
    D_p = (n_s - F)^{-1} Y^T (Id - pi) Y.

    Args:
        design: NestedDesign
        spectra: One SpectrumSpec per design level
        p: Trait dimension
        seed: Integer seed for PCG64
        roots: Optional precomputed Sigma_r^{1/2} list

    Returns:
        (B_p draw, D_p draw); D_p has all-zero eigenvalues when n_s == F
    """
    if len(spectra) != design.levels:
        raise ConfigError(f"dimension mismatch: {len(spectra)} spectra for a {design.levels}-level design")
    roots = roots if roots is not None else _spectrum_roots(spectra, p)
    rng = _generator(seed)

    Y = np.zeros((design.n_s, p))
    for level, root in enumerate(roots):
        effects = rng.standard_normal((design.group_counts[level], p)) @ root
        Y += effects[design.memberships[level]]

    families = design.memberships[0]
    sizes = design.family_sizes.astype(float)
    F = len(sizes)
    sums = np.zeros((F, p))
    np.add.at(sums, families, Y)
    # rows of sums / sqrt(S_f) span the projection pi Y
    between = sums / np.sqrt(sizes)[:, None]
    b_values = _gram_eigenvalues(between, F)

    within_dof = design.n_s - F
    if within_dof > 0:
        residual = Y - (sums / sizes[:, None])[families]
        d_values = _gram_eigenvalues(residual, within_dof)
    else:
        d_values = np.zeros(p)
    return (SimDraw(seed=int(seed), eigenvalues=b_values),
            SimDraw(seed=int(seed), eigenvalues=d_values))


def lss_values(draw, functions):
    """Sum_i f(lambda_i) for every function, summed exactly in eigenvalue order."""
    results = np.empty(len(functions))
    for index, f in enumerate(functions):
        values = np.asarray(f(draw.eigenvalues), dtype=float)
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{f.label} is undefined at an eigenvalue of draw {draw.seed}")
        results[index] = math.fsum(values)
    return results


def inverse_sqrt(matrix):
    """Symmetric Lambda^{-1/2}; raises when Lambda is numerically singular."""
    values, vectors = np.linalg.eigh(0.5 * (matrix + matrix.T))
    if values.size == 0:
        return np.zeros_like(matrix)
    if values[0] <= 0 or values[-1] / values[0] > STANDARDIZE_CONDITION_LIMIT:
        raise SingularSystemError(
            f"Lambda is not invertible (eigenvalues {values[0]:.3e} .. {values[-1]:.3e})")
    return (vectors / np.sqrt(values)) @ vectors.T


@dataclass(frozen=True, eq=False)
class McResult:
    """Replicate records and calibration summary of one Monte Carlo experiment."""
    config_hash: str
    labels: tuple
    seeds: np.ndarray
    lss: np.ndarray
    standardized: np.ndarray
    summary: dict

    @property
    def replicates(self):
        return len(self.seeds)


def calibration_summary(lss, standardized, clt_summary, violations=0):
    """Empirical mean and covariance of the standardized statistics plus per-coordinate diagnostics."""
    count = len(lss)
    summary = {
        "replicates": count,
        "gamma": np.asarray(clt_summary.gamma).tolist(),
        "centering": np.asarray(clt_summary.centering).tolist(),
        "edge_violations": int(violations),
        "rng": RNG_ALGORITHM,
    }
    if count == 0:
        summary.update({"mean": None, "covariance": None, "empirical_bias": None, "normality": None})
        return summary

    centred = lss - clt_summary.centering
    summary["empirical_bias"] = centred.mean(axis=0).tolist()
    summary["mean"] = standardized.mean(axis=0).tolist()
    summary["covariance"] = (np.cov(standardized, rowvar=False, ddof=1).reshape(lss.shape[1], lss.shape[1]).tolist()
                             if count > 1 else None)
    normality = []
    for column in standardized.T:
        row = {"skew": float(stats.skew(column)), "excess_kurtosis": float(stats.kurtosis(column))}
        if count >= 8:
            row["normaltest_pvalue"] = float(stats.normaltest(column).pvalue)
        if count >= 3:
            row["ks_pvalue"] = float(stats.kstest(column, "norm").pvalue)
        normality.append(row)
    summary["normality"] = normality
    return summary


def mc_experiment(model, functions, R_mc, master_seed, summary, workers=None, config_hash=""):
    """
    Monte Carlo calibration of the CLT for one model.

    Each replicate draws B_n from its own derived seed and records the
    standardized vector Lambda^{-1/2}(lss - centering - Gamma).

    Args:
        model: VarianceModel
        functions: List of FunctionSpec (same as in summary)
        R_mc: Number of replicates
        master_seed: Master seed
        summary: CltSummary for model and functions
        workers: Thread count (default from the environment)
        config_hash: Hash recorded with the result

    Returns:
        McResult
    """
    functions = list(functions)
    labels = tuple(f.label for f in functions)
    seeds = replicate_seeds(master_seed, R_mc)
    if R_mc == 0:
        empty = np.empty((0, len(functions)))
        return McResult(config_hash, labels, seeds, empty, empty.copy(),
                        calibration_summary(empty, empty, summary))

    root = inverse_sqrt(np.asarray(summary.lambda_))

    def replicate(seed):
        draw = sample_bn(model, int(seed))
        return lss_values(draw, functions), draw.edge_violation

    outcomes = map_ordered(replicate, seeds, workers)
    lss = np.array([values for values, _ in outcomes])
    violations = sum(flag for _, flag in outcomes)
    standardized = (lss - summary.centering - summary.gamma) @ root.T
    logger.info(f"{R_mc} replicates done, {violations} edge violations")
    return McResult(config_hash, labels, seeds, lss, standardized,
                    calibration_summary(lss, standardized, summary, violations))


def nested_moment_draws(design, spectra, p, R_mc, master_seed, workers=None):
    """
    (Tr B_p, Tr B_p^2, Tr D_p) for R_mc seeded replicates of the nested model.

    Returns:
        (seeds, array of shape (R_mc, 3))
    """
    seeds = replicate_seeds(master_seed, R_mc)
    roots = _spectrum_roots(spectra, p)

    def replicate(seed):
        b_draw, d_draw = sample_nested(design, spectra, p, int(seed), roots=roots)
        return (math.fsum(b_draw.eigenvalues), math.fsum(b_draw.eigenvalues ** 2),
                math.fsum(d_draw.eigenvalues))

    moments = np.array(map_ordered(replicate, seeds, workers), dtype=float).reshape(len(seeds), 3)
    return seeds, moments
