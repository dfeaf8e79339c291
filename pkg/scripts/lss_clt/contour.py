"""
Circular-contour trapezoidal quadrature and the CLT summary assembly.

Nodes sit at z_k = c + rho * exp(2 pi i (k - 1/2) / R), k = 1..R, so no node
lies on the real axis and node R+1-k is the conjugate of node k. Integrands
built from real-coefficient functions satisfy u(conj z) = conj u(z), so the
kernels are evaluated on the upper half only.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .clt_engine import StateCache, build_kernel, default_mode, fd_step_for, sigma2
from .errors import ConfigError, LssCltError, NumericalQualityError
from .fixed_point import FunctionSpec, SolverOptions, lss_centering, solve_along_contour
from .model import support_bound
from .parallel import map_ordered

logger = logging.getLogger(__name__)

IMAG_RTOL = 1e-6
PSD_RTOL = 1e-6


@dataclass(frozen=True)
class Contour:
    center: float
    radius: float
    R: int

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigError("contour radius must be positive")
        if self.R < 2 or self.R % 2:
            raise ConfigError(f"contour node count must be even and >= 2, got {self.R}")

    @cached_property
    def nodes(self):
        angles = 2.0 * np.pi * (np.arange(1, self.R + 1) - 0.5) / self.R
        return self.center + self.radius * np.exp(1j * angles)

    @cached_property
    def weights(self):
        """dz weights of the trapezoid rule, (2 pi i / R)(z_k - c)."""
        return 2j * np.pi / self.R * (self.nodes - self.center)

    @property
    def upper(self):
        """Indices of the upper-half nodes."""
        return np.arange(self.R // 2)

    def conjugate_index(self, index):
        return self.R - 1 - index

    def integrate(self, values):
        return complex(np.sum(self.weights * np.asarray(values)))

    def paired(self, ratio=1.1):
        if ratio < 1.05:
            raise ConfigError(f"paired contour radius ratio must be >= 1.05, got {ratio}")
        return Contour(self.center, self.radius * ratio, self.R)

    def encloses(self, low, high, margin=0.0):
        return self.center - self.radius <= low - margin and self.center + self.radius >= high + margin

    def to_dict(self):
        return {"center": self.center, "radius": self.radius, "nodes": self.R}

    @classmethod
    def for_model(cls, model, margin=0.5, relative_margin=0.5, nodes=128):
        """
        Circle centred on the support interval.

        The clearance is max(margin, relative_margin * half-width) on both sides.
        """
        low, high = support_bound(model)
        half_width = 0.5 * (high - low)
        clearance = max(margin, relative_margin * half_width)
        return cls(center=0.5 * (low + high), radius=half_width + clearance, R=int(nodes))


def trapezoid(u, c):
    """I_R = (2 pi i / R) sum_k (z_k - c) u(z_k) for a callable u."""
    values = np.empty(c.R, dtype=complex)
    for index, z in enumerate(c.nodes):
        try:
            values[index] = u(z)
        except LssCltError as error:
            raise type(error)(f"node {index} (z={z:.6g}): {error}") from error
        except Exception as error:
            raise ValueError(f"evaluation failed at node {index} (z={z:.6g}): {error}") from error
    return c.integrate(values)


def _real_part(value, what):
    value = np.asarray(value)
    if np.any(np.abs(value.imag) > IMAG_RTOL * (1.0 + np.abs(value.real))):
        raise NumericalQualityError(
            f"{what} has imaginary residue {np.max(np.abs(value.imag)):.3e}; quadrature under-resolved")
    return value.real.copy()


def _mirror(upper_values, c):
    """Fill all node values from the upper half by conjugation."""
    values = np.empty(c.R, dtype=complex)
    for index, value in zip(c.upper, upper_values):
        values[index] = value
        values[c.conjugate_index(index)] = np.conj(value)
    return values


def gamma_vector(model, functions, c, opts=None, solutions=None):
    """
    Bias vector Gamma_i = -(1/2 pi i) contour integral of f_i(z) mu(z).

    Args:
        model: VarianceModel
        functions: List of FunctionSpec
        c: Contour enclosing the support
        opts: SolverOptions
        solutions: Optional precomputed fixed-point solutions at c.nodes

    Returns:
        Real array of length len(functions)
    """
    if solutions is None:
        solutions = solve_along_contour(model, c.nodes[c.upper], opts)
    else:
        solutions = [solutions[index] for index in c.upper]
    upper_mu = []
    for index, sol in zip(c.upper, solutions):
        try:
            upper_mu.append(build_kernel(model, sol).mu)
        except LssCltError as error:
            raise type(error)(f"node {index}: {error}") from error
    mu = _mirror(upper_mu, c)
    gamma = np.array([-c.integrate(f(c.nodes) * mu) / (2j * np.pi) for f in functions])
    return _real_part(gamma, "Gamma")


def sigma2_grid(model, c1, c2, opts=None, mode=None, workers=None, solutions=None):
    """
    sigma^2(z1_k, z2_l) on every node pair, shape (R1, R2).

    Rows for lower-half z1 come from sigma^2(conj z1, conj z2) = conj sigma^2(z1, z2).
    """
    mode = mode or default_mode(model)
    cache = StateCache(model, opts)
    if solutions is not None:
        for sol in list(solutions[0]) + list(solutions[1]):
            cache.add(sol)

    rows_z = c1.nodes[c1.upper]
    columns_z = c2.nodes
    for z in list(rows_z) + list(columns_z):
        cache.solution(z)
        h = fd_step_for(z)
        for step in (h, -h, 2 * h, -2 * h):
            cache.state(z + step, near=z)

    def row(z1):
        return np.array([sigma2(model, z1, z2, mode=mode, cache=cache) for z2 in columns_z])

    upper_rows = map_ordered(row, rows_z, workers)
    grid = np.empty((c1.R, c2.R), dtype=complex)
    for index, values in zip(c1.upper, upper_rows):
        grid[index] = values
        grid[c1.conjugate_index(index)] = np.conj(values[[c2.conjugate_index(l) for l in range(c2.R)]])
    return grid


def lambda_matrix(model, functions, c1, c2, opts=None, mode=None, workers=None, solutions=None):
    """
    Covariance Lambda_ij = -(1/2 pi^2) double contour integral of f_i(z1) f_j(z2) sigma^2(z1, z2).

    Returns:
        Symmetric positive semidefinite array (l, l)
    """
    grid = sigma2_grid(model, c1, c2, opts, mode, workers, solutions)
    left = np.array([c1.weights * f(c1.nodes) for f in functions])
    right = np.array([c2.weights * f(c2.nodes) for f in functions])
    raw = -(left @ grid @ right.T) / (2.0 * np.pi ** 2)
    matrix = _real_part(raw, "Lambda")
    matrix = 0.5 * (matrix + matrix.T)
    if matrix.size:
        eigenvalues = np.linalg.eigvalsh(matrix)
        if eigenvalues[0] < -PSD_RTOL * max(1.0, abs(eigenvalues[-1])):
            raise NumericalQualityError(
                f"Lambda is not positive semidefinite (smallest eigenvalue {eigenvalues[0]:.3e}); "
                "increase the node count")
    return matrix


@dataclass(frozen=True)
class CltOptions:
    nodes: int = 128
    margin: float = 0.5
    relative_margin: float = 0.5
    radius_ratio: float = 1.1
    mode: str = None
    workers: int = None
    solver: SolverOptions = field(default_factory=SolverOptions)


@dataclass(frozen=True, eq=False)
class CltSummary:
    """
    Centering, bias and covariance of (G_n(f_1), ..., G_n(f_l)).

    labels name each coordinate; provenance holds contour, solver and mode.
    """
    functions: tuple
    gamma: np.ndarray
    lambda_: np.ndarray
    centering: np.ndarray
    labels: tuple = ()
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "functions": [f.to_dict() for f in self.functions],
            "labels": list(self.labels),
            "gamma": np.asarray(self.gamma).tolist(),
            "lambda": np.asarray(self.lambda_).tolist(),
            "centering": np.asarray(self.centering).tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data):
        functions = tuple(FunctionSpec.from_dict(f) for f in data["functions"])
        return cls(functions=functions,
                   gamma=np.asarray(data["gamma"], dtype=float),
                   lambda_=np.asarray(data["lambda"], dtype=float).reshape(len(functions), len(functions)),
                   centering=np.asarray(data["centering"], dtype=float),
                   labels=tuple(data.get("labels") or [f.label for f in functions]),
                   provenance=data.get("provenance", {}))


def clt_summary(model, functions, opts=None):
    """
    Centering, Gamma and Lambda for a list of test functions.

    Args:
        model: VarianceModel
        functions: List of FunctionSpec
        opts: CltOptions

    Returns:
        CltSummary
    """
    opts = opts or CltOptions()
    functions = tuple(functions)
    c1 = Contour.for_model(model, opts.margin, opts.relative_margin, opts.nodes)
    c2 = c1.paired(opts.radius_ratio)
    for f in functions:
        f.check_contour(c2)
    mode = opts.mode or default_mode(model)

    upper1 = solve_along_contour(model, c1.nodes[c1.upper], opts.solver)
    solutions1 = [None] * c1.R
    for index, sol in zip(c1.upper, upper1):
        solutions1[index] = sol
        solutions1[c1.conjugate_index(index)] = sol.conjugate()
    solutions2 = solve_along_contour(model, c2.nodes, opts.solver)

    centering = np.array([lss_centering(model, f, c1, solutions=solutions1) for f in functions])
    gamma = gamma_vector(model, functions, c1, solutions=solutions1)
    lambda_ = lambda_matrix(model, functions, c1, c2, opts.solver, mode, opts.workers,
                            solutions=(upper1, solutions2))
    logger.debug(f"clt summary on {c1.R} nodes, radius {c1.radius:.4g}, mode {mode}")
    provenance = {
        "contour": c1.to_dict(),
        "paired_radius": c2.radius,
        "margin": opts.margin,
        "relative_margin": opts.relative_margin,
        "mode": mode,
        "solver": opts.solver.to_dict(),
        "n": model.n,
        "N": model.N,
        "k": model.k,
    }
    return CltSummary(functions=functions, gamma=gamma, lambda_=lambda_, centering=centering,
                      labels=tuple(f.label for f in functions), provenance=provenance)


def combine_summaries(first, second, prefixes=("B", "D")):
    """
    Joint summary of statistics from two independent matrices.

    Lambda is block diagonal; labels are prefixed to keep coordinates apart.
    """
    size1, size2 = len(first.functions), len(second.functions)
    lambda_ = np.zeros((size1 + size2, size1 + size2))
    lambda_[:size1, :size1] = first.lambda_
    lambda_[size1:, size1:] = second.lambda_
    labels = tuple(f"{prefixes[0]}:{label}" for label in first.labels) + \
        tuple(f"{prefixes[1]}:{label}" for label in second.labels)
    return CltSummary(functions=first.functions + second.functions,
                      gamma=np.concatenate([first.gamma, second.gamma]),
                      lambda_=lambda_,
                      centering=np.concatenate([first.centering, second.centering]),
                      labels=labels,
                      provenance={prefixes[0]: first.provenance, prefixes[1]: second.provenance})
