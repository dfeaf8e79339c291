"""
Deterministic-equivalent fixed point.

At z in the upper half plane the 2k unknowns g1^(r), g2^(r) solve

    z g1^(r) = -(1/N) Tr((sum_s g2^(s) L_s^2 + Id)^{-1} L_r^2)
    z g2^(r) = -(1/N) Tr((sum_s g1^(s) Sigma_s + Id)^{-1} Sigma_r)

The solver alternates the two families starting from g1 = i, damps when the
updates oscillate, and switches to Newton steps on the composite map when the
plain contraction stalls. Points close to the real axis are reached by
continuation downward in Im z.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import integrate, linalg

from .errors import ConfigError, ConvergenceError, NumericalQualityError

logger = logging.getLogger(__name__)

FUNCTION_KINDS = ("monomial", "polynomial", "shifted-log")


@dataclass(frozen=True)
class FunctionSpec:
    """
    Test function f of a linear spectral statistic.

    Kinds:
        monomial: x**power
        polynomial: sum_i coefficients[i] * x**i (ascending order)
        shifted-log: log(x + offset), offset > 0
    """
    kind: str
    power: int = 1
    coefficients: tuple = ()
    offset: float = None

    def __post_init__(self):
        if self.kind not in FUNCTION_KINDS:
            raise ConfigError(f"Unknown function kind '{self.kind}'; expected one of {FUNCTION_KINDS}")
        if self.kind == "monomial" and int(self.power) < 0:
            raise ConfigError("monomial power must be nonnegative")
        if self.kind == "polynomial" and len(self.coefficients) == 0:
            raise ConfigError("polynomial needs at least one coefficient")
        if self.kind == "shifted-log" and (self.offset is None or self.offset <= 0):
            raise ConfigError("shifted-log needs a positive offset")

    @classmethod
    def monomial(cls, power):
        return cls("monomial", power=int(power))

    @classmethod
    def polynomial(cls, coefficients):
        return cls("polynomial", coefficients=tuple(float(c) for c in coefficients))

    @classmethod
    def shifted_log(cls, offset):
        return cls("shifted-log", offset=float(offset))

    def __call__(self, x):
        x = np.asarray(x)
        if self.kind == "monomial":
            return x ** self.power if self.power else np.ones_like(x)
        if self.kind == "polynomial":
            return npoly.polyval(x, np.asarray(self.coefficients))
        return np.log(x + self.offset)

    @property
    def label(self):
        if self.kind == "monomial":
            return {0: "1", 1: "x"}.get(self.power, f"x^{self.power}")
        if self.kind == "polynomial":
            return "poly(" + ",".join(f"{c:g}" for c in self.coefficients) + ")"
        return f"log(x+{self.offset:g})"

    def check_contour(self, contour):
        """The branch point -offset must stay outside the contour."""
        if self.kind == "shifted-log" and contour.center - contour.radius <= -self.offset:
            raise ConfigError(
                f"{self.label} is not analytic inside the contour "
                f"(left crossing {contour.center - contour.radius:.3g} <= {-self.offset:g})")

    def to_dict(self):
        if self.kind == "monomial":
            return {"kind": self.kind, "power": self.power}
        if self.kind == "polynomial":
            return {"kind": self.kind, "coefficients": list(self.coefficients)}
        return {"kind": self.kind, "offset": self.offset}

    @classmethod
    def from_dict(cls, spec):
        kind = spec.get("kind")
        if kind == "monomial":
            return cls.monomial(spec.get("power", 1))
        if kind == "polynomial":
            return cls.polynomial(spec["coefficients"])
        if kind == "shifted-log":
            return cls.shifted_log(spec["offset"])
        raise ConfigError(f"Unknown function kind '{kind}'")


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-12
    max_iter: int = 10000
    damping: float = None           # None: start undamped, drop to 0.5 on oscillation
    accelerate: bool = True         # Newton steps once the contraction stalls
    continuation_start: float = 1.0  # Im z where continuation begins
    continuation_ratio: float = 0.5  # geometric step of the continuation

    def to_dict(self):
        return {"tol": self.tol, "max_iter": self.max_iter, "damping": self.damping,
                "accelerate": self.accelerate, "continuation_start": self.continuation_start,
                "continuation_ratio": self.continuation_ratio}


@dataclass(frozen=True, eq=False)
class FixedPointSolution:
    z: complex
    g1: np.ndarray
    g2: np.ndarray
    residual: float
    iterations: int
    converged: bool
    trajectory: tuple = field(default=(), repr=False)

    def conjugate(self):
        """Solution at conj(z) by Schwarz reflection."""
        return replace(self, z=self.z.conjugate(), g1=np.conj(self.g1), g2=np.conj(self.g2))


@dataclass(frozen=True, eq=False)
class DeterministicEquivalent:
    z: complex
    matrix: np.ndarray
    stieltjes: complex
    expressions: tuple

    @property
    def discrepancy(self):
        values = np.asarray(self.expressions)
        return float(np.max(np.abs(values - values[0])))


def sigma_traces(model, g1):
    """(1/N) Tr((sum_s g1^(s) Sigma_s + Id)^{-1} Sigma_r) for every r."""
    diagonals = model.spectral_diagonals
    if diagonals is not None:
        denominator = 1.0 + g1 @ diagonals
        return (diagonals / denominator).sum(axis=1) / model.N
    n, k = model.n, model.k
    pencil = np.eye(n) + np.einsum('r,rab->ab', g1, model.sigmas)
    stacked = model.sigmas.transpose(1, 0, 2).reshape(n, k * n)
    solved = linalg.solve(pencil, stacked).reshape(n, k, n)
    return np.einsum('iri->r', solved) / model.N


def scaling_traces(model, g2):
    """(1/N) Tr((sum_s g2^(s) L_s^2 + Id)^{-1} L_r^2) for every r."""
    lsq = model.scalings_sq
    return (lsq / (1.0 + g2 @ lsq)).sum(axis=1) / model.N


def resolvent_trace(model, g1):
    """Tr((sum_s g1^(s) Sigma_s + Id)^{-1})."""
    diagonals = model.spectral_diagonals
    if diagonals is not None:
        return np.sum(1.0 / (1.0 + g1 @ diagonals))
    pencil = np.eye(model.n) + np.einsum('r,rab->ab', g1, model.sigmas)
    return np.trace(linalg.solve(pencil, np.eye(model.n)))


def stieltjes_transform(model, sol):
    """m(z) = -(1/(z n)) Tr((sum_r g1^(r) Sigma_r + Id)^{-1})."""
    return -resolvent_trace(model, sol.g1) / (sol.z * model.n)


def defect(model, z, g1, g2):
    """Largest absolute defect of both equation families."""
    first = z * g1 + scaling_traces(model, g2)
    second = z * g2 + sigma_traces(model, g1)
    return float(max(np.max(np.abs(first)), np.max(np.abs(second))))


def _composite(model, z, g1):
    g2 = -sigma_traces(model, g1) / z
    return -scaling_traces(model, g2) / z


def _newton(model, z, g1, opts, trajectory, budget):
    """Newton iterations on g1 -> composite(g1) - g1 with a finite-difference Jacobian."""
    k = model.k
    identity = np.eye(k)
    for step in range(1, budget + 1):
        image = _composite(model, z, g1)
        gap = image - g1
        size = float(np.max(np.abs(gap)))
        trajectory.append(size)
        if size <= opts.tol * (1.0 + np.max(np.abs(g1))):
            return image, step, True
        jacobian = np.empty((k, k), dtype=complex)
        for s in range(k):
            h = 1e-7 * (1.0 + abs(g1[s]))
            shifted = g1.copy()
            shifted[s] += h
            jacobian[:, s] = (_composite(model, z, shifted) - image) / h
        try:
            g1 = g1 - np.linalg.solve(jacobian - identity, gap)
        except np.linalg.LinAlgError:
            return g1, step, False
    return g1, budget, False


def _solve_from(model, z, g1, opts):
    g1 = np.array(g1, dtype=complex)
    trajectory = []
    damping = 1.0 if opts.damping is None else float(opts.damping)
    previous = np.inf
    stalls = 0
    converged = False
    iterations = 0

    while iterations < opts.max_iter:
        iterations += 1
        image = _composite(model, z, g1)
        if damping < 1.0:
            image = damping * image + (1.0 - damping) * g1
        update = float(np.max(np.abs(image - g1)))
        g1 = image
        trajectory.append(update)
        if not np.isfinite(update):
            break
        if update <= opts.tol * (1.0 + np.max(np.abs(g1))):
            converged = True
            break
        if opts.damping is None and damping == 1.0 and iterations > 10 and update > previous:
            logger.debug(f"oscillating updates at z={z:.4g}; damping 0.5")
            damping = 0.5
        stalls = stalls + 1 if update > 0.9 * previous else 0
        previous = update
        if opts.accelerate and iterations >= 50 and stalls >= 20:
            logger.debug(f"slow contraction at z={z:.4g}; switching to Newton after {iterations} iterations")
            g1, steps, converged = _newton(model, z, g1, opts, trajectory, 50)
            iterations += steps
            if converged:
                break
            stalls = 0

    g2 = -sigma_traces(model, g1) / z
    residual = defect(model, z, g1, g2)
    sol = FixedPointSolution(z=z, g1=g1, g2=g2, residual=residual, iterations=iterations,
                             converged=converged, trajectory=tuple(trajectory))
    if not converged or not np.isfinite(residual):
        raise ConvergenceError(
            f"fixed point did not converge at z={z:.6g} after {iterations} iterations "
            f"(last update {trajectory[-1] if trajectory else np.nan:.3e})",
            solution=sol, trajectory=trajectory)
    m = stieltjes_transform(model, sol)
    if not m.imag > -1e-14 * abs(m):
        raise ConvergenceError(f"non-physical branch at z={z:.6g}: Im m = {m.imag:.3e}",
                               solution=sol, trajectory=trajectory)
    return sol


def solve_system(model, z, opts=None, initial=None):
    """
    Solve the 2k-equation system at one point of the upper half plane.

    Args:
        model: VarianceModel
        z: Complex point with Im z > 0
        opts: SolverOptions
        initial: Optional warm start for g1

    Returns:
        FixedPointSolution (converged)
    """
    opts = opts or SolverOptions()
    z = complex(z)
    if not z.imag > 0:
        raise ValueError(f"solve_system needs Im z > 0, got z={z}")
    if initial is not None:
        try:
            return _solve_from(model, z, initial, opts)
        except ConvergenceError:
            logger.debug(f"warm start failed at z={z:.4g}; falling back to continuation")

    g1 = np.full(model.k, 1j)
    if z.imag >= opts.continuation_start:
        return _solve_from(model, z, g1, opts)

    height = opts.continuation_start
    while height * opts.continuation_ratio > z.imag:
        g1 = _solve_from(model, complex(z.real, height), g1, opts).g1
        height *= opts.continuation_ratio
    return _solve_from(model, z, g1, opts)


def solve_along_contour(model, nodes, opts=None):
    """
    Solve at every node, warm-starting from the nearest converged node.

    Lower-half-plane nodes are served by reflection of the upper-half solve.
    """
    opts = opts or SolverOptions()
    nodes = [complex(z) for z in nodes]
    solved = {}
    results = []
    for index, z in enumerate(nodes):
        if z.imag == 0:
            raise ValueError(f"node {index} lies on the real axis (z={z})")
        upper = z if z.imag > 0 else z.conjugate()
        if upper not in solved:
            initial = None
            if solved:
                nearest = min(solved, key=lambda w: abs(w - upper))
                initial = solved[nearest].g1
            try:
                solved[upper] = solve_system(model, upper, opts, initial=initial)
            except ConvergenceError as error:
                raise ConvergenceError(f"node {index}: {error}", error.solution, error.trajectory) from error
        sol = solved[upper]
        results.append(sol if z.imag > 0 else sol.conjugate())
    return results


def deterministic_equivalent(model, sol):
    """
    Build B~(z) = -z sum_r g1^(r) Sigma_r and its Stieltjes transform.

    All four equivalent expressions of m~ are evaluated and kept.
    """
    if not sol.converged:
        raise ValueError("deterministic_equivalent needs a converged solution")
    z, n, N = sol.z, model.n, model.N
    matrix = -z * np.einsum('r,rab->ab', sol.g1, model.sigmas)
    by_resolvent = np.trace(linalg.solve(matrix - z * np.eye(n), np.eye(n))) / n
    by_g1 = stieltjes_transform(model, sol)
    by_bilinear = (-1.0 - (N / n) * z * np.sum(sol.g1 * sol.g2)) / z
    weights = 1.0 / (1.0 + sol.g2 @ model.scalings_sq)
    by_scalings = (-1.0 + N / n - np.sum(weights) / n) / z
    result = DeterministicEquivalent(z=z, matrix=matrix, stieltjes=by_resolvent,
                                     expressions=(by_resolvent, by_g1, by_bilinear, by_scalings))
    if result.discrepancy > 1e-8 * max(1.0, abs(by_resolvent)):
        logger.warning(f"Stieltjes expressions disagree by {result.discrepancy:.2e} at z={z:.4g}")
    return result


def esd_density(model, x_grid, eta, opts=None):
    """
    Density of the deterministic equivalent by Stieltjes inversion, Im m(x + i eta)/pi.

    Grid points are solved left to right, each warm-started from its neighbour.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    opts = opts or SolverOptions()
    density = np.empty(len(x_grid))
    previous = None
    for index, x in enumerate(x_grid):
        sol = solve_system(model, complex(x, eta), opts, initial=previous)
        previous = sol.g1
        density[index] = stieltjes_transform(model, sol).imag / np.pi
    return np.clip(density, 0.0, None)


def esd_cdf(model, x_grid, eta, opts=None, density=None):
    """Cumulative distribution of the smoothed deterministic-equivalent density."""
    if density is None:
        density = esd_density(model, x_grid, eta, opts)
    return integrate.cumulative_trapezoid(density, x_grid, initial=0.0)


def lss_centering(model, f, contour, opts=None, solutions=None):
    """
    n * integral of f against F^{B~} as -(1/2 pi i) * contour integral of f(z) n m(z).

    Args:
        model: VarianceModel
        f: FunctionSpec
        contour: Contour enclosing the support
        opts: SolverOptions
        solutions: Optional precomputed solutions at contour.nodes

    Returns:
        Real centering value
    """
    f.check_contour(contour)
    if solutions is None:
        solutions = solve_along_contour(model, contour.nodes, opts)
    m = np.array([stieltjes_transform(model, sol) for sol in solutions])
    value = -contour.integrate(f(contour.nodes) * model.n * m) / (2j * np.pi)
    if abs(value.imag) > 1e-6 * max(1.0, abs(value.real)):
        raise NumericalQualityError(
            f"centering of {f.label} has imaginary residue {value.imag:.3e}; contour too tight or solver inaccurate")
    return float(value.real)
