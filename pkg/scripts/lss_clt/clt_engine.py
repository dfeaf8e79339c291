"""
Deterministic ingredients of the LSS central limit theorem.

build_kernel gives the bias integrand mu(z) from the b~_j weights, the
resolvent R~(z) = (1/N) sum_j b~_j T_j - z Id, the Xi/h tables and the
zeta/nu linear systems. cov_point gives the pre-derivative covariance
scalar S(z1, z2) through the per-sample w~ systems, and sigma2 takes the
mixed derivative of S.

With omega_r = N (E g2^(r) - g2~^(r)) the bias feedback closes as
    omega_r = d_r + sum_t omega_t sum_s h^{st} Xi1^{sr}
    mu      = d_0 + sum_r omega_r sum_s h^{rs} Xi0^s
and nu = (n/N) omega is the reported parametrisation. The covariance scalar
uses the 1/N-normalised Xi tables, so S = (1/N) sum_r sum_j l_rj^2 b1_j b2_j w_jr.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, NumericalQualityError, SingularSystemError
from .fixed_point import SolverOptions, solve_system
from .model import t_matrix

logger = logging.getLogger(__name__)

MODES = ("exact-leave-one-out", "shared-R")
SHARED_R_MIN_N = 200
CONDITION_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class PointState:
    """Per-z quantities shared by the bias and covariance kernels."""
    z: complex
    bj: np.ndarray
    coeff: np.ndarray        # (1/N) sum_j l_{sj}^2 b~_j, equal to -z g1^(s)
    rdiag: np.ndarray = None  # R~ diagonal in the shared eigenbasis
    rinv: np.ndarray = None   # dense R~^{-1} when no shared eigenbasis exists
    rt: tuple = None          # LU factorisation of dense R~


@dataclass(frozen=True, eq=False)
class CltKernel:
    z: complex
    bj: np.ndarray
    rt: object
    xi0: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray
    xi3: np.ndarray
    hN1: np.ndarray
    h3: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray
    zeta3: np.ndarray
    dn: np.ndarray
    nu: np.ndarray
    mu: complex
    residuals: dict


@dataclass(frozen=True, eq=False)
class CovKernelPoint:
    z1: complex
    z2: complex
    mode: str
    xi_j: np.ndarray
    h_j: np.ndarray
    lambda_j: np.ndarray
    w: np.ndarray
    s_raw: complex
    residual: float
    sigma2: complex = None


def default_mode(model):
    return "shared-R" if model.N >= SHARED_R_MIN_N else "exact-leave-one-out"


def point_state(model, sol):
    """b~_j = (1 + sum_r l_rj^2 g2^(r))^{-1} and the matching R~(z)."""
    bj = 1.0 / (1.0 + sol.g2 @ model.scalings_sq)
    coeff = model.scalings_sq @ bj / model.N
    diagonals = model.spectral_diagonals
    if diagonals is not None:
        return PointState(z=sol.z, bj=bj, coeff=coeff, rdiag=coeff @ diagonals - sol.z)
    resolvent = np.einsum('s,sab->ab', coeff, model.sigmas) - sol.z * np.eye(model.n)
    factor = linalg.lu_factor(resolvent)
    return PointState(z=sol.z, bj=bj, coeff=coeff,
                      rinv=linalg.lu_solve(factor, np.eye(model.n)), rt=factor)


def _xi_tables(model, state):
    N = model.N
    diagonals = model.spectral_diagonals
    if diagonals is not None:
        inv = 1.0 / state.rdiag
        xi0 = diagonals @ inv ** 2 / N
        xi1 = np.einsum('ai,bi,i->ab', diagonals, diagonals, inv ** 2) / N
        xi2 = np.einsum('ai,bi,i->ab', diagonals, diagonals, inv ** 3) / N
        xi3 = np.einsum('ai,bi,ci,i->abc', diagonals, diagonals, diagonals, inv ** 3) / N
        return xi0, xi1, xi2, xi3
    rinv = state.rinv
    left = rinv @ model.sigmas
    xi0 = np.einsum('aij,ji->a', left, rinv) / N
    xi1 = np.einsum('aij,bji->ab', left, left) / N
    xi2 = np.einsum('aij,bji->ab', left @ rinv, left) / N
    pairs = np.einsum('aij,bjk->abik', left, left)
    xi3 = np.einsum('abij,cji->abc', pairs, left) / N
    return xi0, xi1, xi2, xi3


def _checked_solve(matrix, rhs, what, z):
    if np.linalg.cond(matrix) > CONDITION_LIMIT:
        raise SingularSystemError(f"{what} system is singular at z={z:.6g}; enlarge Im z or the contour radius")
    return np.linalg.solve(matrix, rhs)


def build_kernel(model, sol, state=None):
    """
    All single-z tables and the bias integrand mu(z).

    Args:
        model: VarianceModel
        sol: Converged FixedPointSolution at z
        state: Optional precomputed PointState

    Returns:
        CltKernel
    """
    if not sol.converged:
        raise ConvergenceError(f"build_kernel needs a converged solution at z={sol.z}")
    state = state or point_state(model, sol)
    n, N, k = model.n, model.N, model.k
    lsq, bj, z = model.scalings_sq, state.bj, sol.z

    xi0, xi1, xi2, xi3 = _xi_tables(model, state)
    hN1 = np.einsum('aj,bj,j->ab', lsq, lsq, bj ** 2) / N
    h3 = np.einsum('aj,bj,cj,j->abc', lsq, lsq, lsq, bj ** 3) / N

    # zeta1 (Id - H Xi1^T) = Xi1
    system = np.eye(k) - hN1 @ xi1.T
    zeta1 = _checked_solve(system.T, xi1.T, "zeta", z).T
    zeta2 = xi2 + zeta1 @ hN1 @ xi2.T
    zeta3 = xi3 + np.einsum('rs,ar,bcs->abc', hN1, zeta1, xi3)

    d0 = np.sum(hN1 * zeta2) - np.einsum('abc,ab,c->', h3, zeta1, xi0)
    dr = np.einsum('ab,abr->r', hN1, zeta3) - np.einsum('abc,ab,cr->r', h3, zeta1, xi1)

    feedback = hN1.T @ xi1
    nu = _checked_solve((np.eye(k) - feedback).T, (n / N) * dr, "nu", z)
    mu = d0 + (N / n) * nu @ (hN1 @ xi0)

    residuals = {
        "zeta1": float(np.max(np.abs(zeta1 - xi1 - zeta1 @ hN1 @ xi1.T))),
        "zeta2": float(np.max(np.abs(zeta2 - xi2 - zeta1 @ hN1 @ xi2.T))),
        "zeta3": float(np.max(np.abs(zeta3 - xi3 - np.einsum('rs,ar,bcs->abc', hN1, zeta1, xi3)))),
        "nu": float(np.max(np.abs(nu - (n / N) * dr - nu @ feedback))),
    }
    return CltKernel(z=z, bj=bj, rt=state.rdiag if state.rdiag is not None else state.rt,
                     xi0=xi0, xi1=xi1, xi2=xi2, xi3=xi3, hN1=hN1, h3=h3,
                     zeta1=zeta1, zeta2=zeta2, zeta3=zeta3,
                     dn=np.concatenate([[d0], dr]), nu=nu, mu=complex(mu), residuals=residuals)


def kernel_diagnostics(model, solutions):
    """Audit rows (z, residuals, mu, d_n0..d_nk, nu_1..nu_k), one per solution."""
    rows = []
    for sol in solutions:
        kernel = build_kernel(model, sol)
        row = {"z_re": sol.z.real, "z_im": sol.z.imag, "fixed_point_residual": sol.residual}
        row.update({f"residual_{name}": value for name, value in kernel.residuals.items()})
        row.update({"mu_re": kernel.mu.real, "mu_im": kernel.mu.imag})
        for r, value in enumerate(kernel.dn):
            row[f"d{r}_re"], row[f"d{r}_im"] = value.real, value.imag
        for r, value in enumerate(kernel.nu, 1):
            row[f"nu{r}_re"], row[f"nu{r}_im"] = value.real, value.imag
        rows.append(row)
    return rows


def _xi_pairs(model, st1, st2, mode):
    """Xi^{ab}_j(z1, z2) = (1/N) Tr[R~_j^{-1}(z2) Sigma_a R~_j^{-1}(z1) Sigma_b], shape (N, k, k)."""
    N, k = model.N, model.k
    diagonals = model.spectral_diagonals
    if diagonals is not None:
        if mode == "shared-R":
            xi = np.einsum('ai,bi,i->ab', diagonals, diagonals, 1.0 / (st1.rdiag * st2.rdiag)) / N
            return np.broadcast_to(xi, (N, k, k))
        sample_t = model.scalings_sq.T @ diagonals
        r1 = st1.rdiag[None, :] - st1.bj[:, None] * sample_t / N
        r2 = st2.rdiag[None, :] - st2.bj[:, None] * sample_t / N
        return np.einsum('ai,bi,ji->jab', diagonals, diagonals, 1.0 / (r1 * r2)) / N

    if mode == "shared-R":
        left1 = st1.rinv @ model.sigmas
        left2 = st2.rinv @ model.sigmas
        xi = np.einsum('aij,bji->ab', left2, left1) / N
        return np.broadcast_to(xi, (N, k, k))
    r1 = np.einsum('s,sab->ab', st1.coeff, model.sigmas) - st1.z * np.eye(model.n)
    r2 = np.einsum('s,sab->ab', st2.coeff, model.sigmas) - st2.z * np.eye(model.n)
    xi = np.empty((N, k, k), dtype=complex)
    for j in range(N):
        tj = t_matrix(model, j) / N
        left1 = np.linalg.solve(r1 - st1.bj[j] * tj, model.sigmas)
        left2 = np.linalg.solve(r2 - st2.bj[j] * tj, model.sigmas)
        xi[j] = np.einsum('aij,bji->ab', left2, left1) / N
    return xi


def _cov_tables(model, st1, st2, mode):
    if mode not in MODES:
        raise ValueError(f"unknown covariance mode '{mode}'; expected one of {MODES}")
    N, k = model.N, model.k
    lsq = model.scalings_sq
    weights = st1.bj * st2.bj

    increments = np.einsum('aj,bj,j->jab', lsq, lsq, weights) / N
    h_j = np.cumsum(increments, axis=0) - increments
    xi_j = _xi_pairs(model, st1, st2, mode)
    lambda_j = np.einsum('jra,jrb->jab', h_j, xi_j)

    # w_j (Id - Lambda_j) = sum_s l_sj^2 Xi_j^{s.}
    rhs = np.einsum('sj,jsr->jr', lsq, xi_j)
    system = np.swapaxes(np.eye(k) - lambda_j, 1, 2)
    try:
        w = np.linalg.solve(system, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as error:
        raise SingularSystemError(f"w system is singular at z1={st1.z:.6g}, z2={st2.z:.6g}") from error
    if not np.all(np.isfinite(w)):
        raise SingularSystemError(f"w system is singular at z1={st1.z:.6g}, z2={st2.z:.6g}")
    residual = float(np.max(np.abs(w - rhs - np.einsum('js,jsr->jr', w, lambda_j)))) if N else 0.0
    s_raw = np.einsum('rj,j,jr->', lsq, weights, w) / N
    return xi_j, h_j, lambda_j, w, complex(s_raw), residual


def cov_point(model, sol1, sol2, mode=None):
    """
    Covariance tables and S(z1, z2) at one pair of points.

    Args:
        model: VarianceModel
        sol1: Converged solution at z1
        sol2: Converged solution at z2
        mode: "exact-leave-one-out" or "shared-R" (default by N)

    Returns:
        CovKernelPoint
    """
    mode = mode or default_mode(model)
    st1, st2 = point_state(model, sol1), point_state(model, sol2)
    xi_j, h_j, lambda_j, w, s_raw, residual = _cov_tables(model, st1, st2, mode)
    return CovKernelPoint(z1=sol1.z, z2=sol2.z, mode=mode, xi_j=np.array(xi_j), h_j=h_j,
                          lambda_j=lambda_j, w=w, s_raw=s_raw, residual=residual)


def s_raw(model, st1, st2, mode):
    """S(z1, z2) from two point states."""
    return _cov_tables(model, st1, st2, mode)[4]


def solve_anywhere(model, z, opts=None, initial=None):
    """Fixed point at z off the real axis, reflecting lower-half points."""
    z = complex(z)
    if z.imag > 0:
        return solve_system(model, z, opts, initial=initial)
    start = None if initial is None else np.conj(initial)
    return solve_system(model, z.conjugate(), opts, initial=start).conjugate()


class StateCache:
    """Point states keyed by z, solved on demand with warm starts."""

    def __init__(self, model, opts=None):
        self.model = model
        self.opts = opts or SolverOptions()
        self._states = {}
        self._solutions = {}

    def add(self, sol):
        self._solutions[sol.z] = sol

    def solution(self, z, near=None):
        z = complex(z)
        if z not in self._solutions:
            initial = None
            if near is not None and complex(near) in self._solutions:
                initial = self._solutions[complex(near)].g1
            self._solutions[z] = solve_anywhere(self.model, z, self.opts, initial=initial)
        return self._solutions[z]

    def state(self, z, near=None):
        z = complex(z)
        if z not in self._states:
            self._states[z] = point_state(self.model, self.solution(z, near))
        return self._states[z]


def fd_step_for(z):
    return 1e-3 * (1.0 + abs(z))


def _mixed_difference(model, cache, z1, z2, h1, h2, mode):
    total = 0.0
    for e1, e2, sign in ((1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)):
        st1 = cache.state(z1 + e1 * h1, near=z1)
        st2 = cache.state(z2 + e2 * h2, near=z2)
        total += sign * s_raw(model, st1, st2, mode)
    return total / (4.0 * h1 * h2)


def sigma2(model, z1, z2, fd_step=None, mode=None, opts=None, cache=None):
    """
    sigma^2(z1, z2) = d^2 S / dz2 dz1 by central differences.

    Two step sizes (h and 2h) are combined by Richardson extrapolation.

    Args:
        model: VarianceModel
        z1, z2: Points off the real axis
        fd_step: Step h (default 1e-3 (1 + |z|) per coordinate)
        mode: Covariance mode
        opts: SolverOptions for stencil solves
        cache: Optional StateCache shared across calls

    Returns:
        Complex sigma^2
    """
    mode = mode or default_mode(model)
    cache = cache or StateCache(model, opts)
    z1, z2 = complex(z1), complex(z2)
    h1 = fd_step or fd_step_for(z1)
    h2 = fd_step or fd_step_for(z2)
    cache.solution(z1)
    cache.solution(z2)
    fine = _mixed_difference(model, cache, z1, z2, h1, h2, mode)
    coarse = _mixed_difference(model, cache, z1, z2, 2 * h1, 2 * h2, mode)
    return complex((4.0 * fine - coarse) / 3.0)


def sigma2_cauchy(model, z1, z2, points=32, radius=None, mode=None, opts=None, cache=None):
    """
    Cross-check of sigma2 by nested Cauchy-integral differentiation on two small circles.

    d^2 S/dz1 dz2 = (1 / (2 pi i))^2 contour-contour S(w1, w2) / ((w1 - z1)^2 (w2 - z2)^2)
    """
    mode = mode or default_mode(model)
    cache = cache or StateCache(model, opts)
    z1, z2 = complex(z1), complex(z2)
    rho1 = radius or 0.25 * abs(z1.imag)
    rho2 = radius or 0.25 * abs(z2.imag)
    phases = np.exp(2j * np.pi * np.arange(points) / points)
    cache.solution(z1)
    cache.solution(z2)
    states1 = [cache.state(z1 + rho1 * u, near=z1) for u in phases]
    states2 = [cache.state(z2 + rho2 * u, near=z2) for u in phases]
    grid = np.array([[s_raw(model, a, b, mode) for b in states2] for a in states1])
    weights = np.conj(phases)
    return complex(weights @ grid @ weights / (points ** 2 * rho1 * rho2))


def cross_check_sigma2(model, z1, z2, mode=None, opts=None, rtol=1e-4):
    """Finite-difference sigma2 after agreement with the Cauchy derivative."""
    cache = StateCache(model, opts)
    by_difference = sigma2(model, z1, z2, mode=mode, cache=cache)
    by_cauchy = sigma2_cauchy(model, z1, z2, mode=mode, cache=cache)
    gap = abs(by_difference - by_cauchy) / max(abs(by_cauchy), 1e-300)
    if gap > rtol:
        raise NumericalQualityError(
            f"sigma2 derivative methods disagree by {gap:.2e} relative at ({z1}, {z2})")
    return by_difference
