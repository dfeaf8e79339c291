"""
Variance-component models, nested random-effects designs and spectral bounds.

A VarianceModel holds the k population covariances Sigma_r (n x n) and the k
diagonal scaling profiles l_{.r} (length N). Every other module reads the
model and nothing else, so all structural checks happen here.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError

logger = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-12
PSD_ATOL = 1e-10
COMMUTE_RTOL = 1e-10
DEFAULT_ASPECT_MARGIN = 0.2

SPECTRUM_KINDS = ("dense-matrix", "eigenvalue-list", "exponential-decay", "scaled-identity")


def _freeze(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SpectrumSpec:
    """
    Description of one population covariance.

    Kinds:
        dense-matrix: explicit symmetric matrix
        eigenvalue-list: diagonal matrix with the given eigenvalues
        exponential-decay: sigma_i = tau1 * exp(-tau2 * i / index_scale), i = 1..p
        scaled-identity: tau_e * Id
    """
    kind: str
    matrix: np.ndarray = None
    eigenvalues: np.ndarray = None
    tau1: float = None
    tau2: float = None
    tau_e: float = None
    index_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in SPECTRUM_KINDS:
            raise ConfigError(f"Unknown spectrum kind '{self.kind}'; expected one of {SPECTRUM_KINDS}")
        if self.kind == "eigenvalue-list":
            values = np.asarray(self.eigenvalues, dtype=float)
            if values.ndim != 1 or values.size == 0:
                raise ConfigError("eigenvalue-list needs a non-empty 1-d list")
            if not np.all(np.isfinite(values)) or np.any(values < 0):
                raise ConfigError("eigenvalue-list entries must be finite and nonnegative")
        if self.kind == "exponential-decay":
            if self.tau1 is None or self.tau2 is None or self.tau1 < 0:
                raise ConfigError("exponential-decay needs tau1 >= 0 and tau2")
            if self.index_scale <= 0:
                raise ConfigError("exponential-decay index_scale must be positive")
        if self.kind == "scaled-identity" and (self.tau_e is None or self.tau_e < 0):
            raise ConfigError("scaled-identity needs tau_e >= 0")
        if self.kind == "dense-matrix" and np.asarray(self.matrix).ndim != 2:
            raise ConfigError("dense-matrix needs a 2-d matrix")

    @classmethod
    def dense_matrix(cls, matrix):
        return cls("dense-matrix", matrix=np.asarray(matrix, dtype=float))

    @classmethod
    def eigenvalue_list(cls, values):
        return cls("eigenvalue-list", eigenvalues=np.asarray(values, dtype=float))

    @classmethod
    def exponential_decay(cls, tau1, tau2, index_scale=1.0):
        return cls("exponential-decay", tau1=float(tau1), tau2=float(tau2), index_scale=float(index_scale))

    @classmethod
    def scaled_identity(cls, tau_e=1.0):
        return cls("scaled-identity", tau_e=float(tau_e))

    @classmethod
    def identity(cls):
        return cls.scaled_identity(1.0)

    @property
    def dim(self):
        """Dimension fixed by the spec itself, or None when it adapts to p."""
        if self.kind == "dense-matrix":
            return np.asarray(self.matrix).shape[0]
        if self.kind == "eigenvalue-list":
            return len(self.eigenvalues)
        return None

    @property
    def is_diagonal(self):
        return self.kind != "dense-matrix"

    def eigenvalue_vector(self, p):
        """Diagonal of the expanded matrix for the diagonal kinds."""
        if self.kind == "eigenvalue-list":
            values = np.asarray(self.eigenvalues, dtype=float)
            if len(values) != p:
                raise ConfigError(f"dimension mismatch: eigenvalue-list has {len(values)} entries, expected {p}")
            return values.copy()
        if self.kind == "exponential-decay":
            index = np.arange(1, p + 1, dtype=float)
            return self.tau1 * np.exp(-self.tau2 * index / self.index_scale)
        if self.kind == "scaled-identity":
            return np.full(p, self.tau_e, dtype=float)
        raise ConfigError("dense-matrix spectra have no diagonal representation")

    def expand(self, p):
        """Return the p x p covariance matrix."""
        if self.kind == "dense-matrix":
            matrix = np.asarray(self.matrix, dtype=float)
            if matrix.shape != (p, p):
                raise ConfigError(f"dimension mismatch: matrix is {matrix.shape}, expected ({p}, {p})")
            return matrix.copy()
        return np.diag(self.eigenvalue_vector(p))

    def to_dict(self):
        if self.kind == "dense-matrix":
            return {"kind": self.kind, "matrix": np.asarray(self.matrix).tolist()}
        if self.kind == "eigenvalue-list":
            return {"kind": self.kind, "eigenvalues": np.asarray(self.eigenvalues).tolist()}
        if self.kind == "exponential-decay":
            return {"kind": self.kind, "tau1": self.tau1, "tau2": self.tau2, "index_scale": self.index_scale}
        return {"kind": self.kind, "tau_e": self.tau_e}

    @classmethod
    def from_dict(cls, spec):
        """Build from a config entry; "identity" is accepted as shorthand."""
        if isinstance(spec, str):
            spec = {"kind": spec}
        kind = spec.get("kind")
        if kind == "identity":
            return cls.identity()
        if kind == "dense-matrix":
            return cls.dense_matrix(spec["matrix"])
        if kind == "eigenvalue-list":
            return cls.eigenvalue_list(spec["eigenvalues"])
        if kind == "exponential-decay":
            return cls.exponential_decay(spec["tau1"], spec["tau2"], spec.get("index_scale", 1.0))
        if kind == "scaled-identity":
            return cls.scaled_identity(spec.get("tau_e", 1.0))
        raise ConfigError(f"Unknown spectrum kind '{kind}'")


@dataclass(frozen=True, eq=False)
class VarianceModel:
    """
    B_n = (1/N) sum_j T_j^{1/2} x_j x_j^T T_j^{1/2} with T_j = sum_r l_{jr}^2 Sigma_r.

    Attributes:
        n: Trait dimension
        N: Sample dimension
        sigmas: Array (k, n, n) of population covariances
        scalings: Array (k, N) of scaling diagonals l_{.r}
        aspect_lower: Bound c with c < n/N
        aspect_upper: Bound C with n/N < C
        s_L: Recorded bound on |l_{jr}|
        s_sigma: Recorded bound on ||Sigma_r^{1/2}||_2
    """
    n: int
    N: int
    sigmas: np.ndarray
    scalings: np.ndarray
    aspect_lower: float
    aspect_upper: float
    s_L: float
    s_sigma: float

    @property
    def k(self):
        return self.sigmas.shape[0]

    @property
    def aspect(self):
        return self.n / self.N

    @cached_property
    def scalings_sq(self):
        return _freeze(self.scalings ** 2)

    @cached_property
    def spectral_diagonals(self):
        """
        Diagonals (k, n) of the Sigma_r in a shared eigenbasis, or None.

        Diagonal inputs are used as they are. Commuting dense inputs are
        diagonalised through one eigendecomposition of a generic combination.
        Non-commuting inputs return None and callers use dense algebra.
        """
        offdiag = self.sigmas - np.einsum('rii->ri', self.sigmas)[:, :, None] * np.eye(self.n)
        if not np.any(offdiag):
            return _freeze(np.einsum('rii->ri', self.sigmas))

        scale = max(1.0, float(np.max(np.abs(self.sigmas))))
        for a in range(self.k):
            for b in range(a + 1, self.k):
                commutator = self.sigmas[a] @ self.sigmas[b] - self.sigmas[b] @ self.sigmas[a]
                if np.max(np.abs(commutator)) > COMMUTE_RTOL * scale ** 2:
                    return None

        weights = 1.0 + np.sqrt(np.arange(2, self.k + 2, dtype=float))
        _, basis = np.linalg.eigh(np.einsum('r,rab->ab', weights, self.sigmas))
        rotated = basis.T @ self.sigmas @ basis
        diagonals = np.einsum('rii->ri', rotated)
        residue = rotated - diagonals[:, :, None] * np.eye(self.n)
        if np.max(np.abs(residue)) > 1e-9 * scale:
            # degenerate combination eigenvalues mixed the basis
            return None
        return _freeze(diagonals)

    @cached_property
    def sigma_roots(self):
        """Symmetric square roots Sigma_r^{1/2}, shape (k, n, n)."""
        roots = np.empty_like(self.sigmas)
        for r in range(self.k):
            values, vectors = np.linalg.eigh(self.sigmas[r])
            roots[r] = (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T
        return _freeze(roots)


def _validate_sigma(matrix, n, index):
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (n, n):
        raise ConfigError(f"dimension mismatch: Sigma_{index + 1} is {matrix.shape}, expected ({n}, {n})")
    if not np.all(np.isfinite(matrix)):
        raise ConfigError(f"Sigma_{index + 1} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(matrix))))
    if np.max(np.abs(matrix - matrix.T)) > SYMMETRY_RTOL * scale:
        raise ConfigError(f"Sigma_{index + 1} is asymmetric")
    matrix = 0.5 * (matrix + matrix.T)
    smallest = np.linalg.eigvalsh(matrix)[0] if n > 0 else 0.0
    if smallest < -PSD_ATOL:
        raise ConfigError(f"Sigma_{index + 1} is indefinite (smallest eigenvalue {smallest:.3e})")
    return matrix


def _random_rotation(n, seed):
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def build_model(n, N, spectra, scalings, aspect_lower=None, aspect_upper=None, rotate_seed=None):
    """
    Build and validate a VarianceModel.

    Args:
        n: Trait dimension
        N: Sample dimension
        spectra: List of SpectrumSpec (or raw n x n matrices), one per level
        scalings: List of k length-N scaling diagonals
        aspect_lower: Lower aspect bound c (default: half the observed n/N)
        aspect_upper: Upper aspect bound C (default: n/N + 0.2)
        rotate_seed: If given, conjugate every Sigma_r by one shared random rotation

    Returns:
        VarianceModel

    Examples:
        >>> m = build_model(2, 2, [SpectrumSpec.identity()], [[1.0, 1.0]])
        >>> m.k
        1
    """
    if int(n) <= 0 or int(N) <= 0:
        raise ConfigError(f"dimension mismatch: n={n} and N={N} must be positive")
    n, N = int(n), int(N)
    if len(spectra) == 0:
        raise ConfigError("empty spectra list")
    if len(spectra) != len(scalings):
        raise ConfigError(f"dimension mismatch: {len(spectra)} spectra but {len(scalings)} scaling profiles")

    sigmas = []
    for index, spec in enumerate(spectra):
        matrix = spec.expand(n) if isinstance(spec, SpectrumSpec) else spec
        sigmas.append(_validate_sigma(matrix, n, index))
    sigmas = np.stack(sigmas)

    if rotate_seed is not None:
        rotation = _random_rotation(n, rotate_seed)
        sigmas = rotation @ sigmas @ rotation.T
        sigmas = 0.5 * (sigmas + np.transpose(sigmas, (0, 2, 1)))

    profile = np.asarray([np.asarray(l, dtype=float) for l in scalings])
    if profile.ndim != 2 or profile.shape[1] != N:
        raise ConfigError(f"dimension mismatch: each scaling diagonal must have length N={N}")
    if not np.all(np.isfinite(profile)):
        raise ConfigError("scaling diagonals must be finite")

    aspect = n / N
    aspect_upper = aspect + DEFAULT_ASPECT_MARGIN if aspect_upper is None else float(aspect_upper)
    aspect_lower = 0.5 * aspect if aspect_lower is None else float(aspect_lower)
    if not 0 < aspect_lower < aspect < aspect_upper:
        raise ConfigError(
            f"aspect ratio n/N={aspect:.4g} outside the configured bounds ({aspect_lower}, {aspect_upper})")

    s_L = float(np.max(np.abs(profile))) if profile.size else 0.0
    top = max(float(np.linalg.eigvalsh(s)[-1]) for s in sigmas)
    s_sigma = float(np.sqrt(max(top, 0.0)))

    return VarianceModel(
        n=n, N=N,
        sigmas=_freeze(sigmas),
        scalings=_freeze(profile),
        aspect_lower=aspect_lower,
        aspect_upper=aspect_upper,
        s_L=s_L,
        s_sigma=s_sigma,
    )


@dataclass(frozen=True, eq=False)
class NestedDesign:
    """
    Nested partition of n_s samples into groups, coarsest level first.

    memberships[r][i] is the level-r group of sample i. Level r+1 refines
    level r, so col(U_1) is contained in ... col(U_k).
    """
    memberships: tuple

    def __post_init__(self):
        if len(self.memberships) == 0:
            raise ConfigError("a design needs at least one level")
        labels = tuple(np.asarray(m, dtype=int) for m in self.memberships)
        object.__setattr__(self, "memberships", labels)
        n_s = len(labels[0])
        for level, lab in enumerate(labels):
            if lab.ndim != 1 or len(lab) != n_s:
                raise ConfigError(f"dimension mismatch: level {level + 1} labels {len(lab)} samples, expected {n_s}")
            if lab.min() < 0 or np.any(np.bincount(lab) == 0):
                raise ConfigError(f"level {level + 1} group labels must be 0..F-1 with no empty group")
        counts = [int(lab.max()) + 1 for lab in labels]
        if any(a > b for a, b in zip(counts, counts[1:])) or counts[-1] > n_s:
            raise ConfigError(f"group counts {counts} must be nondecreasing and at most n_s={n_s}")
        for level in range(1, len(labels)):
            pairs = np.unique(np.stack([labels[level], labels[level - 1]]), axis=1)
            if pairs.shape[1] != counts[level]:
                raise ConfigError(f"design is not nested: level {level + 1} does not refine level {level}")

    @property
    def levels(self):
        return len(self.memberships)

    @property
    def n_s(self):
        return len(self.memberships[0])

    @property
    def group_counts(self):
        return tuple(int(m.max()) + 1 for m in self.memberships)

    def group_sizes(self, level):
        return np.bincount(self.memberships[level])

    @property
    def family_sizes(self):
        return self.group_sizes(0)

    def membership_matrix(self, level):
        """Dense 0/1 matrix U_r of shape (n_s, F_r)."""
        matrix = np.zeros((self.n_s, self.group_counts[level]))
        matrix[np.arange(self.n_s), self.memberships[level]] = 1.0
        return matrix

    @classmethod
    def from_group_sizes(cls, sizes_per_level):
        """Contiguous layout: group g of each level holds consecutive samples."""
        labels = [np.repeat(np.arange(len(sizes)), np.asarray(sizes, dtype=int)) for sizes in sizes_per_level]
        totals = {len(lab) for lab in labels}
        if len(totals) != 1:
            raise ConfigError(f"dimension mismatch: levels cover different sample counts {sorted(totals)}")
        return cls(tuple(labels))

    def to_dict(self):
        return {"kind": "group-sizes",
                "group_sizes": [self.group_sizes(r).tolist() for r in range(self.levels)]}


def full_sib_design(family_sizes):
    """Two-level design: families, then individuals."""
    family_sizes = np.asarray(family_sizes, dtype=int)
    return NestedDesign.from_group_sizes([family_sizes, np.ones(family_sizes.sum(), dtype=int)])


def random_full_sib_design(F, sibling_probs, seed):
    """
    Draw F family sizes once from a dedicated design seed.

    Args:
        F: Number of families
        sibling_probs: Mapping sibling count -> probability
        seed: Design seed (recorded by the caller)
    """
    sizes = np.array(sorted(int(s) for s in sibling_probs))
    probs = np.array([float(sibling_probs[s]) for s in sorted(sibling_probs, key=int)])
    if np.any(sizes < 1) or not np.isclose(probs.sum(), 1.0):
        raise ConfigError("sibling_probs must map positive sizes to probabilities summing to 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    return full_sib_design(rng.choice(sizes, size=int(F), p=probs))


def scalings_from_design(design):
    """
    Scaling diagonals L_r = (U_1^T U_1)^{-1/2} (U_1^T U_r U_r^T U_1)^{1/2}.

    Every level-r group sits inside one family, so U_1^T U_r U_r^T U_1 is
    diagonal with entries sum_{G in f} |G|^2.

    Returns:
        List of k arrays of length F_1
    """
    family = design.memberships[0]
    family_sizes = design.family_sizes
    diagonals = []
    for level in range(design.levels):
        labels = design.memberships[level]
        sizes = np.bincount(labels)
        parent = np.empty(len(sizes), dtype=int)
        parent[labels] = family
        squared = np.bincount(parent, weights=sizes.astype(float) ** 2, minlength=len(family_sizes))
        diagonals.append(np.sqrt(squared / family_sizes))
    return diagonals


def model_from_design(design, spectra, p, **bounds):
    """Between-family model of B_p: n = p, N = F_1, scalings from the design."""
    if len(spectra) != design.levels:
        raise ConfigError(f"dimension mismatch: {len(spectra)} spectra for a {design.levels}-level design")
    return build_model(p, design.group_counts[0], spectra, scalings_from_design(design), **bounds)


def support_bound(model):
    """Interval [0, k^2 (1 + sqrt(C))^2 s_L^2 s_sigma^2] holding the spectrum eventually."""
    upper = model.k ** 2 * (1.0 + np.sqrt(model.aspect_upper)) ** 2 * model.s_L ** 2 * model.s_sigma ** 2
    return 0.0, float(upper)


def t_matrix(model, j):
    """T_j = sum_r l_{jr}^2 Sigma_r for a 0-based sample index j."""
    if not 0 <= j < model.N:
        raise IndexError(f"sample index {j} out of range for N={model.N}")
    return np.einsum('r,rab->ab', model.scalings_sq[:, j], model.sigmas)


def trace_t(model):
    """Vector of Tr T_j over all j."""
    return model.scalings_sq.T @ np.einsum('rii->r', model.sigmas)


def trace_t_squared(model):
    """Vector of Tr T_j^2 over all j."""
    gram = np.einsum('aij,bji->ab', model.sigmas, model.sigmas)
    return np.einsum('aj,ab,bj->j', model.scalings_sq, gram, model.scalings_sq)
