import os
import sys

import numpy as np
import pytest

# Add scripts and config to path (the scripts import the package and presets this way)
tests_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.dirname(tests_dir)
sys.path.insert(0, os.path.join(project_root, 'scripts'))
sys.path.insert(0, os.path.join(project_root, 'config'))

from lss_clt import SpectrumSpec, build_model, full_sib_design  # noqa: E402


def mp_stieltjes(z, y):
    """Marchenko-Pastur Stieltjes transform: root of y z m^2 + (z + y - 1) m + 1 = 0 with Im m > 0."""
    roots = np.roots([y * z, z + y - 1.0, 1.0])
    candidates = [r for r in roots if r.imag > 0 and (z * r).imag >= -1e-12]
    return complex(candidates[0])


def mp_stieltjes_derivative(z, y):
    m = mp_stieltjes(z, y)
    return -(y * m ** 2 + m) / (2.0 * y * z * m + z + y - 1.0)


@pytest.fixture
def mp_model():
    """k = 1, L = Id, Sigma = Id, n = N = 200."""
    return build_model(200, 200, [SpectrumSpec.identity()], [np.ones(200)])


@pytest.fixture
def two_level_model():
    """Two diagonal levels with uneven scalings, n = 40, N = 60."""
    rng = np.random.default_rng(7)
    spectra = [SpectrumSpec.exponential_decay(1.0, 0.05), SpectrumSpec.scaled_identity(0.7)]
    scalings = [rng.uniform(0.5, 1.5, 60), np.ones(60)]
    return build_model(40, 60, spectra, scalings)


@pytest.fixture
def dense_model():
    """Two non-commuting dense levels, n = 12, N = 20."""
    rng = np.random.default_rng(3)
    G = rng.standard_normal((12, 24))
    spectra = [SpectrumSpec.exponential_decay(1.0, 0.2), SpectrumSpec.dense_matrix(G @ G.T / 24)]
    scalings = [rng.uniform(0.5, 1.5, 20), np.ones(20)]
    return build_model(12, 20, spectra, scalings)


@pytest.fixture
def zero_model():
    return build_model(10, 20, [SpectrumSpec.scaled_identity(0.0)], [np.ones(20)])


@pytest.fixture
def small_design():
    return full_sib_design([1, 2, 2, 1, 2, 1, 1, 2, 2, 2, 1, 2, 1, 1, 2, 2, 1, 2, 2, 1,
                            2, 1, 2, 2, 1, 1, 2, 1, 2, 2])
