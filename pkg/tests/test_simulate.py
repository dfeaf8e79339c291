import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from lss_clt import (
    CltOptions,
    CltSummary,
    FunctionSpec,
    SingularSystemError,
    SpectrumSpec,
    build_model,
    clt_summary,
    full_sib_design,
    lss_values,
    mc_experiment,
    model_from_design,
    nested_moment_draws,
    sample_bn,
    sample_nested,
    trace_t,
    trace_t_squared
)
from lss_clt.simulate import SimDraw, replicate_seeds

X = FunctionSpec.monomial(1)
X2 = FunctionSpec.monomial(2)


def test_replicate_seeds_are_deterministic_and_distinct():
    seeds = replicate_seeds(42, 100)
    assert_array_equal(seeds, replicate_seeds(42, 100))
    assert len(set(seeds.tolist())) == 100
    assert seeds.dtype == np.uint64
    assert not np.array_equal(seeds, replicate_seeds(43, 100))


def test_sample_bn_is_seeded(two_level_model):
    first = sample_bn(two_level_model, 7)
    assert_array_equal(first.eigenvalues, sample_bn(two_level_model, 7).eigenvalues)
    assert not np.array_equal(first.eigenvalues, sample_bn(two_level_model, 8).eigenvalues)
    assert len(first.eigenvalues) == two_level_model.n
    assert np.all(np.diff(first.eigenvalues) <= 0)


def test_sample_bn_wide_matrix_pads_zeros():
    model = build_model(30, 10, [SpectrumSpec.identity()], [np.ones(10)])
    values = sample_bn(model, 1).eigenvalues
    assert len(values) == 30
    assert_allclose(values[10:], 0.0)


def test_zero_covariance_draw(zero_model):
    draw = sample_bn(zero_model, 3)
    assert_allclose(draw.eigenvalues, 0.0)
    assert_allclose(lss_values(draw, [X, X2]), [0.0, 0.0])


def test_lss_values():
    draw = SimDraw(seed=0, eigenvalues=np.array([3.0, 2.0, 0.5]))
    assert_allclose(lss_values(draw, [X, X2, FunctionSpec.monomial(0)]), [5.5, 13.25, 3.0])
    assert draw.trace == 5.5
    bad = SimDraw(seed=1, eigenvalues=np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        lss_values(bad, [FunctionSpec.shifted_log(0.5)])


def test_trace_moments_match_model(two_level_model):
    model = two_level_model
    draws = np.array([lss_values(sample_bn(model, seed), [X, X2]) for seed in range(3000)])
    mean = draws.mean(axis=0)
    sd = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    total = trace_t(model).sum()
    assert abs(mean[0] - total / model.N) < 4 * sd[0]
    dense_total = sum(np.einsum('r,rab->ab', model.scalings_sq[:, j], model.sigmas) for j in range(model.N))
    expected = (np.trace(dense_total @ dense_total) + np.sum(trace_t(model) ** 2)
                + trace_t_squared(model).sum()) / model.N ** 2
    assert abs(mean[1] - expected) < 4 * sd[1]


def test_single_family_single_sibling():
    design = full_sib_design([1])
    spectra = [SpectrumSpec.identity(), SpectrumSpec.scaled_identity(0.0)]
    between, within = sample_nested(design, spectra, 5, seed=11)
    assert_allclose(within.eigenvalues, 0.0)
    assert np.count_nonzero(between.eigenvalues > 1e-12) == 1
    assert between.eigenvalues[0] == pytest.approx(between.trace)


def test_nested_draw_is_seeded(small_design):
    spectra = [SpectrumSpec.exponential_decay(1.0, 0.3, 10), SpectrumSpec.identity()]
    first = sample_nested(small_design, spectra, 10, seed=4)
    second = sample_nested(small_design, spectra, 10, seed=4)
    for a, b in zip(first, second):
        assert_array_equal(a.eigenvalues, b.eigenvalues)


def test_between_family_trace_expectation():
    # S = (1, 2), Sigma_A = Sigma_E = Id: E Tr B_p = (1/F) sum_f (S_f + 1) p
    p = 10
    design = full_sib_design([1, 2])
    spectra = [SpectrumSpec.identity(), SpectrumSpec.identity()]
    seeds, moments = nested_moment_draws(design, spectra, p, 4000, master_seed=5, workers=1)
    assert len(seeds) == 4000
    mean = moments[:, 0].mean()
    se = moments[:, 0].std(ddof=1) / np.sqrt(len(moments))
    assert abs(mean - 2.5 * p) < 4 * se
    mean_d = moments[:, 2].mean()
    se_d = moments[:, 2].std(ddof=1) / np.sqrt(len(moments))
    assert abs(mean_d - p) < 4 * se_d


def test_nested_and_direct_samplers_agree(small_design):
    p = 8
    spectra = [SpectrumSpec.exponential_decay(1.0, 0.3, p), SpectrumSpec.scaled_identity(0.5)]
    model = model_from_design(small_design, spectra, p)
    _, nested = nested_moment_draws(small_design, spectra, p, 3000, master_seed=1, workers=1)
    direct = np.array([lss_values(sample_bn(model, seed), [X, X2]) for seed in range(10000, 13000)])
    for column in range(2):
        se = np.sqrt(nested[:, column].var(ddof=1) / 3000 + direct[:, column].var(ddof=1) / 3000)
        assert abs(nested[:, column].mean() - direct[:, column].mean()) < 4 * se


def test_mc_experiment_without_replicates(two_level_model):
    summary = CltSummary((X,), np.zeros(1), np.eye(1), np.zeros(1), labels=("x",))
    result = mc_experiment(two_level_model, [X], 0, 1, summary)
    assert result.replicates == 0
    assert result.lss.shape == (0, 1)
    assert result.summary["mean"] is None


def test_mc_experiment_is_reproducible(two_level_model):
    summary = CltSummary((X, X2), np.zeros(2), np.eye(2), np.zeros(2), labels=("x", "x^2"))
    first = mc_experiment(two_level_model, [X, X2], 20, 99, summary, workers=3)
    second = mc_experiment(two_level_model, [X, X2], 20, 99, summary, workers=1)
    assert_array_equal(first.lss, second.lss)
    assert_array_equal(first.seeds, second.seeds)
    assert first.summary["rng"] == "PCG64"
    assert len(first.summary["normality"]) == 2


def test_mc_experiment_rejects_singular_lambda(two_level_model):
    summary = CltSummary((X, X2), np.zeros(2), np.zeros((2, 2)), np.zeros(2), labels=("x", "x^2"))
    with pytest.raises(SingularSystemError):
        mc_experiment(two_level_model, [X, X2], 5, 1, summary)


@pytest.mark.slow
def test_trace_variance_matches_lambda():
    model = build_model(50, 50, [SpectrumSpec.exponential_decay(1.0, 0.05)], [np.linspace(0.5, 1.5, 50)])
    summary = clt_summary(model, [X], CltOptions(nodes=64))
    result = mc_experiment(model, [X], 4000, 2024, summary)
    assert np.var(result.lss[:, 0], ddof=1) == pytest.approx(summary.lambda_[0, 0], rel=0.1)


@pytest.mark.slow
def test_standardized_statistics_are_calibrated():
    design = full_sib_design(np.random.default_rng(2024).choice([1, 2], size=200))
    spectra = [SpectrumSpec.exponential_decay(1.0, 0.3, 200), SpectrumSpec.identity()]
    model = model_from_design(design, spectra, 200)
    summary = clt_summary(model, [X, X2], CltOptions(nodes=128))
    result = mc_experiment(model, [X, X2], 500, 7, summary)
    assert np.all(np.abs(result.summary["mean"]) < 0.15)
    assert np.max(np.abs(np.array(result.summary["covariance"]) - np.eye(2))) < 0.2


def edge_dense_grid(upper, points=1500):
    """Uniform grid on [-0.5, upper] refined geometrically next to the hard edge at 0."""
    return np.unique(np.concatenate([np.linspace(-0.5, upper, points), np.geomspace(1e-6, 0.1, 400)]))


def ks_distance(eigenvalues, model, x_grid, eta=1e-3):
    from lss_clt import esd_cdf

    cdf = esd_cdf(model, x_grid, eta)
    empirical = np.searchsorted(np.sort(eigenvalues), x_grid, side="right") / model.n
    return np.max(np.abs(empirical - cdf))


@pytest.mark.slow
def test_empirical_spectrum_matches_deterministic_equivalent():
    model = build_model(1000, 1000, [SpectrumSpec.identity()], [np.ones(1000)])
    eigenvalues = sample_bn(model, 2024).eigenvalues
    assert ks_distance(eigenvalues, model, edge_dense_grid(4.5)) <= 0.05


@pytest.mark.slow
def test_full_sib_spectrum_matches_deterministic_equivalent():
    from lss_clt import random_full_sib_design

    p = 500
    design = random_full_sib_design(500, {"1": 0.5, "2": 0.5}, 2024)
    spectra = [SpectrumSpec.exponential_decay(1.0, 0.3), SpectrumSpec.identity()]
    model = model_from_design(design, spectra, p)
    eigenvalues = sample_bn(model, 7).eigenvalues
    assert ks_distance(eigenvalues, model, edge_dense_grid(eigenvalues.max() + 1.0)) <= 0.07
