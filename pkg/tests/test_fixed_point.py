import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import mp_stieltjes
from lss_clt import (
    ConfigError,
    Contour,
    FunctionSpec,
    SolverOptions,
    SpectrumSpec,
    build_model,
    deterministic_equivalent,
    esd_cdf,
    esd_density,
    lss_centering,
    solve_along_contour,
    solve_system,
    stieltjes_transform,
    t_matrix,
    trace_t
)
from lss_clt.fixed_point import defect


@pytest.mark.parametrize("z", [complex(x, y) for x in (-0.5, 0.8, 2.0, 3.5, 4.5) for y in (0.05, 0.3, 1.0, 2.0)])
def test_marchenko_pastur_stieltjes(mp_model, z):
    sol = solve_system(mp_model, z)
    assert sol.converged
    assert abs(stieltjes_transform(mp_model, sol) - mp_stieltjes(z, 1.0)) < 1e-8


def test_marchenko_pastur_other_ratio():
    model = build_model(100, 200, [SpectrumSpec.identity()], [np.ones(200)])
    for z in (0.3 + 0.1j, 1.0 + 0.01j, 2.5 + 0.3j):
        assert abs(stieltjes_transform(model, solve_system(model, z)) - mp_stieltjes(z, 0.5)) < 1e-8


def test_solution_satisfies_both_equation_families(two_level_model, dense_model):
    for model in (two_level_model, dense_model):
        sol = solve_system(model, 0.7 + 0.3j)
        assert defect(model, sol.z, sol.g1, sol.g2) < 1e-10
        assert sol.residual < 1e-10
        assert np.all(sol.g1.imag > 0)


def test_real_axis_rejected(mp_model):
    with pytest.raises(ValueError):
        solve_system(mp_model, 1.0 + 0.0j)


def test_stieltjes_expressions_agree(two_level_model, dense_model):
    for model in (two_level_model, dense_model):
        for z in (0.5 + 0.5j, 2.0 + 0.1j):
            result = deterministic_equivalent(model, solve_system(model, z))
            assert result.discrepancy < 1e-8 * max(1.0, abs(result.stieltjes))
            assert result.stieltjes.imag > 0


def test_contour_solutions_reflect_below_axis(two_level_model):
    nodes = [1.0 + 0.5j, 1.0 - 0.5j]
    upper, lower = solve_along_contour(two_level_model, nodes)
    assert_allclose(lower.g1, np.conj(upper.g1))
    assert lower.z == nodes[1]
    with pytest.raises(ValueError):
        solve_along_contour(two_level_model, [1.0 + 0.0j])


def test_warm_start_gives_same_solution(two_level_model):
    cold = solve_system(two_level_model, 1.2 + 0.05j)
    warm = solve_system(two_level_model, 1.2 + 0.05j, initial=solve_system(two_level_model, 1.1 + 0.05j).g1)
    assert_allclose(warm.g1, cold.g1, atol=1e-9)


def test_warm_start_needs_no_more_iterations(two_level_model):
    # Im z >= 1 skips continuation, so the cold count covers the whole solve
    cold = solve_system(two_level_model, 1.2 + 1.0j)
    warm = solve_system(two_level_model, 1.2 + 1.0j, initial=solve_system(two_level_model, 1.1 + 1.0j).g1)
    assert_allclose(warm.g1, cold.g1, atol=1e-10)
    assert warm.iterations <= cold.iterations


def test_density_integrates_to_one():
    model = build_model(100, 200, [SpectrumSpec.identity()], [np.ones(200)])
    x_grid = np.linspace(0.0, 4.0, 800)
    density = esd_density(model, x_grid, 1e-3, SolverOptions())
    cdf = esd_cdf(model, x_grid, 1e-3, density=density)
    assert np.all(density >= 0)
    assert np.all(np.diff(cdf) >= 0)
    assert cdf[-1] == pytest.approx(1.0, abs=0.02)
    # no mass left of the lower edge (1 - sqrt(1/2))^2
    assert cdf[np.searchsorted(x_grid, 0.05)] < 0.01


def test_density_requires_positive_eta(mp_model):
    with pytest.raises(ValueError):
        esd_density(mp_model, [1.0], 0.0)


def test_centering_of_traces(two_level_model):
    model = two_level_model
    contour = Contour.for_model(model, nodes=64)
    solutions = solve_along_contour(model, contour.nodes)
    first = lss_centering(model, FunctionSpec.monomial(1), contour, solutions=solutions)
    second = lss_centering(model, FunctionSpec.monomial(2), contour, solutions=solutions)
    constant = lss_centering(model, FunctionSpec.monomial(0), contour, solutions=solutions)

    total = sum(t_matrix(model, j) for j in range(model.N))
    assert first == pytest.approx(trace_t(model).sum() / model.N, rel=1e-9)
    expected = (np.trace(total @ total) + np.sum(trace_t(model) ** 2)) / model.N ** 2
    assert second == pytest.approx(expected, rel=1e-9)
    assert constant == pytest.approx(model.n, rel=1e-9)


def test_shifted_log_branch_point_outside_contour(two_level_model):
    contour = Contour.for_model(two_level_model, nodes=16)
    with pytest.raises(ConfigError, match="not analytic"):
        lss_centering(two_level_model, FunctionSpec.shifted_log(0.1), contour)
