import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steinpairs.errors import NoConvergence
from steinpairs.linalg import PsdMatrix
from steinpairs.pairs import mc_condition_moments
from steinpairs.torus import (
    EigenSystem,
    FrequencySet,
    RandomEigenfunction,
    TorusConfig,
    averaged_gram_second_moment,
    cauchy_schwarz_bound,
    coefficient_average,
    direction_design,
    eigenfunction_bound_quadrature,
    eigenfunction_theorem_bound,
    euclidean_gradients,
    eval_W,
    geodesic_pair,
    gradient_gram,
    gradient_inner,
    infinitesimal_moments,
    orthogonal_case_values,
    parse_sets,
    richardson_limit,
    torus_average,
    torus_grid,
    torus_pair_model,
    torus_theorem_bound,
    validate_frequency_sets,
)

I2 = TorusConfig.identity(2)
SKEW = TorusConfig(2, PsdMatrix([[2.0, 1.0], [1.0, 2.0]]))
# for B = [[2,1],[1,2]] each v is B^-1 m with m integral; <v, Bv> is 2/3 on the first set and 2 on the second
SKEW_SETS = [[[1 / 3, 1 / 3], [2 / 3, -1 / 3]], [[1.0, -1.0]]]
RICH_SETS = [[[1, 2], [2, 1], [1, -2], [2, -1]], [[3, 4], [4, 3], [5, 0], [0, 5], [3, -4], [4, -3]]]


def system(config, raw, seed=0):
    return EigenSystem.draw(config, parse_sets(config, raw), np.random.default_rng(seed))


def test_skew_sets_are_admissible():
    assert validate_frequency_sets(SKEW, parse_sets(SKEW, SKEW_SETS)) == []


@pytest.mark.parametrize("config,raw", [(I2, RICH_SETS), (SKEW, SKEW_SETS)])
def test_values_are_orthonormal_on_the_torus(config, raw):
    s = system(config, raw)
    second = torus_average(s, lambda p: np.einsum("mi,mj->mij", eval_W(s, p), eval_W(s, p)))
    np.testing.assert_allclose(second, np.eye(s.k), atol=1e-12)
    np.testing.assert_allclose(torus_average(s, lambda p: eval_W(s, p)), 0.0, atol=1e-12)


@pytest.mark.parametrize("config,raw", [(I2, RICH_SETS), (SKEW, SKEW_SETS)])
def test_functions_are_laplace_eigenfunctions(config, raw):
    s = system(config, raw)
    x = np.random.default_rng(1).random((6, 2))
    h = 1e-4
    binv = np.linalg.inv(config.matrix)
    lap = np.zeros((6, s.k))
    for i in range(2):
        for j in range(2):
            ei, ej = np.eye(2)[i] * h, np.eye(2)[j] * h
            hess_ij = (eval_W(s, x + ei + ej) - eval_W(s, x + ei - ej) - eval_W(s, x - ei + ej) + eval_W(s, x - ei - ej)) / (
                4 * h * h
            )
            lap += binv[i, j] * hess_ij
    np.testing.assert_allclose(lap, -s.mus * eval_W(s, x), rtol=1e-5, atol=1e-4)


@pytest.mark.parametrize("config,raw", [(I2, RICH_SETS), (SKEW, SKEW_SETS)])
def test_gradient_gram_matches_closed_form_and_finite_differences(config, raw):
    s = system(config, raw, seed=2)
    x = np.random.default_rng(3).random((8, 2))
    gram = gradient_gram(s, x)
    for r in range(s.k):
        for q in range(s.k):
            np.testing.assert_allclose(gram[:, r, q], gradient_inner(s, x, r, q), rtol=1e-10, atol=1e-8)
    h = 1e-6
    fd = np.stack([(eval_W(s, x + h * e) - eval_W(s, x - h * e)) / (2 * h) for e in np.eye(2)], axis=-1)
    np.testing.assert_allclose(euclidean_gradients(s, x), fd, rtol=1e-6, atol=1e-5)
    # averaged Gram matrix is diag(mu)
    avg = torus_average(s, lambda p: gradient_gram(s, p))
    np.testing.assert_allclose(avg, np.diag(s.mus), rtol=1e-10, atol=1e-8)


def test_validation_reports_each_violation():
    bad = parse_sets(I2, [[[0.5, 0.0]], [[1, 0], [1, 1]], [[-1, 0]], [[0, 0]]])
    problems = " | ".join(validate_frequency_sets(I2, bad))
    assert "not integral" in problems
    assert "differs from the set eigenvalue" in problems
    assert "cancellation" in problems
    assert "zero frequency" in problems
    shared = parse_sets(I2, [[[1, 0]], [[1, 0]]])
    assert any("shared between" in p for p in validate_frequency_sets(I2, shared))
    with pytest.raises(ValueError):
        system(I2, [[[1, 0]], [[-1, 0]]])


def test_coefficients_live_on_the_sphere():
    fs = FrequencySet.from_vectors(I2, [[1, 0], [0, 1]])
    with pytest.raises(ValueError):
        RandomEigenfunction(fs, np.array([1.0, 0.0]))
    f = RandomEigenfunction.draw(fs, np.random.default_rng(0))
    assert float(f.coefficients @ f.coefficients) == pytest.approx(2.0)


@given(st.floats(1e-3, 0.1), st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_geodesic_step_has_metric_length_epsilon(eps, seed):
    s = system(SKEW, SKEW_SETS)
    x = np.random.default_rng(seed).random((20, 2)) * 0.5 + 0.25
    y = geodesic_pair(s, x, eps, seed)
    step = y - x
    step -= np.round(step)
    lengths = np.sqrt(np.einsum("mi,ij,mj->m", step, SKEW.matrix, step))
    np.testing.assert_allclose(lengths, eps, rtol=1e-9)


@pytest.mark.parametrize("config", [TorusConfig.identity(1), SKEW, TorusConfig.identity(3)])
def test_direction_designs_are_symmetric_and_isotropic(config):
    design = direction_design(config, np.random.default_rng(0), 5)
    np.testing.assert_allclose(design.mean(axis=1), 0.0, atol=1e-14)
    second = np.einsum("mki,mkj->mij", design, design) / design.shape[1]
    # uniform directions on the B-sphere have second moment B^-1 / n
    np.testing.assert_allclose(second, np.broadcast_to(np.linalg.inv(config.matrix) / config.n, second.shape), atol=1e-14)


def test_richardson_removes_low_order_terms():
    eps = [0.04, 0.02, 0.01]
    values = [np.array([3.0 + 2.0 * e - 5.0 * e * e]) for e in eps]
    assert richardson_limit(eps, values)[0] == pytest.approx(3.0, abs=1e-12)


def test_infinitesimal_limits_recover_lambda_and_gram():
    s = system(SKEW, SKEW_SETS, seed=4)
    res = infinitesimal_moments(s, [0.04, 0.02, 0.01], 4000, seed=0)
    assert res.drift_residual < 1e-3
    assert res.gram_residual < 1e-3 * np.max(s.mus) ** 2 / s.n
    assert res.moments.e_abs_mean < 1e-3
    assert res.table[-1]["epsilon"] == 0.0
    np.testing.assert_allclose(res.moments.lambda_matrix, np.diag(s.mus) / 4.0)


def test_infinitesimal_input_validation():
    s = system(I2, [[[1, 0]]])
    with pytest.raises(ValueError):
        infinitesimal_moments(s, [0.02, 0.01], 100, seed=0)
    with pytest.raises(ValueError):
        infinitesimal_moments(s, [0.01, 0.02, 0.04], 100, seed=0)
    with pytest.raises(ValueError):
        infinitesimal_moments(s, [0.5, 0.2, 0.1], 100, seed=0)


def test_non_contracting_sequence_raises():
    s = system(I2, RICH_SETS)
    with pytest.raises(NoConvergence):
        infinitesimal_moments(s, [0.1, 0.0999, 0.0998], 500, seed=0)


def test_fixed_epsilon_pair_model_matches_limit():
    s = system(I2, [[[1, 0]], [[0, 1]]])
    m = mc_condition_moments(torus_pair_model(s, 0.005), 4000, 2, seed=0)
    ref = infinitesimal_moments(s, [0.04, 0.02, 0.01], 4000, seed=0).moments
    assert m.eprime_hs_mean == pytest.approx(ref.eprime_hs_mean, rel=0.05)
    assert m.e_abs_mean < 1e-2 * math.pi**2


def test_two_singleton_closed_forms():
    sets = parse_sets(I2, [[[1, 0]], [[0, 1]]])
    assert torus_theorem_bound(I2, sets) == pytest.approx(2.0, abs=1e-14)
    values = orthogonal_case_values(I2, sets)
    # mu = 4 pi^2 for both: substituted (4pi^2/mu) sqrt(2 mu^2/(8 pi^4)) = 2, simplified 4 pi^3
    assert values["substituted"] == pytest.approx(2.0, rel=1e-14)
    assert values["simplified"] == pytest.approx(4 * math.pi**3, rel=1e-14)


def test_singleton_eigenfunction_bound_is_two_over_pi():
    s = system(I2, [[[1, 0]]])
    # ||grad f||^2 / mu - 1 = cos(2 phase) up to sign, whose mean absolute value is 2/pi
    # |cos| has kinks, so the trapezoid rule converges only at O(N^-2)
    assert eigenfunction_bound_quadrature(s, 512) == pytest.approx(2 / math.pi, rel=1e-4)
    value, se = eigenfunction_theorem_bound(s, 50_000, seed=1)
    assert abs(value - 2 / math.pi) < 4 * se


def test_monte_carlo_and_quadrature_eigenfunction_bounds_agree():
    s = system(I2, RICH_SETS, seed=5)
    value, se = eigenfunction_theorem_bound(s, 40_000, seed=0, workers=2)
    assert value == pytest.approx(eigenfunction_bound_quadrature(s, 128), abs=5 * se)


def test_averaged_gram_second_moment_against_monte_carlo():
    sets = parse_sets(I2, RICH_SETS)
    rng = np.random.default_rng(0)
    draws = []
    for _ in range(600):
        s = EigenSystem.draw(I2, sets, rng)
        x = torus_grid(s, 41)
        g = gradient_gram(s, x) - np.diag(s.mus)
        draws.append(np.mean(np.sum(g * g, axis=(-2, -1))))
    draws = np.array(draws)
    se = draws.std(ddof=1) / math.sqrt(len(draws))
    assert averaged_gram_second_moment(I2, sets) == pytest.approx(draws.mean(), abs=4 * se)


def test_averaged_gram_second_moment_singletons_is_deterministic():
    sets = parse_sets(I2, [[[1, 0]], [[0, 1]]])
    s = EigenSystem.draw(I2, sets, np.random.default_rng(0))
    g = torus_average(s, lambda p: np.sum((gradient_gram(s, p) - np.diag(s.mus)) ** 2, axis=(-2, -1)))
    assert averaged_gram_second_moment(I2, sets) == pytest.approx(float(g), rel=1e-10)


def test_bound_ordering_after_coefficient_averaging():
    sets = parse_sets(I2, RICH_SETS)
    avg = coefficient_average(I2, sets, draws=30, samples=4000, seed=0)
    assert avg.eigenfunction_bound <= cauchy_schwarz_bound(I2, sets) <= torus_theorem_bound(I2, sets)
    assert avg.assembled_bound is None


def test_coefficient_average_independent_of_workers():
    sets = parse_sets(I2, [[[1, 0]], [[0, 1]]])
    a = coefficient_average(I2, sets, 6, 1000, seed=2, epsilons=[0.04, 0.02, 0.01], workers=1)
    b = coefficient_average(I2, sets, 6, 1000, seed=2, epsilons=[0.04, 0.02, 0.01], workers=3)
    assert a.as_dict() == b.as_dict()
