import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from steinpairs.errors import QuadratureDiverged
from steinpairs.gaussian import GaussianLaw, gaussian_rule
from steinpairs.stein import (
    QuadSpec,
    SamplerSpec,
    TestFunction,
    char_residual,
    cosine_function,
    expect_char_residual,
    fd_grad_hess,
    gaussian_bump,
    linear_function,
    quadratic_function,
    seminorm_Mk,
    smoothing_bound_checks,
    standard_panel,
    stein_solve,
    verify_stein_equation,
)

CORRELATED = np.array([[2.0, 1.0], [1.0, 2.0]])


def cosine_solution_oracle(a, sigma, x):
    """U0 cos(<a, .>) at x by adaptive 1-D quadrature of the defining integral."""
    u = float(np.dot(a, x))
    s2 = float(a @ sigma @ a)
    mean = math.exp(-s2 / 2)

    def integrand(t):
        return (math.cos(math.sqrt(t) * u) * math.exp(-(1 - t) * s2 / 2) - mean) / (2 * t)

    return quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


def test_gaussian_rule_reproduces_covariance():
    law = GaussianLaw(CORRELATED)
    rule = gaussian_rule(law, n_nodes=8)
    second = np.einsum("q,qi,qj->ij", rule.weights, rule.points, rule.points)
    np.testing.assert_allclose(second, CORRELATED, atol=1e-13)
    assert rule.weights.sum() == pytest.approx(1.0)


def test_gaussian_rule_switches_to_sobol_in_high_dimension():
    law = GaussianLaw.standard(4)
    rule = gaussian_rule(law, qmc_log2=12)
    assert rule.kind == "sobol"
    assert rule.expect(lambda x: np.sum(x * x, axis=1)) == pytest.approx(4.0, rel=2e-2)


def test_solution_of_linear_and_quadratic_is_closed_form():
    law = GaussianLaw(CORRELATED)
    x = np.array([[0.3, -1.2], [2.0, 0.5], [0.0, 0.0]])
    a = np.array([1.0, -0.5])
    np.testing.assert_allclose(stein_solve(linear_function(a), law, x), x @ a, atol=1e-10)
    A = np.array([[0.0, 0.5], [0.5, 0.0]])
    expected = 0.5 * (np.einsum("mi,ij,mj->m", x, A, x) - np.trace(A @ CORRELATED))
    np.testing.assert_allclose(stein_solve(quadratic_function(A), law, x), expected, atol=1e-10)


@given(
    a=st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=2),
    x=st.lists(st.floats(-3, 3), min_size=2, max_size=2),
)
@settings(max_examples=15, deadline=None)
def test_solution_of_cosine_matches_quadrature_oracle(a, x):
    a = np.array(a)
    law = GaussianLaw(CORRELATED)
    got = stein_solve(cosine_function(a), law, np.array(x))
    assert got == pytest.approx(cosine_solution_oracle(a, CORRELATED, np.array(x)), abs=1e-8)


def test_solution_is_linear_in_g():
    law = GaussianLaw.standard(2)
    x = np.array([[0.4, -0.7]])
    g = cosine_function(np.array([0.5, 1.0]))
    h = TestFunction(dim=2, eval=lambda y: 3.0 * g.eval(y) + 7.0, label="affine")
    assert stein_solve(h, law, x)[0] == pytest.approx(3.0 * stein_solve(g, law, x)[0], abs=1e-10)


def test_characterizing_operator_of_product_has_mean_zero():
    law = GaussianLaw(CORRELATED)
    g = quadratic_function(np.array([[0.0, 0.5], [0.5, 0.0]]))
    x = np.array([[1.0, 2.0], [-1.0, 0.5]])
    # <Hess, Sigma> = 2 Sigma_12 = 2 and <x, grad> = 2 x1 x2
    np.testing.assert_allclose(char_residual(g, law, x), 2.0 - 2.0 * x[:, 0] * x[:, 1])
    mean, se = expect_char_residual(g, law, 200_000, seed=0)
    assert abs(mean) <= 4 * se


def test_characterizing_operator_detects_wrong_covariance():
    g = quadratic_function(np.eye(2))
    x = GaussianLaw(2.0 * np.eye(2)).sample(np.random.default_rng(0), 20_000)
    r = char_residual(g, GaussianLaw.standard(2), x)
    # <2I, I> - 2|x|^2 has mean 4 - 2 * 4 = -4 when Cov x = 2I
    assert np.mean(r) == pytest.approx(-4.0, abs=5 * np.std(r) / math.sqrt(len(r)))


def test_expect_char_residual_rejects_tiny_samples():
    with pytest.raises(ValueError):
        expect_char_residual(linear_function([1.0, 0.0]), GaussianLaw.standard(2), 10, seed=0)


def test_stein_equation_on_panel_and_singular_covariance():
    grid = np.array([[a, b] for a in (-1.5, 0.0, 1.5) for b in (-1.5, 0.0, 1.5)])
    for sigma in (np.eye(2), CORRELATED, np.array([[1.0, 1.0], [1.0, 1.0]])):
        law = GaussianLaw(sigma)
        for g in standard_panel(2):
            assert verify_stein_equation(g, law, grid) <= 1e-3


def test_quadrature_check_raises_for_rough_function():
    law = GaussianLaw.standard(1)
    g = TestFunction(dim=1, eval=lambda x: np.sign(x[:, 0] - 0.3), label="step")
    with pytest.raises(QuadratureDiverged):
        stein_solve(g, law, np.array([[0.3001]]), QuadSpec(gh_nodes=64, tol=1e-12))


def test_quadspec_minimum_nodes():
    with pytest.raises(ValueError):
        QuadSpec(s_nodes=16)


def test_finite_differences_match_analytic_derivatives():
    g = gaussian_bump(3)
    x = np.random.default_rng(0).normal(size=(5, 3))
    grad, hess = fd_grad_hess(g.eval, x)
    np.testing.assert_allclose(grad, g.grad(x), atol=1e-8)
    np.testing.assert_allclose(hess, g.hess(x), atol=1e-6)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_sampled_seminorms_approach_analytic_values(k):
    g = cosine_function(np.array([1.0, 1.0]))
    est = seminorm_Mk(g, k, SamplerSpec(n_points=256, n_directions=256))
    exact = g.seminorms[f"M{k}"]
    assert est <= exact * (1 + 1e-3)
    assert est >= 0.95 * exact


def test_gaussian_bump_seminorm_constants():
    t = sympy.symbols("t", real=True)
    profile = sympy.exp(-t**2 / 4)
    grid = np.linspace(0, 8, 80_001)
    sups = [np.max(np.abs(sympy.lambdify(t, sympy.diff(profile, t, k))(grid))) for k in (1, 2, 3)]
    m = gaussian_bump(1).seminorms
    assert [m["M1"], m["M2"], m["M3"]] == pytest.approx(sups, rel=1e-8)


def test_smoothing_inequalities_for_cosine():
    law = GaussianLaw(np.array([[1.0, 0.0], [0.0, 2.0]]))
    checks = smoothing_bound_checks(cosine_function(np.ones(2)), law, SamplerSpec(n_points=6, n_directions=32))
    assert len(checks) == 7
    assert all(c.holds for c in checks)
