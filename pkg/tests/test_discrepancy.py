import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from steinpairs.discrepancy import (
    TestPanel,
    calibrate_null,
    gaussian_expectation,
    random_directions,
    sliced_w1_lower_bound,
    sliced_w1_per_direction,
    smooth_discrepancy,
    smooth_panel,
    unit_lipschitz_panel,
)
from steinpairs.errors import QuadratureDiverged
from steinpairs.gaussian import GaussianLaw
from steinpairs.stein import QuadSpec, TestFunction, quadratic_function

CORRELATED = np.array([[2.0, 1.0], [1.0, 2.0]])


def w1_cdf_oracle(y, sigma):
    """W1 = integral of |F_n(t) - Phi(t / sigma)| dt, integrated piecewise between order statistics."""
    y = np.sort(y)
    n = len(y)
    edges = np.concatenate([[-np.inf], y, [np.inf]])
    total = 0.0
    for k in range(n + 1):
        lo, hi = edges[k], edges[k + 1]
        if lo == hi:
            continue
        total += integrate.quad(lambda t: abs(k / n - stats.norm.cdf(t / sigma)), lo, hi, epsabs=1e-12)[0]
    return total


@given(st.lists(st.floats(-4, 4), min_size=1, max_size=12), st.floats(0.3, 3.0))
@settings(max_examples=40, deadline=None)
def test_one_dimensional_w1_matches_cdf_integral(values, sigma):
    y = np.array(values)
    got = sliced_w1_per_direction(y[:, None], GaussianLaw([[sigma**2]]), [[1.0]])[0]
    assert got == pytest.approx(w1_cdf_oracle(y, sigma), abs=1e-8)


def test_point_mass_distance_is_mean_absolute_gaussian():
    got = sliced_w1_lower_bound(np.zeros((1, 1)), GaussianLaw([[1.0]]), [[1.0]])
    assert got == pytest.approx(math.sqrt(2 / math.pi), rel=1e-12)


def test_sliced_distance_detects_a_shift():
    rng = np.random.default_rng(0)
    law = GaussianLaw(np.eye(2))
    shift = np.array([0.3, -0.4])
    x = law.sample(rng, 50_000) + shift
    value = sliced_w1_lower_bound(x, law, random_directions(2, 256, seed=0))
    # the shifted law is at W1 distance |shift| = 0.5; projections can only see less
    assert 0.45 < value <= 0.5 + 0.02


def test_empirical_reference_law_uses_sample_distance():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(2000, 2))
    b = rng.normal(size=(3000, 2)) + 1.0
    dirs = np.array([[1.0, 0.0], [0.0, 1.0]])
    per = sliced_w1_per_direction(a, b, dirs)
    np.testing.assert_allclose(per, [stats.wasserstein_distance(a[:, k], b[:, k]) for k in (0, 1)])


def test_gaussian_expectations_of_panel_functions():
    law = GaussianLaw(CORRELATED)
    cos_g = smooth_panel(2).functions[1]
    value, err = gaussian_expectation(cos_g, law)
    # E cos(<a, Z>) = exp(-a^T Sigma a / 2) with a = (1, 1): exp(-3)
    assert value == pytest.approx(math.exp(-3.0), abs=1e-12)
    bump = smooth_panel(4).functions[2]
    value4, err4 = gaussian_expectation(bump, GaussianLaw.standard(4))
    # E exp(-|Z|^2/4) = (1 + 1/2)^(-d/2)
    assert value4 == pytest.approx(1.5**-2, abs=5 * err4 + 1e-4)


def test_quadrature_divergence_is_reported():
    g = TestFunction(dim=1, eval=lambda x: np.sign(x[:, 0] - 1.0), seminorms={}, label="step")
    with pytest.raises(QuadratureDiverged):
        gaussian_expectation(g, GaussianLaw([[1.0]]), QuadSpec(tol=1e-12))


def test_smooth_discrepancy_of_gaussian_samples_is_noise():
    law = GaussianLaw(CORRELATED)
    x = law.sample(np.random.default_rng(0), 100_000)
    for rec in smooth_discrepancy(x, law, smooth_panel(2)):
        assert rec.estimate <= 4 * rec.std_err
        assert set(rec.as_dict()) == {"g_label", "estimate", "std_err"}
    with pytest.raises(ValueError):
        smooth_discrepancy(np.empty((0, 2)), law, smooth_panel(2))


def test_smooth_discrepancy_sees_wrong_variance():
    law = GaussianLaw(np.eye(2))
    x = GaussianLaw(2.0 * np.eye(2)).sample(np.random.default_rng(0), 20_000)
    recs = {r.g_label: r for r in smooth_discrepancy(x, law, smooth_panel(2))}
    # E cos(Z1 + Z2) is exp(-1) under I and exp(-2) under 2I
    assert recs["cos"].estimate == pytest.approx(math.exp(-1) - math.exp(-2), abs=5 * recs["cos"].std_err)


def test_panels_require_finite_seminorms():
    with pytest.raises(ValueError):
        TestPanel((quadratic_function(np.eye(2)),))
    for g in unit_lipschitz_panel(3):
        assert g.seminorms["M1"] == pytest.approx(1.0)
        x = np.random.default_rng(0).normal(size=(4, 3))
        np.testing.assert_allclose(g.grad(x), fd_grad(g, x), atol=1e-6)


def fd_grad(g, x, h=1e-6):
    return np.stack([(g.eval(x + h * e) - g.eval(x - h * e)) / (2 * h) for e in np.eye(x.shape[1])], axis=-1)


def test_null_level_shrinks_with_sample_size_and_ignores_workers():
    law = GaussianLaw(np.eye(2))
    dirs = random_directions(2, 16, seed=0)
    small = calibrate_null(law, 1000, repeats=8, directions=dirs, seed=0, workers=1)
    again = calibrate_null(law, 1000, repeats=8, directions=dirs, seed=0, workers=4)
    large = calibrate_null(law, 16_000, repeats=8, directions=dirs, seed=0)
    assert small.as_dict() == again.as_dict()
    # W1 sampling noise decays like n^-1/2
    assert large.mean < small.mean / 2.5
