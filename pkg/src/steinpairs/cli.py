"""Command-line experiments: ``verify-core``, ``runs`` and ``torus``.

Parameters come from built-in defaults, then an optional flat JSON config
file (``--config``), then command-line flags. Every random stream is
derived from ``--seed`` and a module name, so reports do not depend on the
number of worker threads.

Exit codes: 0 when every enabled check passes; 2 for an invalid
configuration; 3 for an error raised by a computation; 4 for I/O failures;
10-12 for the first failing ``verify-core`` suite (null, stein-equation,
smoothing); 20-21 for ``runs`` (exact-identities, sandwich); 31 for the
``torus`` sandwich.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .discrepancy import calibrate_null, random_directions, sliced_w1_lower_bound, smooth_discrepancy, smooth_panel
from .errors import ConfigInvalid, IoFailure, SteinPairsError
from .gaussian import GaussianLaw
from .linalg import PsdMatrix, operator_norm
from .pairs import (
    assemble_bound_infinitesimal,
    assemble_bound_nonsingular,
    assemble_bound_smooth,
    exact_condition_moments,
    mc_condition_moments,
    moments_from_values,
)
from .parallel import module_seed, ordered_map
from .report import Report, emit_report, now_stamp
from .runs import (
    RunsConfig,
    exact_identities,
    lambda_inv_norm_bound,
    rr_error_quantities,
    runs_pair_model,
    runs_theorem_terms,
    sample_W,
    sigma_matrix,
)
from .stein import (
    SamplerSpec,
    expect_char_residual,
    smoothing_bound_checks,
    standard_panel,
    verify_stein_equation,
)
from .torus import (
    EigenSystem,
    cauchy_schwarz_bound,
    FrequencySet,
    TorusConfig,
    coefficient_average,
    eigenfunction_theorem_bound,
    eval_W,
    infinitesimal_moments,
    orthogonal_case_values,
    parse_sets,
    torus_theorem_bound,
    validate_frequency_sets,
)

EXIT_CONFIG, EXIT_COMPUTE, EXIT_IO = 2, 3, 4
SUITE_CODES = {
    "null": 10,
    "stein-equation": 11,
    "smoothing": 12,
    "exact-identities": 20,
    "runs-sandwich": 21,
    "torus-sandwich": 31,
}

SIGMAS = {
    "identity": [[1.0, 0.0], [0.0, 1.0]],
    "diag": [[1.0, 0.0], [0.0, 2.0]],
    "correlated": [[2.0, 1.0], [1.0, 2.0]],
}

DEFAULTS = {
    "verify-core": {
        "seed": 0,
        "sigmas": "identity,diag,correlated",
        "null_samples": 200_000,
        "grid": 5,
        "grid_radius": 2.0,
        "slack": 0.05,
    },
    "runs": {
        "seed": 0,
        "n": 1000,
        "d": 2,
        "p": "1/2",
        "samples": 20_000,
        "outer": 2000,
        "moments": "mc",
        "exact": False,
        "null_repeats": 10,
        "directions": 64,
    },
    "torus": {
        "seed": 0,
        "n": 2,
        "metric_file": None,
        "sets_file": None,
        "epsilons": "0.04,0.02,0.01",
        "samples": 20_000,
        "draws": 0,
        "null_repeats": 10,
        "directions": 64,
    },
}
# keys that never enter the echoed configuration: they do not affect results
NON_ECHO = ("workers", "output", "csv", "config")


# --------------------------------------------------------------- configuration


def _parse_p(raw) -> Fraction:
    try:
        return Fraction(str(raw))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigInvalid(f"p must be a rational such as 1/2 or 0.25, got {raw!r}") from exc


def _parse_floats(raw) -> list[float]:
    if isinstance(raw, (list, tuple)):
        return [float(v) for v in raw]
    try:
        return [float(v) for v in str(raw).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigInvalid(f"expected comma-separated numbers, got {raw!r}") from exc


def resolve_config(command: str, file_values: dict | None, flags: dict) -> dict:
    """Defaults, overridden by the config file, overridden by explicit flags."""
    if command not in DEFAULTS:
        raise ConfigInvalid(f"unknown subcommand {command!r}")
    cfg = dict(DEFAULTS[command])
    for source in (file_values or {}, flags):
        for key, value in source.items():
            if key in ("subcommand", "command"):
                continue
            if key not in cfg and key not in NON_ECHO:
                raise ConfigInvalid(f"unknown setting {key!r} for {command}")
            if value is not None:
                cfg[key] = value
    seed = cfg["seed"]
    if int(seed) != seed or not 0 <= int(seed) < 2**64:
        raise ConfigInvalid(f"seed must be a 64-bit non-negative integer, got {seed!r}")
    cfg["seed"] = int(seed)
    for key in ("samples", "outer", "null_samples", "grid", "null_repeats", "directions", "n", "d"):
        if key in cfg and (int(cfg[key]) != cfg[key] or cfg[key] < 1):
            raise ConfigInvalid(f"{key} must be a positive integer, got {cfg[key]!r}")
    if command == "runs" and cfg["moments"] not in ("mc", "analytic"):
        raise ConfigInvalid("moments must be 'mc' or 'analytic'")
    if command == "torus":
        if cfg["draws"] < 0:
            raise ConfigInvalid("draws must be non-negative")
        eps = _parse_floats(cfg["epsilons"])
        if len(eps) < 3 or any(not 0 < e <= 0.1 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigInvalid(f"epsilons must be at least three decreasing values in (0, 0.1], got {cfg['epsilons']!r}")
    return cfg


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or any(isinstance(v, (dict, list)) for v in data.values()):
        raise ConfigInvalid("the config file must be a flat JSON object")
    return data


def config_echo(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in NON_ECHO}


def _suite_exit(suites: dict) -> int:
    for name, ok in suites.items():
        if not ok:
            return SUITE_CODES[name]
    return 0


# ------------------------------------------------------------------ verify-core


def _verify_task(cfg: dict, g_index: int, sigma_name: str, task_index: int) -> dict:
    law = GaussianLaw(np.array(SIGMAS[sigma_name]))
    g = standard_panel(2)[g_index]
    mean, se = expect_char_residual(g, law, cfg["null_samples"], seed=module_seed(cfg["seed"], f"verify.null.{task_index}"))
    axis = np.linspace(-cfg["grid_radius"], cfg["grid_radius"], cfg["grid"])
    grid = np.array([[a, b] for a in axis for b in axis])
    stein_res = verify_stein_equation(g, law, grid)
    stein_tol = 1e-5 if g.label in ("linear", "quadratic") else 1e-3
    checks = smoothing_bound_checks(
        g, law, SamplerSpec(n_points=16, n_directions=128, seed=module_seed(cfg["seed"], "verify.smoothing") % 2**32),
        slack=cfg["slack"],
    )
    return {
        "g_label": g.label,
        "sigma": sigma_name,
        "null": {"mean": mean, "std_err": se, "holds": abs(mean) <= 3.0 * se},
        "stein_equation": {"max_residual": stein_res, "tolerance": stein_tol, "holds": stein_res <= stein_tol},
        "smoothing": [c.as_dict() for c in checks],
    }


def run_verify_core(cfg: dict, workers: int | None):
    names = [s.strip() for s in str(cfg["sigmas"]).split(",") if s.strip()]
    unknown = [s for s in names if s not in SIGMAS]
    if unknown or not names:
        raise ConfigInvalid(f"sigmas must be drawn from {sorted(SIGMAS)}, got {cfg['sigmas']!r}")
    tasks = [(gi, s) for s in names for gi in range(4)]
    results = ordered_map(lambda i: _verify_task(cfg, tasks[i][0], tasks[i][1], i), len(tasks), workers)
    suites = {
        "null": all(r["null"]["holds"] for r in results),
        "stein-equation": all(r["stein_equation"]["holds"] for r in results),
        "smoothing": all(c["holds"] for r in results for c in r["smoothing"]),
    }
    terms = [
        {"name": "max |E residual| / SE", "value": max(abs(r["null"]["mean"]) / r["null"]["std_err"] for r in results)},
        {"name": "max Stein-equation residual", "value": max(r["stein_equation"]["max_residual"] for r in results)},
        {
            "name": "max smoothing ratio lhs/rhs",
            "value": max(c["lhs"] / c["rhs"] for r in results for c in r["smoothing"] if 0 < c["rhs"] < math.inf),
        },
    ]
    report = Report(
        config_echo=config_echo(cfg),
        theorem="verify-core",
        terms=terms,
        total=float(sum(not ok for ok in suites.values())),
        provenance={"suites": suites, "results": results, "package_version": __version__},
    )
    return report, _suite_exit(suites), None


# ------------------------------------------------------------------------ runs


def _sliced_section(samples, law, bound: float, theorem: str, cfg: dict, workers) -> dict:
    dirs = random_directions(law.dim, cfg["directions"], cfg["seed"])
    value = sliced_w1_lower_bound(samples, law, dirs)
    null = calibrate_null(law, len(samples), repeats=cfg["null_repeats"], directions=dirs, seed=cfg["seed"], workers=workers)
    return {
        "value": value,
        "null_level": null.as_dict(),
        "directions": cfg["directions"],
        "bound_theorem": theorem,
        "bound": bound,
        "holds": value - 3.0 * null.mean <= bound,
    }


def run_runs(cfg: dict, workers: int | None):
    p = _parse_p(cfg["p"])
    try:
        config = RunsConfig(int(cfg["n"]), int(cfg["d"]), p)
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from exc
    d = config.d
    analytic_li, exact_li = lambda_inv_norm_bound(config)
    rr = rr_error_quantities(config)
    suites = {}
    identities = None
    if cfg["exact"]:
        moments = exact_condition_moments(runs_pair_model(config))
        identities = exact_identities(config)
        suites["exact-identities"] = all(identities.values())
    elif cfg["moments"] == "analytic":
        # E = 0 identically; E||E'|| and E|D|^3 replaced by their closed-form upper bounds
        moments = moments_from_values(
            exact_li, 0.0, rr.eprime_bound, rr.third_bound, provenance={"method": "analytic-upper-bounds"}
        )
    else:
        moments = mc_condition_moments(
            runs_pair_model(config), cfg["outer"], 2, seed=module_seed(cfg["seed"], "runs.moments"), workers=workers
        )

    sigma = sigma_matrix(config)
    law = GaussianLaw(sigma)
    s_inv = operator_norm(sigma.inv_sqrt)
    samples = sample_W(config, cfg["samples"], cfg["seed"], workers=workers)
    panel = smooth_panel(d)
    records = smooth_discrepancy(samples, law, panel)

    bounds = []
    disc = []
    sandwich_ok = True
    for g, rec in zip(panel, records):
        sn = g.seminorms
        runs_terms = runs_theorem_terms(config, sn["M2"], sn["M3"])
        runs_total = math.fsum(v for _, v in runs_terms)
        smooth = assemble_bound_smooth(moments, sn, d)
        bounds.append({"g_label": g.label, "runs": runs_total, "bd1": smooth.to_dict()})
        ok = rec.estimate <= runs_total + 4.0 * rec.std_err
        sandwich_ok &= ok
        disc.append({**rec.as_dict(), "bound": runs_total, "holds": ok})

    unit = {"M1": 1.0, "M2": 1.0}
    bd2 = assemble_bound_nonsingular(moments, unit, s_inv)
    sliced = _sliced_section(samples, law, bd2.total, "bd2", cfg, workers)
    sandwich_ok &= sliced["holds"]
    suites["runs-sandwich"] = bool(sandwich_ok)

    top_terms = runs_theorem_terms(config, 1.0, 1.0)
    report = Report(
        config_echo=config_echo(cfg),
        theorem="runs",
        terms=[{"name": n, "value": v} for n, v in top_terms],
        total=math.fsum(v for _, v in top_terms),
        discrepancy=disc,
        sliced_w1=sliced,
        provenance={
            "suites": suites,
            "moments": moments.as_dict(),
            "exact_identities": identities,
            "lambda_inv_op": {"exact": exact_li, "analytic": analytic_li, "upper": 15.0 * config.n / d},
            "analytic_upper_bounds": rr.__dict__,
            "bd2_unit": bd2.to_dict(),
            "panel_bounds": bounds,
            "seminorms_top": {"M2": 1.0, "M3": 1.0},
            "package_version": __version__,
        },
    )
    return report, _suite_exit(suites), samples


# ----------------------------------------------------------------------- torus


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path} is not valid JSON: {exc}") from exc


def load_torus_inputs(cfg: dict) -> tuple[TorusConfig, list[FrequencySet]]:
    n = int(cfg["n"])
    B = None
    raw_sets = None
    if cfg["sets_file"]:
        doc = _read_json(cfg["sets_file"])
        if not isinstance(doc, dict) or "sets" not in doc:
            raise ConfigInvalid("the sets file must be a JSON object with a 'sets' list")
        raw_sets = doc["sets"]
        B = doc.get("B")
    if cfg["metric_file"]:
        doc = _read_json(cfg["metric_file"])
        B = doc["B"] if isinstance(doc, dict) else doc
    B = np.eye(n) if B is None else np.asarray(B, dtype=float)
    if B.shape != (n, n):
        raise ConfigInvalid(f"metric must be {n}x{n}, got shape {B.shape}")
    try:
        config = TorusConfig(n, PsdMatrix(B))
    except SteinPairsError as exc:
        raise ConfigInvalid(f"invalid metric: {exc}") from exc
    if raw_sets is None:
        # one singleton per axis of the dual lattice: v = B^{-1} e_i
        binv = np.linalg.inv(config.matrix)
        raw_sets = [[binv[i].tolist()] for i in range(n)]
    try:
        sets = parse_sets(config, raw_sets)
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from exc
    problems = validate_frequency_sets(config, sets)
    if problems:
        raise ConfigInvalid("inadmissible frequency sets: " + "; ".join(problems))
    return config, sets


def run_torus(cfg: dict, workers: int | None):
    config, sets = load_torus_inputs(cfg)
    epsilons = _parse_floats(cfg["epsilons"])
    rng = np.random.default_rng(module_seed(cfg["seed"], "torus.coefficients"))
    system = EigenSystem.draw(config, sets, rng)
    k = system.k

    inf = infinitesimal_moments(system, epsilons, cfg["samples"], cfg["seed"], workers=workers)
    wass = assemble_bound_infinitesimal(inf.moments, None, k, sigma_inv_sqrt_op=1.0, theorem="inf-bd2")
    thm33 = torus_theorem_bound(system)
    thm32, thm32_se = eigenfunction_theorem_bound(system, cfg["samples"], cfg["seed"], workers=workers)

    xs = np.random.default_rng(module_seed(cfg["seed"], "torus.points")).random((cfg["samples"], config.n))
    samples = eval_W(system, xs)
    law = GaussianLaw(np.eye(k))
    panel = smooth_panel(k)
    records = smooth_discrepancy(samples, law, panel)
    disc = []
    panel_bounds = []
    sandwich_ok = True
    for g, rec in zip(panel, records):
        b = assemble_bound_infinitesimal(inf.moments, g.seminorms, k, theorem="inf-bd1")
        ok = rec.estimate <= b.total + 4.0 * rec.std_err
        sandwich_ok &= ok
        disc.append({**rec.as_dict(), "bound": b.total, "holds": ok})
        panel_bounds.append({"g_label": g.label, "inf-bd1": b.to_dict()})
    sliced = _sliced_section(samples, law, wass.total, "inf-bd2", cfg, workers)
    sandwich_ok &= sliced["holds"]
    suites = {"torus-sandwich": bool(sandwich_ok)}

    averaged = None
    if cfg["draws"]:
        averaged = coefficient_average(
            config, sets, cfg["draws"], max(cfg["samples"] // 10, 1000), cfg["seed"], epsilons, workers=workers
        ).as_dict()

    report = Report(
        config_echo=config_echo(cfg),
        theorem="inf-bd2",
        terms=[{"name": n, "value": v} for n, v in wass.terms],
        total=wass.total,
        discrepancy=disc,
        sliced_w1=sliced,
        provenance={
            "suites": suites,
            "metric": config.matrix.tolist(),
            "sets": [s.vectors.tolist() for s in sets],
            "mu": system.mus.tolist(),
            "coefficients": [f.coefficients.tolist() for f in system.functions],
            "moments": inf.moments.as_dict(),
            "convergence_table": inf.table,
            "bounds": [
                {"theorem": "torus", "total": thm33},
                {"theorem": "eigenfunction", "total": thm32, "std_err": thm32_se},
                {"theorem": "coefficient-averaged cauchy-schwarz", "total": cauchy_schwarz_bound(config, sets)},
            ],
            "orthogonal_case": orthogonal_case_values(config, sets),
            "panel_bounds": panel_bounds,
            "coefficient_average": averaged,
            "package_version": __version__,
        },
    )
    return report, _suite_exit(suites), None


RUNNERS = {"verify-core": run_verify_core, "runs": run_runs, "torus": run_torus}


def run_experiment(command: str, cfg: dict, workers: int | None = None):
    """Run one subcommand; returns (report, exit code, samples or None)."""
    return RUNNERS[command](cfg, workers)


# ------------------------------------------------------------------------ CLI


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="steinpairs", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat JSON file of settings (flags override it)")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, help="worker threads (default: STEINPAIRS_THREADS or 1)")
        p.add_argument("--output", "-o", help="write the JSON report here instead of stdout")

    v = sub.add_parser("verify-core", help="characterizing-operator, Stein-equation and smoothing checks")
    common(v)
    v.add_argument("--sigmas", help="comma list from: " + ",".join(SIGMAS))
    v.add_argument("--null-samples", type=int)
    v.add_argument("--grid", type=int, help="points per axis of the Stein-equation grid")
    v.add_argument("--grid-radius", type=float)
    v.add_argument("--slack", type=float)

    r = sub.add_parser("runs", help="d-runs in a cyclic Bernoulli sequence")
    common(r)
    r.add_argument("--n", type=int)
    r.add_argument("--d", type=int)
    r.add_argument("--p", help="success probability as a rational, e.g. 1/2")
    r.add_argument("--samples", type=int, help="W samples for the discrepancy checks")
    r.add_argument("--outer", type=int, help="outer Monte Carlo states for the condition moments")
    r.add_argument("--moments", choices=("mc", "analytic"))
    r.add_argument("--exact", action="store_const", const=True, help="exact enumeration (small n only)")
    r.add_argument("--csv", help="write the sampled W vectors to this CSV file")
    r.add_argument("--null-repeats", type=int)
    r.add_argument("--directions", type=int)

    t = sub.add_parser("torus", help="random eigenfunctions on a flat torus")
    common(t)
    t.add_argument("--n", type=int)
    t.add_argument("--metric-file", help="JSON matrix B (or {\"B\": ...})")
    t.add_argument("--sets-file", help="JSON {\"B\": matrix, \"sets\": [[v, ...], ...]}")
    t.add_argument("--epsilons", help="comma-separated decreasing values in (0, 0.1]")
    t.add_argument("--samples", type=int)
    t.add_argument("--draws", type=int, help="coefficient draws for averaged bounds (0 = skip)")
    t.add_argument("--null-repeats", type=int)
    t.add_argument("--directions", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "workers", "output", "csv")}
    try:
        file_values = load_config_file(args.config) if args.config else None
        cfg = resolve_config(args.command, file_values, flags)
        report, code, samples = run_experiment(args.command, cfg, args.workers)
        report.timestamp = now_stamp()
        text = emit_report(report, "json", args.output)
        if text is not None:
            sys.stdout.write(text)
        if getattr(args, "csv", None) and samples is not None:
            emit_report(report, "csv", args.csv, samples=samples)
    except ConfigInvalid as exc:
        print(f"steinpairs: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IoFailure as exc:
        print(f"steinpairs: {exc}", file=sys.stderr)
        return EXIT_IO
    except SteinPairsError as exc:
        print(f"steinpairs [{exc.module}]: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    if code:
        failed = next(name for name, c in SUITE_CODES.items() if c == code)
        print(f"steinpairs: check suite '{failed}' failed", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
