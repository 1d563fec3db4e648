"""Empirical distances between a sample and a centered Gaussian law.

Two complementary estimates are provided. Smooth discrepancies
|mean g(samples) - E g(Sigma^{1/2} Z)| over a panel of test functions with
known seminorms are directly comparable with smooth-function bounds. The
sliced Wasserstein distance, the largest one-dimensional W1 distance over a
set of projection directions, is a lower bound for the multivariate W1
distance because a 1-Lipschitz function of a projection is 1-Lipschitz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import norm, wasserstein_distance

from .errors import QuadratureDiverged
from .gaussian import GaussianLaw, gaussian_rule
from .parallel import module_seed, ordered_map, task_rng
from .stein import QuadSpec, TestFunction, cosine_function, gaussian_bump, linear_function

QMC_SCRAMBLES = 8
QMC_REL_TOL = 1e-3
DEFAULT_DIRECTIONS = 64


@dataclass(frozen=True)
class TestPanel:
    """Test functions whose M1, M2, M3 and M2~ are all finite and known."""

    __test__ = False

    functions: tuple
    labels: tuple = ()

    def __post_init__(self):
        funcs = tuple(self.functions)
        object.__setattr__(self, "functions", funcs)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f.label for f in funcs))
        if len(self.labels) != len(funcs):
            raise ValueError("one label per function is required")
        for f in funcs:
            for key in ("M1", "M2", "M3", "M2_tilde"):
                value = f.seminorms.get(key)
                if value is None or not math.isfinite(value):
                    raise ValueError(f"panel function {f.label!r} lacks a finite {key}")

    def __iter__(self):
        return iter(self.functions)

    def __len__(self):
        return len(self.functions)


def smooth_panel(dim: int) -> TestPanel:
    """Linear, cosine and Gaussian-bump test functions on R^dim."""
    a_lin = np.array([(-0.5) ** i for i in range(dim)])
    return TestPanel((linear_function(a_lin), cosine_function(np.ones(dim)), gaussian_bump(dim)))


def unit_lipschitz_panel(dim: int) -> TestPanel:
    """The smooth panel rescaled so that every function has M1 = 1."""
    funcs = []
    for f in smooth_panel(dim):
        c = 1.0 / f.seminorms["M1"]
        funcs.append(
            TestFunction(
                dim=dim,
                eval=lambda x, f=f, c=c: c * f.eval(x),
                grad=lambda x, f=f, c=c: c * f.grad(x),
                hess=lambda x, f=f, c=c: c * f.hess(x),
                seminorms={k: (v * c if math.isfinite(v) else v) for k, v in f.seminorms.items()},
                label=f"{f.label}/M1",
            )
        )
    return TestPanel(tuple(funcs))


# ------------------------------------------------------ Gaussian expectations


def gaussian_expectation(g: TestFunction, law: GaussianLaw, spec: QuadSpec = QuadSpec()) -> tuple[float, float]:
    """E g(Sigma^{1/2} Z) and an error indicator.

    In dimension <= 3 the indicator is the change from halving the
    Gauss-Hermite rule; beyond, it is the standard error over independent
    Sobol scrambles. Raises :class:`QuadratureDiverged` when the indicator
    exceeds ``spec.tol`` (Gauss-Hermite) or a relative 1e-3 (Sobol).
    """
    if law.dim <= 3:
        fine = gaussian_rule(law, n_nodes=spec.gh_nodes).expect(g.eval)
        coarse = gaussian_rule(law, n_nodes=max(spec.gh_nodes // 2, 2)).expect(g.eval)
        err = abs(fine - coarse)
        if err > spec.tol * (1.0 + abs(fine)):
            raise QuadratureDiverged(f"Gauss-Hermite rules disagree by {err:.3g} for {g.label!r}")
        return fine, err
    vals = np.array(
        [
            gaussian_rule(law, qmc_log2=spec.qmc_log2, qmc_seed=spec.qmc_seed + r).expect(g.eval)
            for r in range(QMC_SCRAMBLES)
        ]
    )
    value = float(vals.mean())
    err = float(vals.std(ddof=1) / math.sqrt(QMC_SCRAMBLES))
    if err > QMC_REL_TOL * (1.0 + abs(value)):
        raise QuadratureDiverged(f"Sobol scrambles spread by {err:.3g} for {g.label!r}")
    return value, err


@dataclass
class DiscrepancyRecord:
    g_label: str
    estimate: float
    std_err: float
    sample_mean: float = 0.0
    gaussian_value: float = 0.0
    seminorms: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"g_label": self.g_label, "estimate": self.estimate, "std_err": self.std_err}


def smooth_discrepancy(
    samples, law: GaussianLaw, panel, spec: QuadSpec = QuadSpec()
) -> list[DiscrepancyRecord]:
    """|mean g(samples) - E g(Sigma^{1/2} Z)| for every panel function.

    ``std_err`` combines the sample standard error with the quadrature
    error indicator.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("samples must be non-empty")
    out = []
    for g in panel:
        vals = g.eval(x)
        mean = float(np.mean(vals))
        se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        target, qerr = gaussian_expectation(g, law, spec)
        out.append(
            DiscrepancyRecord(
                g_label=g.label,
                estimate=abs(mean - target),
                std_err=math.hypot(se, qerr),
                sample_mean=mean,
                gaussian_value=target,
                seminorms=dict(g.seminorms),
            )
        )
    return out


# ------------------------------------------------------------- sliced W1


def _gaussian_w1_sorted(y: np.ndarray, sigma: float) -> float:
    """W1 between the empirical law of sorted ``y`` and N(0, sigma^2).

    Under the quantile coupling the i-th order statistic is matched with
    the Gaussian quantiles on [(i-1)/N, i/N]. On each such interval the
    integral of |y_i - sigma q(u)| is exact, using that -phi(q(u)) is an
    antiderivative of the Gaussian quantile function q.
    """
    n = len(y)
    if sigma <= 0.0:
        return float(np.mean(np.abs(y)))
    a = np.arange(n) / n
    b = np.arange(1, n + 1) / n
    cut = np.clip(norm.cdf(y / sigma), a, b)

    def anti(u):
        q = ndtri(u)
        with np.errstate(invalid="ignore"):
            out = -np.exp(-0.5 * q * q) / math.sqrt(2.0 * math.pi)
        return np.where(np.isfinite(q), out, 0.0)

    fa, fb, fc = anti(a), anti(b), anti(cut)
    below = y * (cut - a) - sigma * (fc - fa)
    above = sigma * (fb - fc) - y * (b - cut)
    return float(np.sum(below + above))


def random_directions(dim: int, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(module_seed(seed, "discrepancy.directions"))
    g = rng.standard_normal((count, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sliced_w1_per_direction(samples, law, directions) -> np.ndarray:
    """1-D W1 of each projection against the projected law (Gaussian or empirical)."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    proj = x @ dirs.T
    if isinstance(law, GaussianLaw):
        sig = np.sqrt(np.maximum(np.einsum("ki,ij,kj->k", dirs, law.matrix, dirs), 0.0))
        return np.array([_gaussian_w1_sorted(np.sort(proj[:, k]), sig[k]) for k in range(len(dirs))])
    other = np.atleast_2d(np.asarray(law, dtype=float)) @ dirs.T
    return np.array([wasserstein_distance(proj[:, k], other[:, k]) for k in range(len(dirs))])


def sliced_w1_lower_bound(samples, law, directions: Sequence | None = None, seed: int = 0) -> float:
    """max over directions of the one-dimensional W1 distance of projections.

    ``law`` is a :class:`GaussianLaw` (exact quantile integration) or a
    second sample. ``directions`` defaults to 64 uniform random unit vectors.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if directions is None:
        directions = random_directions(x.shape[1], DEFAULT_DIRECTIONS, seed)
    return float(np.max(sliced_w1_per_direction(x, law, directions)))


@dataclass
class NullLevel:
    """Sliced W1 of exact Gaussian samples of the same size, over repeats."""

    mean: float
    sd: float
    q95: float
    repeats: int
    n_samples: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def calibrate_null(
    law: GaussianLaw,
    n_samples: int,
    repeats: int = 20,
    directions: Sequence | None = None,
    seed: int = 0,
    workers: int | None = None,
) -> NullLevel:
    """The sampling-noise level of :func:`sliced_w1_lower_bound` when the sample is exactly Gaussian."""
    if directions is None:
        directions = random_directions(law.dim, DEFAULT_DIRECTIONS, seed)
    base = module_seed(seed, "discrepancy.null")

    def run(r):
        return sliced_w1_lower_bound(law.sample(task_rng(base, r), n_samples), law, directions)

    vals = np.array(ordered_map(run, repeats, workers))
    return NullLevel(
        mean=float(vals.mean()),
        sd=float(vals.std(ddof=1)) if repeats > 1 else 0.0,
        q95=float(np.quantile(vals, 0.95)),
        repeats=repeats,
        n_samples=n_samples,
    )


__all__ = [
    "DiscrepancyRecord",
    "NullLevel",
    "TestPanel",
    "calibrate_null",
    "gaussian_expectation",
    "random_directions",
    "sliced_w1_lower_bound",
    "sliced_w1_per_direction",
    "smooth_discrepancy",
    "smooth_panel",
    "unit_lipschitz_panel",
]
