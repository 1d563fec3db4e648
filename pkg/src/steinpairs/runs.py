"""Counts of d-runs in a cyclic Bernoulli sequence.

For X_1..X_n i.i.d. Bernoulli(p), indexed modulo n, the centered count of
i-runs is

    V_i = sum_m (X_m X_{m+1} ... X_{m+i-1} - p^i),      i = 1..d,

and W_i = V_i / sqrt(n p^i (1 - p)). An exchangeable pair is obtained by
choosing a uniform position I and redrawing the d - 1 bits X_I..X_{I+d-2}
(wrapping around the end of the sequence).

Exact computations are done on the integer-valued counts with a rational p,
so that covariance and regression identities hold without rounding.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .linalg import PsdMatrix, operator_norm
from .pairs import PairModel
from .parallel import chunk_sizes, module_seed, ordered_map, task_rng


def _as_fraction(p) -> Fraction:
    if isinstance(p, Fraction):
        return p
    if isinstance(p, float):
        return Fraction(p).limit_denominator(10**9)
    return Fraction(p)


@dataclass(frozen=True)
class RunsConfig:
    """Sequence length ``n``, maximal run length ``d`` and success probability ``p``."""

    n: int
    d: int
    p: Fraction

    def __post_init__(self):
        object.__setattr__(self, "p", _as_fraction(self.p))
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"d must be an integer >= 2, got {self.d!r}")
        if not 2 * self.d < self.n:
            raise ValueError(f"need d < n/2, got d={self.d}, n={self.n}")
        if not 0 < self.p < 1:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")

    @property
    def pf(self) -> float:
        return float(self.p)

    def scale(self) -> np.ndarray:
        """sqrt(n p^i (1 - p)) for i = 1..d, the normalizers of V."""
        i = np.arange(1, self.d + 1)
        return np.sqrt(self.n * self.pf**i * (1.0 - self.pf))


# ------------------------------------------------------------ statistics


def count_d_runs(bits, i: int, p) -> Fraction:
    """Centered cyclic count of i-runs: number of all-ones windows minus n p^i."""
    bits = [int(b) for b in bits]
    n = len(bits)
    if not 1 <= i <= n:
        raise ValueError(f"run length {i} outside 1..{n}")
    count = sum(all(bits[(m + j) % n] for j in range(i)) for m in range(n))
    return count - n * _as_fraction(p) ** i


def run_counts(bits: np.ndarray, d: int) -> np.ndarray:
    """Uncentered cyclic window counts for i = 1..d, batched over rows."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.int64))
    prod = bits.copy()
    out = np.empty((bits.shape[0], d), dtype=np.int64)
    for i in range(1, d + 1):
        out[:, i - 1] = prod.sum(axis=1)
        if i < d:
            prod *= np.roll(bits, -i, axis=1)
    return out


def normalize_W(v, config: RunsConfig) -> np.ndarray:
    """W_i = V_i / sqrt(n p^i (1 - p)); accepts rationals."""
    v = np.asarray(v, dtype=float)
    return v / config.scale()[: v.shape[-1]]


def centered_V(bits: np.ndarray, config: RunsConfig) -> np.ndarray:
    i = np.arange(1, config.d + 1)
    return run_counts(bits, config.d) - config.n * config.pf**i


# ------------------------------------------------------ exact second moments


def sigma_entry(i: int, j: int, p) -> float:
    p = float(p)
    lo, gap = min(i, j), abs(i - j)
    return p ** (gap / 2.0) * sum((gap + 1 + 2 * k) * p**k for k in range(lo))


def sigma_matrix(config: RunsConfig) -> PsdMatrix:
    """Limiting covariance of W (exact for every n > 2d under the cyclic convention)."""
    d = config.d
    return PsdMatrix([[sigma_entry(i, j, config.p) for j in range(1, d + 1)] for i in range(1, d + 1)])


def covariance_V(config: RunsConfig) -> list[list[Fraction]]:
    """E[V_i V_j] as exact rationals."""
    n, d, p = config.n, config.d, config.p
    out = [[Fraction(0)] * d for _ in range(d)]
    for i in range(1, d + 1):
        for j in range(1, i + 1):
            v = n * p**i * (1 - p) * sum((i - j + 1 + 2 * k) * p**k for k in range(j))
            out[i - 1][j - 1] = out[j - 1][i - 1] = v
    return out


def lambda_matrix_V(config: RunsConfig) -> list[list[Fraction]]:
    """Rational Lambda for the counts V, with E[V' - V | X] = -Lambda V."""
    n, d, p = config.n, config.d, config.p
    lam = [[Fraction(0)] * d for _ in range(d)]
    for i in range(1, d + 1):
        lam[i - 1][i - 1] = Fraction(d + i - 2, n)
        for k in range(1, i):
            lam[i - 1][k - 1] = -2 * p ** (i - k) / n
    return lam


def lambda_matrix(config: RunsConfig) -> np.ndarray:
    """Lower-triangular Lambda for W: (d+i-2)/n on the diagonal, -(2/n) p^((i-k)/2) below."""
    n, d, p = config.n, config.d, config.pf
    lam = np.zeros((d, d))
    for i in range(1, d + 1):
        lam[i - 1, i - 1] = (d + i - 2) / n
        for k in range(1, i):
            lam[i - 1, k - 1] = -(2.0 / n) * p ** ((i - k) / 2.0)
    return lam


def lambda_inv_norm_bound(config: RunsConfig) -> tuple[float, float]:
    """(analytic, exact) bounds on ||Lambda^-1||_op.

    The analytic value (n/(d-1)) (1 + 2 sqrt(p)/(d-1))^(d-1) comes from a
    condition-number estimate for triangular matrices; it is itself at most
    n e^{2 sqrt p}/(d-1) <= 15 n/d.
    """
    n, d, p = config.n, config.d, config.pf
    analytic = n / (d - 1) * (1.0 + 2.0 * math.sqrt(p) / (d - 1)) ** (d - 1)
    exact = operator_norm(np.linalg.inv(lambda_matrix(config)))
    return analytic, exact


def lambda_chain(config: RunsConfig) -> tuple[float, float, float, float]:
    """exact <= analytic <= n e^{2 sqrt p}/(d-1) <= 15 n / d, as a 4-tuple."""
    analytic, exact = lambda_inv_norm_bound(config)
    n, d = config.n, config.d
    return exact, analytic, n * math.exp(2.0 * math.sqrt(config.pf)) / (d - 1), 15.0 * n / d


# --------------------------------------------------------------- the pair


def _block(config: RunsConfig, start: int) -> list[int]:
    return [(start + j) % config.n for j in range(config.d - 1)]


def resample_pair(bits, config: RunsConfig, seed) -> np.ndarray:
    """Redraw X_I..X_{I+d-2} (cyclically) with fresh Bernoulli(p) bits.

    ``seed`` may be an integer or a numpy Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = np.array(bits, dtype=np.int8, copy=True)
    start = int(rng.integers(config.n))
    out[_block(config, start)] = rng.random(config.d - 1) < config.pf
    return out


def _resample_batch(states: np.ndarray, config: RunsConfig, rng: np.random.Generator) -> np.ndarray:
    m = states.shape[0]
    out = states.copy()
    starts = rng.integers(config.n, size=m)
    cols = (starts[:, None] + np.arange(config.d - 1)[None, :]) % config.n
    out[np.arange(m)[:, None], cols] = rng.random((m, config.d - 1)) < config.pf
    return out


def _sample_bits(config: RunsConfig, rng: np.random.Generator, m: int) -> np.ndarray:
    return (rng.random((m, config.n)) < config.pf).astype(np.int8)


def _refills(config: RunsConfig):
    """All refill patterns of the resampled block with their probabilities."""
    p = config.p
    for pattern in itertools.product((0, 1), repeat=config.d - 1):
        k = sum(pattern)
        yield pattern, p**k * (1 - p) ** (config.d - 1 - k)


def _count_changes(states: np.ndarray, config: RunsConfig, pattern) -> np.ndarray:
    """Change of every window count for every resampling position.

    Returns an integer array of shape (m, n, d): entry [s, I, i-1] is
    V_i' - V_i when state s has its block at I replaced by ``pattern``.
    Only windows meeting the block can change.
    """
    n, d = config.n, config.d
    m = states.shape[0]
    starts = np.arange(n)
    fill = np.asarray(pattern, dtype=np.int64)
    out = np.empty((m, n, d), dtype=np.int64)
    for i in range(1, d + 1):
        rel = np.arange(-(i - 1), d - 1)[:, None] + np.arange(i)[None, :]
        idx = (starts[:, None, None] + rel[None]) % n
        old = states[:, idx].astype(np.int64)
        inside = (rel >= 0) & (rel <= d - 2)
        new = np.where(inside, fill[np.clip(rel, 0, d - 2)], old)
        out[..., i - 1] = new.prod(axis=-1).sum(axis=-1) - old.prod(axis=-1).sum(axis=-1)
    return out


def conditional_increment_moments(states: np.ndarray, config: RunsConfig, block_cells: int = 2**22):
    """Exact E[D | state], E[D D^T | state] and E|D|^3 for D = W' - W.

    Every resampling position and refill pattern is enumerated; states are
    processed in blocks of about ``block_cells`` window entries.
    """
    states = np.atleast_2d(np.asarray(states))
    per_state = config.n * config.d * (2 * config.d - 1)
    step = max(1, block_cells // per_state)
    if states.shape[0] > step:
        parts = [conditional_increment_moments(states[i : i + step], config, block_cells) for i in range(0, len(states), step)]
        return tuple(np.concatenate([p[j] for p in parts]) for j in range(3))
    m, d = states.shape[0], config.d
    s = config.scale()
    drift = np.zeros((m, d))
    quad = np.zeros((m, d, d))
    third = np.zeros(m)
    for pattern, prob in _refills(config):
        w = float(prob) / config.n
        delta = _count_changes(states, config, pattern) / s
        drift += w * delta.sum(axis=1)
        quad += w * np.einsum("mni,mnj->mij", delta, delta)
        third += w * (np.linalg.norm(delta, axis=-1) ** 3).sum(axis=1)
    return drift, quad, third


def runs_pair_model(config: RunsConfig) -> PairModel:
    """The block-resampling pair on W, with an exact enumerator over all 2^n sequences.

    Raw coordinates are the centered counts V (rational); reported
    coordinates are W.
    """
    n, d, p = config.n, config.d, config.p

    def enumerate_states():
        for bits in itertools.product((0, 1), repeat=n):
            k = sum(bits)
            yield bits, p**k * (1 - p) ** (n - k)

    def partners(bits):
        for start in range(n):
            block = _block(config, start)
            for pattern, prob in _refills(config):
                new = list(bits)
                for pos, b in zip(block, pattern):
                    new[pos] = b
                yield tuple(new), prob / n

    def exact_X(bits):
        return tuple(count_d_runs(bits, i, p) for i in range(1, d + 1))

    return PairModel(
        dim=d,
        sample_state=lambda rng, m: _sample_bits(config, rng, m),
        extract_X=lambda states: centered_V(np.asarray(states), config) / config.scale(),
        sample_partner=lambda states, rng: _resample_batch(np.asarray(states), config, rng),
        enumerate=enumerate_states,
        partners=partners,
        exact_X=exact_X,
        coord_scale=config.scale(),
        exact_lambda=lambda_matrix_V(config),
        exact_sigma=covariance_V(config),
        enumeration_size=2**n * n * 2 ** (d - 1),
        conditional_moments=lambda states: conditional_increment_moments(np.asarray(states), config),
        label=f"runs(n={n}, d={d}, p={p})",
    )


def exact_identities(config: RunsConfig) -> dict:
    """Check the covariance, regression and second-moment identities by exact enumeration.

    All comparisons are between rationals, so each entry is True only when
    the identity holds exactly.
    """
    from .pairs import exact_covariance, exchangeability_defect, iter_state_moments

    model = runs_pair_model(config)
    d = config.d
    lam = lambda_matrix_V(config)
    cov = exact_covariance(model)
    states = list(iter_state_moments(model))
    no_drift_error = all(
        st.drift[i] == -sum(lam[i][j] * st.x[j] for j in range(d)) for st in states for i in range(d)
    )
    second = [[sum(st.prob * st.quad[i][j] for st in states) for j in range(d)] for i in range(d)]
    two_lam_sigma = [[2 * sum(lam[i][r] * cov[r][j] for r in range(d)) for j in range(d)] for i in range(d)]
    return {
        "covariance": cov == covariance_V(config),
        "regression_error_zero": no_drift_error,
        "second_moment": second == two_lam_sigma,
        "exchangeable": exchangeability_defect(model, key=lambda s: s) == [],
    }


# --------------------------------------------------------------- sampling


def sample_W(config: RunsConfig, samples: int, seed: int, workers: int | None = None, chunk: int | None = None):
    """``samples`` independent draws of W by direct simulation of whole sequences."""
    base = module_seed(seed, "runs.sample_W")
    chunk = chunk or max(1, 2**22 // config.n)
    sizes = chunk_sizes(samples, chunk)

    def run(idx):
        rng = task_rng(base, idx)
        return centered_V(_sample_bits(config, rng, sizes[idx]), config) / config.scale()

    parts = ordered_map(run, len(sizes), workers)
    return np.concatenate(parts) if parts else np.empty((0, config.d))


# ------------------------------------------------------------- rate bound


@dataclass(frozen=True)
class RunsErrorQuantities:
    """Closed-form upper estimates for the runs pair (W coordinates)."""

    var_bound: float
    eprime_bound: float
    third_bound: float


def rr_error_quantities(config: RunsConfig) -> RunsErrorQuantities:
    n, d, p = config.n, config.d, config.pf
    return RunsErrorQuantities(
        var_bound=96.0 * d**5 / (n**3 * p ** (2 * d) * (1.0 - p) ** 2),
        eprime_bound=4.0 * math.sqrt(6.0) * d**3.5 / (n**1.5 * p**d * (1.0 - p)),
        third_bound=8.0 * d**4.5 / (n**1.5 * p ** (1.5 * d) * (1.0 - p) ** 1.5),
    )


def runs_theorem_terms(config: RunsConfig, M2: float, M3: float) -> list[tuple[str, float]]:
    if M2 < 0 or M3 < 0:
        raise ValueError("seminorms must be non-negative")
    n, d, p = config.n, config.d, config.pf
    root_n = math.sqrt(n)
    t2 = 15.0 * math.sqrt(6.0) * d**3 * M2 / (p**d * (1.0 - p) * root_n) if M2 else 0.0
    t3 = 40.0 * d**3.5 * M3 / (3.0 * p ** (1.5 * d) * (1.0 - p) ** 1.5 * root_n) if M3 else 0.0
    return [("M2 term", t2), ("M3 term", t3)]


def runs_theorem_bound(config: RunsConfig, M2: float, M3: float) -> float:
    """Rate bound for |E g(W) - E g(Sigma^{1/2} Z)| in terms of M2(g) and M3(g)."""
    return math.fsum(v for _, v in runs_theorem_terms(config, M2, M3))


__all__ = [
    "RunsConfig",
    "RunsErrorQuantities",
    "centered_V",
    "conditional_increment_moments",
    "count_d_runs",
    "exact_identities",
    "covariance_V",
    "lambda_chain",
    "lambda_inv_norm_bound",
    "lambda_matrix",
    "lambda_matrix_V",
    "normalize_W",
    "resample_pair",
    "rr_error_quantities",
    "run_counts",
    "runs_pair_model",
    "runs_theorem_bound",
    "runs_theorem_terms",
    "sample_W",
    "sigma_entry",
    "sigma_matrix",
]
