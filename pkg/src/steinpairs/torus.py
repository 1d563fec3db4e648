"""Random Laplace eigenfunctions on a flat torus.

The torus is R^n / Z^n with the metric <x, y>_B = <Bx, y>. For a frequency
vector v with Bv integral, x -> exp(2 pi i <Bv, x>) is an eigenfunction of
the Laplacian with eigenvalue -mu = -(2 pi)^2 <v, Bv>. A random eigenfunction
takes a finite set of frequencies sharing one eigenvalue and a coefficient
vector drawn uniformly from the sphere of radius sqrt(2):

    f(x) = Re sum_v a_v exp(2 pi i <Bv, x>).

With X uniform on the torus and W = (f_1(X), ..., f_k(X)), the pair
(W, W_eps) obtained by moving X a distance eps along a uniform random
direction is exchangeable. As eps -> 0 it satisfies the regression
conditions with Lambda = (1/2n) diag(mu), E = 0 and

    E' = (1/n) [<grad f_i, grad f_j>_B] - 2 Lambda,

after dividing by eps^2. The gradient Gram matrix therefore controls the
distance from W to a standard Gaussian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import special_ortho_group

from .errors import NoConvergence
from .linalg import PsdMatrix, operator_norm
from .pairs import ConditionMoments, PairModel, batch_se
from .parallel import chunk_sizes, module_seed, ordered_map, task_rng

TWO_PI = 2.0 * math.pi
INTEGRALITY_TOL = 1e-9


@dataclass(frozen=True)
class TorusConfig:
    """Dimension ``n`` and a positive definite metric ``B``."""

    n: int
    B: PsdMatrix

    def __post_init__(self):
        b = self.B if isinstance(self.B, PsdMatrix) else PsdMatrix(self.B)
        object.__setattr__(self, "B", b)
        if b.dim != self.n:
            raise ValueError(f"metric is {b.dim}x{b.dim} but n={self.n}")
        # raises Singular when B is not strictly positive definite
        b.inv_sqrt

    @classmethod
    def identity(cls, n: int) -> "TorusConfig":
        return cls(n, PsdMatrix(np.eye(n)))

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.B.matrix)

    @property
    def frame(self) -> np.ndarray:
        """Rows map B-orthonormal coordinates u to tangent vectors: V = u @ frame."""
        chol = np.linalg.cholesky(self.matrix)
        return np.linalg.inv(chol)

    def inner(self, v, w) -> float:
        return float(np.asarray(v, float) @ self.matrix @ np.asarray(w, float))


@dataclass(frozen=True)
class FrequencySet:
    """Frequency vectors (rows) sharing the eigenvalue ``mu``."""

    vectors: np.ndarray
    mu: float
    index: int = 0

    @classmethod
    def from_vectors(cls, config: TorusConfig, vectors, index: int = 0) -> "FrequencySet":
        vecs = np.atleast_2d(np.asarray(vectors, dtype=float))
        if vecs.shape[1] != config.n:
            raise ValueError(f"frequency vectors must have {config.n} components")
        mu = TWO_PI**2 * config.inner(vecs[0], vecs[0])
        return cls(vectors=vecs, mu=float(mu), index=index)

    def __len__(self):
        return len(self.vectors)

    def frequencies(self, config: TorusConfig) -> np.ndarray:
        """The integer vectors Bv (as floats), one row per v."""
        return self.vectors @ config.matrix


def validate_frequency_sets(config: TorusConfig, sets: Sequence[FrequencySet]) -> list[str]:
    """Violated admissibility conditions; the empty list means the sets are admissible."""
    problems = []
    all_vecs = []
    for r, fs in enumerate(sets):
        if len(fs) == 0:
            problems.append(f"set {r}: empty")
            continue
        freq = fs.frequencies(config)
        bad = np.abs(freq - np.round(freq)) > INTEGRALITY_TOL
        for idx in np.nonzero(bad.any(axis=1))[0]:
            problems.append(f"set {r}: Bv not integral for v={fs.vectors[idx].tolist()}")
        norms = np.einsum("ij,jk,ik->i", fs.vectors, config.matrix, fs.vectors)
        target = fs.mu / TWO_PI**2
        for idx in np.nonzero(np.abs(norms - target) > INTEGRALITY_TOL * max(1.0, target))[0]:
            problems.append(f"set {r}: <v,Bv> differs from the set eigenvalue for v={fs.vectors[idx].tolist()}")
        for idx in np.nonzero(norms <= INTEGRALITY_TOL)[0]:
            problems.append(f"set {r}: zero frequency vector")
        all_vecs.extend((r, v) for v in fs.vectors)
    for a in range(len(all_vecs)):
        ra, va = all_vecs[a]
        for b in range(a + 1, len(all_vecs)):
            rb, vb = all_vecs[b]
            if np.allclose(va, vb, atol=INTEGRALITY_TOL, rtol=0.0):
                kind = "repeated within" if ra == rb else "shared between"
                problems.append(f"vector {va.tolist()} {kind} sets {ra} and {rb}")
            if np.allclose(va + vb, 0.0, atol=INTEGRALITY_TOL, rtol=0.0):
                where = f"within set {ra}" if ra == rb else f"between sets {ra} and {rb}"
                problems.append(f"cancellation v+w=0 {where}: v={va.tolist()}")
    return problems


@dataclass(frozen=True)
class RandomEigenfunction:
    """A frequency set and coefficients on the sphere of radius sqrt(2)."""

    set: FrequencySet
    coefficients: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.coefficients, dtype=float).ravel()
        if a.shape[0] != len(self.set):
            raise ValueError("one coefficient per frequency vector is required")
        if abs(float(a @ a) - 2.0) > 1e-9:
            raise ValueError(f"coefficients must satisfy sum a_v^2 = 2, got {float(a @ a)}")
        object.__setattr__(self, "coefficients", a)

    @classmethod
    def draw(cls, fset: FrequencySet, rng: np.random.Generator) -> "RandomEigenfunction":
        g = rng.standard_normal(len(fset))
        return cls(fset, math.sqrt(2.0) * g / np.linalg.norm(g))


@dataclass(frozen=True)
class EigenSystem:
    """k random eigenfunctions with disjoint, cancellation-free frequency sets."""

    config: TorusConfig
    functions: tuple

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))
        problems = validate_frequency_sets(self.config, [f.set for f in self.functions])
        if problems:
            raise ValueError("inadmissible frequency sets: " + "; ".join(problems))

    @classmethod
    def draw(cls, config: TorusConfig, sets: Sequence[FrequencySet], rng: np.random.Generator) -> "EigenSystem":
        return cls(config, tuple(RandomEigenfunction.draw(s, rng) for s in sets))

    @property
    def k(self) -> int:
        return len(self.functions)

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def mus(self) -> np.ndarray:
        return np.array([f.set.mu for f in self.functions])

    @property
    def sets(self) -> list[FrequencySet]:
        return [f.set for f in self.functions]

    def lambda_matrix(self) -> np.ndarray:
        return np.diag(self.mus) / (2.0 * self.n)

    def max_frequency(self) -> int:
        return int(round(max(np.max(np.abs(f.set.frequencies(self.config))) for f in self.functions)))


# ---------------------------------------------------------- evaluation


def _phases(system: EigenSystem, x: np.ndarray, j: int) -> np.ndarray:
    return TWO_PI * x @ system.functions[j].set.frequencies(system.config).T


def eval_W(system: EigenSystem, x) -> np.ndarray:
    """W_j = Re sum_v a_v exp(2 pi i <Bv, x>) at one point (shape (n,)) or many (shape (..., n))."""
    x = np.asarray(x, dtype=float)
    out = np.stack([np.cos(_phases(system, x, j)) @ f.coefficients for j, f in enumerate(system.functions)], axis=-1)
    return out


def euclidean_gradients(system: EigenSystem, x) -> np.ndarray:
    """Plain gradients of every f_j, shape (..., k, n)."""
    x = np.asarray(x, dtype=float)
    grads = []
    for j, f in enumerate(system.functions):
        freq = f.set.frequencies(system.config)
        s = np.sin(_phases(system, x, j)) * f.coefficients
        grads.append(-TWO_PI * s @ freq)
    return np.stack(grads, axis=-2)


def gradient_gram(system: EigenSystem, x) -> np.ndarray:
    """[<grad_B f_i, grad_B f_j>_B] = grad f_i^T B^{-1} grad f_j, shape (..., k, k)."""
    g = euclidean_gradients(system, x)
    binv = np.linalg.inv(system.config.matrix)
    return np.einsum("...in,nm,...jm->...ij", g, binv, g)


def gradient_inner(system: EigenSystem, x, r: int, s: int) -> np.ndarray:
    """<grad_B f_r, grad_B f_s>_B from the frequency-pair closed form.

    Equal to (1/2) Re sum_{v, w} 4 pi^2 a_v a_w <v, w>_B
    (exp(2 pi i <Bv - Bw, x>) - exp(2 pi i <Bv + Bw, x>)).
    """
    x = np.asarray(x, dtype=float)
    cfg = system.config
    fr, fs = system.functions[r], system.functions[s]
    vr, vs = fr.set.vectors, fs.set.vectors
    ip = vr @ cfg.matrix @ vs.T
    weight = 4.0 * math.pi**2 * np.outer(fr.coefficients, fs.coefficients) * ip
    br, bs = fr.set.frequencies(cfg), fs.set.frequencies(cfg)
    minus = TWO_PI * np.einsum("...n,vwn->...vw", x, br[:, None, :] - bs[None, :, :])
    plus = TWO_PI * np.einsum("...n,vwn->...vw", x, br[:, None, :] + bs[None, :, :])
    return 0.5 * np.sum(weight * (np.cos(minus) - np.cos(plus)), axis=(-2, -1))


# ----------------------------------------------------------- directions


def sample_directions(config: TorusConfig, rng: np.random.Generator, m: int) -> tuple[np.ndarray, np.ndarray]:
    """m directions uniform on the B-unit sphere, with their B-orthonormal coordinates u."""
    if config.n == 1:
        u = rng.choice([-1.0, 1.0], size=(m, 1))
    else:
        g = rng.standard_normal((m, config.n))
        u = g / np.linalg.norm(g, axis=1, keepdims=True)
    return u @ config.frame, u


def geodesic_pair(system: EigenSystem, x, epsilon: float, seed) -> np.ndarray:
    """Move each point a B-distance ``epsilon`` along a uniform random direction, modulo 1."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    v, _ = sample_directions(system.config, rng, pts.shape[0])
    out = np.mod(pts + epsilon * v, 1.0)
    return out.reshape(x.shape)


def direction_design(config: TorusConfig, rng: np.random.Generator, m: int, n_angles: int = 16) -> np.ndarray:
    """Per-state symmetric direction designs, shape (m, K, n).

    The designs average polynomials of degree at most 3 in the direction
    exactly: both signs on the circle (n = 1), ``n_angles`` equally spaced
    angles with a random offset (n = 2), and a randomly rotated
    cross-polytope {+-e_i} otherwise. Every design is symmetric under
    V -> -V, so design averages are even functions of epsilon.
    """
    n = config.n
    if n == 1:
        u = np.broadcast_to(np.array([[1.0], [-1.0]]), (m, 2, 1))
    elif n == 2:
        theta = rng.uniform(0.0, TWO_PI, size=(m, 1)) + TWO_PI * np.arange(n_angles) / n_angles
        u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    else:
        rot = special_ortho_group.rvs(n, size=m, random_state=rng).reshape(m, n, n)
        u = np.concatenate([rot, -rot], axis=1)
    return u @ config.frame


# ------------------------------------------------------ infinitesimal limits


def richardson_limit(epsilons: Sequence[float], values: Sequence[np.ndarray]) -> np.ndarray:
    """Extrapolate values(eps) to eps = 0 by Neville's scheme in h = eps.

    With the sequence eps, eps/2, eps/4 this is Richardson extrapolation of
    order 1 followed by order 2.
    """
    h = [float(e) for e in epsilons]
    table = [np.asarray(v, dtype=float) for v in values]
    for level in range(1, len(h)):
        table = [
            (h[i] * table[i + 1] - h[i + level] * table[i]) / (h[i] - h[i + level])
            for i in range(len(table) - 1)
        ]
    return table[0]


@dataclass
class InfinitesimalResult:
    """Limiting condition moments plus the per-epsilon convergence table."""

    moments: ConditionMoments
    table: list[dict]
    drift_residual: float
    gram_residual: float
    per_state: dict = field(default_factory=dict, repr=False)


def _rms(a: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.asarray(a) ** 2)))


def _level_moments(system: EigenSystem, x: np.ndarray, w: np.ndarray, design: np.ndarray, eps: float):
    w_eps = eval_W(system, x[:, None, :] + eps * design)
    d = w_eps - w[:, None, :]
    drift = d.mean(axis=1) / eps**2
    quad = np.einsum("mki,mkj->mij", d, d) / d.shape[1] / eps**2
    third = np.mean(np.linalg.norm(d, axis=-1) ** 3, axis=1) / eps**2
    return drift, quad, third


def infinitesimal_moments(
    system: EigenSystem,
    epsilons: Sequence[float],
    samples: int,
    seed: int,
    workers: int | None = None,
    chunk: int = 4096,
    contraction: float = 0.9,
    atol: float = 1e-9,
) -> InfinitesimalResult:
    """Condition moments of the geodesic pair in the limit eps -> 0.

    For each sampled point, (1/eps^2) E[W_eps - W | X] and
    (1/eps^2) E[(W_eps - W)(W_eps - W)^T | X] are computed at every eps by
    averaging over a symmetric direction design (shared across eps), then
    extrapolated to eps = 0. Raises :class:`NoConvergence` when the
    successive differences between eps levels do not contract.
    """
    eps = [float(e) for e in epsilons]
    if len(eps) < 3:
        raise ValueError("at least three epsilon values are required")
    if any(not 0 < e <= 0.1 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilons must be strictly decreasing values in (0, 0.1]")

    base = module_seed(seed, "torus.infinitesimal")
    sizes = chunk_sizes(samples, chunk)
    n = system.n

    def run(idx):
        rng = task_rng(base, idx)
        x = rng.random((sizes[idx], n))
        design = direction_design(system.config, rng, sizes[idx])
        w = eval_W(system, x)
        levels = [_level_moments(system, x, w, design, e) for e in eps]
        return x, w, levels

    parts = ordered_map(run, len(sizes), workers)
    x = np.concatenate([p[0] for p in parts])
    w = np.concatenate([p[1] for p in parts])
    drifts = [np.concatenate([p[2][i][0] for p in parts]) for i in range(len(eps))]
    quads = [np.concatenate([p[2][i][1] for p in parts]) for i in range(len(eps))]
    thirds = [np.concatenate([p[2][i][2] for p in parts]) for i in range(len(eps))]

    lam = system.lambda_matrix()
    gram = gradient_gram(system, x) / n
    target_drift = -w @ lam.T

    table = []
    for i, e in enumerate(eps):
        table.append(
            {
                "epsilon": e,
                "drift_residual": _rms(drifts[i] - target_drift),
                "gram_residual": _rms(quads[i] - gram),
                "third_moment": float(thirds[i].mean()),
            }
        )
    for name, seq in (("drift", drifts), ("second moment", quads)):
        diffs = [_rms(seq[i + 1] - seq[i]) for i in range(len(seq) - 1)]
        for a, b in zip(diffs, diffs[1:]):
            if b > atol and b > contraction * a:
                raise NoConvergence(f"{name} estimates do not contract as eps decreases: {diffs}")

    drift_lim = richardson_limit(eps, drifts)
    quad_lim = richardson_limit(eps, quads)
    third_lim = richardson_limit(eps, thirds)
    e_vals = np.linalg.norm(drift_lim + w @ lam.T, axis=-1)
    ep_vals = np.sqrt(np.sum((quad_lim - 2.0 * lam) ** 2, axis=(-2, -1)))
    drift_res = _rms(drift_lim - target_drift)
    gram_res = _rms(quad_lim - gram)
    table.append(
        {
            "epsilon": 0.0,
            "drift_residual": drift_res,
            "gram_residual": gram_res,
            "third_moment": float(third_lim.mean()),
        }
    )

    moments = ConditionMoments(
        lambda_inv_op=operator_norm(np.linalg.inv(lam)),
        e_abs_mean=float(e_vals.mean()),
        eprime_hs_mean=float(ep_vals.mean()),
        third_moment=max(float(third_lim.mean()), 0.0),
        e_abs_se=batch_se(e_vals),
        eprime_hs_se=batch_se(ep_vals),
        third_moment_se=batch_se(third_lim),
        exact=False,
        lambda_matrix=lam.tolist(),
        sigma_matrix=np.eye(system.k).tolist(),
        provenance={
            "method": "infinitesimal/richardson",
            "epsilons": eps,
            "samples": samples,
            "seed": seed,
            "scale": "eps^2",
        },
    )
    return InfinitesimalResult(
        moments=moments,
        table=table,
        drift_residual=drift_res,
        gram_residual=gram_res,
        per_state={"x": x, "w": w, "drift": drift_lim, "quad": quad_lim},
    )


def torus_pair_model(system: EigenSystem, epsilon: float) -> PairModel:
    """The geodesic pair at a fixed eps, in infinitesimal mode with scale eps^2.

    States are points of the torus. The exact-inner hook averages over a
    symmetric direction design, which is exact for the first two conditional
    moments up to O(eps^4).
    """
    n = system.n

    def moments_hook(states):
        x = np.asarray(states, dtype=float)
        rng = np.random.default_rng(module_seed(0, "torus.design"))
        design = direction_design(system.config, rng, x.shape[0])
        drift, quad, third = _level_moments(system, x, eval_W(system, x), design, epsilon)
        return drift * epsilon**2, quad * epsilon**2, third * epsilon**2

    return PairModel(
        dim=system.k,
        sample_state=lambda rng, m: rng.random((m, n)),
        extract_X=lambda states: eval_W(system, np.asarray(states)),
        sample_partner=lambda states, rng: geodesic_pair(system, np.asarray(states), epsilon, rng),
        mode="infinitesimal",
        declared_lambda=system.lambda_matrix(),
        declared_sigma=PsdMatrix(np.eye(system.k)),
        scale=lambda e: e * e,
        epsilon=epsilon,
        conditional_moments=moments_hook,
        label=f"torus-geodesic(n={n}, k={system.k}, eps={epsilon})",
    )


# ----------------------------------------------------------------- bounds


def _centered_gram_norm(system: EigenSystem, x: np.ndarray) -> np.ndarray:
    g = gradient_gram(system, x) - np.diag(system.mus)
    return np.sqrt(np.sum(g * g, axis=(-2, -1)))


def eigenfunction_theorem_bound(
    system: EigenSystem, samples: int, seed: int, workers: int | None = None, chunk: int = 8192
) -> tuple[float, float]:
    """max_i(1/mu_i) E_X ||[<grad f_i, grad f_j>_B - mu_i delta_ij]||_HS, with its standard error."""
    base = module_seed(seed, "torus.eigenfunction_bound")
    sizes = chunk_sizes(samples, chunk)

    def run(idx):
        rng = task_rng(base, idx)
        return _centered_gram_norm(system, rng.random((sizes[idx], system.n)))

    vals = np.concatenate(ordered_map(run, len(sizes), workers)) / float(np.min(system.mus))
    return float(vals.mean()), batch_se(vals)


def torus_grid(system: EigenSystem, nodes_per_axis: int | None = None) -> np.ndarray:
    """Tensor trapezoid nodes on [0,1)^n (equal weights); default 4 * max frequency + 1 per axis."""
    m = nodes_per_axis or 4 * system.max_frequency() + 1
    axis = np.arange(m) / m
    grids = np.meshgrid(*([axis] * system.n), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def torus_average(system: EigenSystem, fn, nodes_per_axis: int | None = None):
    """Trapezoid average of ``fn(points)`` over the torus (exact for low trigonometric degree)."""
    pts = torus_grid(system, nodes_per_axis)
    return np.mean(fn(pts), axis=0)


def eigenfunction_bound_quadrature(system: EigenSystem, nodes_per_axis: int = 256) -> float:
    """Deterministic counterpart of :func:`eigenfunction_theorem_bound` on a fine grid."""
    vals = torus_average(system, lambda p: _centered_gram_norm(system, p), nodes_per_axis)
    return float(vals) / float(np.min(system.mus))


def _sets_and_config(system_or_config, sets=None):
    if isinstance(system_or_config, EigenSystem):
        return system_or_config.config, system_or_config.sets
    return system_or_config, list(sets)


def torus_theorem_bound(system_or_config, sets: Sequence[FrequencySet] | None = None) -> float:
    """Closed-form bound (4 pi^2 / min mu) sqrt(sum_{r,s} 2/(|V_r||V_s|) sum_{v,w} <v,w>_B^2)."""
    config, sets = _sets_and_config(system_or_config, sets)
    total = 0.0
    for fr in sets:
        for fs in sets:
            ip = fr.vectors @ config.matrix @ fs.vectors.T
            total += 2.0 / (len(fr) * len(fs)) * float(np.sum(ip * ip))
    mu_min = min(fs.mu for fs in sets)
    return 4.0 * math.pi**2 / mu_min * math.sqrt(total)


def averaged_gram_second_moment(system_or_config, sets: Sequence[FrequencySet] | None = None) -> float:
    """E_a E_X sum_{r,s} [<grad f_r, grad f_s>_B - mu_r delta_rs]^2 in closed form.

    Diagonal terms use E_a E_X ||grad f_r||^4 =
    8 pi^4 / (|V|(|V|+2)) [3 sum ||v||^4 + 2 (sum ||v||^2)^2 + 4 sum_{v,w} <v,w>^2]
    minus mu_r^2; off-diagonal terms are 16 pi^4 / (|V_r||V_s|) sum <v,w>^2.
    Both assume the frequency vectors have no additive coincidences beyond
    the trivial ones (v +- w = v' +- w' only when the pairs agree up to order
    and sign), which holds for generic sets.
    """
    config, sets = _sets_and_config(system_or_config, sets)
    total = 0.0
    for r, fr in enumerate(sets):
        for s_idx, fs in enumerate(sets):
            ip = fr.vectors @ config.matrix @ fs.vectors.T
            cross = float(np.sum(ip * ip))
            if r != s_idx:
                total += 16.0 * math.pi**4 / (len(fr) * len(fs)) * cross
                continue
            m = len(fr)
            sq = np.diag(ip)
            fourth = 8.0 * math.pi**4 / (m * (m + 2)) * (3.0 * np.sum(sq**2) + 2.0 * np.sum(sq) ** 2 + 4.0 * cross)
            total += fourth - fr.mu**2
    return total


def cauchy_schwarz_bound(system_or_config, sets: Sequence[FrequencySet] | None = None) -> float:
    """(1/min mu) sqrt(E_a E_X ||G - diag(mu)||^2), an upper bound for the coefficient average of the eigenfunction bound."""
    config, sets = _sets_and_config(system_or_config, sets)
    return math.sqrt(averaged_gram_second_moment(config, sets)) / min(fs.mu for fs in sets)


def theorem_moments(system_or_config, sets: Sequence[FrequencySet] | None = None) -> ConditionMoments:
    """Limiting condition moments with E||E'|| replaced by its coefficient-averaged upper bound.

    With E = 0, ||Lambda^-1|| = 2n / min mu and
    E||E'|| <= (4 pi^2 / n) sqrt(sum_{r,s} 2/(|V_r||V_s|) sum <v,w>_B^2),
    the Wasserstein assembly reproduces :func:`torus_theorem_bound`.
    """
    config, sets = _sets_and_config(system_or_config, sets)
    total = 0.0
    for fr in sets:
        for fs in sets:
            ip = fr.vectors @ config.matrix @ fs.vectors.T
            total += 2.0 / (len(fr) * len(fs)) * float(np.sum(ip * ip))
    mu = np.array([fs.mu for fs in sets])
    lam = np.diag(mu) / (2.0 * config.n)
    return ConditionMoments(
        lambda_inv_op=2.0 * config.n / float(mu.min()),
        e_abs_mean=0.0,
        eprime_hs_mean=4.0 * math.pi**2 / config.n * math.sqrt(total),
        third_moment=0.0,
        exact=True,
        lambda_matrix=lam.tolist(),
        sigma_matrix=np.eye(len(sets)).tolist(),
        provenance={"method": "coefficient-averaged upper bound"},
    )


def orthogonal_case_values(system_or_config, sets: Sequence[FrequencySet] | None = None) -> dict:
    """Two readings of the bound when all distinct frequency vectors are B-orthogonal.

    ``substituted`` plugs orthogonality into :func:`torus_theorem_bound`,
    giving (4 pi^2 / min mu) sqrt(sum_r mu_r^2 / (8 pi^4 |V_r|)).
    ``simplified`` evaluates (4 pi^4 / min mu) sqrt(sum_r 2 mu_r / |V_r|^2),
    a simplified closed form of the same bound. They do not agree in
    general; both are reported for comparison only.
    """
    config, sets = _sets_and_config(system_or_config, sets)
    mu_min = min(fs.mu for fs in sets)
    substituted = 4.0 * math.pi**2 / mu_min * math.sqrt(sum(fs.mu**2 / (8.0 * math.pi**4 * len(fs)) for fs in sets))
    simplified = 4.0 * math.pi**4 / mu_min * math.sqrt(sum(2.0 * fs.mu / len(fs) ** 2 for fs in sets))
    return {"substituted": substituted, "simplified": simplified, "theorem": torus_theorem_bound(config, sets)}


@dataclass
class CoefficientAverage:
    """Averages over independent coefficient draws."""

    draws: int
    eigenfunction_bound: float
    eigenfunction_bound_se: float
    assembled_bound: float | None
    assembled_bound_se: float | None
    torus_bound: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def coefficient_average(
    config: TorusConfig,
    sets: Sequence[FrequencySet],
    draws: int,
    samples: int,
    seed: int,
    epsilons: Sequence[float] | None = None,
    workers: int | None = None,
) -> CoefficientAverage:
    """Average the per-draw bounds over random coefficient vectors.

    For each draw the eigenfunction bound is estimated from the gradient
    Gram matrix; when ``epsilons`` are given, the Wasserstein bound is also
    assembled from infinitesimal condition moments (E = 0, Sigma = I).
    """
    from .pairs import assemble_bound_infinitesimal

    base = module_seed(seed, "torus.coefficients")

    def run(idx):
        rng = task_rng(base, idx)
        system = EigenSystem.draw(config, sets, rng)
        direct, _ = eigenfunction_theorem_bound(system, samples, seed=base + idx, workers=1)
        assembled = None
        if epsilons is not None:
            res = infinitesimal_moments(system, epsilons, samples, seed=base + idx, workers=1)
            assembled = assemble_bound_infinitesimal(res.moments, None, system.k, sigma_inv_sqrt_op=1.0).total
        return direct, assembled

    results = ordered_map(run, draws, workers)
    direct = np.array([r[0] for r in results])
    assembled = np.array([r[1] for r in results]) if epsilons is not None else None
    return CoefficientAverage(
        draws=draws,
        eigenfunction_bound=float(direct.mean()),
        eigenfunction_bound_se=float(direct.std(ddof=1) / math.sqrt(draws)) if draws > 1 else 0.0,
        assembled_bound=None if assembled is None else float(assembled.mean()),
        assembled_bound_se=None if assembled is None or draws < 2 else float(assembled.std(ddof=1) / math.sqrt(draws)),
        torus_bound=torus_theorem_bound(config, sets),
    )


def parse_sets(config: TorusConfig, raw_sets) -> list[FrequencySet]:
    return [FrequencySet.from_vectors(config, vecs, index=r) for r, vecs in enumerate(raw_sets)]


__all__ = [
    "CoefficientAverage",
    "averaged_gram_second_moment",
    "cauchy_schwarz_bound",
    "theorem_moments",
    "EigenSystem",
    "FrequencySet",
    "InfinitesimalResult",
    "RandomEigenfunction",
    "TorusConfig",
    "coefficient_average",
    "direction_design",
    "eigenfunction_bound_quadrature",
    "eigenfunction_theorem_bound",
    "euclidean_gradients",
    "eval_W",
    "geodesic_pair",
    "gradient_gram",
    "gradient_inner",
    "infinitesimal_moments",
    "orthogonal_case_values",
    "parse_sets",
    "richardson_limit",
    "sample_directions",
    "torus_average",
    "torus_grid",
    "torus_pair_model",
    "torus_theorem_bound",
    "validate_frequency_sets",
]
