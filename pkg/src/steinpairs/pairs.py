"""Exchangeable pairs: condition moments and error-bound assembly.

A pair (X, X') satisfies the regression conditions

    E[X' - X | X]              = -Lambda X + E[E | X]
    E[(X' - X)(X' - X)^T | X]  = 2 Lambda Sigma + E[E' | X]

and the bounds are built from ||Lambda^-1||_op, E|E|, E||E'||_HS and
E|X' - X|^3. Conditional expectations are taken given the full underlying
state, which refines conditioning on X.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import EnumerationTooLarge, MissingLambda, MissingSeminorm, SingularSigma
from .linalg import PsdMatrix, hs_norm, operator_norm
from .parallel import chunk_sizes, ordered_map, task_rng

DEFAULT_ENUMERATION_CAP = 2**24


@dataclass
class PairModel:
    """An exchangeable-pair sampler, optionally with an exact enumerator.

    Sampling callables work on batches: ``sample_state(rng, m)`` returns m
    states, ``extract_X(states)`` an (m, dim) array and
    ``sample_partner(states, rng)`` one partner per state.

    For exact work, ``enumerate`` yields ``(state, probability)`` and
    ``partners(state)`` yields ``(state', probability)``; ``exact_X(state)``
    returns raw coordinates (ints or Fractions). The reported coordinates are
    ``raw / coord_scale``, and ``exact_lambda`` / ``exact_sigma`` are given in
    raw coordinates so that identities can be checked without rounding.
    ``declared_lambda`` and ``declared_sigma`` are in reported coordinates.

    ``conditional_moments(states)``, when available, returns the exact
    conditional drift (m, dim), second moment (m, dim, dim) and E|X'-X|^3
    (m,) of the increment given each state, in reported coordinates; Monte
    Carlo estimation then needs no inner replicates.
    """

    dim: int
    sample_state: Callable[[np.random.Generator, int], Any]
    extract_X: Callable[[Any], np.ndarray]
    sample_partner: Callable[[Any, np.random.Generator], Any]
    mode: str = "discrete"
    enumerate: Callable[[], Iterable[tuple[Any, Any]]] | None = None
    partners: Callable[[Any], Iterable[tuple[Any, Any]]] | None = None
    exact_X: Callable[[Any], Sequence] | None = None
    coord_scale: np.ndarray | None = None
    exact_lambda: Sequence[Sequence] | None = None
    exact_sigma: Sequence[Sequence] | None = None
    declared_lambda: np.ndarray | None = None
    declared_sigma: PsdMatrix | None = None
    scale: Callable[[float], float] | None = None
    epsilon: float | None = None
    enumeration_size: int | None = None
    conditional_moments: Callable[[Any], tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None
    label: str = "pair-model"

    def __post_init__(self):
        if self.mode not in ("discrete", "infinitesimal"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.declared_lambda is not None:
            lam = np.asarray(self.declared_lambda, dtype=float)
            if abs(np.linalg.det(lam)) < 1e-300 or not np.isfinite(np.linalg.cond(lam)):
                raise MissingLambda("declared Lambda is not invertible")
            self.declared_lambda = lam

    @property
    def enumerable(self) -> bool:
        return self.enumerate is not None and self.partners is not None

    def raw_X(self, state) -> tuple:
        if self.exact_X is not None:
            return tuple(self.exact_X(state))
        return tuple(float(v) for v in self.extract_X([state])[0])

    def scale_vector(self) -> np.ndarray:
        if self.coord_scale is None:
            return np.ones(self.dim)
        return np.asarray(self.coord_scale, dtype=float)

    def reported_lambda(self) -> np.ndarray | None:
        if self.declared_lambda is not None:
            return self.declared_lambda
        if self.exact_lambda is not None:
            s = self.scale_vector()
            lam = np.array([[float(v) for v in row] for row in self.exact_lambda])
            return lam * s[None, :] / s[:, None]
        return None


@dataclass
class ConditionMoments:
    """Expected norms of the condition error terms (reported coordinates)."""

    lambda_inv_op: float
    e_abs_mean: float
    eprime_hs_mean: float
    third_moment: float
    e_abs_se: float = 0.0
    eprime_hs_se: float = 0.0
    third_moment_se: float = 0.0
    exact: bool = False
    lambda_matrix: list | None = None
    sigma_matrix: list | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("lambda_inv_op", "e_abs_mean", "eprime_hs_mean", "third_moment"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.exact:
            self.e_abs_se = self.eprime_hs_se = self.third_moment_se = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ exact


def _mat(rows) -> list[list]:
    return [list(r) for r in rows]


def _matvec(a, x):
    return tuple(sum(a[i][j] * x[j] for j in range(len(x))) for i in range(len(a)))


def _matmul(a, b):
    n, m, k = len(a), len(b), len(b[0])
    return [[sum(a[i][r] * b[r][j] for r in range(m)) for j in range(k)] for i in range(n)]


@dataclass
class StateMoments:
    """Exact conditional moments of the increment given one state (raw coordinates)."""

    state: Any
    prob: Any
    x: tuple
    drift: tuple
    quad: list
    third: float


def iter_state_moments(model: PairModel, cap: int = DEFAULT_ENUMERATION_CAP):
    """Yield :class:`StateMoments` for every state of an enumerable model."""
    if not model.enumerable:
        raise ValueError(f"model {model.label!r} is not enumerable")
    if model.enumeration_size is not None and model.enumeration_size > cap:
        raise EnumerationTooLarge(f"{model.enumeration_size} transitions exceed cap {cap}")
    s = model.scale_vector()
    d = model.dim
    seen = 0
    for state, prob in model.enumerate():
        x = model.raw_X(state)
        drift = [0] * d
        quad = [[0] * d for _ in range(d)]
        third = 0.0
        for partner, q in model.partners(state):
            seen += 1
            if seen > cap:
                raise EnumerationTooLarge(f"enumeration exceeds cap {cap}")
            xp = model.raw_X(partner)
            delta = [xp[i] - x[i] for i in range(d)]
            for i in range(d):
                if delta[i]:
                    drift[i] += q * delta[i]
                    for j in range(d):
                        if delta[j]:
                            quad[i][j] += q * delta[i] * delta[j]
            r = math.sqrt(sum((float(delta[i]) / s[i]) ** 2 for i in range(d)))
            third += float(q) * r**3
        yield StateMoments(state, prob, x, tuple(drift), quad, third)


def exact_covariance(model: PairModel, cap: int = DEFAULT_ENUMERATION_CAP) -> list[list]:
    """E[X X^T] in raw coordinates by enumeration of states."""
    d = model.dim
    cov = [[0] * d for _ in range(d)]
    for n, (state, prob) in enumerate(model.enumerate()):
        if n >= cap:
            raise EnumerationTooLarge(f"state enumeration exceeds cap {cap}")
        x = model.raw_X(state)
        for i in range(d):
            for j in range(d):
                cov[i][j] += prob * x[i] * x[j]
    return cov


def fit_lambda(x: np.ndarray, drift: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Least-squares Lambda from drift ~ -Lambda x (rows are samples)."""
    w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=float)
    xtx = (x * w[:, None]).T @ x
    if np.linalg.matrix_rank(xtx) < x.shape[1]:
        raise MissingLambda("cannot fit Lambda: states do not span the space")
    coef = np.linalg.solve(xtx, (x * w[:, None]).T @ drift)
    lam = -coef.T
    if abs(np.linalg.det(lam)) < 1e-14 * max(1.0, np.max(np.abs(lam))) ** len(lam):
        raise MissingLambda("fitted Lambda is singular")
    return lam


def exact_condition_moments(model: PairModel, cap: int = DEFAULT_ENUMERATION_CAP) -> ConditionMoments:
    """Exact E|E|, E||E'||_HS, E|X'-X|^3 and ||Lambda^-1||_op by enumeration."""
    d = model.dim
    s = model.scale_vector()
    states = list(iter_state_moments(model, cap))

    lam_raw = _mat(model.exact_lambda) if model.exact_lambda is not None else None
    if lam_raw is None:
        lam_rep = model.reported_lambda()
        if lam_rep is None:
            xs = np.array([[float(v) for v in st.x] for st in states]) / s
            dr = np.array([[float(v) for v in st.drift] for st in states]) / s
            lam_rep = fit_lambda(xs, dr, np.array([float(st.prob) for st in states]))
        lam_raw = (np.asarray(lam_rep) * s[:, None] / s[None, :]).tolist()

    if model.exact_sigma is not None:
        sig_raw = _mat(model.exact_sigma)
    elif model.declared_sigma is not None:
        sig_raw = (np.asarray(model.declared_sigma.matrix) * np.outer(s, s)).tolist()
    else:
        sig_raw = exact_covariance(model, cap)
    two_lam_sig = [[2 * v for v in row] for row in _matmul(lam_raw, sig_raw)]

    e_abs = eprime = third = 0.0
    for st in states:
        lx = _matvec(lam_raw, st.x)
        e_raw = [st.drift[i] + lx[i] for i in range(d)]
        e_rep = np.array([float(v) for v in e_raw]) / s
        ep_raw = [[st.quad[i][j] - two_lam_sig[i][j] for j in range(d)] for i in range(d)]
        ep_rep = np.array([[float(v) for v in row] for row in ep_raw]) / np.outer(s, s)
        p = float(st.prob)
        e_abs += p * float(np.linalg.norm(e_rep))
        eprime += p * hs_norm(ep_rep)
        third += p * st.third

    lam_rep = np.array([[float(v) for v in row] for row in lam_raw]) * s[None, :] / s[:, None]
    sig_rep = np.array([[float(v) for v in row] for row in sig_raw]) / np.outer(s, s)
    return ConditionMoments(
        lambda_inv_op=operator_norm(np.linalg.inv(lam_rep)),
        e_abs_mean=e_abs,
        eprime_hs_mean=eprime,
        third_moment=third,
        exact=True,
        lambda_matrix=lam_rep.tolist(),
        sigma_matrix=sig_rep.tolist(),
        provenance={"method": "exact-enumeration", "states": len(states), "model": model.label},
    )


def exchangeability_defect(
    model: PairModel, cap: int = DEFAULT_ENUMERATION_CAP, key: Callable[[Any], Any] | None = None
):
    """Joint laws of (Y, Y') and (Y', Y) as exact dictionaries, and their difference.

    ``Y = key(state)`` defaults to the raw statistic X; passing the identity
    checks the underlying states themselves. Returns the list of ``(y, y')``
    keys where the two laws differ; empty means the pair is exactly
    exchangeable.
    """
    key = key or model.raw_X
    joint: dict = {}
    seen = 0
    for state, prob in model.enumerate():
        x = key(state)
        for partner, q in model.partners(state):
            seen += 1
            if seen > cap:
                raise EnumerationTooLarge(f"enumeration exceeds cap {cap}")
            key_pair = (x, key(partner))
            joint[key_pair] = joint.get(key_pair, 0) + prob * q
    return [k for k, v in joint.items() if joint.get((k[1], k[0]), 0) != v]


# ------------------------------------------------------------- Monte Carlo


def _jackknife_norms(center: np.ndarray, reps: np.ndarray, norm) -> np.ndarray:
    """Jackknife-corrected norm of the mean of ``reps`` shifted by ``center``.

    ``reps`` has shape (n_inner, m, ...); returns one value per outer sample.
    """
    n = reps.shape[0]
    total = reps.sum(axis=0)
    full = norm(total / n + center)
    loo = np.mean([norm((total - reps[r]) / (n - 1) + center) for r in range(n)], axis=0)
    return n * full - (n - 1) * loo


def _vec_norm(a):
    return np.linalg.norm(a, axis=-1)


def _mat_norm(a):
    return np.sqrt(np.sum(a * a, axis=(-2, -1)))


def batch_se(values: np.ndarray, n_batches: int = 32) -> float:
    n = len(values)
    b = min(n_batches, n)
    if b < 2:
        return 0.0
    means = np.array([chunk.mean() for chunk in np.array_split(values, b)])
    return float(means.std(ddof=1) / math.sqrt(b))


def mc_condition_moments(
    model: PairModel,
    n_outer: int,
    n_inner: int,
    seed: int,
    workers: int | None = None,
    chunk: int = 2048,
    exact_inner: bool = True,
) -> ConditionMoments:
    """Monte Carlo estimate of the condition moments over outer state draws.

    Given each state the conditional moments come from the model's exact
    ``conditional_moments`` hook when it has one (and ``exact_inner`` is
    set); otherwise from ``n_inner`` partner replicates, with the norms of
    the estimated conditional means jackknife bias-corrected over those
    replicates. Standard errors come from outer batch means. In
    infinitesimal mode every moment is divided by ``scale(epsilon)``.
    """
    if n_inner < 2:
        raise ValueError("n_inner must be at least 2")
    sizes = chunk_sizes(n_outer, chunk)
    use_hook = exact_inner and model.conditional_moments is not None

    def run(idx: int):
        rng = task_rng(seed, idx)
        states = model.sample_state(rng, sizes[idx])
        x = np.asarray(model.extract_X(states), dtype=float)
        if use_hook:
            drift, quad, third = model.conditional_moments(states)
            return x, np.asarray(drift, float), np.asarray(quad, float), np.asarray(third, float)
        deltas = np.stack(
            [np.asarray(model.extract_X(model.sample_partner(states, rng)), dtype=float) - x for _ in range(n_inner)]
        )
        return x, deltas

    parts = ordered_map(run, len(sizes), workers)
    x = np.concatenate([p[0] for p in parts])
    norm_by = 1.0
    if model.mode == "infinitesimal":
        if model.scale is None or model.epsilon is None:
            raise ValueError("infinitesimal mode needs scale and epsilon")
        norm_by = float(model.scale(model.epsilon))

    if use_hook:
        drift = np.concatenate([p[1] for p in parts]) / norm_by
        quad = np.concatenate([p[2] for p in parts]) / norm_by
        third_vals = np.concatenate([p[3] for p in parts]) / norm_by
        drift_mean = drift
    else:
        deltas = np.concatenate([p[1] for p in parts], axis=1)
        drift_reps = deltas / norm_by
        quad_reps = deltas[..., :, None] * deltas[..., None, :] / norm_by
        third_vals = np.mean(np.linalg.norm(deltas, axis=-1) ** 3, axis=0) / norm_by
        drift_mean = drift_reps.mean(axis=0)

    lam = model.reported_lambda()
    if lam is None:
        lam = fit_lambda(x, drift_mean)
    if model.declared_sigma is not None:
        sigma = np.asarray(model.declared_sigma.matrix)
    elif model.exact_sigma is not None:
        s = model.scale_vector()
        sigma = np.array([[float(v) for v in r] for r in model.exact_sigma]) / np.outer(s, s)
    else:
        sigma = x.T @ x / len(x)

    if use_hook:
        e_vals = _vec_norm(drift + x @ lam.T)
        ep_vals = _mat_norm(quad - 2.0 * lam @ sigma)
    else:
        e_vals = _jackknife_norms(x @ lam.T, drift_reps, _vec_norm)
        ep_vals = _jackknife_norms(-2.0 * lam @ sigma, quad_reps, _mat_norm)

    return ConditionMoments(
        lambda_inv_op=operator_norm(np.linalg.inv(lam)),
        e_abs_mean=max(float(e_vals.mean()), 0.0),
        eprime_hs_mean=max(float(ep_vals.mean()), 0.0),
        third_moment=float(third_vals.mean()),
        e_abs_se=batch_se(e_vals),
        eprime_hs_se=batch_se(ep_vals),
        third_moment_se=batch_se(third_vals),
        exact=False,
        lambda_matrix=np.asarray(lam).tolist(),
        sigma_matrix=np.asarray(sigma).tolist(),
        provenance={
            "method": "monte-carlo/exact-inner" if use_hook else "nested-monte-carlo/jackknife",
            "n_outer": n_outer,
            "n_inner": 0 if use_hook else n_inner,
            "seed": seed,
            "chunk": chunk,
            "model": model.label,
        },
    )


def gaussian_ar_model(sigma, rho: float) -> PairModel:
    """X ~ N(0, Sigma), X' = rho X + sqrt(1 - rho^2) Sigma^{1/2} Z'.

    Exchangeable with Lambda = (1 - rho) I and E = 0; E' is of order
    (1 - rho)^2, so relative to Lambda it vanishes as rho -> 1.
    """
    sig = sigma if isinstance(sigma, PsdMatrix) else PsdMatrix(sigma)
    root = sig.sqrt
    d = sig.dim
    c = math.sqrt(1.0 - rho * rho)

    def sample_state(rng, m):
        return rng.standard_normal((m, d)) @ root

    def partner(states, rng):
        return rho * states + c * (rng.standard_normal(states.shape) @ root)

    return PairModel(
        dim=d,
        sample_state=sample_state,
        extract_X=lambda s: s,
        sample_partner=partner,
        declared_lambda=(1.0 - rho) * np.eye(d),
        declared_sigma=sig,
        label=f"gaussian-ar(rho={rho})",
    )


# --------------------------------------------------------------- reports


@dataclass
class BoundReport:
    """An assembled bound: named terms, their exact sum, and provenance."""

    theorem: str
    terms: list[tuple[str, float]]
    total: float
    seminorms: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "terms": [{"name": n, "value": v} for n, v in self.terms],
            "total": self.total,
            "seminorms": dict(self.seminorms),
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "BoundReport":
        return cls(
            theorem=data["theorem"],
            terms=[(t["name"], t["value"]) for t in data["terms"]],
            total=data["total"],
            seminorms=dict(data.get("seminorms", {})),
            provenance=dict(data.get("provenance", {})),
        )


THEOREMS = ("bd1", "bd2", "inf-bd1", "inf-bd2")


def _product(*factors: float) -> float:
    # a vanishing moment kills its term even against an infinite seminorm
    if any(f == 0 for f in factors):
        return 0.0
    out = 1.0
    for f in factors:
        out *= f
    return out


def _need(seminorms: Mapping, key: str) -> float:
    if key not in seminorms or seminorms[key] is None:
        raise MissingSeminorm(f"seminorm {key} is required")
    return float(seminorms[key])


def _report(theorem, terms, seminorms, moments, extra=None) -> BoundReport:
    prov = {"moments": moments.as_dict()}
    if extra:
        prov.update(extra)
    return BoundReport(
        theorem=theorem,
        terms=terms,
        total=math.fsum(v for _, v in terms),
        seminorms={k: v for k, v in seminorms.items()},
        provenance=prov,
    )


def _hessian_seminorm(seminorms: Mapping, dim: int, moment: float):
    if moment == 0:
        return 0.0, "M2~"
    if seminorms.get("M2_tilde") is not None:
        return float(seminorms["M2_tilde"]), "M2~"
    return math.sqrt(dim) * _need(seminorms, "M2"), "sqrt(d)*M2"


def assemble_bound_smooth(moments: ConditionMoments, seminorms: Mapping, dim: int) -> BoundReport:
    """Smooth-function bound using M1, M2~ (or sqrt(d) M2) and M3."""
    li = moments.lambda_inv_op
    m2, label = _hessian_seminorm(seminorms, dim, moments.eprime_hs_mean)
    terms = [
        ("L*M1*E|E|", _product(li, _need(seminorms, "M1") if moments.e_abs_mean else 0.0, moments.e_abs_mean)),
        (f"L*{label}*E||E'||/4", _product(li, m2, moments.eprime_hs_mean) / 4.0),
        (
            "L*M3*E|D|^3/9",
            _product(li, _need(seminorms, "M3") if moments.third_moment else 0.0, moments.third_moment) / 9.0,
        ),
    ]
    return _report("bd1", terms, seminorms, moments)


def assemble_bound_nonsingular(
    moments: ConditionMoments, seminorms: Mapping, sigma_inv_sqrt_op: float
) -> BoundReport:
    """Bound for non-singular Sigma using M1 and M2 only."""
    if not math.isfinite(sigma_inv_sqrt_op):
        raise SingularSigma("||Sigma^-1/2||_op must be finite")
    li = moments.lambda_inv_op
    needs_m1 = moments.e_abs_mean or moments.eprime_hs_mean
    m1 = _need(seminorms, "M1") if needs_m1 else 0.0
    m2 = _need(seminorms, "M2") if moments.third_moment else 0.0
    terms = [
        ("M1*L*E|E|", _product(m1, li, moments.e_abs_mean)),
        ("M1*L*S*E||E'||/2", _product(m1, li, sigma_inv_sqrt_op, moments.eprime_hs_mean) / 2.0),
        (
            "sqrt(2pi)/24*M2*S*L*E|D|^3",
            math.sqrt(2.0 * math.pi) / 24.0 * _product(m2, sigma_inv_sqrt_op, li, moments.third_moment),
        ),
    ]
    return _report("bd2", terms, seminorms, moments, {"sigma_inv_sqrt_op": sigma_inv_sqrt_op})


def assemble_bound_infinitesimal(
    moments: ConditionMoments,
    seminorms: Mapping | None,
    dim: int,
    sigma_inv_sqrt_op: float | None = None,
    theorem: str | None = None,
) -> BoundReport:
    """Bounds from limiting (infinitesimal) condition moments.

    ``inf-bd1`` bounds smooth test functions through M1 and M2~; ``inf-bd2``
    bounds the Wasserstein distance and needs a non-singular Sigma. The
    default is ``inf-bd2`` when ``sigma_inv_sqrt_op`` is given.
    """
    theorem = theorem or ("inf-bd2" if sigma_inv_sqrt_op is not None else "inf-bd1")
    li = moments.lambda_inv_op
    extra = {"third_moment_limit": moments.third_moment}
    if theorem == "inf-bd2":
        if sigma_inv_sqrt_op is None or not math.isfinite(sigma_inv_sqrt_op):
            raise SingularSigma("the Wasserstein bound needs a non-singular Sigma")
        terms = [
            ("L*E|E|", _product(li, moments.e_abs_mean)),
            ("L*S*E||E'||/2", _product(li, sigma_inv_sqrt_op, moments.eprime_hs_mean) / 2.0),
        ]
        extra["sigma_inv_sqrt_op"] = sigma_inv_sqrt_op
        return _report("inf-bd2", terms, seminorms or {}, moments, extra)
    if theorem != "inf-bd1":
        raise ValueError(f"unknown theorem {theorem!r}")
    seminorms = seminorms or {}
    m2, label = _hessian_seminorm(seminorms, dim, moments.eprime_hs_mean)
    terms = [
        ("L*M1*E|E|", _product(li, _need(seminorms, "M1") if moments.e_abs_mean else 0.0, moments.e_abs_mean)),
        (f"L*{label}*E||E'||/4", _product(li, m2, moments.eprime_hs_mean) / 4.0),
    ]
    return _report("inf-bd1", terms, seminorms, moments, extra)


def moments_from_values(
    lambda_inv_op: float, e_abs: float, eprime_hs: float, third: float, **kw
) -> ConditionMoments:
    """Convenience constructor for moments known in closed form."""
    return ConditionMoments(
        lambda_inv_op=lambda_inv_op,
        e_abs_mean=e_abs,
        eprime_hs_mean=eprime_hs,
        third_moment=third,
        exact=kw.pop("exact", True),
        **kw,
    )


__all__ = [
    "BoundReport",
    "ConditionMoments",
    "PairModel",
    "StateMoments",
    "assemble_bound_infinitesimal",
    "assemble_bound_nonsingular",
    "assemble_bound_smooth",
    "batch_se",
    "exact_condition_moments",
    "exact_covariance",
    "exchangeability_defect",
    "fit_lambda",
    "gaussian_ar_model",
    "iter_state_moments",
    "mc_condition_moments",
    "moments_from_values",
]
