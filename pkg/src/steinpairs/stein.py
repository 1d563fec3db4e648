"""The Gaussian characterizing operator, its inverse U0, and derivative seminorms.

For a covariance ``Sigma`` the characterizing operator is

    (A f)(x) = <Hess f(x), Sigma>_HS - <x, grad f(x)>

and U0 inverts it on centered test functions:

    U0 g(x) = int_0^1 (2t)^-1 [E g(sqrt(t) x + sqrt(1-t) Z_Sigma) - E g(Z_Sigma)] dt.

With t = s**2 the integrand becomes s^-1 [...] ds, which stays bounded at
s = 0 for Lipschitz g, so plain Gauss-Legendre in s converges quickly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from itertools import combinations_with_replacement, permutations, product
from typing import Callable, Mapping

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import DerivativeUnstable, QuadratureDiverged
from .gaussian import GaussianLaw, gaussian_rule
from .linalg import hs_norm, operator_norm

SEMINORM_KEYS = ("M0", "M1", "M2", "M3", "M2_tilde")

# relative finite-difference steps per derivative order
FD_STEP = {1: 1e-5, 2: 1e-4, 3: 2e-3}
RESIDUAL_STEP = 1e-4


@dataclass(frozen=True)
class TestFunction:
    """A test function g: R^dim -> R evaluated on batches of shape (m, dim).

    ``grad`` and ``hess`` are optional analytic derivatives with batch shapes
    (m, dim) and (m, dim, dim). ``seminorms`` holds analytic (or certified)
    values keyed by ``SEMINORM_KEYS``; a missing key means unknown.
    """

    __test__ = False

    dim: int
    eval: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    hess: Callable[[np.ndarray], np.ndarray] | None = None
    seminorms: Mapping[str, float] = field(default_factory=dict)
    label: str = "g"

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.eval(x[None, :])[0]
        return self.eval(x)

    def without_derivatives(self) -> "TestFunction":
        return replace(self, grad=None, hess=None)


@dataclass(frozen=True)
class QuadSpec:
    """Resolution of the U0 quadrature.

    ``s_nodes`` Gauss-Legendre nodes in s = sqrt(t); the inner Gaussian
    expectation uses ``gh_nodes`` per axis (dim <= 3) or 2**qmc_log2 scrambled
    Sobol points. With ``check`` set, the s-rule is doubled and the two
    results must agree to ``tol``.
    """

    s_nodes: int = 64
    gh_nodes: int = 32
    qmc_log2: int = 12
    qmc_seed: int = 0
    tol: float = 1e-6
    check: bool = True

    def __post_init__(self):
        if self.s_nodes < 64:
            raise ValueError("s_nodes must be at least 64")


@dataclass(frozen=True)
class SamplerSpec:
    """Where and how densely seminorm suprema are searched.

    Points are uniform in the box [-radius, radius]^dim (plus the origin).
    ``radius=None`` means 6 * sqrt(largest eigenvalue of Sigma) when a law is
    known, otherwise 6.
    """

    n_points: int = 256
    radius: float | None = None
    n_directions: int = 256
    seed: int = 0
    include_origin: bool = True
    rtol: float = 1e-3

    def as_dict(self) -> dict:
        return {
            "n_points": self.n_points,
            "radius": self.radius,
            "n_directions": self.n_directions,
            "seed": self.seed,
        }


# ---------------------------------------------------------------- derivatives


def _as_batch(x, dim: int | None = None) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"points have dimension {x.shape[1]}, expected {dim}")
    return x, single


@lru_cache(maxsize=32)
def _grad_hess_offsets(d: int) -> np.ndarray:
    eye = np.eye(d)
    rows = [np.zeros(d)]
    rows += [eye[i] for i in range(d)] + [-eye[i] for i in range(d)]
    for i, j in combinations_with_replacement(range(d), 2):
        if i == j:
            continue
        for si, sj in product((1.0, -1.0), repeat=2):
            rows.append(si * eye[i] + sj * eye[j])
    return np.array(rows)


def _grad_hess_once(f, x: np.ndarray, h: np.ndarray):
    m, d = x.shape
    offsets = _grad_hess_offsets(d)
    pts = x[:, None, :] + h[:, None, None] * offsets[None]
    vals = np.asarray(f(pts.reshape(-1, d)), dtype=float).reshape(m, len(offsets))
    f0 = vals[:, 0]
    plus = vals[:, 1 : 1 + d]
    minus = vals[:, 1 + d : 1 + 2 * d]
    grad = (plus - minus) / (2.0 * h[:, None])
    hess = np.empty((m, d, d))
    idx = np.arange(d)
    hess[:, idx, idx] = (plus - 2.0 * f0[:, None] + minus) / (h[:, None] ** 2)
    col = 1 + 2 * d
    for i, j in combinations_with_replacement(range(d), 2):
        if i == j:
            continue
        pp, pm, mp, mm = (vals[:, col + r] for r in range(4))
        hij = (pp - pm - mp + mm) / (4.0 * h**2)
        hess[:, i, j] = hess[:, j, i] = hij
        col += 4
    return grad, hess


def fd_grad_hess(f, x, rel_step: float = RESIDUAL_STEP, rtol: float = 1e-5):
    """Central-difference gradient and Hessian with one Richardson level.

    The step at x is ``rel_step * (1 + |x|)``. Raises
    :class:`DerivativeUnstable` when the extrapolated and the fine-step
    estimates disagree by more than ``rtol`` relative.
    """
    x, _ = _as_batch(x)
    h = rel_step * (1.0 + np.linalg.norm(x, axis=1))
    g1, h1 = _grad_hess_once(f, x, h)
    g2, h2 = _grad_hess_once(f, x, 0.5 * h)
    grad = (4.0 * g2 - g1) / 3.0
    hess = (4.0 * h2 - h1) / 3.0
    scale_g = 1.0 + np.max(np.abs(grad), axis=1)
    scale_h = 1.0 + np.max(np.abs(hess), axis=(1, 2))
    err_g = np.max(np.abs(grad - g2), axis=1) / scale_g
    err_h = np.max(np.abs(hess - h2), axis=(1, 2)) / scale_h
    worst = float(max(err_g.max(initial=0.0), err_h.max(initial=0.0)))
    if worst > rtol:
        raise DerivativeUnstable(
            f"Richardson disagreement {worst:.3g} exceeds {rtol:.1g} relative"
        )
    return grad, hess


@lru_cache(maxsize=32)
def _tensor_stencil(d: int, k: int):
    eye = np.eye(d)
    multi = list(combinations_with_replacement(range(d), k))
    signs = np.array(list(product((1.0, -1.0), repeat=k)))
    offsets = []
    for idx in multi:
        for sg in signs:
            offsets.append(sum(s * eye[i] for s, i in zip(sg, idx)))
    weights = np.prod(signs, axis=1)
    return multi, np.array(offsets), weights


def _tensor_once(f, x, k, h):
    m, d = x.shape
    multi, offsets, weights = _tensor_stencil(d, k)
    pts = x[:, None, :] + h[:, None, None] * offsets[None]
    vals = np.asarray(f(pts.reshape(-1, d)), dtype=float)
    vals = vals.reshape(m, len(multi), len(weights))
    comps = vals @ weights / (2.0 * h[:, None]) ** k
    tensor = np.empty((m,) + (d,) * k)
    for c, idx in enumerate(multi):
        for perm in set(permutations(idx)):
            tensor[(slice(None),) + perm] = comps[:, c]
    return tensor


def fd_tensor(f, x, k: int, rel_step: float | None = None, rtol: float = 1e-3):
    """k-th derivative tensor (k = 1, 2, 3) by nested central differences.

    Returns an array of shape (m,) + (d,) * k, symmetric in its last k axes.
    """
    x, _ = _as_batch(x)
    step = FD_STEP[k] if rel_step is None else rel_step
    h = step * (1.0 + np.linalg.norm(x, axis=1))
    t1 = _tensor_once(f, x, k, h)
    t2 = _tensor_once(f, x, k, 0.5 * h)
    t = (4.0 * t2 - t1) / 3.0
    axes = tuple(range(1, k + 1))
    err = np.max(np.abs(t - t2), axis=axes) / (1.0 + np.max(np.abs(t), axis=axes))
    worst = float(err.max(initial=0.0))
    if worst > rtol:
        raise DerivativeUnstable(f"order-{k} Richardson disagreement {worst:.3g}")
    return t


# ---------------------------------------------------- characterizing operator


def _derivatives(f: TestFunction, x: np.ndarray):
    if f.grad is not None and f.hess is not None:
        return np.asarray(f.grad(x)), np.asarray(f.hess(x))
    return fd_grad_hess(f.eval, x)


def char_residual(f: TestFunction, law: GaussianLaw, x):
    """<Hess f(x), Sigma>_HS - <x, grad f(x)> at one point or a batch."""
    xb, single = _as_batch(x, law.dim)
    grad, hess = _derivatives(f, xb)
    out = np.einsum("mij,ij->m", hess, law.matrix) - np.einsum("mi,mi->m", xb, grad)
    return float(out[0]) if single else out


def expect_char_residual(
    f: TestFunction, law: GaussianLaw, n_samples: int, seed: int, batch: int = 50_000
) -> tuple[float, float]:
    """Monte Carlo mean and standard error of the residual under N(0, Sigma)."""
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    rng = np.random.default_rng(seed)
    parts = []
    remaining = n_samples
    while remaining > 0:
        m = min(batch, remaining)
        parts.append(char_residual(f, law, law.sample(rng, m)))
        remaining -= m
    r = np.concatenate(parts)
    return float(r.mean()), float(r.std(ddof=1) / math.sqrt(n_samples))


# ------------------------------------------------------------------- U0 solve


@lru_cache(maxsize=16)
def _legendre01(n: int):
    s, w = leggauss(n)
    return 0.5 * (s + 1.0), 0.5 * w


def _solve_raw(g, law, x, s_nodes, rule, max_block=4_000_000):
    s, ws = _legendre01(s_nodes)
    c = np.sqrt(1.0 - s * s)
    eg = float(rule.weights @ g(rule.points))
    z = rule.points
    q, d = z.shape
    m = x.shape[0]
    chunk = max(1, max_block // (s_nodes * q))
    out = np.empty(m)
    coef = ws / s
    for start in range(0, m, chunk):
        xc = x[start : start + chunk]
        pts = s[:, None, None, None] * xc[None, :, None, :] + c[:, None, None, None] * z[None, None]
        vals = np.asarray(g(pts.reshape(-1, d)), dtype=float).reshape(s_nodes, len(xc), q)
        inner = vals @ rule.weights - eg
        out[start : start + chunk] = coef @ inner
    return out


def stein_solve(g, law: GaussianLaw, x, quad: QuadSpec = QuadSpec()):
    """U0 g at a point or a batch of points.

    ``g`` may be a :class:`TestFunction` or any vectorized callable.
    """
    geval = g.eval if isinstance(g, TestFunction) else g
    xb, single = _as_batch(x, law.dim)
    rule = gaussian_rule(law, quad.gh_nodes, quad.qmc_log2, quad.qmc_seed)
    out = _solve_raw(geval, law, xb, quad.s_nodes, rule)
    if quad.check:
        fine = _solve_raw(geval, law, xb, 2 * quad.s_nodes, rule)
        gap = float(np.max(np.abs(fine - out)))
        if gap > quad.tol:
            raise QuadratureDiverged(
                f"doubling s-nodes moved U0 g by {gap:.3g} (> {quad.tol:.1g})"
            )
        out = fine
    return float(out[0]) if single else out


def solution_function(g: TestFunction, law: GaussianLaw, quad: QuadSpec = QuadSpec()) -> TestFunction:
    """U0 g wrapped as a test function (quadrature check off for speed)."""
    fast = replace(quad, check=False)
    return TestFunction(
        dim=g.dim,
        eval=lambda x: stein_solve(g, law, x, fast),
        label=f"U0[{g.label}]",
    )


def stein_equation_residuals(g: TestFunction, law: GaussianLaw, points, quad: QuadSpec = QuadSpec()):
    """Pointwise |<x, grad h> - <Hess h, Sigma>_HS - g(x) + E g(Z_Sigma)| for h = U0 g."""
    xb, _ = _as_batch(points, law.dim)
    # runs the doubling check once at the points themselves
    stein_solve(g, law, xb, quad)
    h = solution_function(g, law, quad)
    grad, hess = fd_grad_hess(h.eval, xb, rtol=1e-4)
    rule = gaussian_rule(law, quad.gh_nodes, quad.qmc_log2, quad.qmc_seed)
    eg = rule.expect(g.eval)
    lhs = np.einsum("mi,mi->m", xb, grad) - np.einsum("mij,ij->m", hess, law.matrix)
    return np.abs(lhs - g.eval(xb) + eg)


def verify_stein_equation(g: TestFunction, law: GaussianLaw, points, quad: QuadSpec = QuadSpec()) -> float:
    return float(np.max(stein_equation_residuals(g, law, points, quad)))


# ------------------------------------------------------------------ seminorms


def _sample_points(dim: int, sampler: SamplerSpec, law: GaussianLaw | None):
    radius = sampler.radius
    if radius is None:
        radius = law.default_radius() if law is not None else 6.0
    rng = np.random.default_rng(sampler.seed)
    pts = rng.uniform(-radius, radius, size=(sampler.n_points, dim))
    if sampler.include_origin:
        pts = np.vstack([np.zeros((1, dim)), pts])
    return pts


def _unit_directions(dim: int, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed + 7919)
    u = rng.standard_normal((n, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return np.vstack([np.eye(dim), u])


def seminorm_Mk(
    f: TestFunction, k: int, sampler: SamplerSpec = SamplerSpec(), law: GaussianLaw | None = None
) -> float:
    """Sampled lower estimate of M_k(f) = sup_x ||D^k f(x)||_op.

    k = 0 is the sup norm. For k = 1, 2 the operator norm at each sampled
    point is exact (vector norm, spectral norm); for k = 3 it is the max of
    |D^3 f(x)(u, u, u)| over the sampled unit directions, which for a
    symmetric form has the same supremum as the full trilinear one.
    """
    if not 0 <= k <= 3:
        raise ValueError("k must be in 0..3")
    pts = _sample_points(f.dim, sampler, law)
    if k == 0:
        return float(np.max(np.abs(f.eval(pts))))
    t = fd_tensor(f.eval, pts, k, rtol=sampler.rtol)
    if k == 1:
        return float(np.max(np.linalg.norm(t, axis=1)))
    if k == 2:
        return float(max(operator_norm(hm) for hm in t))
    u = _unit_directions(f.dim, sampler.n_directions, sampler.seed)
    vals = np.einsum("mijk,ni,nj,nk->mn", t, u, u, u)
    return float(np.max(np.abs(vals)))


def seminorm_M2tilde(
    f: TestFunction, sampler: SamplerSpec = SamplerSpec(), law: GaussianLaw | None = None
) -> float:
    """Sampled lower estimate of sup_x ||Hess f(x)||_HS."""
    pts = _sample_points(f.dim, sampler, law)
    t = fd_tensor(f.eval, pts, 2, rtol=sampler.rtol)
    return float(max(hs_norm(hm) for hm in t))


def estimate_seminorms(
    f: TestFunction, sampler: SamplerSpec = SamplerSpec(), law: GaussianLaw | None = None
) -> dict:
    out = {f"M{k}": seminorm_Mk(f, k, sampler, law) for k in range(4)}
    out["M2_tilde"] = seminorm_M2tilde(f, sampler, law)
    return out


def resolve_seminorms(
    f: TestFunction, sampler: SamplerSpec = SamplerSpec(), law: GaussianLaw | None = None
) -> dict:
    """Analytic seminorms where declared, sampled estimates for the rest."""
    out = dict(f.seminorms)
    for key in SEMINORM_KEYS:
        if key in out:
            continue
        if key == "M2_tilde":
            out[key] = seminorm_M2tilde(f, sampler, law)
        else:
            out[key] = seminorm_Mk(f, int(key[1]), sampler, law)
    return out


# -------------------------------------------------- smoothing-bound checks


@dataclass(frozen=True)
class BoundCheck:
    """``lhs <= rhs * (1 + slack) + atol``; atol absorbs finite-difference noise."""

    name: str
    lhs: float
    rhs: float
    slack: float
    atol: float = 1e-6

    @property
    def holds(self) -> bool:
        if math.isinf(self.rhs):
            return True
        return self.lhs <= self.rhs * (1.0 + self.slack) + self.atol

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "holds": self.holds,
        }


def smoothing_bound_checks(
    g: TestFunction,
    law: GaussianLaw,
    sampler: SamplerSpec = SamplerSpec(n_points=16, n_directions=128),
    quad: QuadSpec = QuadSpec(),
    slack: float = 0.05,
) -> list[BoundCheck]:
    """Compare sampled seminorms of U0 g with the bounds implied by those of g.

    Covers M_k(U0 g) <= M_k(g)/k for k = 1, 2, 3 and the Hilbert-Schmidt
    Hessian bound; when Sigma is non-singular also the three bounds that
    trade one derivative of g for a factor ||Sigma^{-1/2}||_op.
    """
    gs = resolve_seminorms(g, SamplerSpec(seed=sampler.seed), law)
    h = solution_function(g, law, quad)
    pts = _sample_points(g.dim, sampler, law)
    t1 = fd_tensor(h.eval, pts, 1, rtol=sampler.rtol)
    t2 = fd_tensor(h.eval, pts, 2, rtol=sampler.rtol)
    t3 = fd_tensor(h.eval, pts, 3, rtol=sampler.rtol)
    u = _unit_directions(g.dim, sampler.n_directions, sampler.seed)
    m1 = float(np.max(np.linalg.norm(t1, axis=1)))
    m2 = float(max(operator_norm(a) for a in t2))
    m2t = float(max(hs_norm(a) for a in t2))
    m3 = float(np.max(np.abs(np.einsum("mijk,ni,nj,nk->mn", t3, u, u, u))))

    checks = [
        BoundCheck("M1(U0g) <= M1(g)", m1, gs["M1"], slack),
        BoundCheck("M2(U0g) <= M2(g)/2", m2, gs["M2"] / 2, slack),
        BoundCheck("M3(U0g) <= M3(g)/3", m3, gs["M3"] / 3, slack),
        BoundCheck("M2~(U0g) <= M2~(g)/2", m2t, gs["M2_tilde"] / 2, slack),
    ]
    if not law.sigma.is_singular:
        inv = operator_norm(law.sigma.inv_sqrt)
        checks += [
            BoundCheck(
                "M1(U0g) <= sqrt(pi/2) M0(g) |S^-1/2|", m1, math.sqrt(math.pi / 2) * gs["M0"] * inv, slack
            ),
            BoundCheck(
                "M2~(U0g) <= sqrt(2/pi) M1(g) |S^-1/2|", m2t, math.sqrt(2 / math.pi) * gs["M1"] * inv, slack
            ),
            BoundCheck(
                "M3(U0g) <= sqrt(2pi)/4 M2(g) |S^-1/2|", m3, math.sqrt(2 * math.pi) / 4 * gs["M2"] * inv, slack
            ),
        ]
    return checks


# ------------------------------------------------------------------- panels


def linear_function(a) -> TestFunction:
    a = np.asarray(a, dtype=float)
    d = a.size
    na = float(np.linalg.norm(a))
    return TestFunction(
        dim=d,
        eval=lambda x: x @ a,
        grad=lambda x: np.broadcast_to(a, x.shape).copy(),
        hess=lambda x: np.zeros((x.shape[0], d, d)),
        seminorms={"M0": math.inf, "M1": na, "M2": 0.0, "M3": 0.0, "M2_tilde": 0.0},
        label="linear",
    )


def quadratic_function(A) -> TestFunction:
    """g(x) = <x, A x> for symmetric A."""
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    d = A.shape[0]
    return TestFunction(
        dim=d,
        eval=lambda x: np.einsum("mi,ij,mj->m", x, A, x),
        grad=lambda x: 2.0 * x @ A,
        hess=lambda x: np.broadcast_to(2.0 * A, (x.shape[0], d, d)).copy(),
        seminorms={
            "M0": math.inf,
            "M1": math.inf if np.any(A) else 0.0,
            "M2": 2.0 * operator_norm(A),
            "M3": 0.0,
            "M2_tilde": 2.0 * hs_norm(A),
        },
        label="quadratic",
    )


def cosine_function(a) -> TestFunction:
    """g(x) = cos(<a, x>); M_k(g) = |a|^k."""
    a = np.asarray(a, dtype=float)
    na = float(np.linalg.norm(a))
    aa = np.outer(a, a)
    return TestFunction(
        dim=a.size,
        eval=lambda x: np.cos(x @ a),
        grad=lambda x: -np.sin(x @ a)[:, None] * a,
        hess=lambda x: -np.cos(x @ a)[:, None, None] * aa,
        seminorms={"M0": 1.0, "M1": na, "M2": na**2, "M3": na**3, "M2_tilde": na**2},
        label="cos",
    )


# sup_t |d^3/dt^3 exp(-t^2/4)|, attained where t^2 = 2(3 - sqrt 6)
_GAUSS_BUMP_M3 = math.sqrt(6 * (3 - math.sqrt(6))) * math.exp(-(3 - math.sqrt(6)) / 2) / (2 * math.sqrt(2))


def gaussian_bump(dim: int) -> TestFunction:
    """g(x) = exp(-|x|^2 / 4).

    Along any line g restricts to a scaled copy of exp(-t^2/4), so each M_k is
    the sup of the k-th derivative of that profile; the Hilbert-Schmidt
    Hessian norm peaks at the origin.
    """
    eye = np.eye(dim)

    def ev(x):
        return np.exp(-0.25 * np.sum(x * x, axis=1))

    def grad(x):
        return -0.5 * x * ev(x)[:, None]

    def hess(x):
        e = ev(x)[:, None, None]
        return e * (0.25 * x[:, :, None] * x[:, None, :] - 0.5 * eye)

    return TestFunction(
        dim=dim,
        eval=ev,
        grad=grad,
        hess=hess,
        seminorms={
            "M0": 1.0,
            "M1": math.exp(-0.5) / math.sqrt(2),
            "M2": 0.5,
            "M3": _GAUSS_BUMP_M3,
            "M2_tilde": math.sqrt(dim) / 2,
        },
        label="gauss-bump",
    )


def standard_panel(dim: int) -> list[TestFunction]:
    """Linear, quadratic, cosine and Gaussian-bump functions on R^dim."""
    a_lin = np.array([(-0.5) ** i for i in range(dim)])
    if dim == 1:
        A = np.array([[1.0]])
    else:
        A = np.zeros((dim, dim))
        A[0, 1] = A[1, 0] = 0.5
    return [
        linear_function(a_lin),
        quadratic_function(A),
        cosine_function(np.ones(dim)),
        gaussian_bump(dim),
    ]
