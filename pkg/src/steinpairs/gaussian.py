"""Centered Gaussian laws and deterministic rules for their expectations."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.stats import norm, qmc

from .linalg import PsdMatrix

MAX_TENSOR_DIM = 3


class GaussianLaw:
    """The law N(0, sigma) together with its cached symmetric square root."""

    def __init__(self, sigma):
        self.sigma = sigma if isinstance(sigma, PsdMatrix) else PsdMatrix(sigma)
        self.sqrt_sigma = self.sigma.sqrt

    @classmethod
    def standard(cls, dim: int) -> "GaussianLaw":
        return cls(np.eye(dim))

    @property
    def dim(self) -> int:
        return self.sigma.dim

    @property
    def matrix(self) -> np.ndarray:
        return self.sigma.matrix

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        z = rng.standard_normal((size, self.dim))
        return z @ self.sqrt_sigma

    def default_radius(self) -> float:
        return 6.0 * float(np.sqrt(max(self.sigma.eigenvalues[-1], 1e-300)))

    def __repr__(self):
        return f"GaussianLaw(sigma={self.matrix.tolist()!r})"


@dataclass(frozen=True)
class GaussRule:
    """Nodes ``points`` (shape (q, d)) and weights summing to one."""

    points: np.ndarray
    weights: np.ndarray
    kind: str

    def expect(self, g) -> float:
        return float(self.weights @ g(self.points))


@lru_cache(maxsize=64)
def _standard_tensor_rule(dim: int, n_nodes: int):
    x, w = hermegauss(n_nodes)
    w = w / w.sum()
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return points, weights


@lru_cache(maxsize=64)
def _standard_qmc_rule(dim: int, log2_points: int, seed: int):
    sampler = qmc.Sobol(dim, scramble=True, seed=seed)
    u = sampler.random_base2(log2_points)
    u = np.clip(u, 1e-15, 1 - 1e-15)
    return norm.ppf(u), np.full(u.shape[0], 1.0 / u.shape[0])


def gaussian_rule(
    law: GaussianLaw,
    n_nodes: int = 32,
    qmc_log2: int = 12,
    qmc_seed: int = 0,
) -> GaussRule:
    """Tensor Gauss-Hermite up to dimension 3, scrambled Sobol beyond."""
    if law.dim <= MAX_TENSOR_DIM:
        z, w = _standard_tensor_rule(law.dim, n_nodes)
        kind = "gauss-hermite"
    else:
        z, w = _standard_qmc_rule(law.dim, qmc_log2, qmc_seed)
        kind = "sobol"
    return GaussRule(points=z @ law.sqrt_sigma, weights=w, kind=kind)
