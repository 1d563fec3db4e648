"""Small dense symmetric linear algebra.

Eigendecompositions use cyclic Jacobi rotations; every dimension handled by
this package is small (a few dozen at most), where Jacobi is accurate to
working precision and needs nothing beyond elementwise numpy.
"""

from __future__ import annotations

import math
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch, NotPsd, Singular

SQRT_REL_TOL = 1e-10


def _as_square(m) -> np.ndarray:
    a = np.array(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    return a


def jacobi_eigh(a, tol: float = 1e-15, max_sweeps: int = 100):
    """Eigen-decompose a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, v)`` with ascending eigenvalues ``w`` and orthonormal
    eigenvectors in the columns of ``v`` so that ``a = v @ diag(w) @ v.T``.
    """
    a = _as_square(a)
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    scale = np.sqrt(np.sum(a * a))
    if scale == 0.0:
        return np.zeros(n), v
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(a[off_mask] ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) plane rotation
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def is_symmetric(m, atol: float = 0.0) -> bool:
    a = _as_square(m)
    return bool(np.all(np.abs(a - a.T) <= atol))


class PsdMatrix:
    """A symmetric non-negative definite matrix with a cached square root.

    The stored matrix is symmetrized exactly on construction. Eigenvalues in
    ``[-eigen_floor, 0)`` are treated as round-off and clamped to zero;
    anything more negative raises :class:`NotPsd`.
    """

    def __init__(self, m, eigen_floor: float | None = None, sym_atol: float = 1e-12):
        a = _as_square(m)
        asym = np.max(np.abs(a - a.T)) if a.size else 0.0
        if asym > sym_atol * (1.0 + np.max(np.abs(a))):
            raise NotPsd(f"matrix is not symmetric (max asymmetry {asym:.3g})")
        self.matrix = 0.5 * (a + a.T)
        self.matrix.setflags(write=False)
        w, v = jacobi_eigh(self.matrix)
        radius = float(np.max(np.abs(w))) if w.size else 0.0
        self.eigen_floor = 1e-12 * radius if eigen_floor is None else float(eigen_floor)
        if w.size and w[0] < -self.eigen_floor:
            raise NotPsd(f"smallest eigenvalue {w[0]:.6g} below -{self.eigen_floor:.3g}")
        self.eigenvalues = np.where(w < 0.0, 0.0, w)
        self.eigenvectors = v

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def sqrt(self) -> np.ndarray:
        v, w = self.eigenvectors, self.eigenvalues
        s = (v * np.sqrt(w)) @ v.T
        s = 0.5 * (s + s.T)
        s.setflags(write=False)
        return s

    @cached_property
    def inv_sqrt(self) -> np.ndarray:
        if self.eigenvalues[0] <= self.eigen_floor:
            raise Singular(
                f"smallest eigenvalue {self.eigenvalues[0]:.3g} <= floor {self.eigen_floor:.3g}"
            )
        v, w = self.eigenvectors, self.eigenvalues
        s = (v / np.sqrt(w)) @ v.T
        s = 0.5 * (s + s.T)
        s.setflags(write=False)
        return s

    @property
    def is_singular(self) -> bool:
        return bool(self.eigenvalues[0] <= self.eigen_floor)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    def __repr__(self):
        return f"PsdMatrix({self.matrix.tolist()!r})"


def _psd(m) -> PsdMatrix:
    return m if isinstance(m, PsdMatrix) else PsdMatrix(m)


def psd_sqrt(m) -> np.ndarray:
    """Symmetric non-negative square root ``S`` with ``S @ S == m``."""
    return np.array(_psd(m).sqrt)


def psd_inv_sqrt(m) -> np.ndarray:
    """Inverse square root of a strictly positive definite matrix."""
    return np.array(_psd(m).inv_sqrt)


def operator_norm(m) -> float:
    """Largest singular value, from the eigenvalues of ``m @ m.T``."""
    a = np.array(m, dtype=float)
    if a.ndim < 2:
        return float(np.sqrt(np.sum(a * a)))
    if a.size == 0:
        return 0.0
    # scale first so the Gram matrix neither under- nor overflows
    scale = np.max(np.abs(a))
    if scale == 0.0:
        return 0.0
    b = a / scale
    gram = b @ b.T if b.shape[0] <= b.shape[1] else b.T @ b
    w, _ = jacobi_eigh(gram)
    return float(scale * np.sqrt(max(w[-1], 0.0)))


def hs_inner(a, b) -> float:
    """Hilbert-Schmidt inner product ``Tr(a @ b.T)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    return float(np.sum(a * b))


def hs_norm(m) -> float:
    m = np.asarray(m, dtype=float)
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    if scale == 0.0:
        return 0.0
    return float(scale * np.sqrt(np.sum((m / scale) ** 2)))
