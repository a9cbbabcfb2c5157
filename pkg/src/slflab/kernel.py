#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
RBF-kernel parametrization of the window function.

For a batch of M links over P pixels every (link, pixel) pair ``q = P(m-1) + p``
gets the feature ``phi_q = [c_m, d_{m,p}]`` (direct length, detour length).
The learned window is ``w = K alpha`` with ``K_{q,q'} = rbf(phi_q, phi_q')``.
"""
from dataclasses import dataclass
from typing import Optional, Union
from warnings import warn

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from slflab.scenario import GridSpec, phi1, phi2


@dataclass(frozen=True)
class KernelConfig:
    """Kernel settings.

    Parameters
    ----------
    sigma : float
        Width of the RBF kernel.
    standardize : bool
        Standardize the features (zero mean, unit variance per column) before
        evaluating the kernel.
    truncate : Optional[float]
        ``None`` builds a dense matrix when ``M*P <= dense_limit`` and a sparse
        one otherwise, dropping entries below machine epsilon. ``0`` always
        builds dense. A positive value always builds sparse, dropping entries
        below that value.
    dense_limit : int
        Largest ``M*P`` stored dense in automatic mode.
    """
    sigma: float = 1e-4
    standardize: bool = False
    truncate: Optional[float] = None
    dense_limit: int = 4096

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.truncate is not None and not 0 <= self.truncate < 1:
            raise ValueError(f"truncate must be in [0, 1), got {self.truncate}")


@dataclass
class FeatureSet:
    """Direct lengths ``c`` (M) and detour lengths ``d`` (M*P, link-major)."""
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.d = np.asarray(self.d, dtype=float).ravel()
        if len(self.c) == 0 or len(self.d) % len(self.c):
            raise ValueError(f"length of d ({len(self.d)}) must be a multiple of length of c ({len(self.c)})")

    @property
    def M(self) -> int:
        return len(self.c)

    @property
    def P(self) -> int:
        return len(self.d) // len(self.c)

    @property
    def phi(self) -> np.ndarray:
        """The ``M*P x 2`` stacked features."""
        return np.column_stack([np.repeat(self.c, self.P), self.d])


def build_features(grid: GridSpec, xi: np.ndarray, xj: np.ndarray) -> FeatureSet:
    """Features of the links ``xi -> xj`` (coordinates, shape ``(M, 2)``)."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    xj = np.atleast_2d(np.asarray(xj, dtype=float))
    xp = grid.coordinates()[None, :, :]
    c = phi1(xi, xj)
    d = phi2(xi[:, None, :], xj[:, None, :], xp)
    return FeatureSet(c, d.ravel())


def rbf(phi_a: np.ndarray, phi_b: np.ndarray, sigma: float):
    """``exp(-||phi_a - phi_b||^2 / (2 sigma^2))`` over the last axis."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    diff = np.asarray(phi_a, dtype=float) - np.asarray(phi_b, dtype=float)
    return np.exp(-np.sum(diff**2, axis=-1) / (2 * sigma**2))


@dataclass
class KernelMatrix:
    """Symmetric ``MP x MP`` kernel matrix, dense or csr."""
    values: Union[np.ndarray, sparse.csr_matrix]
    M: int
    P: int

    def __post_init__(self):
        n = self.M * self.P
        if self.values.shape != (n, n):
            raise ValueError(f"kernel of shape {self.values.shape} does not match M*P = {n}")

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.values)

    @property
    def size(self) -> int:
        return self.M * self.P

    def toarray(self) -> np.ndarray:
        if self.is_sparse:
            return self.values.toarray()
        return np.asarray(self.values)

    def dot(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.values @ x)

    def trace(self) -> float:
        return float(self.values.diagonal().sum())


def _standardized(X: np.ndarray) -> np.ndarray:
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return (X - X.mean(axis=0)) / scale


def build_kernel_matrix(features: FeatureSet, cfg: KernelConfig) -> KernelMatrix:
    """Kernel matrix of a batch.

    Dense matrices whose nonzero share is below 5 % are returned as csr.

    Parameters
    ----------
    features : FeatureSet
        Batch features.
    cfg : KernelConfig
        Kernel settings.

    Returns
    -------
    KernelMatrix
        Entry ``(q, q')`` is ``rbf(phi_q, phi_q', sigma)``, unit diagonal.
    """
    X = features.phi
    if cfg.standardize:
        X = _standardized(X)
    n = len(X)
    floor = cfg.truncate
    if floor is None:
        floor = 0.0 if n <= cfg.dense_limit else np.finfo(float).eps
    elif floor == 0 and n > cfg.dense_limit:
        warn(f"Building a dense {n}x{n} kernel matrix ({8 * n * n / 2**30:.1f} GiB)")

    if floor == 0:
        K = np.exp(-cdist(X, X, 'sqeuclidean') / (2 * cfg.sigma**2))
        if np.count_nonzero(K) < 0.05 * n * n:
            K = sparse.csr_matrix(K)
        return KernelMatrix(K, features.M, features.P)

    radius = cfg.sigma * np.sqrt(-2 * np.log(floor))
    pairs = np.asarray(cKDTree(X).query_pairs(radius, output_type='ndarray'), dtype=np.intp).reshape(-1, 2)
    a, b = pairs[:, 0], pairs[:, 1]
    values = rbf(X[a], X[b], cfg.sigma)
    keep = values >= floor
    a, b, values = a[keep], b[keep], values[keep]
    diag = np.arange(n)
    rows = np.concatenate([diag, a, b])
    cols = np.concatenate([diag, b, a])
    data = np.concatenate([np.ones(n), values, values])
    K = sparse.csr_matrix((data, (rows, cols)), shape=(n, n))
    return KernelMatrix(K, features.M, features.P)


def _check_alpha(K: KernelMatrix, alpha: np.ndarray) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float).ravel()
    if len(alpha) != K.size:
        raise ValueError(f"dimension mismatch: alpha has length {len(alpha)}, K is {K.size}x{K.size}")
    return alpha


def _check_f(K: KernelMatrix, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float).ravel()
    if len(f) != K.P:
        raise ValueError(f"dimension mismatch: f has length {len(f)}, expected P = {K.P}")
    return f


def alpha_to_w(K: KernelMatrix, alpha: np.ndarray) -> np.ndarray:
    """Window weights ``K alpha``; block ``j`` (length P) is the row of link ``j``."""
    return K.dot(_check_alpha(K, alpha))


def materialize_AK(f: np.ndarray, K: KernelMatrix) -> np.ndarray:
    """Dense ``M x MP`` matrix ``(I_M kron f^T) K``."""
    f = _check_f(K, f)
    Af = sparse.kron(sparse.identity(K.M, format='csr'), sparse.csr_matrix(f[None, :]), format='csr')
    AK = Af @ K.values
    if sparse.issparse(AK):
        AK = AK.toarray()
    return np.asarray(AK)


def apply_Af(f: np.ndarray, K: KernelMatrix, alpha: np.ndarray) -> np.ndarray:
    """``(I_M kron f^T) K alpha``, one value per link."""
    return materialize_AK(f, K) @ _check_alpha(K, alpha)


def materialize_Aalpha(alpha: np.ndarray, K: KernelMatrix) -> np.ndarray:
    """``M x P`` matrix whose row ``n`` is block ``n`` of ``K alpha``."""
    return alpha_to_w(K, alpha).reshape(K.M, K.P)


def apply_Aalpha(alpha: np.ndarray, K: KernelMatrix, f: np.ndarray) -> np.ndarray:
    """``A_alpha f``; equals :meth:`apply_Af` for the same ``(f, K, alpha)``."""
    return materialize_Aalpha(alpha, K) @ _check_f(K, f)


if __name__ == '__main__':
    pass
