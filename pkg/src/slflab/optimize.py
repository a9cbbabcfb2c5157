#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Optimization primitives: soft thresholding, ball projections, spectral norm,
the forward-backward step on the SLF and the projected gradient step on the
kernel coefficients.
"""
from dataclasses import dataclass
from typing import List, Tuple, Union
from warnings import warn

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from slflab.utils import relative_change


class StepSizeError(ValueError):
    pass


@dataclass
class BallConstraint:
    """Closed l2-ball ``{x : ||x - center|| <= radius}``.

    With a boolean ``support`` the coordinates outside it are pinned to the
    center, so the set is the ball of the free coordinates.
    """
    center: np.ndarray
    radius: float
    support: np.ndarray = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).ravel()
        if not np.all(np.isfinite(self.center)):
            raise ValueError("ball center must be finite")
        if not self.radius >= 0:
            raise ValueError(f"radius must be non negative, got {self.radius}")
        if self.support is not None:
            self.support = np.asarray(self.support, dtype=bool).ravel()
            if self.support.shape != self.center.shape:
                raise ValueError(f"support of length {len(self.support)} does not match center of length {len(self.center)}")


class ProductConstraint:
    """Cartesian product of M balls in R^P, acting on vectors of length M*P.

    Parameters
    ----------
    centers : np.ndarray
        ``M x P`` centers.
    radii : Union[float, np.ndarray]
        A common radius or one per ball.
    supports : np.ndarray, optional
        ``M x P`` boolean mask of the free coordinates of every ball; the others
        are pinned to the center. All coordinates are free by default.
    """

    def __init__(self, centers: np.ndarray, radii: Union[float, np.ndarray], supports: np.ndarray = None):
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        if centers.size == 0:
            raise ValueError("a product constraint needs at least one ball")
        if not np.all(np.isfinite(centers)):
            raise ValueError("ball centers must be finite")
        radii = np.broadcast_to(np.asarray(radii, dtype=float), (centers.shape[0],)).copy()
        if np.any(~(radii >= 0)):
            raise ValueError("radii must be non negative")
        if supports is not None:
            supports = np.atleast_2d(np.asarray(supports, dtype=bool))
            if supports.shape != centers.shape:
                raise ValueError(f"supports of shape {supports.shape} do not match centers of shape {centers.shape}")
        self.centers = centers
        self.radii = radii
        self.supports = supports

    @classmethod
    def from_balls(cls, balls: List[BallConstraint]) -> 'ProductConstraint':
        if not balls:
            raise ValueError("a product constraint needs at least one ball")
        if len({len(ball.center) for ball in balls}) != 1:
            raise ValueError("all balls must have the same dimension")
        supports = None
        if any(ball.support is not None for ball in balls):
            supports = np.stack([np.ones(len(ball.center), dtype=bool) if ball.support is None else ball.support
                                 for ball in balls])
        return cls(np.stack([ball.center for ball in balls]), np.array([ball.radius for ball in balls]), supports)

    @property
    def M(self) -> int:
        return self.centers.shape[0]

    @property
    def P(self) -> int:
        return self.centers.shape[1]

    @property
    def balls(self) -> List[BallConstraint]:
        supports = [None] * self.M if self.supports is None else self.supports
        return [BallConstraint(c, r, s) for c, r, s in zip(self.centers, self.radii, supports)]

    def contains(self, alpha: np.ndarray, tol: float = 1e-12) -> bool:
        blocks = np.asarray(alpha, dtype=float).reshape(self.M, self.P)
        diff = blocks - self.centers
        if self.supports is not None and np.any(np.abs(diff[~self.supports]) > tol):
            return False
        return bool(np.all(np.linalg.norm(diff, axis=1) <= self.radii * (1 + tol) + tol))

    def restrict(self, AK: np.ndarray) -> np.ndarray:
        """Columns of ``AK`` that act on free coordinates; its Lipschitz constant bounds the projected steps."""
        if self.supports is None:
            return AK
        return np.asarray(AK)[:, self.supports.ravel()]

    def sample_uniform(self, rng: np.random.Generator) -> np.ndarray:
        """A point drawn uniformly from every ball, flattened to length M*P."""
        direction = rng.standard_normal((self.M, self.P))
        dims = np.full((self.M, 1), self.P)
        if self.supports is not None:
            direction[~self.supports] = 0.0
            dims = np.maximum(self.supports.sum(axis=1, keepdims=True), 1)
        norms = np.linalg.norm(direction, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        scale = self.radii[:, None] * rng.random((self.M, 1))**(1.0 / dims)
        return (self.centers + scale * direction / norms).ravel()


def soft_threshold(x: np.ndarray, lam: float) -> np.ndarray:
    """``sign(x) max(|x| - lam, 0)``, ties ``|x| = lam`` go to 0.

    Example
    -------
    >>> soft_threshold(np.array([1.2, -0.3]), 0.5)
    array([0.7, 0. ])
    """
    if lam < 0:
        raise ValueError(f"threshold must be non negative, got {lam}")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def project_ball(x: np.ndarray, ball: BallConstraint) -> np.ndarray:
    """Euclidean projection onto a ball; points inside are returned unchanged."""
    x = np.asarray(x, dtype=float)
    if x.shape != ball.center.shape:
        raise ValueError(f"dimension mismatch: x has shape {x.shape}, center {ball.center.shape}")
    if ball.support is not None:
        x = np.where(ball.support, x, ball.center)
    diff = x - ball.center
    norm = np.linalg.norm(diff)
    if norm <= ball.radius:
        return x.copy()
    return ball.center + ball.radius * diff / norm


def project_product(alpha: np.ndarray, C: ProductConstraint) -> np.ndarray:
    """Block-wise projection onto a :class:`ProductConstraint`."""
    alpha = np.asarray(alpha, dtype=float).ravel()
    if len(alpha) != C.M * C.P:
        raise ValueError(f"block mismatch: alpha has length {len(alpha)}, constraint is {C.M}x{C.P}")
    blocks = alpha.reshape(C.M, C.P)
    if C.supports is not None:
        blocks = np.where(C.supports, blocks, C.centers)
    diff = blocks - C.centers
    norms = np.linalg.norm(diff, axis=1)
    inside = norms <= C.radii
    scale = np.where(inside, 1.0, C.radii / np.where(inside, 1.0, norms))
    projected = np.where(inside[:, None], blocks, C.centers + scale[:, None] * diff)
    return projected.ravel()


def _trace(op) -> float:
    if hasattr(op, 'diagonal'):
        return float(np.sum(op.diagonal()))
    op = aslinearoperator(op)
    return float(np.trace(op.matmat(np.eye(op.shape[0]))))


def spectral_norm(op: Union[np.ndarray, sparse.spmatrix, LinearOperator], tol: float = 1e-6,
                  max_iter: int = 1000) -> float:
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    The iteration starts from a fixed positive pseudo-random vector and stops
    when the Rayleigh quotient changes less than ``tol`` relatively. When ``max_iter`` is
    reached, or the iterate falls in the null space, the trace is returned as an
    upper bound.

    Parameters
    ----------
    op : Union[np.ndarray, sparse.spmatrix, LinearOperator]
        Symmetric PSD operator.
    tol : float, optional
        Relative tolerance, by default 1e-6.
    max_iter : int, optional
        Maximum number of iterations, by default 1000.

    Returns
    -------
    float
        The estimate.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    linop = aslinearoperator(op)
    n = linop.shape[0]
    if n == 0:
        return 0.0
    x = 1.0 + 0.1 * np.random.default_rng(0).random(n)
    x /= np.linalg.norm(x)
    lam = None
    for _ in range(max_iter):
        y = linop.matvec(x)
        norm = np.linalg.norm(y)
        if norm == 0:
            return max(_trace(op), 0.0)
        new = float(x @ y)
        x = y / norm
        if lam is not None and abs(new - lam) <= tol * abs(new):
            return new
        lam = new
    warn(f"Power iteration did not converge in {max_iter} iterations; using the trace as spectral norm.")
    return _trace(op)


def lipschitz_f(Abar: np.ndarray, t: int, lam2: float) -> float:
    """Lipschitz constant ``||Abar|| / t + lam2`` of the smooth part of the SLF objective."""
    return spectral_norm(Abar) / t + lam2


def lipschitz_alpha(AK: np.ndarray, lam3: float) -> float:
    """Lipschitz constant ``||AK AK^T|| + 2 lam3`` of the coefficient objective."""
    AK = np.asarray(AK)
    return spectral_norm(AK @ AK.T) + 2 * lam3


def step_size(lipschitz: float, eps: float = 0.05) -> float:
    """Largest admissible step ``(1 - eps) / L``; 1 when the gradient is constant."""
    if lipschitz <= 0:
        return 1.0
    return (1 - eps) / lipschitz


def _check_step(step: float, lipschitz: float, eps: float):
    if not step > 0:
        raise StepSizeError(f"step must be positive, got {step}")
    if lipschitz > 0 and step > (1 - eps) / lipschitz * (1 + 1e-12):
        raise StepSizeError(f"step too large: {step} > (1 - {eps}) / {lipschitz}")


def f_objective(f: np.ndarray, Abar: np.ndarray, b: np.ndarray, t: int, lam1: float, lam2: float) -> float:
    """``(1/t)(f'Abar f / 2 - b'f) + lam1 ||f||_1 + lam2 ||f||^2 / 2`` (surrogate without its constant)."""
    return float((0.5 * f @ (Abar @ f) - b @ f) / t + lam1 * np.sum(np.abs(f)) + 0.5 * lam2 * f @ f)


def alpha_objective(alpha: np.ndarray, AK: np.ndarray, s_hat: np.ndarray, lam3: float) -> float:
    """``||s_hat - AK alpha||^2 / 2 + lam3 ||alpha||^2``."""
    residual = s_hat - AK @ alpha
    return float(0.5 * residual @ residual + lam3 * alpha @ alpha)


def fb_step_f(f: np.ndarray, Abar: np.ndarray, b: np.ndarray, t: int, lam1: float, lam2: float, gamma: float,
              lipschitz: float = None, eps: float = 0.05) -> np.ndarray:
    """One forward-backward step on the SLF.

    ``soft_{gamma lam1}(f - gamma((Abar f - b)/t + lam2 f))``

    Parameters
    ----------
    f : np.ndarray
        Current SLF.
    Abar : np.ndarray
        ``P x P`` accumulator.
    b : np.ndarray
        Accumulated right-hand side.
    t : int
        Number of batches, at least 1.
    lam1, lam2 : float
        Elastic-net weights.
    gamma : float
        Step, in ``(0, (1 - eps)/L]``.
    lipschitz : float, optional
        ``L``; computed with :meth:`lipschitz_f` when None.
    eps : float, optional
        Step margin, by default 0.05.

    Returns
    -------
    np.ndarray
        The new SLF; inputs are not modified.

    Raises
    ------
    StepSizeError
        gamma is outside its range.
    """
    if t < 1:
        raise ValueError(f"t must be at least 1, got {t}")
    if lipschitz is None:
        lipschitz = lipschitz_f(Abar, t, lam2)
    _check_step(gamma, lipschitz, eps)
    gradient = (Abar @ f - b) / t + lam2 * f
    return soft_threshold(f - gamma * gradient, gamma * lam1)


def pg_step_alpha(alpha: np.ndarray, AK: np.ndarray, s_hat: np.ndarray, lam3: float, mu: float,
                  C: ProductConstraint, lipschitz: float = None, eps: float = 0.05) -> np.ndarray:
    """One projected gradient step on the kernel coefficients.

    ``proj_C(alpha - mu (AK^T (AK alpha - s_hat) + 2 lam3 alpha))``

    Raises
    ------
    StepSizeError
        mu is outside ``(0, (1 - eps)/L]``.
    """
    if lipschitz is None:
        lipschitz = lipschitz_alpha(C.restrict(AK), lam3)
    _check_step(mu, lipschitz, eps)
    gradient = AK.T @ (AK @ alpha - s_hat) + 2 * lam3 * alpha
    return project_product(alpha - mu * gradient, C)


class DescentAudit:
    """Records objective values around every step and counts increases.

    A step violates descent when ``after > before + tol (1 + |before|)``.
    """

    def __init__(self, tol: float = 1e-12):
        self.tol = tol
        self.records: List[Tuple[str, float, float]] = []
        self.violations = 0

    def record(self, kind: str, before: float, after: float) -> bool:
        ok = after <= before + self.tol * (1 + abs(before))
        self.records.append((kind, before, after))
        if not ok:
            self.violations += 1
        return ok

    def __len__(self) -> int:
        return len(self.records)

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(checks={len(self)}, violations={self.violations})"


def projected_gradient(AK: np.ndarray, s_hat: np.ndarray, lam3: float, C: ProductConstraint,
                       alpha0: np.ndarray = None, tol: float = 1e-10, max_iter: int = 100000,
                       eps: float = 0.05) -> Tuple[np.ndarray, bool]:
    """Minimize ``||s_hat - AK alpha||^2/2 + lam3 ||alpha||^2`` over ``C``.

    Returns
    -------
    Tuple[np.ndarray, bool]
        The minimizer and whether the relative change went below ``tol``.
    """
    alpha = C.centers.ravel().copy() if alpha0 is None else project_product(alpha0, C)
    lipschitz = lipschitz_alpha(C.restrict(AK), lam3)
    mu = step_size(lipschitz, eps)
    for _ in range(max_iter):
        new = pg_step_alpha(alpha, AK, s_hat, lam3, mu, C, lipschitz=lipschitz, eps=eps)
        change = relative_change(new, alpha)
        alpha = new
        if change < tol:
            return alpha, True
    warn(f"Projected gradient did not reach tol = {tol} in {max_iter} iterations.")
    return alpha, False


def forward_backward(Abar: np.ndarray, b: np.ndarray, t: int, lam1: float, lam2: float, f0: np.ndarray,
                     tol: float = 1e-10, max_iter: int = 100000, eps: float = 0.05) -> Tuple[np.ndarray, bool]:
    """Minimize the SLF objective :meth:`f_objective` by forward-backward splitting from ``f0``."""
    f = np.asarray(f0, dtype=float).copy()
    lipschitz = lipschitz_f(Abar, t, lam2)
    gamma = step_size(lipschitz, eps)
    for _ in range(max_iter):
        new = fb_step_f(f, Abar, b, t, lam1, lam2, gamma, lipschitz=lipschitz, eps=eps)
        change = relative_change(new, f)
        f = new
        if change < tol:
            return f, True
    warn(f"Forward-backward did not reach tol = {tol} in {max_iter} iterations.")
    return f, False


if __name__ == '__main__':
    pass
