#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Online reconstruction of the SLF with an adaptive window.

Each batch ``t`` brings measurements ``s_hat_t`` of M links. The window rows of
the batch are ``A_t = reshape(K_t alpha_t)`` with ``alpha_t`` kept inside balls
around the physical model; the SLF minimizes the surrogate

    (1/t) sum_tau ||s_hat_tau - A_tau f||^2 / 2 + lam3 ||alpha_tau||^2
        + lam1 ||f||_1 + lam2 ||f||^2 / 2

through the accumulators ``Abar_t = sum A_tau^T A_tau`` and ``b_t = sum A_tau^T s_hat_tau``.

* :meth:`online_step` alternates one projected gradient step on alpha and one
  forward-backward step on f, a few times per batch.
* :meth:`baseline_step` keeps alpha at the model and only updates f.
* :meth:`alt_min_step` solves both subproblems to convergence (reference solver).
"""
import copy
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import spsolve

from slflab.kernel import (FeatureSet, KernelConfig, KernelMatrix, build_features, build_kernel_matrix,
                           materialize_AK, materialize_Aalpha)
from slflab.optimize import (DescentAudit, ProductConstraint, alpha_objective, f_objective, fb_step_f,
                             forward_backward, lipschitz_alpha, lipschitz_f, pg_step_alpha,
                             projected_gradient, step_size)
from slflab.propagation import WindowModel, window_rows
from slflab.scenario import GridSpec, LinkId, link_pairs
from slflab.utils import relative_change


class DivergenceError(RuntimeError):
    pass


class NoBatchesError(ValueError):
    pass


class ConditioningError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    """Regularization weights and inner-loop settings.

    Parameters
    ----------
    lam1, lam2 : float
        l1 and l2 weights of the elastic net on the SLF.
    lam3 : float
        Ridge weight on the kernel coefficients.
    eps : float
        Step margin, steps are ``(1 - eps) / L``.
    r : float
        Radius of the balls around the model coefficients.
    relative_radius : bool
        Scale the radius of ball j by the norm of its center, so that r is a
        fraction of the model row rather than an absolute length.
    window_support : bool
        Let alpha move only on the pixels where the model row is positive.
    inner_iters : int
        Maximum number of inner iterations per batch.
    inner_tol : float
        Relative change of f that ends the inner loop early.
    seed : int
        Seed of the random initialization of alpha.
    """
    lam1: float = 4e-4
    lam2: float = 1e-5
    lam3: float = 2.2e-4
    eps: float = 0.05
    r: float = 0.0
    relative_radius: bool = True
    window_support: bool = True
    inner_iters: int = 5
    inner_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError(f"eps must be in (0, 1), got {self.eps}")
        for name in ['lam1', 'lam2', 'lam3', 'r', 'inner_tol']:
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non negative, got {getattr(self, name)}")
        if int(self.inner_iters) != self.inner_iters or self.inner_iters < 1:
            raise ValueError(f"inner_iters must be a positive integer, got {self.inner_iters}")


@dataclass
class BatchProblem:
    """Everything the solver needs about one batch."""
    s_hat: np.ndarray
    K: KernelMatrix
    constraint: ProductConstraint
    features: FeatureSet
    links: np.ndarray
    model_rows: np.ndarray = None

    def __post_init__(self):
        self.s_hat = np.asarray(self.s_hat, dtype=float).ravel()
        self.links = np.asarray(self.links, dtype=np.int64).ravel()
        M, P = self.K.M, self.K.P
        if (len(self.s_hat), len(self.links)) != (M, M):
            raise ValueError(f"batch has {len(self.s_hat)} measurements and {len(self.links)} links, kernel expects M = {M}")
        if (self.constraint.M, self.constraint.P) != (M, P) or (self.features.M, self.features.P) != (M, P):
            raise ValueError(f"inconsistent batch shapes, kernel expects M = {M}, P = {P}")
        if self.model_rows is not None and np.shape(self.model_rows) != (M, P):
            raise ValueError(f"model_rows must be {M}x{P}, got {np.shape(self.model_rows)}")

    @property
    def M(self) -> int:
        return self.K.M

    @property
    def P(self) -> int:
        return self.K.P

    @property
    def link_ids(self) -> List[LinkId]:
        i, j = link_pairs(self.links, self.P)
        return [LinkId(int(a), int(b), int(m)) for a, b, m in zip(i, j, self.links)]


def build_constraint(features: FeatureSet, model_rows: np.ndarray, K: KernelMatrix, r: float,
                     reg: float = None, relative_radius: bool = False,
                     window_support: bool = False) -> ProductConstraint:
    """Balls of radius ``r`` around the kernel coefficients of the physical model.

    The reference coefficients solve
    ``min ||K alpha - vec(model_rows)||^2 + reg ||alpha||^2`` with
    ``reg = 1e-8 trace(K) / MP`` by default.

    Parameters
    ----------
    features : FeatureSet
        Batch features.
    model_rows : np.ndarray
        ``M x P`` model window.
    K : KernelMatrix
        Batch kernel.
    r : float
        Radius.
    reg : float, optional
        Ridge weight of the reference fit.
    relative_radius : bool, optional
        Radius of ball j is ``r ||alpha_ref_j||``, by default False.
    window_support : bool, optional
        Pin the coefficients outside the support of the model row to the
        center, by default False.

    Returns
    -------
    ProductConstraint
        The balls.

    Raises
    ------
    ConditioningError
        The regularized system could not be solved; try a larger ``reg``.
    """
    M, P = features.M, features.P
    model_rows = np.asarray(model_rows, dtype=float)
    if model_rows.shape != (M, P) or (K.M, K.P) != (M, P):
        raise ValueError(f"model rows {model_rows.shape} and kernel ({K.M}, {K.P}) must match features ({M}, {P})")
    if reg is None:
        reg = 1e-8 * K.trace() / K.size
    target = model_rows.ravel()
    try:
        if K.is_sparse:
            G = (K.values @ K.values + reg * sparse.identity(K.size, format='csr')).tocsc()
            alpha_ref = spsolve(G, K.values @ target)
        else:
            Kd = K.toarray()
            alpha_ref = scipy.linalg.solve(Kd @ Kd + reg * np.eye(K.size), Kd @ target, assume_a='pos')
    except (np.linalg.LinAlgError, RuntimeError) as e:
        raise ConditioningError(f"Reference coefficients could not be computed ({e}). "
                                f"Use a regularization larger than {reg}.")
    alpha_ref = np.asarray(alpha_ref, dtype=float)
    if not np.all(np.isfinite(alpha_ref)):
        raise ConditioningError(f"Reference coefficients are not finite. Use a regularization larger than {reg}.")
    centers = alpha_ref.reshape(M, P)
    radii = r * np.linalg.norm(centers, axis=1) if relative_radius else r
    supports = model_rows > 0 if window_support else None
    return ProductConstraint(centers, radii, supports)


def prepare_batch(grid: GridSpec, links: np.ndarray, s_hat: np.ndarray, model: WindowModel,
                  kernel: KernelConfig, r: float, reg: float = None, relative_radius: bool = False,
                  window_support: bool = False) -> BatchProblem:
    """Assemble a :class:`BatchProblem` for pixel-to-pixel links; see :meth:`build_constraint`."""
    links = np.asarray(links, dtype=np.int64)
    i, j = link_pairs(links, grid.P)
    xi, xj = grid.coordinates(i), grid.coordinates(j)
    model_rows = window_rows(grid, model, xi, xj)
    features = build_features(grid, xi, xj)
    K = build_kernel_matrix(features, kernel)
    constraint = build_constraint(features, model_rows, K, r, reg, relative_radius, window_support)
    return BatchProblem(s_hat, K, constraint, features, links, model_rows)


class SolverState:
    """Accumulators, current SLF and per-batch history.

    Attributes
    ----------
    Abar : np.ndarray
        ``P x P`` accumulator ``sum A_tau^T A_tau``.
    b : np.ndarray
        ``sum A_tau^T s_hat_tau``.
    f : np.ndarray
        Current SLF estimate, zero before the first batch.
    t : int
        Number of processed batches.
    const : float
        ``sum ||s_hat_tau||^2 / 2 + lam3 ||alpha_tau||^2``, the f-independent part of the surrogate.
    alphas, windows, links : list
        Per batch coefficients, learned window rows (``M x P``) and link indices;
        only filled when ``history`` is True.
    objective_trace : list
        Surrogate value at the SLF estimate after every batch.
    rng : np.random.Generator
        Source of the random initialization of alpha.
    """

    def __init__(self, P: int, hp: Hyperparams, history: bool = True):
        self.P = P
        self.hp = hp
        self.history = history
        self.Abar = np.zeros((P, P))
        self.b = np.zeros(P)
        self.f = np.zeros(P)
        self.t = 0
        self.const = 0.0
        self.alphas = []
        self.windows = []
        self.links = []
        self.objective_trace = []
        self.inner_iterations = []
        self.rng = np.random.default_rng(hp.seed)

    def copy(self) -> 'SolverState':
        new = copy.copy(self)
        for name in ['alphas', 'windows', 'links', 'objective_trace', 'inner_iterations']:
            setattr(new, name, list(getattr(self, name)))
        new.rng = copy.deepcopy(self.rng)
        return new

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(P={self.P}, t={self.t}, history={self.history})"


def surrogate_cost(state: SolverState, f: np.ndarray) -> float:
    """Surrogate of the empirical cost at ``f``, evaluated from the accumulators.

    Raises
    ------
    NoBatchesError
        No batch was processed.
    """
    if state.t == 0:
        raise NoBatchesError("no batches")
    hp = state.hp
    f = np.asarray(f, dtype=float)
    return f_objective(f, state.Abar, state.b, state.t, hp.lam1, hp.lam2) + state.const / state.t


def empirical_cost(batches: Sequence[BatchProblem], f: np.ndarray, hp: Hyperparams,
                   alphas0: Sequence[np.ndarray] = None, tol: float = 1e-10, max_iter: int = 100000) -> float:
    """Empirical cost: each batch contributes its coefficient subproblem minimized at fixed ``f``.

    Parameters
    ----------
    batches : Sequence[BatchProblem]
        Processed batches.
    f : np.ndarray
        SLF.
    hp : Hyperparams
        Weights.
    alphas0 : Sequence[np.ndarray], optional
        Starting points of the inner minimizations (e.g. ``state.alphas``),
        the ball centers by default.
    tol : float, optional
        Relative change that ends each inner minimization, by default 1e-10.
    max_iter : int, optional
        Cap of each inner minimization, by default 100000.

    Returns
    -------
    float
        The cost.
    """
    if not batches:
        raise NoBatchesError("no batches")
    f = np.asarray(f, dtype=float)
    total = 0.0
    for tau, batch in enumerate(batches):
        AK = materialize_AK(f, batch.K)
        alpha0 = None if alphas0 is None else alphas0[tau]
        alpha, _ = projected_gradient(AK, batch.s_hat, hp.lam3, batch.constraint, alpha0=alpha0,
                                      tol=tol, max_iter=max_iter, eps=hp.eps)
        total += alpha_objective(alpha, AK, batch.s_hat, hp.lam3)
    return total / len(batches) + hp.lam1 * np.sum(np.abs(f)) + 0.5 * hp.lam2 * f @ f


def _check_batch(state: SolverState, batch: BatchProblem):
    if batch.P != state.P:
        raise ValueError(f"batch has P = {batch.P}, state has P = {state.P}")


def _check_finite(*arrays):
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise DivergenceError("divergence detected")


def _commit(state: SolverState, hp: Hyperparams, rng: np.random.Generator, batch: BatchProblem,
            alpha: np.ndarray, A: np.ndarray, Abar: np.ndarray, b: np.ndarray, f: np.ndarray,
            iterations: int) -> SolverState:
    new = state.copy()
    new.hp = hp
    new.rng = rng
    new.Abar, new.b, new.f = Abar, b, f
    new.t = state.t + 1
    new.const = state.const + 0.5 * batch.s_hat @ batch.s_hat + hp.lam3 * alpha @ alpha
    if state.history:
        new.alphas.append(alpha)
        new.windows.append(A)
        new.links.append(batch.links)
    new.inner_iterations.append(iterations)
    new.objective_trace.append(surrogate_cost(new, f))
    return new


def _descend(state: SolverState, batch: BatchProblem, hp: Hyperparams, adapt_window: bool,
             audit: DescentAudit = None) -> SolverState:
    _check_batch(state, batch)
    t = state.t + 1
    rng = copy.deepcopy(state.rng)
    C = batch.constraint
    alpha = C.sample_uniform(rng) if adapt_window else C.centers.ravel().copy()
    f = state.f
    A = Abar = b = None
    n = 0
    for n in range(1, hp.inner_iters + 1):
        if adapt_window:
            AK = materialize_AK(f, batch.K)
            lipschitz = lipschitz_alpha(C.restrict(AK), hp.lam3)
            new_alpha = pg_step_alpha(alpha, AK, batch.s_hat, hp.lam3, step_size(lipschitz, hp.eps), C,
                                      lipschitz=lipschitz, eps=hp.eps)
            if audit is not None:
                audit.record('alpha', alpha_objective(alpha, AK, batch.s_hat, hp.lam3),
                             alpha_objective(new_alpha, AK, batch.s_hat, hp.lam3))
            alpha = new_alpha
        if A is None or adapt_window:
            # provisional contribution of batch t with the latest alpha
            A = materialize_Aalpha(alpha, batch.K)
            Abar = state.Abar + A.T @ A
            b = state.b + A.T @ batch.s_hat
            L_g = lipschitz_f(Abar, t, hp.lam2)
            gamma = step_size(L_g, hp.eps)
        new_f = fb_step_f(f, Abar, b, t, hp.lam1, hp.lam2, gamma, lipschitz=L_g, eps=hp.eps)
        if audit is not None:
            audit.record('f', f_objective(f, Abar, b, t, hp.lam1, hp.lam2),
                         f_objective(new_f, Abar, b, t, hp.lam1, hp.lam2))
        _check_finite(new_f, alpha)
        change = relative_change(new_f, f)
        f = new_f
        if change < hp.inner_tol:
            break
    return _commit(state, hp, rng, batch, alpha, A, Abar, b, f, n)


def online_step(state: SolverState, batch: BatchProblem, hp: Hyperparams, audit: DescentAudit = None) -> SolverState:
    """Process one batch with the online descent alternation.

    alpha starts uniformly at random inside the balls; then, up to
    ``hp.inner_iters`` times, one projected gradient step on alpha, the
    provisional accumulators are rebuilt with the new alpha and one
    forward-backward step on f follows. The loop ends early when f changes
    less than ``hp.inner_tol`` relatively. The SLF is warm-started from the
    previous estimate. The input state is not modified.

    Parameters
    ----------
    state : SolverState
        State after ``t - 1`` batches.
    batch : BatchProblem
        Batch ``t``.
    hp : Hyperparams
        Weights and loop settings.
    audit : DescentAudit, optional
        Receives the objective before and after every step.

    Returns
    -------
    SolverState
        State after ``t`` batches.

    Raises
    ------
    DivergenceError
        A non-finite iterate appeared.
    """
    return _descend(state, batch, hp, adapt_window=True, audit=audit)


def baseline_step(state: SolverState, batch: BatchProblem, hp: Hyperparams, audit: DescentAudit = None) -> SolverState:
    """Process one batch with the window fixed at the physical model.

    alpha is held at the ball centers and only f is updated, through the same
    code path as :meth:`online_step`; with ``r = 0`` both produce identical states.
    """
    return _descend(state, batch, hp, adapt_window=False, audit=audit)


def alt_min_step(state: SolverState, batch: BatchProblem, hp: Hyperparams, tol: float = 1e-10,
                 max_iter: int = 100000) -> SolverState:
    """Process one batch solving both subproblems to convergence.

    alpha minimizes the batch objective at the previous SLF over the balls,
    the accumulators are committed and f minimizes the surrogate (warm start).
    Meant for small instances.
    """
    _check_batch(state, batch)
    t = state.t + 1
    AK = materialize_AK(state.f, batch.K)
    alpha, _ = projected_gradient(AK, batch.s_hat, hp.lam3, batch.constraint, tol=tol, max_iter=max_iter, eps=hp.eps)
    A = materialize_Aalpha(alpha, batch.K)
    Abar = state.Abar + A.T @ A
    b = state.b + A.T @ batch.s_hat
    f, _ = forward_backward(Abar, b, t, hp.lam1, hp.lam2, state.f, tol=tol, max_iter=max_iter, eps=hp.eps)
    _check_finite(f, alpha)
    return _commit(state, hp, copy.deepcopy(state.rng), batch, alpha, A, Abar, b, f, 1)


STEPS = {
    'online': online_step,
    'baseline': baseline_step,
    'altmin': alt_min_step,
}


if __name__ == '__main__':
    pass
