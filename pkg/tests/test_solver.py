#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import numpy as np
import pytest

from slflab import solver
from slflab.kernel import KernelConfig, alpha_to_w
from slflab.optimize import DescentAudit
from slflab.propagation import WindowModel, true_windows
from slflab.scenario import GridSpec, Scenario

WINDOW = WindowModel(eta=0.5)
KERNEL = KernelConfig()


def small_scenario():
    grid = GridSpec(6, 5, 1.0)
    slf = np.zeros((5, 6))
    slf[1:4, 2:4] = 1.0
    slf[0, 5] = 0.3
    return Scenario(grid, slf.ravel(), np.ones(grid.P, dtype=bool), name='small')


def make_batches(scenario, r, n_batches=3, M=4, seed=0):
    rng = np.random.default_rng(seed)
    links = scenario.road_links()
    batches = []
    for _ in range(n_batches):
        chosen = rng.choice(links, size=M, replace=False)
        s_hat = true_windows(scenario, WINDOW, chosen) @ scenario.slf
        batches.append(solver.prepare_batch(scenario.grid, chosen, s_hat, WINDOW, KERNEL, r))
    return batches


def run(step, batches, hp, **kwargs):
    state = solver.SolverState(batches[0].P, hp)
    for batch in batches:
        state = step(state, batch, hp, **kwargs)
    return state


def test_hyperparams_validation():
    hp = solver.Hyperparams()
    assert (hp.lam1, hp.lam2, hp.lam3, hp.eps) == (4e-4, 1e-5, 2.2e-4, 0.05)
    with pytest.raises(ValueError):
        solver.Hyperparams(eps=1.0)
    with pytest.raises(ValueError):
        solver.Hyperparams(lam1=-1.0)
    with pytest.raises(ValueError):
        solver.Hyperparams(inner_iters=0)


def test_constraint_centers_reproduce_model():
    s = small_scenario()
    batch = make_batches(s, r=0.1, n_batches=1)[0]
    assert (batch.M, batch.P) == (4, 30)
    assert [link.m for link in batch.link_ids] == list(batch.links)
    w = alpha_to_w(batch.K, batch.constraint.centers.ravel()).reshape(batch.M, batch.P)
    np.testing.assert_allclose(w, batch.model_rows, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(batch.constraint.radii, 0.1)


def test_constraint_conditioning():
    s = small_scenario()
    batch = make_batches(s, r=0.0, n_batches=1)[0]
    with pytest.raises(solver.ConditioningError):
        solver.build_constraint(batch.features, batch.model_rows, batch.K, 0.0, reg=-1.0)


def test_batch_shapes():
    s = small_scenario()
    batch = make_batches(s, r=0.0, n_batches=1)[0]
    with pytest.raises(ValueError):
        solver.BatchProblem(batch.s_hat[:3], batch.K, batch.constraint, batch.features, batch.links)
    with pytest.raises(ValueError):
        solver.online_step(solver.SolverState(29, solver.Hyperparams()), batch, solver.Hyperparams())


def test_zero_radius_matches_baseline():
    s = small_scenario()
    hp = solver.Hyperparams(r=0.0, lam1=1e-3, lam2=1e-3)
    batches = make_batches(s, r=0.0)
    online = run(solver.online_step, batches, hp)
    baseline = run(solver.baseline_step, batches, hp)
    np.testing.assert_array_equal(online.f, baseline.f)
    np.testing.assert_array_equal(online.Abar, baseline.Abar)
    np.testing.assert_array_equal(online.b, baseline.b)
    assert online.objective_trace == baseline.objective_trace


def test_online_step_keeps_input_state():
    s = small_scenario()
    hp = solver.Hyperparams(r=0.05)
    batch = make_batches(s, r=0.05, n_batches=1)[0]
    state = solver.SolverState(s.P, hp)
    new = solver.online_step(state, batch, hp)
    assert state.t == 0 and new.t == 1
    assert np.all(state.f == 0) and np.all(state.Abar == 0)
    assert len(state.alphas) == 0 and len(new.alphas) == 1
    # same input state, same outcome
    again = solver.online_step(state, batch, hp)
    np.testing.assert_array_equal(again.f, new.f)


def test_online_iterates_stay_feasible_and_descend():
    s = small_scenario()
    hp = solver.Hyperparams(r=0.05, lam1=1e-3, lam2=1e-3, inner_iters=4)
    batches = make_batches(s, r=0.05, n_batches=4)
    audit = DescentAudit()
    state = run(solver.online_step, batches, hp, audit=audit)
    assert state.t == 4
    assert len(state.objective_trace) == 4 and len(state.windows) == 4
    for alpha, batch, window in zip(state.alphas, batches, state.windows):
        assert batch.constraint.contains(alpha)
        np.testing.assert_allclose(window.ravel(), alpha_to_w(batch.K, alpha))
    assert len(audit) > 0
    assert audit.violations == 0
    assert all(1 <= n <= 4 for n in state.inner_iterations)


def test_surrogate_dominates_empirical_cost():
    s = small_scenario()
    hp = solver.Hyperparams(r=0.05, lam1=1e-3, lam2=1e-3)
    batches = make_batches(s, r=0.05, n_batches=3)
    state = run(solver.online_step, batches, hp)
    surrogate = solver.surrogate_cost(state, state.f)
    assert surrogate == pytest.approx(state.objective_trace[-1])
    empirical = solver.empirical_cost(batches, state.f, hp, alphas0=state.alphas, tol=1e-8, max_iter=500)
    assert surrogate >= empirical - 1e-9 * (1 + abs(surrogate))


def test_no_batches():
    hp = solver.Hyperparams()
    with pytest.raises(solver.NoBatchesError, match="no batches"):
        solver.surrogate_cost(solver.SolverState(30, hp), np.zeros(30))
    with pytest.raises(solver.NoBatchesError):
        solver.empirical_cost([], np.zeros(30), hp)


def test_divergence_is_reported():
    s = small_scenario()
    hp = solver.Hyperparams()
    batch = make_batches(s, r=0.0, n_batches=1)[0]
    batch.s_hat = batch.s_hat.copy()
    batch.s_hat[0] = np.inf
    with pytest.raises(solver.DivergenceError, match="divergence detected"):
        with np.errstate(invalid='ignore'):
            solver.baseline_step(solver.SolverState(s.P, hp), batch, hp)


def test_alt_min_step():
    s = small_scenario()
    hp = solver.Hyperparams(r=0.05, lam1=1e-3, lam2=1e-2, lam3=1e-2)
    batches = make_batches(s, r=0.05, n_batches=2, M=3)
    state = solver.SolverState(s.P, hp)
    for batch in batches:
        state = solver.STEPS['altmin'](state, batch, hp, tol=1e-8, max_iter=20000)
    assert state.t == 2
    assert np.all(np.isfinite(state.f))
    for alpha, batch in zip(state.alphas, batches):
        assert batch.constraint.contains(alpha)
    assert np.isfinite(solver.surrogate_cost(state, state.f))


def test_state_without_history():
    s = small_scenario()
    hp = solver.Hyperparams(r=0.05)
    batch = make_batches(s, r=0.05, n_batches=1)[0]
    state = solver.online_step(solver.SolverState(s.P, hp, history=False), batch, hp)
    assert state.t == 1 and state.alphas == [] and state.windows == []


def tiny_scenario():
    grid = GridSpec(5, 5, 1.0)
    slf = np.zeros((5, 5))
    slf[1:3, 2:4] = 1.0
    slf[4, 0] = 0.5
    return Scenario(grid, slf.ravel(), np.ones(grid.P, dtype=bool), name='tiny')


def test_surrogate_dominates_at_every_batch():
    s = tiny_scenario()
    hp = solver.Hyperparams(r=0.1, lam1=1e-3, lam2=1e-2, lam3=5e-2)
    batches = make_batches(s, r=0.1, n_batches=50, M=3, seed=4)
    state = solver.SolverState(s.P, hp)
    for t, batch in enumerate(batches, start=1):
        state = solver.online_step(state, batch, hp)
        surrogate = solver.surrogate_cost(state, state.f)
        empirical = solver.empirical_cost(batches[:t], state.f, hp, alphas0=state.alphas, tol=1e-10,
                                          max_iter=100000)
        assert surrogate >= empirical - 1e-9 * (1 + abs(surrogate)), t


def test_accumulated_gram_is_psd():
    s = tiny_scenario()
    hp = solver.Hyperparams(r=0.1, lam1=1e-3, lam2=1e-3)
    state = run(solver.online_step, make_batches(s, r=0.1, n_batches=10, M=4, seed=5), hp)
    np.testing.assert_allclose(state.Abar, state.Abar.T)
    eigenvalues = np.linalg.eigvalsh(state.Abar)
    assert eigenvalues[0] >= -1e-10 * max(eigenvalues[-1], 1.0)


def test_relative_radius_and_window_support():
    s = small_scenario()
    batch = make_batches(s, r=0.0, n_batches=1)[0]
    C = solver.build_constraint(batch.features, batch.model_rows, batch.K, 0.2, relative_radius=True,
                                window_support=True)
    np.testing.assert_allclose(C.radii, 0.2 * np.linalg.norm(C.centers, axis=1))
    np.testing.assert_array_equal(C.supports, batch.model_rows > 0)
    hp = solver.Hyperparams(r=0.2, lam1=1e-3, lam2=1e-3)
    adaptive = solver.BatchProblem(batch.s_hat, batch.K, C, batch.features, batch.links, batch.model_rows)
    state = run(solver.online_step, [adaptive, adaptive], hp)
    for alpha in state.alphas:
        blocks = alpha.reshape(C.M, C.P)
        np.testing.assert_array_equal(blocks[~C.supports], C.centers[~C.supports])
        assert C.contains(alpha)
