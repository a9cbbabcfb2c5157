#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Metrics, experiment orchestration (single runs, radius and training-size
sweeps) and artifacts (learning curves, reports, SLF images).
"""
import dataclasses
import datetime
import json
import os
import time
from dataclasses import dataclass, field
from typing import Dict, Sequence, Union
from warnings import warn

import numpy as np
import pandas as pd
import tqdm

import slflab
from slflab import __version__
from slflab.kernel import KernelConfig
from slflab.measurements import BatchSampler, StreamConfig, split_train_test
from slflab.optimize import DescentAudit
from slflab.propagation import (PathLossParams, PerturbedWindow, WindowModel, build_weight_matrix,
                                free_space_pathloss, synth_shadowing, true_shadowing, true_windows,
                                window_rows)
from slflab.scenario import GridSpec, Scenario, SelfLinkError, link_indices, phi1
from slflab.solver import STEPS, Hyperparams, SolverState, prepare_batch
from slflab.utils import dump_object, parallel_map

FORMAT_VERSION = 1
CURVE_COLUMNS = ['t', 'cost', 'nmse_f', 'nmse_s', 'nmse_w']


class NMSEUndefinedError(ValueError):
    pass


def nmse(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Normalized mean squared error ``||estimate - truth||^2 / ||truth||^2``.

    Raises
    ------
    NMSEUndefinedError
        truth is all zeros.
    """
    estimate = np.asarray(estimate, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if estimate.shape != truth.shape:
        raise ValueError(f"length mismatch: {len(estimate)} != {len(truth)}")
    norm = truth @ truth
    if norm == 0:
        raise NMSEUndefinedError("NMSE undefined")
    diff = estimate - truth
    return float(diff @ diff / norm)


def eval_w_nmse(state: SolverState, truth_windows: Sequence[np.ndarray]) -> float:
    """NMSE of the learned window rows of every processed batch.

    Parameters
    ----------
    state : SolverState
        A state created with ``history=True``.
    truth_windows : Sequence[np.ndarray]
        Ground-truth ``M x P`` rows of the same batches, in order.
    """
    if not state.history:
        raise ValueError("the state keeps no window history")
    if len(truth_windows) != len(state.windows):
        raise ValueError(f"{len(truth_windows)} truth batches for {len(state.windows)} processed batches")
    estimate = np.concatenate([w.ravel() for w in state.windows])
    truth = np.concatenate([np.asarray(w, dtype=float).ravel() for w in truth_windows])
    return nmse(estimate, truth)


def iterate_gap_ratio(f_trace: Sequence[np.ndarray], early: tuple = (5, 20), late: tuple = (20, 200)) -> float:
    """Growth diagnostic of ``g_t = t ||f_t - f_{t+1}||``.

    Returns ``max(g_t, t in late) / median(g_t, t in early)``; it stays bounded
    when the iterate gaps decay like ``1/t``. ``f_trace[0]`` is ``f_1``.
    """
    f_trace = np.asarray(f_trace, dtype=float)
    t = np.arange(1, len(f_trace))
    gaps = t * np.linalg.norm(np.diff(f_trace, axis=0), axis=1)
    early_gaps = gaps[(t >= early[0]) & (t <= early[1])]
    late_gaps = gaps[(t >= late[0]) & (t <= late[1])]
    if len(early_gaps) == 0 or len(late_gaps) == 0:
        raise ValueError(f"a trace of {len(f_trace)} iterates does not cover t in {early} and {late}")
    reference = np.median(early_gaps)
    if reference == 0:
        return 0.0 if np.max(late_gaps) == 0 else np.inf
    return float(np.max(late_gaps) / reference)


def predict_shadowing(grid: GridSpec, f: np.ndarray, model: WindowModel, xi: np.ndarray, xj: np.ndarray) -> np.ndarray:
    """Shadowing between arbitrary coordinates (shape ``(n, 2)``) under ``model`` and SLF ``f``.

    Raises
    ------
    SelfLinkError
        Two endpoints coincide.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    xj = np.atleast_2d(np.asarray(xj, dtype=float))
    if np.any(phi1(xi, xj) == 0):
        raise SelfLinkError("self-link undefined")
    return window_rows(grid, model, xi, xj) @ np.asarray(f, dtype=float)


def predict_pathloss(grid: GridSpec, f: np.ndarray, model: WindowModel, params: PathLossParams,
                     xi: np.ndarray, xj: np.ndarray) -> np.ndarray:
    """Any-to-any path loss: free space loss plus :meth:`predict_shadowing`."""
    shadow = predict_shadowing(grid, f, model, xi, xj)
    return free_space_pathloss(params, phi1(np.atleast_2d(xi), np.atleast_2d(xj))) + shadow


def export_slf_map(f: np.ndarray, grid: GridSpec, path: str):
    """Write the SLF as an ASCII portable graymap (P2), one image row per grid row.

    Values are ``round(255 clamp(f, 0, 1))``.
    """
    f = np.asarray(f, dtype=float).ravel()
    if len(f) != grid.P:
        raise ValueError(f"f has length {len(f)}, grid has P = {grid.P}")
    levels = np.floor(255 * np.clip(f, 0, 1) + 0.5).astype(int).reshape(grid.py, grid.px)
    with open(path, 'w') as out:
        out.write(f"P2\n{grid.px} {grid.py}\n255\n")
        for row in levels:
            out.write(' '.join(str(value) for value in row) + '\n')


def read_pgm(path: str) -> np.ndarray:
    """Read an ASCII P2 graymap as a ``height x width`` integer array."""
    with open(path, 'r') as f:
        tokens = [token for line in f for token in line.split('#')[0].split()]
    if not tokens or tokens[0] != 'P2':
        raise ValueError(f"{path} is not an ASCII portable graymap")
    width, height = int(tokens[1]), int(tokens[2])
    values = np.array(tokens[4:], dtype=int)
    if len(values) != width * height:
        raise ValueError(f"{path}: expected {width * height} values, found {len(values)}")
    return values.reshape(height, width)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(key): _jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(value) for value in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


@dataclass
class ExperimentReport:
    """Outcome of a run.

    Attributes
    ----------
    per_t : pandas.DataFrame
        Learning curve with columns ``t, cost, nmse_f, nmse_s, nmse_w``.
    config_echo : dict
        Fully resolved configuration.
    runtime_s : float
        Wall time spent in the solver loop.
    f : np.ndarray
        Final SLF estimate.
    grid : GridSpec
        The map.
    notes : dict
        Evaluation choices (NMSE target set, sampling mode, descent audit).
    """
    per_t: pd.DataFrame
    config_echo: dict
    runtime_s: float
    f: np.ndarray
    grid: GridSpec
    notes: dict = field(default_factory=dict)

    def final(self) -> dict:
        if len(self.per_t) == 0:
            return {}
        return {key: float(value) for key, value in self.per_t.iloc[-1].items()}

    def write(self, outdir: str):
        """Write ``learning_curve.csv``, ``report.json`` and ``slf_map.pgm`` into ``outdir``."""
        os.makedirs(outdir, exist_ok=True)
        self.per_t[CURVE_COLUMNS].to_csv(os.path.join(outdir, 'learning_curve.csv'), index=False, float_format='%.12e')
        summary = {
            'format_version': FORMAT_VERSION,
            'slflab_version': __version__,
            'config': self.config_echo,
            'final': self.final(),
            'runtime_s': self.runtime_s,
            'notes': self.notes,
        }
        with open(os.path.join(outdir, 'report.json'), 'w') as f:
            json.dump(_jsonable(summary), f, indent=2, sort_keys=True)
        export_slf_map(self.f, self.grid, os.path.join(outdir, 'slf_map.pgm'))


class Experiment:
    """An online reconstruction run over a measurement stream.

    Like a long optimization it can be called several times, pickled in the
    middle and resumed; every random source lives in the object so that a
    resumed run reproduces an uninterrupted one bit by bit.

    Parameters
    ----------
    source : Union[Scenario, pandas.DataFrame]
        A scenario (synthetic measurements are generated from its SLF) or a
        shadowing table with columns ``i, j, distance_m, shadow_db``.
    algorithm : str, optional
        ``online``, ``baseline`` or ``altmin``, by default ``online``.
    hp : Hyperparams, optional
        Solver settings.
    stream : StreamConfig, optional
        Batch size, number of batches, seed and sampling mode.
    window : WindowModel, optional
        Physical window model.
    kernel : KernelConfig, optional
        Kernel settings.
    grid : GridSpec, optional
        Map of a shadowing table; ignored for scenarios.
    truth : PerturbedWindow, optional
        Departure of the true window from the model (synthetic only).
    noise_std : float, optional
        Std of the Gaussian noise added to the synthetic measurements (dB).
    holdout : float, optional
        Share of the road-to-road links held out for the shadowing NMSE (synthetic only).
    test_set : pandas.DataFrame, optional
        Held-out shadowing table (tables only); in-sample evaluation otherwise.
    history : bool, optional
        Keep per batch coefficients and windows (needed by the window NMSE).
    keep_batches : bool, optional
        Keep every :class:`slflab.solver.BatchProblem` (small instances only).
    keep_f : bool, optional
        Keep the SLF estimate after every batch.
    checkpoint : bool, optional
        Write ``cpt.pbz2`` into ``outdir`` every ``save_every`` batches.
    save_every : int, optional
        Checkpoint period.
    outdir : str, optional
        Directory of the checkpoints.
    config_echo : dict, optional
        Extra configuration echoed in the report.
    """

    def __init__(self, source: Union[Scenario, pd.DataFrame], algorithm: str = 'online', hp: Hyperparams = None,
                 stream: StreamConfig = None, window: WindowModel = None, kernel: KernelConfig = None,
                 grid: GridSpec = None, truth: PerturbedWindow = None, noise_std: float = 0.0,
                 holdout: float = 0.1, test_set: pd.DataFrame = None, history: bool = True,
                 keep_batches: bool = False, keep_f: bool = False, checkpoint: bool = False,
                 save_every: int = 0, outdir: str = '.', config_echo: dict = None) -> None:
        if algorithm not in STEPS:
            raise ValueError(f"Unknown algorithm '{algorithm}'. Choose from: {list(STEPS)}")
        if not 0 <= holdout < 1:
            raise ValueError(f"holdout must be in [0, 1), got {holdout}")
        self.__slflab_version__ = __version__
        self.algorithm = algorithm
        self.hp = hp or Hyperparams()
        self.stream = stream or StreamConfig()
        self.window = window or WindowModel()
        self.kernel = kernel or KernelConfig()
        self.truth = truth
        self.noise_std = noise_std
        self.holdout = holdout
        self.history = history
        self.keep_batches = keep_batches
        self.keep_f = keep_f
        self.checkpoint = checkpoint
        self.save_every = save_every
        self.outdir = outdir
        self.runtime_s = 0.0
        self.NumCalls = 0
        self.rows = []
        self.batches = []
        self.f_trace = []
        self.truth_windows = []
        self.audit = DescentAudit()
        self._noise_rng = np.random.default_rng([self.stream.seed, 1])

        if isinstance(source, Scenario):
            self._set_synthetic(source)
        elif isinstance(source, pd.DataFrame):
            if grid is None:
                raise ValueError("a grid is needed to run on a shadowing table")
            self._set_dataset(source, grid, test_set)
        else:
            raise TypeError(f"source must be a Scenario or a pandas.DataFrame, got {type(source).__name__}")

        self.state = SolverState(self.grid.P, self.hp, history=history)
        self.config_echo = {
            'algorithm': algorithm,
            'hp': dataclasses.asdict(self.hp),
            'stream': dataclasses.asdict(self.stream),
            'window': dataclasses.asdict(self.window),
            'kernel': dataclasses.asdict(self.kernel),
            'truth': dataclasses.asdict(truth) if truth else None,
            'noise_std': noise_std,
            'holdout': holdout,
            'grid': dataclasses.asdict(self.grid),
        }
        if config_echo:
            self.config_echo.update(config_echo)

    def _set_synthetic(self, scenario: Scenario):
        if not scenario.has_truth:
            raise ValueError(f"scenario {scenario.name} has no ground-truth SLF to synthesize measurements")
        self.scenario = scenario
        self.dataset = None
        self.grid = scenario.grid
        links = scenario.road_links()
        n_held = int(round(self.holdout * len(links)))
        rng = np.random.default_rng([self.stream.seed, 2])
        held = np.sort(rng.choice(links, size=n_held, replace=False)) if n_held else np.empty(0, dtype=np.int64)
        self.sampler = BatchSampler(links[~np.isin(links, held)], self.stream)
        if n_held:
            self._eval_W = build_weight_matrix(scenario, self.window, held, sparse=True)
            self._eval_s = true_shadowing(scenario, self.window, held, self.truth)
            self.nmse_s_target = f'held-out ({n_held} road-to-road links)'
        else:
            self._eval_W, self._eval_s = None, None
            self.nmse_s_target = 'none'

    def _set_dataset(self, dataset: pd.DataFrame, grid: GridSpec, test_set: pd.DataFrame):
        self.scenario = None
        self.grid = grid
        self.dataset = dataset.reset_index(drop=True)
        self._links = link_indices(self.dataset['i'].to_numpy(), self.dataset['j'].to_numpy(), grid.P)
        self.sampler = BatchSampler(np.arange(len(self.dataset)), self.stream)
        evaluation = test_set if test_set is not None and len(test_set) else self.dataset
        self.nmse_s_target = (f'held-out ({len(test_set)} samples)' if evaluation is test_set
                              else f'in-sample ({len(self.dataset)} samples)')
        links = link_indices(evaluation['i'].to_numpy(), evaluation['j'].to_numpy(), grid.P)
        self._eval_W = build_weight_matrix(grid, self.window, links, sparse=True)
        self._eval_s = evaluation['shadow_db'].to_numpy(dtype=float)

    @property
    def t(self) -> int:
        return self.state.t

    def _next_measurements(self):
        items = self.sampler.next_batch()
        if self.scenario is None:
            return self._links[items], self.dataset['shadow_db'].to_numpy(dtype=float)[items], None
        rows = true_windows(self.scenario, self.window, items, self.truth)
        s_hat = rows @ self.scenario.slf
        if self.noise_std > 0:
            s_hat = s_hat + self._noise_rng.normal(0.0, self.noise_std, size=len(s_hat))
        return items, s_hat, rows

    def _metric(self, estimate, truth) -> float:
        try:
            return nmse(estimate, truth)
        except NMSEUndefinedError:
            return np.nan

    def step(self):
        """Acquire one batch and run one outer iteration."""
        links, s_hat, truth_rows = self._next_measurements()
        batch = prepare_batch(self.grid, links, s_hat, self.window, self.kernel, self.hp.r,
                              relative_radius=self.hp.relative_radius, window_support=self.hp.window_support)
        if self.algorithm == 'altmin':
            self.state = STEPS[self.algorithm](self.state, batch, self.hp)
        else:
            self.state = STEPS[self.algorithm](self.state, batch, self.hp, audit=self.audit)
        if self.keep_batches:
            self.batches.append(batch)
        if self.keep_f:
            self.f_trace.append(self.state.f.copy())

        f = self.state.f
        row = {'t': self.state.t, 'cost': self.state.objective_trace[-1],
               'nmse_f': np.nan, 'nmse_s': np.nan, 'nmse_w': np.nan}
        if self.scenario is not None:
            row['nmse_f'] = self._metric(f, self.scenario.slf)
            if self.history:
                self.truth_windows.append(truth_rows)
                try:
                    row['nmse_w'] = eval_w_nmse(self.state, self.truth_windows)
                except NMSEUndefinedError:
                    pass
        if self._eval_W is not None:
            row['nmse_s'] = self._metric(synth_shadowing(self._eval_W, f), self._eval_s)
        self.rows.append(row)
        if slflab.verbose:
            print(f"t = {row['t']}: cost = {row['cost']:.6e}, NMSE(f) = {row['nmse_f']:.4e}, "
                  f"NMSE(s) = {row['nmse_s']:.4e}, NMSE(w) = {row['nmse_w']:.4e}")

    def __call__(self, steps: int = None) -> ExperimentReport:
        """Run ``steps`` batches (all the remaining ones by default).

        Returns
        -------
        ExperimentReport
            The report after the last batch.
        """
        ts = time.time()
        self.NumCalls += 1
        if self.__slflab_version__ != __version__:
            warn(f"{self.__class__.__name__} was initialized with slflab-{self.__slflab_version__} "
                 f"but was called with slflab-{__version__}")
        remaining = self.stream.t_max - self.state.t
        n = remaining if steps is None else max(0, min(steps, remaining))
        iterator = tqdm.tqdm(range(n), desc=self.algorithm) if slflab.verbose else range(n)
        for _ in iterator:
            self.step()
            if self.checkpoint and self.save_every and self.state.t % self.save_every == 0:
                self.runtime_s += time.time() - ts
                ts = time.time()
                os.makedirs(self.outdir, exist_ok=True)
                dump_object(self, os.path.join(self.outdir, 'cpt'), compress=True)
        self.runtime_s += time.time() - ts
        if slflab.verbose:
            print(f"Finished {self.state.t} / {self.stream.t_max} batches at {datetime.datetime.now().strftime('%c')} "
                  f"({self.runtime_s:.2f} s). {self.audit}")
        return self.report()

    def to_dataframe(self) -> pd.DataFrame:
        """The learning curve."""
        return pd.DataFrame(self.rows, columns=CURVE_COLUMNS)

    def report(self) -> ExperimentReport:
        notes = {
            'nmse_s_target': self.nmse_s_target,
            'nmse_s_truth': 'clean synthesized shadowing' if self.scenario is not None else 'measured shadowing',
            'nmse_s_window': 'physical model',
            'sampling': 'with replacement' if self.stream.replacement else 'without replacement (epochs)',
            'descent_checks': len(self.audit),
            'descent_violations': self.audit.violations,
        }
        return ExperimentReport(self.to_dataframe(), self.config_echo, self.runtime_s, self.state.f.copy(),
                                self.grid, notes)

    def pickle(self, title: str, compress: bool = False) -> str:
        """Pickle the whole experiment with :meth:`slflab.utils.dump_object`.

        Parameters
        ----------
        title : str
            Name of the file without extension.
        compress : bool, optional
            Write ``.pbz2`` instead of ``.pkl``, by default False.

        Returns
        -------
        str
            The written path.
        """
        cls = self.__class__
        result = cls.__new__(cls)
        result.__dict__.update(self.__dict__)
        return dump_object(result, title, compress=compress)

    def __repr__(self) -> str:
        return (f"{self.__class__.__name__}(algorithm={self.algorithm}, t={self.state.t}/{self.stream.t_max}, "
                f"P={self.grid.P}, M={self.stream.M}, r={self.hp.r})")


def run_experiment(source: Union[Scenario, pd.DataFrame], algorithm: str = 'online', hp: Hyperparams = None,
                   stream: StreamConfig = None, **kwargs) -> ExperimentReport:
    """Build an :class:`Experiment` and run it to ``stream.t_max``."""
    return Experiment(source, algorithm=algorithm, hp=hp, stream=stream, **kwargs)()


def _run_arm(kwargs: dict) -> ExperimentReport:
    kwargs = dict(kwargs)
    return run_experiment(kwargs.pop('source'), **kwargs)


def run_radius_sweep(source: Union[Scenario, pd.DataFrame], radii: Sequence[float], hp: Hyperparams = None,
                     njobs: int = 1, **kwargs) -> Dict[float, ExperimentReport]:
    """One run per ball radius, arms in parallel (capped by :data:`slflab.threads`)."""
    hp = hp or Hyperparams()
    arms = [dict(kwargs, source=source, hp=dataclasses.replace(hp, r=float(r))) for r in radii]
    reports = parallel_map(_run_arm, arms, njobs=njobs, desc='radius sweep')
    return dict(zip([float(r) for r in radii], reports))


def run_training_sweep(dataset: pd.DataFrame, fractions: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5),
                       split_seed: int = 0, njobs: int = 1, **kwargs) -> Dict[float, ExperimentReport]:
    """One run per training share of a shadowing table; the rest of the table is the test set."""
    arms = []
    for fraction in fractions:
        train, test = split_train_test(dataset, fraction, seed=split_seed)
        arms.append(dict(kwargs, source=train, test_set=test,
                         config_echo=dict(kwargs.get('config_echo') or {}, train_fraction=fraction,
                                          train_size=len(train))))
    reports = parallel_map(_run_arm, arms, njobs=njobs, desc='training sweep')
    return dict(zip([float(fraction) for fraction in fractions], reports))


def compare_with_baseline(scenario: Scenario, r: float, seeds: Sequence[int], hp: Hyperparams = None,
                          stream: StreamConfig = None, njobs: int = 1, **kwargs) -> pd.DataFrame:
    """Final NMSE of the online algorithm with radius ``r`` against the baseline, per seed.

    Returns
    -------
    pandas.DataFrame
        Columns ``seed, online, baseline, gain`` with ``gain = 1 - online / baseline``.
    """
    hp = hp or Hyperparams()
    stream = stream or StreamConfig()
    arms = []
    for seed in seeds:
        for algorithm, radius in [('online', r), ('baseline', 0.0)]:
            arms.append(dict(kwargs, source=scenario, algorithm=algorithm,
                             hp=dataclasses.replace(hp, r=float(radius), seed=seed),
                             stream=dataclasses.replace(stream, seed=seed)))
    reports = parallel_map(_run_arm, arms, njobs=njobs, desc='online vs baseline')
    rows = []
    for n, seed in enumerate(seeds):
        online, baseline = reports[2 * n].final()['nmse_f'], reports[2 * n + 1].final()['nmse_f']
        rows.append({'seed': seed, 'online': online, 'baseline': baseline, 'gain': 1 - online / baseline})
    return pd.DataFrame(rows)


if __name__ == '__main__':
    pass
