#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
slflab command line: generate scenarios and synthetic measurements, train
SLF reconstructions (radius sweeps included) and evaluate checkpoints.

    slflab generate --config run.yml
    slflab train --config run.yml --radius 0 --radius 0.1 --out runs
    slflab eval --checkpoint runs/experiment.pbz2 --test test.csv --query 10,5,40,60
"""
import argparse
import dataclasses
import datetime
import json
import os
import sys
from dataclasses import dataclass, field
from typing import List

import numpy as np
import yaml

import slflab
from slflab import __version__, utils
from slflab.data import DataNotFound, get_layout
from slflab.evaluation import Experiment, nmse, predict_pathloss
from slflab.kernel import KernelConfig
from slflab.measurements import (IngestionError, StreamConfig, load_dataset, sample_batches, split_train_test,
                                 stream_coverage)
from slflab.propagation import (PathLossParams, PerturbedWindow, WindowModel, build_weight_matrix,
                                synth_shadowing, synthesize_measurements, write_measurements)
from slflab.scenario import (GridSpec, SelfLinkError, build_scenario, link_indices, read_scenario,
                             write_scenario)
from slflab.solver import ConditioningError, DivergenceError, Hyperparams

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3, 4

SOURCES = ('scenario', 'scenario_file', 'dataset_file')

# Synthetic Madrid-style experiments
SYNTHETIC_DEFAULTS = {
    'M': 120, 't_max': 200, 'sigma': 1e-4,
    'lam1': 4e-4, 'lam2': 1e-5, 'lam3': 2.2e-4,
    'eta': 0.1499, 'nu': None,
}
# Received-power datasets (5.89 GHz, 12 dBm)
INGESTION_DEFAULTS = {
    'M': 60, 't_max': 200, 'sigma': 1e-4,
    'lam1': 6e-4, 'lam2': 1e-5, 'lam3': 6.1e-4,
    'eta': 0.0509, 'nu': None,
    'pl0': 75.0, 'delta': 2.9, 'p_tx': 12.0,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Every setting of a run, flat, as written in the YAML configuration file."""
    # source
    scenario: str = None
    scenario_file: str = None
    dataset_file: str = None
    grid: str = 'manhattan'
    # solver
    algorithm: str = 'online'
    lam1: float = 4e-4
    lam2: float = 1e-5
    lam3: float = 2.2e-4
    eps: float = 0.05
    radius: List[float] = field(default_factory=lambda: [0.0])
    relative_radius: bool = True
    window_support: bool = True
    inner_iters: int = 5
    inner_tol: float = 1e-6
    seed: int = 0
    # stream
    M: int = 120
    t_max: int = 200
    replacement: bool = True
    # path loss
    pl0: float = 75.0
    d0: float = 1.0
    delta: float = 2.9
    noise_std: float = 0.0
    p_tx: float = 12.0
    # kernel
    sigma: float = 1e-4
    standardize: bool = False
    truncate: float = None
    # window
    window: str = 'normalized_elliptical'
    eta: float = 0.1499
    nu: float = None
    truth: str = 'none'
    truth_rho: float = 0.1
    # evaluation
    holdout: float = 0.1
    train_fraction: float = 0.5
    split_seed: int = 0
    # output
    out: str = 'slflab_out'
    save_every: int = 0
    history: bool = True
    njobs: int = 1

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def defaults(cls, mode: str) -> dict:
        """Default values; ``mode`` is ``synthetic`` or ``ingestion``."""
        values = dataclasses.asdict(cls())
        values.update(INGESTION_DEFAULTS if mode == 'ingestion' else SYNTHETIC_DEFAULTS)
        return values

    @classmethod
    def resolve(cls, file_config: dict = None, overrides: dict = None) -> 'RunConfig':
        """Defaults, then the configuration file, then the command line.

        Raises
        ------
        ConfigError
            Unknown key or invalid value.
        """
        file_config = file_config or {}
        overrides = {key: value for key, value in (overrides or {}).items() if value is not None}
        for key in list(file_config) + list(overrides):
            if key not in cls.keys():
                raise ConfigError(f"Invalid configuration key '{key}'. Valid keys: {cls.keys()}")
        merged = {**file_config, **overrides}
        mode = 'ingestion' if merged.get('dataset_file') else 'synthetic'
        values = {**cls.defaults(mode), **merged}
        if not isinstance(values['radius'], (list, tuple)):
            values['radius'] = [values['radius']]
        try:
            values['radius'] = [float(r) for r in values['radius']]
        except (TypeError, ValueError):
            raise ConfigError(f"radius must be a number or a list of numbers, got {values['radius']}")
        config = cls(**values)
        config.validate()
        return config

    @property
    def mode(self) -> str:
        return 'ingestion' if self.dataset_file else 'synthetic'

    def validate(self):
        try:
            self.hyperparams(self.radius[0] if self.radius else 0.0)
            self.stream()
            self.window_model()
            self.kernel_config()
            self.pathloss()
            self.perturbation()
        except ValueError as e:
            raise ConfigError(str(e))
        if not self.radius:
            raise ConfigError("at least one radius is needed")
        if self.algorithm not in ('online', 'baseline', 'altmin'):
            raise ConfigError(f"Unknown algorithm '{self.algorithm}'. Choose from: online, baseline, altmin")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError(f"train_fraction must be in (0, 1], got {self.train_fraction}")
        if not 0 <= self.holdout < 1:
            raise ConfigError(f"holdout must be in [0, 1), got {self.holdout}")

    def check_source(self):
        given = [key for key in SOURCES if getattr(self, key)]
        if len(given) != 1:
            raise ConfigError(f"Exactly one of {SOURCES} must be set, got {given or 'none'}")

    def hyperparams(self, r: float) -> Hyperparams:
        return Hyperparams(lam1=self.lam1, lam2=self.lam2, lam3=self.lam3, eps=self.eps, r=r,
                           relative_radius=self.relative_radius, window_support=self.window_support,
                           inner_iters=self.inner_iters, inner_tol=self.inner_tol, seed=self.seed)

    def stream(self) -> StreamConfig:
        return StreamConfig(M=self.M, t_max=self.t_max, seed=self.seed, replacement=self.replacement)

    def window_model(self) -> WindowModel:
        return WindowModel(kind=self.window, eta=self.eta, nu=self.nu)

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(sigma=self.sigma, standardize=self.standardize, truncate=self.truncate)

    def pathloss(self) -> PathLossParams:
        return PathLossParams(pl0=self.pl0, d0=self.d0, delta=self.delta, noise_std=self.noise_std)

    def perturbation(self) -> PerturbedWindow:
        if self.truth in (None, 'none'):
            return None
        return PerturbedWindow(kind=self.truth, rho=self.truth_rho, seed=self.seed)


def _train_arm(args) -> dict:
    source, kwargs, outdir = args
    experiment = Experiment(source, outdir=outdir, **kwargs)
    report = experiment()
    report.write(outdir)
    experiment.pickle(os.path.join(outdir, 'experiment'), compress=True)
    if os.path.isfile(os.path.join(outdir, 'cpt.pbz2')):
        os.remove(os.path.join(outdir, 'cpt.pbz2'))
    return report.final()


class CommandLineHelper:
    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args
        self.command = args.command
        self.verbose = args.verbose
        if self.verbose:
            os.environ['SLFLAB_VERBOSE'] = 'True'
            slflab.verbose = True
        self._set_config()

    def _set_config(self):
        file_config = {}
        if self.args.config:
            with open(self.args.config, 'r') as c:
                file_config = yaml.safe_load(c) or {}
            if not isinstance(file_config, dict):
                raise ConfigError(f"{self.args.config} must hold a mapping of configuration keys")
        overrides = {
            'seed': self.args.seed,
            'out': self.args.out,
            'algorithm': getattr(self.args, 'algorithm', None),
            'radius': getattr(self.args, 'radius', None),
        }
        self.config = RunConfig.resolve(file_config, overrides)

    def _scenario(self):
        if self.config.scenario:
            return build_scenario(self.config.scenario)
        return read_scenario(self.config.scenario_file)

    def generate(self):
        config = self.config
        config.check_source()
        if config.dataset_file:
            raise ConfigError("generate works on scenarios, not on datasets")
        scenario = self._scenario()
        os.makedirs(config.out, exist_ok=True)
        write_scenario(scenario, os.path.join(config.out, 'scenario.txt'))
        print(f"P = {scenario.P}\nP_tx = {scenario.P_tx}\nT = {scenario.T}\nT_tx = {scenario.T_tx}")
        if not scenario.has_truth:
            print(f"{scenario.name} has no ground-truth SLF; no measurements were generated.")
            return
        stream = config.stream()
        batches = sample_batches(scenario, stream)
        frame = synthesize_measurements(scenario, config.window_model(), batches, config.pathloss(),
                                        rng=np.random.default_rng([stream.seed, 1]), truth=config.perturbation())
        write_measurements(frame, os.path.join(config.out, 'measurements.csv'))
        draws = stream.M * stream.t_max
        frac_tx, frac_T = stream_coverage(draws, scenario.T_tx, scenario.T)
        print(f"draws = {draws} ({100 * frac_tx:.2f}% of T_tx, {100 * frac_T:.2f}% of T)")

    def _experiment_kwargs(self):
        config = self.config
        kwargs = {
            'algorithm': config.algorithm,
            'stream': config.stream(),
            'window': config.window_model(),
            'kernel': config.kernel_config(),
            'history': config.history,
            'checkpoint': config.save_every > 0,
            'save_every': config.save_every,
            'config_echo': {'run': dataclasses.asdict(config)},
        }
        if config.mode == 'synthetic':
            source = self._scenario()
            kwargs.update(truth=config.perturbation(), noise_std=config.noise_std, holdout=config.holdout)
        else:
            grid_layout = get_layout(config.grid)
            grid = GridSpec(grid_layout['px'], grid_layout['py'], grid_layout['pixel_size'], tuple(grid_layout['origin']))
            dataset = load_dataset(config.dataset_file, grid, config.pathloss(), config.p_tx)
            test = None
            if config.train_fraction < 1:
                dataset, test = split_train_test(dataset, config.train_fraction, seed=config.split_seed)
            kwargs.update(grid=grid, test_set=test)
            source = dataset
        return source, kwargs

    def train(self):
        config = self.config
        if self.args.resume:
            experiment = utils.load_object(self.args.resume)
            outdir = self.args.out or experiment.outdir
            experiment.outdir = outdir
            print(f"Resuming {experiment}")
            report = experiment()
            report.write(outdir)
            experiment.pickle(os.path.join(outdir, 'experiment'), compress=True)
            self._print_final({'resumed': report.final()})
            return
        config.check_source()
        source, kwargs = self._experiment_kwargs()
        if len(config.radius) == 1:
            arms = [(source, dict(kwargs, hp=config.hyperparams(config.radius[0])), config.out)]
        else:
            arms = [(source, dict(kwargs, hp=config.hyperparams(r)), os.path.join(config.out, f"r_{r:g}"))
                    for r in config.radius]
        finals = utils.parallel_map(_train_arm, arms, njobs=config.njobs, desc='train')
        self._print_final({outdir: final for (_, _, outdir), final in zip(arms, finals)})

    def _print_final(self, finals: dict):
        for name, final in finals.items():
            metrics = ', '.join(f"{key} = {value:.6g}" for key, value in final.items())
            print(f"{name}: {metrics}")

    def eval(self):
        config = self.config
        if not self.args.checkpoint:
            raise ConfigError("eval needs --checkpoint")
        experiment = utils.load_object(self.args.checkpoint)
        grid, window, f = experiment.grid, experiment.window, experiment.state.f
        results = {'t': experiment.t}
        if self.args.test:
            frame = load_dataset(self.args.test, grid, config.pathloss(), config.p_tx)
            if len(frame):
                links = link_indices(frame['i'].to_numpy(), frame['j'].to_numpy(), grid.P)
                W = build_weight_matrix(grid, window, links, sparse=True)
                results['nmse_s'] = nmse(synth_shadowing(W, f), frame['shadow_db'].to_numpy(dtype=float))
                results['test_size'] = len(frame)
        if experiment.scenario is not None:
            results['nmse_f'] = nmse(f, experiment.scenario.slf)
        if self.args.query:
            try:
                x1, y1, x2, y2 = (float(value) for value in self.args.query.split(','))
            except ValueError:
                raise ConfigError(f"--query expects 'x1,y1,x2,y2', got '{self.args.query}'")
            pathloss = float(predict_pathloss(grid, f, window, config.pathloss(), [x1, y1], [x2, y2])[0])
            results['query'] = {'tx': [x1, y1], 'rx': [x2, y2], 'pathloss_db': pathloss}
            print(f"Predicted path loss between ({x1}, {y1}) and ({x2}, {y2}): {pathloss:.4f} dB")
        for key in ['nmse_f', 'nmse_s']:
            if key in results:
                print(f"{key} = {results[key]:.6g}")
        os.makedirs(config.out, exist_ok=True)
        with open(os.path.join(config.out, 'eval.json'), 'w') as out:
            json.dump(results, out, indent=2)

    def run(self):
        getattr(self, self.command)()

    def __repr__(self) -> str:
        return self.args.__repr__().replace('Namespace', self.__class__.__name__)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='slflab', description=__doc__,
                                     formatter_class=argparse.RawTextHelpFormatter)
    parser.add_argument(
        '-v', '--version',
        action='version',
        version=f"slflab: {__version__}")
    subparsers = parser.add_subparsers(dest='command', required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config",
                        help="YAML file with flat configuration keys",
                        dest="config",
                        default=None,
                        type=str)
    common.add_argument("--seed",
                        help="Seed of every random source, overrides the configuration file",
                        dest="seed",
                        default=None,
                        type=int)
    common.add_argument("--out",
                        help="Output directory, created if needed",
                        dest="out",
                        default=None,
                        type=str)
    common.add_argument('-V', '--verbose',
                        help="Print per batch progress",
                        action='store_true',
                        dest='verbose')

    subparsers.add_parser('generate', parents=[common],
                          help="Write the scenario file and synthetic measurements")

    train = subparsers.add_parser('train', parents=[common], help="Run a reconstruction")
    train.add_argument("--algorithm",
                       help="online (adaptive window), baseline (fixed window) or altmin (reference solver)",
                       choices=['online', 'baseline', 'altmin'],
                       dest="algorithm",
                       default=None)
    train.add_argument("--radius",
                       help="Ball radius; repeat the flag to run a sweep, one subdirectory per radius",
                       action='append',
                       dest="radius",
                       default=None,
                       type=float)
    train.add_argument("--resume",
                       help="Checkpoint (.pbz2) of an interrupted run to continue",
                       dest="resume",
                       default=None,
                       type=str)

    evaluate = subparsers.add_parser('eval', parents=[common], help="Evaluate a trained checkpoint")
    evaluate.add_argument("--checkpoint",
                          help="experiment.pbz2 written by train",
                          dest="checkpoint",
                          default=None,
                          type=str)
    evaluate.add_argument("--test",
                          help="Test set: shadowing CSV (i,j,distance_m,shadow_db) or received-power CSV",
                          dest="test",
                          default=None,
                          type=str)
    evaluate.add_argument("--query",
                          help="Predict the path loss between two coordinates: 'x1,y1,x2,y2'",
                          dest="query",
                          default=None,
                          type=str)
    return parser


def main(argv: List[str] = None) -> int:
    """Run the command line and return its exit code.

    0 success, 2 configuration error, 3 input error, 4 numerical failure.
    """
    args = _parser().parse_args(argv)
    try:
        helper = CommandLineHelper(args)
        print(f"Started at {datetime.datetime.now().strftime('%c')}\n"
              f"You are using slflab: {__version__}.\n\n"
              f"{helper}\n")
        helper.run()
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, ConditioningError) as e:
        print(f"Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, IngestionError, DataNotFound, SelfLinkError, ValueError) as e:
        print(f"Input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def __slflab_cmd():
    """
    This function is only used as part of the command line interface of slflab.
    More detail help is available from the command line `slflab -h`.
    """
    sys.exit(main())


if __name__ == '__main__':
    pass
