#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import json
import os
import tempfile

import numpy as np
import pandas as pd
import pytest
import yaml

from slflab import cli
from slflab.measurements import write_shadowing_csv
from slflab.scenario import GridSpec, Scenario, build_scenario, link_pairs, write_scenario

tmp_path = tempfile.TemporaryDirectory()
wd = tmp_path.name

TINY = os.path.join(wd, 'tiny.txt')
grid = GridSpec(6, 5, 1.0)
slf = np.zeros((5, 6))
slf[1:4, 2:4] = 1.0
write_scenario(Scenario(grid, slf.ravel(), np.ones(grid.P, dtype=bool)), TINY)

BASE = {
    'scenario_file': TINY,
    'M': 4,
    't_max': 3,
    'eta': 0.5,
    'lam1': 1e-3,
    'lam2': 1e-3,
    'lam3': 1e-3,
}


def write_config(name, **kwargs):
    path = os.path.join(wd, f'{name}.yml')
    with open(path, 'w') as f:
        yaml.dump(kwargs, f)
    return path


def test_defaults():
    synthetic = cli.RunConfig.resolve({'scenario': 'madrid'})
    assert (synthetic.M, synthetic.t_max, synthetic.sigma) == (120, 200, 1e-4)
    assert (synthetic.lam1, synthetic.lam2, synthetic.lam3, synthetic.eta) == (4e-4, 1e-5, 2.2e-4, 0.1499)
    ingestion = cli.RunConfig.resolve({'dataset_file': 'data.csv'})
    assert (ingestion.M, ingestion.lam1, ingestion.lam3, ingestion.p_tx) == (60, 6e-4, 6.1e-4, 12.0)
    assert ingestion.mode == 'ingestion'
    # command line beats file
    config = cli.RunConfig.resolve({'scenario': 'madrid', 'seed': 3}, {'seed': 7, 'radius': None})
    assert config.seed == 7 and config.radius == [0.0]
    assert cli.RunConfig.resolve({'scenario': 'madrid', 'radius': 0.1}).radius == [0.1]


def test_config_errors():
    with pytest.raises(cli.ConfigError, match="Invalid configuration key"):
        cli.RunConfig.resolve({'scenario': 'madrid', 'lambda1': 1.0})
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.resolve({'scenario': 'madrid', 'eps': 1.5})
    with pytest.raises(cli.ConfigError):
        cli.RunConfig.resolve({'scenario': 'madrid', 'window': 'square'})
    with pytest.raises(cli.ConfigError, match="Exactly one"):
        cli.RunConfig.resolve({'scenario': 'madrid', 'scenario_file': TINY}).check_source()
    with pytest.raises(cli.ConfigError, match="Exactly one"):
        cli.RunConfig.resolve({}).check_source()


def test_exit_codes():
    out = os.path.join(wd, 'errors')
    assert cli.main(['train', '--config', write_config('unknown', **BASE, lambda1=1.0), '--out', out]) == 2
    assert cli.main(['train', '--config', write_config('two', **BASE, scenario='madrid'), '--out', out]) == 2
    missing = dict(BASE, scenario_file=os.path.join(wd, 'nowhere.txt'))
    assert cli.main(['train', '--config', write_config('missing', **missing), '--out', out]) == 3
    assert cli.main(['generate', '--config', write_config('unknown_layout', scenario='atlantis'), '--out', out]) == 3
    with pytest.raises(SystemExit):
        cli.main(['train', '--algorithm', 'gradient'])


def test_generate():
    out = os.path.join(wd, 'generate')
    assert cli.main(['generate', '--config', write_config('generate', **BASE), '--out', out]) == 0
    frame = pd.read_csv(os.path.join(out, 'measurements.csv'))
    assert len(frame) == 12
    assert list(frame.columns) == ['t', 'i', 'j', 'shadow_db', 'pathloss_db', 'distance_m']
    with open(os.path.join(out, 'scenario.txt'), 'r') as f:
        assert f.readline() == 'px 6\n'

    out = os.path.join(wd, 'generate_manhattan')
    assert cli.main(['generate', '--config', write_config('manhattan', scenario='manhattan'), '--out', out]) == 0
    assert os.path.isfile(os.path.join(out, 'scenario.txt'))
    assert not os.path.isfile(os.path.join(out, 'measurements.csv'))


def test_train_and_eval():
    out = os.path.join(wd, 'train')
    config = write_config('train', **BASE)
    assert cli.main(['train', '--config', config, '--out', out]) == 0
    for name in ['learning_curve.csv', 'report.json', 'slf_map.pgm', 'experiment.pbz2']:
        assert os.path.isfile(os.path.join(out, name))
    curve = pd.read_csv(os.path.join(out, 'learning_curve.csv'))
    assert list(curve['t']) == [1, 2, 3]

    links = np.array([1, 50, 200, 400])
    i, j = link_pairs(links, grid.P)
    test = os.path.join(wd, 'test.csv')
    write_shadowing_csv(pd.DataFrame({'i': i, 'j': j, 'distance_m': 1.0, 'shadow_db': [0.5, 1.0, 0.0, 2.0]}), test)
    evaluated = os.path.join(wd, 'eval')
    checkpoint = os.path.join(out, 'experiment.pbz2')
    assert cli.main(['eval', '--checkpoint', checkpoint, '--test', test,
                     '--query', '0.5,0.5,4.5,3.5', '--out', evaluated]) == 0
    with open(os.path.join(evaluated, 'eval.json'), 'r') as f:
        results = json.load(f)
    assert results['t'] == 3 and results['test_size'] == 4
    assert np.isfinite(results['nmse_s']) and np.isfinite(results['nmse_f'])
    assert results['query']['pathloss_db'] > 0

    assert cli.main(['eval', '--checkpoint', checkpoint, '--query', '1,1,1,1', '--out', evaluated]) == 3
    assert cli.main(['eval', '--checkpoint', checkpoint, '--query', '1,1,1', '--out', evaluated]) == 2
    assert cli.main(['eval', '--out', evaluated]) == 2


def test_radius_sweep_and_resume():
    out = os.path.join(wd, 'sweep')
    config = write_config('sweep', **BASE)
    assert cli.main(['train', '--config', config, '--radius', '0', '--radius', '0.05', '--out', out]) == 0
    for radius in ['r_0', 'r_0.05']:
        assert os.path.isfile(os.path.join(out, radius, 'learning_curve.csv'))
        with open(os.path.join(out, radius, 'report.json'), 'r') as f:
            assert json.load(f)['config']['hp']['r'] == float(radius[2:])

    resumed = os.path.join(wd, 'resumed')
    checkpoint = os.path.join(out, 'r_0.05', 'experiment.pbz2')
    assert cli.main(['train', '--resume', checkpoint, '--out', resumed]) == 0
    assert os.path.isfile(os.path.join(resumed, 'report.json'))


def test_train_on_dataset():
    desk = build_scenario('desk20x15')
    links = desk.road_links()[::500]
    i, j = link_pairs(links, desk.P)
    distance = np.linalg.norm(desk.grid.coordinates(i) - desk.grid.coordinates(j), axis=1)
    shadow = np.random.default_rng(0).normal(5.0, 1.0, len(links))
    dataset = os.path.join(wd, 'dataset.csv')
    write_shadowing_csv(pd.DataFrame({'i': i, 'j': j, 'distance_m': distance, 'shadow_db': shadow}), dataset)
    config = write_config('dataset', dataset_file=dataset, grid='desk20x15', M=3, t_max=2)
    out = os.path.join(wd, 'dataset_run')
    assert cli.main(['train', '--config', config, '--out', out]) == 0
    with open(os.path.join(out, 'report.json'), 'r') as f:
        report = json.load(f)
    assert report['notes']['nmse_s_target'].startswith('held-out')
    assert report['final']['nmse_f'] is None
