#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import itertools
import os
import tempfile

import numpy as np
import pytest

from slflab import home, scenario
from slflab.data import DataNotFound, get_layout

tmp_path = tempfile.TemporaryDirectory()
wd = tmp_path.name


def test_link_index_examples():
    assert scenario.link_index(2, 3, 4) == scenario.LinkId(2, 3, 3)
    assert scenario.link_index(4, 1, 4) == scenario.LinkId(1, 4, 4)
    assert scenario.link_index(1, 2, 4).m == 1
    assert scenario.link_index(3, 4, 4).m == scenario.link_count(4)


def test_link_index_is_a_bijection():
    P = 9
    ms = []
    for i, j in itertools.combinations(range(1, P + 1), 2):
        link = scenario.link_index(i, j, P)
        assert scenario.link_pair(link.m, P) == link
        ms.append(link.m)
    assert sorted(ms) == list(range(1, scenario.link_count(P) + 1))

    m = np.arange(1, scenario.link_count(P) + 1)
    i, j = scenario.link_pairs(m, P)
    np.testing.assert_array_equal(scenario.link_indices(i, j, P), m)
    np.testing.assert_array_equal(scenario.link_indices(j, i, P), m)
    assert np.all(i < j)


def test_link_pairs_large_indices():
    P = 2184
    m = np.array([1, 2, 1000, 2383835, 2383836])
    i, j = scenario.link_pairs(m, P)
    np.testing.assert_array_equal(scenario.link_indices(i, j, P), m)
    assert (i[-1], j[-1]) == (P - 1, P)


def test_link_errors():
    with pytest.raises(scenario.SelfLinkError, match="self-link undefined"):
        scenario.link_index(3, 3, 5)
    with pytest.raises(ValueError):
        scenario.link_index(0, 3, 5)
    with pytest.raises(ValueError):
        scenario.link_index(1, 6, 5)
    with pytest.raises(ValueError):
        scenario.link_pair(11, 5)
    with pytest.raises(scenario.SelfLinkError):
        scenario.link_indices([1, 2], [2, 2], 5)


def test_grid_coordinates():
    grid = scenario.GridSpec(4, 3, 2.5, (1.0, -1.0))
    np.testing.assert_allclose(grid.coordinates(1), [1.0, -1.0])
    np.testing.assert_allclose(grid.coordinates(4), [1.0 + 3 * 2.5, -1.0])
    np.testing.assert_allclose(grid.coordinates(5), [1.0, -1.0 + 2.5])
    assert grid.coordinates().shape == (12, 2)
    assert grid.row_col(7) == (2, 3)
    assert grid.pixel(2, 3) == 7
    assert grid.bounds() == ((-0.25, 9.75), (-2.25, 5.25))
    with pytest.raises(ValueError):
        grid.coordinates(13)
    with pytest.raises(ValueError):
        scenario.GridSpec(0, 3)
    with pytest.raises(ValueError):
        scenario.GridSpec(3, 3, pixel_size=0)


def test_path_lengths():
    xi, xj = np.array([0.0, 0.0]), np.array([3.0, 4.0])
    assert scenario.phi1(xi, xj) == pytest.approx(5.0)
    assert scenario.phi2(xi, xj, [1.5, 2.0]) == pytest.approx(5.0)
    assert scenario.phi2(xi, xj, [3.0, 0.0]) == pytest.approx(3.0 + 4.0)


def test_madrid_counts():
    s = scenario.build_madrid_scenario()
    assert (s.grid.px, s.grid.py, s.grid.pixel_size) == (39, 56, 2.5)
    assert (s.P, s.P_tx, s.T, s.T_tx) == (2184, 744, 2383836, 276396)
    assert set(np.unique(s.slf)) == {0.0, 0.1, 1.0}
    # roads carry no loss
    assert np.all(s.slf[s.road_mask] == 0)
    assert np.count_nonzero(s.slf == 0.1) == 144


def test_road_links():
    s = scenario.build_scenario('desk20x15')
    assert s.P_tx == 191
    links = s.road_links()
    assert len(links) == s.T_tx
    assert len(np.unique(links)) == s.T_tx
    i, j = scenario.link_pairs(links, s.P)
    assert np.all(s.road_mask[i - 1]) and np.all(s.road_mask[j - 1])


def test_scenario_is_read_only():
    s = scenario.build_scenario('desk20x15')
    with pytest.raises(ValueError):
        s.slf[0] = 3.0
    with pytest.raises(ValueError):
        scenario.Scenario(scenario.GridSpec(2, 2), np.zeros(3), np.ones(4, dtype=bool))
    with pytest.raises(ValueError):
        scenario.Scenario(scenario.GridSpec(2, 2), [0, 0, np.nan, 0], np.ones(4, dtype=bool))


def test_layouts():
    layout = get_layout('manhattan')
    assert (layout['px'], layout['py'], layout['pixel_size']) == (30, 22, 6.0)
    manhattan = scenario.scenario_from_layout(layout)
    assert manhattan.P == 660 and not manhattan.has_truth
    with pytest.raises(DataNotFound):
        get_layout('atlantis')
    with pytest.raises(DataNotFound):
        get_layout('')
    assert os.path.isfile(home.layout_file('madrid'))
    assert home.home(dataDir='madrid').endswith(os.path.join('data', 'madrid'))


def test_scenario_file():
    s = scenario.build_scenario('desk20x15')
    path = os.path.join(wd, 'desk.txt')
    scenario.write_scenario(s, path)
    with open(path, 'r') as f:
        assert f.readline() == 'px 20\n'
    back = scenario.read_scenario(path)
    assert back.grid == s.grid
    np.testing.assert_array_equal(back.slf, s.slf)
    np.testing.assert_array_equal(back.road_mask, s.road_mask)

    with open(os.path.join(wd, 'broken.txt'), 'w') as f:
        f.write("px 2\npy 2\npixel_size 1.0\norigin 0.0 0.0\n0.0 1\n")
    with pytest.raises(ValueError, match="expected 4 pixel lines"):
        scenario.read_scenario(os.path.join(wd, 'broken.txt'))
