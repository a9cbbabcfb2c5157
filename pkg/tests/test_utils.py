#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import os
import tempfile

import numpy as np
import pytest

from slflab import utils

tmp_path = tempfile.TemporaryDirectory()
wd = tmp_path.name


def test_dump_and_load_object():
    state = {'f': np.arange(4.0), 'rng': np.random.default_rng(5), 'square': lambda x: x * x}
    for compress, ext in [(False, '.pkl'), (True, '.pbz2')]:
        path = utils.dump_object(state, os.path.join(wd, 'state'), compress=compress)
        assert path.endswith(ext) and os.path.isfile(path)
        loaded = utils.load_object(path)
        np.testing.assert_array_equal(loaded['f'], state['f'])
        assert loaded['square'](3) == 9
        # the generator resumes where it was saved
        assert loaded['rng'].random() == np.random.default_rng(5).random()
    with pytest.raises(ValueError, match="Unknown checkpoint extension"):
        utils.load_object(os.path.join(wd, 'state.json'))


def test_relative_change():
    assert utils.relative_change(np.zeros(3), np.zeros(3)) == 0.0
    assert utils.relative_change(np.array([3.0, 4.0]), np.zeros(2)) == 1.0
    assert utils.relative_change(np.array([1.0, 0.0]), np.array([2.0, 0.0])) == pytest.approx(0.5)


def test_parallel_map_keeps_order():
    assert utils.parallel_map(abs, [-3, 1, -2], njobs=1) == [3, 1, 2]
