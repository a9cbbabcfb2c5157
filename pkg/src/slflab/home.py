#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import inspect
import os

import slflab


def home(dataDir: str = None) -> str:
    """Installation directory of slflab, or one of its builtin layout directories.

    Parameters
    ----------
    dataDir : str, optional
        Name of a builtin layout, by default None.

    Returns
    -------
    str
        ``<slflab>`` or ``<slflab>/data/<dataDir>``; existence is not checked.

    Example
    -------
    >>> from slflab.home import home
    >>> home(dataDir="madrid")                 # doctest: +ELLIPSIS
    '.../data/madrid'
    """
    root = os.path.dirname(inspect.getfile(slflab))
    if dataDir:
        return os.path.join(root, "data", dataDir)
    return root


def layout_file(name: str) -> str:
    """Path of the YAML description of the builtin layout ``name``."""
    return os.path.join(home(dataDir=name), "layout.yml")
