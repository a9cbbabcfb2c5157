#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
slflab: online reconstruction of any-to-any path-loss maps from a
group-sparse spatial loss field and an adaptive tomographic window.
"""
import os
from slflab._version import __version__

if "SLFLAB_VERBOSE" in os.environ:
    if os.environ["SLFLAB_VERBOSE"].lower() in ['1', 'true']:
        verbose = True
    elif os.environ["SLFLAB_VERBOSE"].lower() in ['0', 'false']:
        verbose = False
    else:
        raise ValueError(f"SLFLAB_VERBOSE = {os.environ['SLFLAB_VERBOSE']} is invalid. "
                         "Choose from: 1, 0, true, false (case insensitive).")
else:
    verbose = False

# Upper bound on the number of worker processes used by sweeps
if "SLF_LAB_THREADS" in os.environ:
    try:
        threads = int(os.environ["SLF_LAB_THREADS"])
    except ValueError:
        threads = 0
    if threads < 1:
        raise ValueError(f"SLF_LAB_THREADS = {os.environ['SLF_LAB_THREADS']} is invalid. "
                         "It must be a positive integer.")
else:
    threads = os.cpu_count() or 1
