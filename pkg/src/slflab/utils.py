#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import bz2
import multiprocessing as mp
import os
from typing import Callable, Iterable, List
from warnings import warn

import dill as pickle
import numpy as np
import tqdm

import slflab

# file extension -> opener
OPENERS = {
    '.pbz2': bz2.open,
    '.pkl': open,
}


def dump_object(obj: object, title: str, compress: bool = False) -> str:
    """Serialize ``obj`` with dill, bz2-compressed or not.

    Solver states and experiments hold numpy generators and closures; dill
    handles both.

    Parameters
    ----------
    obj : object
        Anything dill can serialize.
    title : str
        Path without extension; ``.pbz2`` or ``.pkl`` is appended.
    compress : bool, optional
        Write ``.pbz2`` instead of ``.pkl``, by default False.

    Returns
    -------
    str
        The written path.
    """
    path = title + ('.pbz2' if compress else '.pkl')
    with OPENERS[os.path.splitext(path)[1]](path, 'wb') as stream:
        pickle.dump(obj, stream)
    return path


def load_object(path: str) -> object:
    """Read back a file written by :meth:`dump_object`; the extension selects the codec.

    Raises
    ------
    ValueError
        The extension is neither ``.pbz2`` nor ``.pkl``.
    """
    ext = os.path.splitext(path)[1]
    if ext not in OPENERS:
        raise ValueError(f"Unknown checkpoint extension '{ext}'. Choose from: {list(OPENERS)}")
    with OPENERS[ext](path, 'rb') as stream:
        return pickle.load(stream)


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    """Relative change ``||new - old|| / max(||new||, ||old||)``.

    Two zero vectors have relative change 0.
    """
    scale = max(np.linalg.norm(new), np.linalg.norm(old))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(new - old) / scale)


def parallel_map(func: Callable, args_list: Iterable, njobs: int = 1, desc: str = None) -> List:
    """Evaluate ``func`` over ``args_list`` keeping the input order.

    A multiprocessing pool is used first; if it fails the evaluation
    is repeated in serial. The number of processes never exceeds
    :data:`slflab.threads`.

    Parameters
    ----------
    func : Callable
        A picklable function of one argument.
    args_list : Iterable
        The arguments.
    njobs : int, optional
        Requested number of processes, by default 1.
    desc : str, optional
        Label of the progress bar, by default None.

    Returns
    -------
    list
        ``[func(args) for args in args_list]``

    Raises
    ------
    RuntimeError
        Neither the parallel nor the serial evaluation worked.
    """
    args_list = list(args_list)
    njobs = max(1, min(njobs, slflab.threads, len(args_list)))
    if njobs == 1:
        return [func(args) for args in tqdm.tqdm(args_list, total=len(args_list), desc=desc)]
    try:
        with mp.Pool(njobs) as pool:
            results = [result for result in tqdm.tqdm(pool.imap(func, args_list), total=len(args_list), desc=desc)]
    except Exception as e1:
        warn("Parallelization did not work. Trying with serial...")
        try:
            results = [func(args) for args in tqdm.tqdm(args_list, total=len(args_list), desc=desc)]
        except Exception as e2:
            raise RuntimeError("Serial did not work either. Here are the occurred exceptions:\n"
                               f"=========Parallel=========:\n {e1}\n"
                               f"==========Serial==========:\n {e2}")
    return results


if __name__ == '__main__':
    pass
