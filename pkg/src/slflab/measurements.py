#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Measurement streams: i.i.d. batch sampling from a scenario or a dataset, and
ingestion of received-power datasets into link shadowing.
"""
from dataclasses import dataclass
from typing import Iterator, List, Tuple, Union
from warnings import warn

import numpy as np
import pandas as pd

from slflab.propagation import PathLossParams, free_space_pathloss
from slflab.scenario import GridSpec, Scenario

INGESTION_COLUMNS = ['tx_x', 'tx_y', 'rx_x', 'rx_y', 'rx_power_dbm']
SHADOWING_COLUMNS = ['i', 'j', 'distance_m', 'shadow_db']


class IngestionError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementRecord:
    """One link measurement; exactly one of ``rx_power`` (dBm) and ``shadow`` (dB) is set."""
    i: int
    j: int
    distance: float
    rx_power: float = None
    shadow: float = None

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("self-link undefined")
        if not self.distance > 0:
            raise ValueError(f"distance must be positive, got {self.distance}")
        if (self.rx_power is None) == (self.shadow is None):
            raise ValueError("exactly one of rx_power and shadow must be given")


@dataclass(frozen=True)
class StreamConfig:
    """Batch stream settings: M links per batch, t_max batches."""
    M: int = 120
    t_max: int = 200
    seed: int = 0
    replacement: bool = True

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M}")
        if int(self.t_max) != self.t_max or self.t_max < 1:
            raise ValueError(f"t_max must be a positive integer, got {self.t_max}")


def derive_shadowing(record: MeasurementRecord, params: PathLossParams, p_tx: float) -> float:
    """Shadowing of a received-power record.

    ``pl = p_tx - rx_power`` minus the free space loss ``pl0 + 10 delta log10(d/d0)``.

    Example
    -------
    >>> derive_shadowing(MeasurementRecord(1, 2, 1.0, rx_power=-80.0), PathLossParams(), 12.0)
    17.0
    """
    if record.rx_power is None:
        raise ValueError("the record has no received power")
    return float(derive_shadowing_array(record.distance, record.rx_power, params, p_tx))


def derive_shadowing_array(distance: np.ndarray, rx_power: np.ndarray, params: PathLossParams,
                           p_tx: float) -> np.ndarray:
    """Vectorized :meth:`derive_shadowing`."""
    return (p_tx - np.asarray(rx_power, dtype=float)) - free_space_pathloss(params, distance)


class BatchSampler:
    """Draws batches of items (link or dataset row indices) from a pool.

    With replacement every draw is uniform and independent. Without
    replacement the pool is visited in random permutations (epochs); a batch
    may straddle two epochs. The sampler owns its generator and can be
    pickled mid-stream.

    Parameters
    ----------
    pool : np.ndarray
        Items to draw from.
    cfg : StreamConfig
        Batch size, number of batches, seed and sampling mode.
    """

    def __init__(self, pool: np.ndarray, cfg: StreamConfig):
        self.pool = np.asarray(pool)
        if len(self.pool) == 0:
            raise ValueError("empty source")
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.drawn = 0
        self.batches = 0
        self._order = np.empty(0, dtype=np.int64)
        self._cursor = 0

    def _take(self, n: int) -> np.ndarray:
        if self.cfg.replacement:
            return self.rng.integers(0, len(self.pool), size=n)
        out = []
        while n > 0:
            if self._cursor == len(self._order):
                self._order = self.rng.permutation(len(self.pool))
                self._cursor = 0
            chunk = self._order[self._cursor:self._cursor + n]
            self._cursor += len(chunk)
            n -= len(chunk)
            out.append(chunk)
        return np.concatenate(out)

    def next_batch(self) -> np.ndarray:
        batch = self.pool[self._take(self.cfg.M)]
        self.drawn += self.cfg.M
        self.batches += 1
        return batch

    def __iter__(self) -> Iterator[np.ndarray]:
        while self.batches < self.cfg.t_max:
            yield self.next_batch()


def sample_batches(scenario: Scenario, cfg: StreamConfig, source: np.ndarray = None,
                   exclude: np.ndarray = None) -> List[np.ndarray]:
    """The whole batch stream.

    Parameters
    ----------
    scenario : Scenario
        The map; its road-to-road links are the default source.
    cfg : StreamConfig
        Stream settings.
    source : np.ndarray, optional
        Explicit pool (e.g. dataset row indices), by default None.
    exclude : np.ndarray, optional
        Items removed from the pool (held-out links), by default None.

    Returns
    -------
    List[np.ndarray]
        ``t_max`` arrays of ``M`` items.
    """
    pool = scenario.road_links() if source is None else np.asarray(source)
    if exclude is not None and len(exclude):
        pool = pool[~np.isin(pool, exclude)]
    return list(BatchSampler(pool, cfg))


def stream_coverage(draws: int, T_tx: int, T: int) -> Tuple[float, float]:
    """Upper bound on the share of acquirable links and of all links seen after ``draws`` draws."""
    return draws / T_tx, draws / T


def pixel_of_coordinate(grid: GridSpec, xy: np.ndarray) -> np.ndarray:
    """Nearest pixel centers of coordinates (shape ``(n, 2)``).

    A coordinate on the boundary between two pixels goes to the lower index.

    Raises
    ------
    IngestionError
        A coordinate lies outside the grid.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    (xmin, xmax), (ymin, ymax) = grid.bounds()
    outside = (xy[:, 0] < xmin) | (xy[:, 0] > xmax) | (xy[:, 1] < ymin) | (xy[:, 1] > ymax) | ~np.all(np.isfinite(xy), axis=1)
    if np.any(outside):
        raise IngestionError(f"coordinates outside the grid at rows {np.flatnonzero(outside).tolist()}")
    u = (xy - np.asarray(grid.origin)) / grid.pixel_size + 1
    col = np.clip(np.ceil(u[:, 0] - 0.5), 1, grid.px).astype(np.int64)
    row = np.clip(np.ceil(u[:, 1] - 0.5), 1, grid.py).astype(np.int64)
    return grid.pixel(row, col)


def assign_to_grid(frame: pd.DataFrame, grid: GridSpec) -> pd.DataFrame:
    """Snap transmitter and receiver coordinates onto the grid.

    Parameters
    ----------
    frame : pandas.DataFrame
        Columns ``tx_x, tx_y, rx_x, rx_y`` (meters) plus any payload columns.
        Its index is used to name offending records.
    grid : GridSpec
        The map.

    Returns
    -------
    pandas.DataFrame
        The payload columns with ``i < j`` pixel indices and the raw
        ``distance_m``. Records whose endpoints fall on the same pixel are
        dropped with a warning; duplicated links are kept.

    Raises
    ------
    IngestionError
        Some coordinate is outside the grid.
    """
    tx = frame[['tx_x', 'tx_y']].to_numpy(dtype=float)
    rx = frame[['rx_x', 'rx_y']].to_numpy(dtype=float)
    try:
        a = pixel_of_coordinate(grid, tx)
        b = pixel_of_coordinate(grid, rx)
    except IngestionError:
        (xmin, xmax), (ymin, ymax) = grid.bounds()
        xy = np.concatenate([tx, rx], axis=1)
        bad = ((xy[:, [0, 2]] < xmin) | (xy[:, [0, 2]] > xmax) |
               (xy[:, [1, 3]] < ymin) | (xy[:, [1, 3]] > ymax)).any(axis=1)
        raise IngestionError(f"records outside the {grid.px}x{grid.py} grid: {frame.index[bad].tolist()}")
    out = frame.drop(columns=['tx_x', 'tx_y', 'rx_x', 'rx_y']).copy()
    out.insert(0, 'i', np.minimum(a, b))
    out.insert(1, 'j', np.maximum(a, b))
    out.insert(2, 'distance_m', np.linalg.norm(tx - rx, axis=1))
    same = a == b
    if np.any(same):
        warn(f"{int(same.sum())} records have both endpoints on the same pixel and were dropped: "
             f"{frame.index[same].tolist()}")
        out = out[~same]
    return out


def _line_numbered(path: str, columns: List[str]) -> pd.DataFrame:
    frame = pd.read_csv(path)
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        raise IngestionError(f"{path}: missing columns {missing}")
    frame = frame[columns]
    # line 1 is the header
    frame.index = pd.RangeIndex(2, len(frame) + 2, name='line')
    numeric = frame.apply(pd.to_numeric, errors='coerce')
    bad = numeric.isna().any(axis=1) | ~np.isfinite(numeric.to_numpy(dtype=float)).all(axis=1)
    if bad.any():
        raise IngestionError(f"{path}: malformed rows at lines {numeric.index[bad].tolist()}")
    return numeric


def read_ingestion_csv(path: str) -> pd.DataFrame:
    """Read ``tx_x,tx_y,rx_x,rx_y,rx_power_dbm``; the index holds the file line numbers.

    Raises
    ------
    IngestionError
        Missing columns or malformed rows (listed by line number).
    """
    return _line_numbered(path, INGESTION_COLUMNS)


def read_shadowing_csv(path: str) -> pd.DataFrame:
    """Read ``i,j,distance_m,shadow_db``, canonicalizing ``i < j``."""
    frame = _line_numbered(path, SHADOWING_COLUMNS)
    i, j = frame['i'].to_numpy(), frame['j'].to_numpy()
    if np.any(i != np.round(i)) or np.any(j != np.round(j)):
        raise IngestionError(f"{path}: pixel indices must be integers")
    if np.any(i == j):
        raise IngestionError(f"{path}: self-links at lines {frame.index[i == j].tolist()}")
    frame['i'], frame['j'] = np.minimum(i, j).astype(np.int64), np.maximum(i, j).astype(np.int64)
    if np.any(frame['distance_m'] <= 0):
        raise IngestionError(f"{path}: non positive distance at lines {frame.index[frame['distance_m'] <= 0].tolist()}")
    return frame


def write_shadowing_csv(frame: pd.DataFrame, path: str):
    frame[SHADOWING_COLUMNS].to_csv(path, index=False)


def ingest_dataset(path: str, grid: GridSpec, params: PathLossParams, p_tx: float) -> pd.DataFrame:
    """Received-power CSV to a shadowing table ``i, j, distance_m, shadow_db``."""
    frame = assign_to_grid(read_ingestion_csv(path), grid)
    frame['shadow_db'] = derive_shadowing_array(frame['distance_m'].to_numpy(), frame['rx_power_dbm'].to_numpy(),
                                                params, p_tx)
    return frame[SHADOWING_COLUMNS].reset_index(drop=True)


def load_dataset(path: str, grid: GridSpec, params: PathLossParams, p_tx: float) -> pd.DataFrame:
    """Shadowing table from either a received-power CSV or a shadowing CSV (chosen by its header)."""
    columns = pd.read_csv(path, nrows=0).columns
    if set(INGESTION_COLUMNS) <= set(columns):
        return ingest_dataset(path, grid, params, p_tx)
    frame = read_shadowing_csv(path).reset_index(drop=True)
    if len(frame) and frame['j'].max() > grid.P:
        raise IngestionError(f"{path}: pixel index {frame['j'].max()} does not fit a grid with P = {grid.P}")
    return frame


def split_train_test(dataset: Union[pd.DataFrame, int], fraction: float,
                     seed: int = 0) -> Tuple[Union[pd.DataFrame, np.ndarray], Union[pd.DataFrame, np.ndarray]]:
    """Random train/test partition.

    Parameters
    ----------
    dataset : Union[pandas.DataFrame, int]
        The table, or its size to split positions ``0..D-1``.
    fraction : float
        Share in ``(0, 1]`` going to training: ``floor(fraction * D)`` samples.
    seed : int, optional
        Seed, by default 0.

    Returns
    -------
    Tuple
        ``(train, test)``, both in the original order.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    D = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    if D == 0:
        raise ValueError("empty dataset")
    n_train = int(np.floor(fraction * D))
    order = np.random.default_rng(seed).permutation(D)
    train, test = np.sort(order[:n_train]), np.sort(order[n_train:])
    if isinstance(dataset, (int, np.integer)):
        return train, test
    return dataset.iloc[train], dataset.iloc[test]


if __name__ == '__main__':
    pass
