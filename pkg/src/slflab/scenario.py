#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Map geometry, ground-truth spatial loss field (SLF), road mask and link indexing.

Conventions
-----------
* Pixels are enumerated row-major with the row varying slowest and
  indices starting at 1: ``p = (row - 1) * px + col``.
* The center of pixel ``(row, col)`` is ``origin + pixel_size * (col - 1, row - 1)``.
* A link joins two distinct pixels ``i < j`` and has the dense index
  ``m = (j - 1)(j - 2)/2 + i`` in ``1..T`` with ``T = P(P - 1)/2``.
"""
import math
from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np
import pandas as pd

from slflab.data import get_layout


class SelfLinkError(ValueError):
    pass


def link_count(n: int) -> int:
    """Number of unordered pairs of ``n`` distinct pixels."""
    return n * (n - 1) // 2


@dataclass(frozen=True)
class GridSpec:
    """Discretized map geometry.

    Parameters
    ----------
    px : int
        Pixel count along x.
    py : int
        Pixel count along y.
    pixel_size : float
        Meters per pixel edge.
    origin : Tuple[float, float]
        World coordinate (meters) of the center of pixel (1, 1).
    """
    px: int
    py: int
    pixel_size: float = 1.0
    origin: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if int(self.px) != self.px or int(self.py) != self.py or self.px < 1 or self.py < 1:
            raise ValueError(f"px and py must be positive integers, got px = {self.px}, py = {self.py}")
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")
        object.__setattr__(self, 'px', int(self.px))
        object.__setattr__(self, 'py', int(self.py))
        object.__setattr__(self, 'pixel_size', float(self.pixel_size))
        object.__setattr__(self, 'origin', tuple(float(x) for x in self.origin))
        if len(self.origin) != 2:
            raise ValueError(f"origin must be a 2-vector, got {self.origin}")

    @property
    def P(self) -> int:
        return self.px * self.py

    def pixel(self, row: Union[int, np.ndarray], col: Union[int, np.ndarray]):
        """1-based pixel index of ``(row, col)``."""
        return (np.asarray(row) - 1) * self.px + np.asarray(col)

    def row_col(self, p: Union[int, np.ndarray]):
        """Inverse of :meth:`pixel`."""
        p = np.asarray(p) - 1
        return p // self.px + 1, p % self.px + 1

    def coordinates(self, pixels: Union[None, int, np.ndarray] = None) -> np.ndarray:
        """Pixel centers in meters.

        Parameters
        ----------
        pixels : Union[None, int, np.ndarray], optional
            1-based pixel indices; all P pixels if None.

        Returns
        -------
        np.ndarray
            Array of shape ``(..., 2)``.
        """
        if pixels is None:
            pixels = np.arange(1, self.P + 1)
        pixels = np.asarray(pixels)
        if np.any(pixels < 1) or np.any(pixels > self.P):
            raise ValueError(f"pixel index out of range 1..{self.P}")
        row, col = self.row_col(pixels)
        x = self.origin[0] + self.pixel_size * (col - 1)
        y = self.origin[1] + self.pixel_size * (row - 1)
        return np.stack([x, y], axis=-1).astype(float)

    def bounds(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        """``((xmin, xmax), (ymin, ymax))`` of the area covered by the pixels."""
        half = self.pixel_size / 2
        return ((self.origin[0] - half, self.origin[0] + self.pixel_size * (self.px - 1) + half),
                (self.origin[1] - half, self.origin[1] + self.pixel_size * (self.py - 1) + half))


@dataclass(frozen=True, eq=False)
class Scenario:
    """A map: geometry, SLF per pixel and vehicle-admissible pixels.

    ``slf`` and ``road_mask`` are stored as read-only copies.
    """
    grid: GridSpec
    slf: np.ndarray
    road_mask: np.ndarray
    name: str = 'custom'
    has_truth: bool = True
    _road_pixels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        slf = np.array(self.slf, dtype=float).ravel()
        road = np.array(self.road_mask, dtype=bool).ravel()
        if len(slf) != self.grid.P or len(road) != self.grid.P:
            raise ValueError(f"slf and road_mask must have length P = {self.grid.P}, "
                             f"got {len(slf)} and {len(road)}")
        if not np.all(np.isfinite(slf)):
            raise ValueError("slf contains non-finite values")
        slf.setflags(write=False)
        road.setflags(write=False)
        object.__setattr__(self, 'slf', slf)
        object.__setattr__(self, 'road_mask', road)
        object.__setattr__(self, '_road_pixels', np.flatnonzero(road) + 1)

    @property
    def P(self) -> int:
        return self.grid.P

    @property
    def road_pixels(self) -> np.ndarray:
        """Sorted 1-based indices of the road pixels."""
        return self._road_pixels

    @property
    def P_tx(self) -> int:
        return len(self._road_pixels)

    @property
    def T(self) -> int:
        return link_count(self.P)

    @property
    def T_tx(self) -> int:
        return link_count(self.P_tx)

    def road_links(self) -> np.ndarray:
        """Link indices of every road-to-road link, ascending in the first endpoint."""
        a, b = np.triu_indices(self.P_tx, k=1)
        return link_indices(self._road_pixels[a], self._road_pixels[b], self.P)

    def __repr__(self) -> str:
        return (f"{self.__class__.__name__}(name={self.name!r}, px={self.grid.px}, py={self.grid.py}, "
                f"pixel_size={self.grid.pixel_size}, P={self.P}, P_tx={self.P_tx})")


@dataclass(frozen=True)
class LinkId:
    i: int
    j: int
    m: int


def link_index(i: int, j: int, P: int) -> LinkId:
    """Canonical link of the pixel pair ``(i, j)``.

    Parameters
    ----------
    i : int
        1-based pixel index.
    j : int
        1-based pixel index.
    P : int
        Pixel count.

    Returns
    -------
    LinkId
        With ``i < j`` and ``m = (j - 1)(j - 2)/2 + i``.

    Raises
    ------
    SelfLinkError
        ``i == j``.
    ValueError
        An index is outside ``1..P``.

    Example
    -------
    >>> link_index(2, 3, 4)
    LinkId(i=2, j=3, m=3)
    >>> link_index(4, 1, 4)
    LinkId(i=1, j=4, m=4)
    """
    i, j = int(i), int(j)
    if not (1 <= i <= P and 1 <= j <= P):
        raise ValueError(f"pixel index out of range 1..{P}: ({i}, {j})")
    if i == j:
        raise SelfLinkError("self-link undefined")
    i, j = min(i, j), max(i, j)
    return LinkId(i, j, (j - 1) * (j - 2) // 2 + i)


def link_pair(m: int, P: int) -> LinkId:
    """Inverse of :meth:`link_index`."""
    m = int(m)
    if not 1 <= m <= link_count(P):
        raise ValueError(f"link index out of range 1..{link_count(P)}: {m}")
    k = (1 + math.isqrt(8 * m - 7)) // 2
    return LinkId(m - k * (k - 1) // 2, k + 1, m)


def link_indices(i: np.ndarray, j: np.ndarray, P: int) -> np.ndarray:
    """Vectorized :meth:`link_index`, returns only the link indices."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    if np.any(i < 1) or np.any(j < 1) or np.any(i > P) or np.any(j > P):
        raise ValueError(f"pixel index out of range 1..{P}")
    if np.any(i == j):
        raise SelfLinkError("self-link undefined")
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    return (hi - 1) * (hi - 2) // 2 + lo


def link_pairs(m: np.ndarray, P: int) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized :meth:`link_pair`, returns ``(i, j)`` arrays."""
    m = np.asarray(m, dtype=np.int64)
    if np.any(m < 1) or np.any(m > link_count(P)):
        raise ValueError(f"link index out of range 1..{link_count(P)}")
    x = 8 * m - 7
    k = np.floor(np.sqrt(x.astype(float))).astype(np.int64)
    # integer square root, the float estimate is off by at most one
    k = np.where(k * k > x, k - 1, k)
    k = np.where((k + 1) * (k + 1) <= x, k + 1, k)
    k = (1 + k) // 2
    return m - k * (k - 1) // 2, k + 1


def phi1(xi: np.ndarray, xj: np.ndarray):
    """Length of the direct path ``||xi - xj||``."""
    return np.linalg.norm(np.asarray(xi, dtype=float) - np.asarray(xj, dtype=float), axis=-1)


def phi2(xi: np.ndarray, xj: np.ndarray, xp: np.ndarray):
    """Length of the path from ``xi`` to ``xj`` through ``xp``."""
    xp = np.asarray(xp, dtype=float)
    return (np.linalg.norm(xp - np.asarray(xi, dtype=float), axis=-1) +
            np.linalg.norm(xp - np.asarray(xj, dtype=float), axis=-1))


def scenario_from_layout(layout: dict) -> Scenario:
    """Rasterize a layout dictionary as returned by :meth:`slflab.data.get_layout`."""
    grid = GridSpec(layout['px'], layout['py'], layout['pixel_size'], tuple(layout['origin']))
    slf = np.full((grid.py, grid.px), float(layout['background']['slf']))
    road = np.full((grid.py, grid.px), bool(layout['background']['road']))
    for block in layout['blocks']:
        r0, c0 = block['row'] - 1, block['col'] - 1
        r1, c1 = r0 + block['height'], c0 + block['width']
        if r0 < 0 or c0 < 0 or r1 > grid.py or c1 > grid.px:
            raise ValueError(f"block {block.get('name')} does not fit in the {grid.py}x{grid.px} grid")
        slf[r0:r1, c0:c1] = block['slf']
        road[r0:r1, c0:c1] = block['road']
    return Scenario(grid, slf.ravel(), road.ravel(),
                    name=layout.get('name', 'custom'), has_truth=layout['ground_truth'])


def build_scenario(name: str) -> Scenario:
    """Builtin scenario by name (see :data:`slflab.data._AVAILABLE_DATA`)."""
    return scenario_from_layout(get_layout(name))


def build_madrid_scenario() -> Scenario:
    """The 56 x 39 Madrid-style grid with 2.5 m pixels.

    Seven buildings and eight thin buildings absorb with SLF 1.0,
    one park with SLF 0.1, roads are 0.0 and vehicle-admissible.

    Example
    -------
    >>> s = build_madrid_scenario()
    >>> s.P, s.P_tx, s.T, s.T_tx
    (2184, 744, 2383836, 276396)
    """
    return build_scenario('madrid')


def write_scenario(scenario: Scenario, path: str):
    """Write the scenario text file.

    Header lines ``px``, ``py``, ``pixel_size`` and ``origin`` followed by P
    lines ``slf road_flag`` in row-major order.
    """
    grid = scenario.grid
    with open(path, 'w') as f:
        f.write(f"px {grid.px}\n")
        f.write(f"py {grid.py}\n")
        f.write(f"pixel_size {grid.pixel_size!r}\n")
        f.write(f"origin {grid.origin[0]!r} {grid.origin[1]!r}\n")
        for value, road in zip(scenario.slf, scenario.road_mask):
            f.write(f"{float(value)!r} {int(road)}\n")


def read_scenario(path: str, name: str = None) -> Scenario:
    """Read a file written by :meth:`write_scenario`.

    Raises
    ------
    ValueError
        Missing header key or wrong number of pixel lines.
    """
    header = {}
    with open(path, 'r') as f:
        for _ in range(4):
            key, *values = f.readline().split()
            header[key] = values
    for key in ['px', 'py', 'pixel_size', 'origin']:
        if key not in header:
            raise ValueError(f"{path}: missing header key '{key}'")
    grid = GridSpec(int(header['px'][0]), int(header['py'][0]), float(header['pixel_size'][0]),
                    tuple(float(x) for x in header['origin']))
    body = pd.read_csv(path, sep=r'\s+', skiprows=4, header=None, names=['slf', 'road'])
    if len(body) != grid.P:
        raise ValueError(f"{path}: expected {grid.P} pixel lines, found {len(body)}")
    if name is None:
        name = path
    return Scenario(grid, body['slf'].to_numpy(dtype=float), body['road'].to_numpy(dtype=int) != 0, name=name)


if __name__ == '__main__':
    pass
