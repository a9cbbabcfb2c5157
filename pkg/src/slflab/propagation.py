#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Physical window models, weight matrices and the synthetic measurement generator.

The shadowing of link ``m`` is ``s_m = sum_p w(phi1_m, phi2_{m,p}) f_p`` and
its path loss ``pl = pl0 + 10 delta log10(d / d0) + s + noise``.
"""
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Union
from warnings import warn

import numpy as np
import pandas as pd
from scipy import sparse

from slflab.scenario import GridSpec, LinkId, Scenario, link_pairs, phi1, phi2

WINDOW_KINDS = ('normalized_elliptical', 'inverse_area_elliptical')


class CoincidentEndpointsError(ValueError):
    pass


@dataclass(frozen=True)
class WindowModel:
    """Parametrized tomographic window.

    Parameters
    ----------
    kind : str
        ``normalized_elliptical`` or ``inverse_area_elliptical``.
    eta : float
        Width parameter of the ellipse in meters (the signal wavelength).
    nu : float
        Cap of the inverse-area model, only used by ``inverse_area_elliptical``;
        ``eta / 8`` when None. The weight is constant over the whole ellipse
        when ``nu >= eta / 2``.
    """
    kind: str = 'normalized_elliptical'
    eta: float = 0.1499
    nu: Optional[float] = None

    def __post_init__(self):
        if self.kind not in WINDOW_KINDS:
            raise ValueError(f"Unknown window kind '{self.kind}'. Choose from: {WINDOW_KINDS}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.nu is None:
            object.__setattr__(self, 'nu', self.eta / 8)
        if self.kind == 'inverse_area_elliptical':
            if not self.nu > 0:
                raise ValueError(f"nu must be positive, got {self.nu}")
            if self.nu >= self.eta / 2:
                warn(f"nu = {self.nu} >= eta / 2 makes the inverse-area window constant inside the ellipse")


@dataclass(frozen=True)
class PathLossParams:
    """Log-distance path loss with additive shadowing and Gaussian noise (dB)."""
    pl0: float = 75.0
    d0: float = 1.0
    delta: float = 2.9
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.d0 > 0:
            raise ValueError(f"d0 must be positive, got {self.d0}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.noise_std >= 0:
            raise ValueError(f"noise_std must be non negative, got {self.noise_std}")


def inverse_area(phi1: np.ndarray, phi2: np.ndarray) -> np.ndarray:
    """``4 / (pi phi2 sqrt(phi2^2 - phi1^2))``, infinite on the direct path."""
    phi1 = np.asarray(phi1, dtype=float)
    phi2 = np.asarray(phi2, dtype=float)
    with np.errstate(divide='ignore'):
        return 4.0 / (np.pi * phi2 * np.sqrt(np.maximum(phi2**2 - phi1**2, 0.0)))


def window_weight(model: WindowModel, phi1: Union[float, np.ndarray], phi2: Union[float, np.ndarray]):
    """Weight of a pixel on a link.

    Parameters
    ----------
    model : WindowModel
        The window.
    phi1 : Union[float, np.ndarray]
        Direct path length (meters).
    phi2 : Union[float, np.ndarray]
        Path length through the pixel (meters), broadcastable against phi1.

    Returns
    -------
    Union[float, np.ndarray]
        Zero outside the ellipse ``phi2 <= phi1 + eta/2``. Inside it is
        ``1/sqrt(phi1)`` for the normalized model and
        ``min(G(phi1, max(phi2, phi1 + nu)), G(phi1, phi1 + nu))`` for the
        inverse-area model, G being :meth:`inverse_area`.

    Raises
    ------
    CoincidentEndpointsError
        Some ``phi1`` is zero.

    Example
    -------
    >>> window_weight(WindowModel(eta=0.15), 4.0, 4.05)
    0.5
    """
    scalar = np.ndim(phi1) == 0 and np.ndim(phi2) == 0
    phi1, phi2 = np.broadcast_arrays(np.asarray(phi1, dtype=float), np.asarray(phi2, dtype=float))
    if np.any(phi1 <= 0):
        raise CoincidentEndpointsError("coincident endpoints")
    inside = phi2 <= phi1 + model.eta / 2
    if model.kind == 'normalized_elliptical':
        value = 1.0 / np.sqrt(phi1)
    else:
        cap = inverse_area(phi1, phi1 + model.nu)
        value = np.minimum(inverse_area(phi1, np.maximum(phi2, phi1 + model.nu)), cap)
    weights = np.where(inside, value, 0.0)
    if scalar:
        return float(weights)
    return weights


@dataclass
class WeightMatrix:
    """Window rows of a list of links.

    ``values`` is a dense ``M x P`` array or a ``scipy.sparse.csr_matrix``;
    ``links`` holds the link index of every row.
    """
    values: Union[np.ndarray, sparse.csr_matrix]
    links: np.ndarray
    P: int

    def __post_init__(self):
        self.links = np.asarray(self.links, dtype=np.int64)
        if self.values.shape != (len(self.links), self.P):
            raise ValueError(f"values of shape {self.values.shape} do not match "
                             f"{len(self.links)} links and P = {self.P}")

    @property
    def shape(self):
        return self.values.shape

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.values)

    @property
    def link_ids(self) -> List[LinkId]:
        i, j = link_pairs(self.links, self.P)
        return [LinkId(int(a), int(b), int(m)) for a, b, m in zip(i, j, self.links)]

    def toarray(self) -> np.ndarray:
        if self.is_sparse:
            return self.values.toarray()
        return np.asarray(self.values)

    def rows(self, index: Sequence[int]) -> 'WeightMatrix':
        """Sub-matrix with the given (0-based) rows."""
        index = np.asarray(index)
        return WeightMatrix(self.values[index], self.links[index], self.P)


def window_rows(grid: GridSpec, model: WindowModel, xi: np.ndarray, xj: np.ndarray,
                as_sparse: bool = False, chunk_size: int = 256):
    """Window rows of links between arbitrary coordinates.

    Parameters
    ----------
    grid : GridSpec
        The map.
    model : WindowModel
        The window.
    xi, xj : np.ndarray
        Endpoints, shape ``(n, 2)``.
    as_sparse : bool, optional
        Return a csr matrix, by default False.
    chunk_size : int, optional
        Links evaluated at once, by default 256.

    Returns
    -------
    Union[np.ndarray, scipy.sparse.csr_matrix]
        ``n x P`` weights.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    xj = np.atleast_2d(np.asarray(xj, dtype=float))
    xp = grid.coordinates()[None, :, :]
    blocks = []
    for start in range(0, len(xi), chunk_size):
        a, b = xi[start:start + chunk_size, None, :], xj[start:start + chunk_size, None, :]
        block = window_weight(model, phi1(a, b), phi2(a, b, xp))
        blocks.append(sparse.csr_matrix(block) if as_sparse else block)
    if not blocks:
        return sparse.csr_matrix((0, grid.P)) if as_sparse else np.zeros((0, grid.P))
    if as_sparse:
        return sparse.vstack(blocks, format='csr')
    return np.concatenate(blocks, axis=0)


def _as_link_array(links: Iterable[Union[int, LinkId]]) -> np.ndarray:
    return np.array([link.m if isinstance(link, LinkId) else link for link in links], dtype=np.int64)


def build_weight_matrix(scenario: Union[Scenario, GridSpec], model: WindowModel,
                        links: Iterable[Union[int, LinkId]], sparse: bool = False) -> WeightMatrix:
    """Window rows of pixel-to-pixel links.

    Parameters
    ----------
    scenario : Union[Scenario, GridSpec]
        The map.
    model : WindowModel
        The window.
    links : Iterable[Union[int, LinkId]]
        Links as LinkId or link indices.
    sparse : bool, optional
        Store the rows as csr, by default False. Both storages hold the same values.

    Returns
    -------
    WeightMatrix
        One row per link, in the given order.
    """
    grid = scenario.grid if isinstance(scenario, Scenario) else scenario
    links = _as_link_array(links)
    i, j = link_pairs(links, grid.P)
    values = window_rows(grid, model, grid.coordinates(i), grid.coordinates(j), as_sparse=sparse)
    return WeightMatrix(values, links, grid.P)


def synth_shadowing(W: Union[WeightMatrix, np.ndarray], f: np.ndarray) -> np.ndarray:
    """Shadowing ``W f`` in dB."""
    values = W.values if isinstance(W, WeightMatrix) else W
    f = np.asarray(f, dtype=float)
    if values.shape[1] != len(f):
        raise ValueError(f"dimension mismatch: W has {values.shape[1]} columns, f has length {len(f)}")
    return np.asarray(values @ f).ravel()


def free_space_pathloss(params: PathLossParams, distance: Union[float, np.ndarray]):
    """``pl0 + 10 delta log10(distance / d0)``."""
    distance = np.asarray(distance, dtype=float)
    if np.any(distance <= 0):
        raise ValueError("distance must be positive")
    return params.pl0 + 10 * params.delta * np.log10(distance / params.d0)


def synth_pathloss(params: PathLossParams, distance: Union[float, np.ndarray], shadow: Union[float, np.ndarray],
                   rng: np.random.Generator = None):
    """Path loss in dB.

    Parameters
    ----------
    params : PathLossParams
        Model parameters.
    distance : Union[float, np.ndarray]
        Link lengths in meters, positive.
    shadow : Union[float, np.ndarray]
        Shadowing in dB.
    rng : np.random.Generator, optional
        Noise source, required when ``params.noise_std > 0``.

    Returns
    -------
    Union[float, np.ndarray]
        ``pl0 + 10 delta log10(distance/d0) + shadow + noise``

    Example
    -------
    >>> synth_pathloss(PathLossParams(pl0=75, delta=2.9), 10.0, 0.0)
    104.0
    """
    scalar = np.ndim(distance) == 0 and np.ndim(shadow) == 0
    pl = free_space_pathloss(params, distance) + np.asarray(shadow, dtype=float)
    if params.noise_std > 0:
        if rng is None:
            raise ValueError("a seeded numpy Generator is needed when noise_std > 0")
        pl = pl + rng.normal(0.0, params.noise_std, size=np.shape(pl))
    if scalar:
        return float(pl)
    return pl


PERTURBATIONS = ('random', 'gain', 'aligned')


@dataclass(frozen=True)
class PerturbedWindow:
    """Ground-truth window that departs from the physical model.

    ``gain`` scales every row by ``1 + rho``. ``random`` and ``aligned`` add
    to row ``w`` a deviation ``beta u`` supported on the row's ellipse, with
    ``beta`` chosen so that ``||beta u|| / ||w + beta u|| = rho / sqrt(1 + rho^2)``
    for every link (``beta = rho ||w||`` when ``u`` is orthogonal to ``w``).
    ``random`` draws ``u`` from a generator seeded by ``(seed, link index)``;
    ``aligned`` points ``u`` along the SLF restricted to the ellipse, i.e. the
    deviation that shifts the shadowing the most, and falls back to the
    random direction where the SLF vanishes. Weights are not clipped, so a
    large ``rho`` may give slightly negative entries.

    Every row has the same relative error, hence the error of the model window
    over any set of links is ``rho^2 / (1 + rho)^2`` (gain) or
    ``rho^2 / (1 + rho^2)`` (random, aligned).
    """
    kind: str = 'random'
    rho: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATIONS:
            raise ValueError(f"Unknown perturbation '{self.kind}'. Choose from: {PERTURBATIONS}")
        if not self.rho >= 0:
            raise ValueError(f"rho must be non negative, got {self.rho}")

    @property
    def window_error(self) -> float:
        """NMSE of the model window against this truth."""
        if self.kind == 'gain':
            return self.rho**2 / (1 + self.rho)**2
        return self.rho**2 / (1 + self.rho**2)

    def _direction(self, row: np.ndarray, support: np.ndarray, m: int, slf: np.ndarray = None) -> np.ndarray:
        u = np.zeros_like(row)
        if self.kind == 'aligned' and slf is not None:
            u[support] = slf[support]
        if not np.any(u):
            u[support] = np.random.default_rng([self.seed, int(m)]).standard_normal(len(support))
        return u / np.linalg.norm(u)

    def apply(self, rows: np.ndarray, links: np.ndarray, slf: np.ndarray = None) -> np.ndarray:
        """Perturbed copy of the model ``rows`` of ``links``; ``slf`` is used by ``aligned``."""
        rows = np.asarray(rows, dtype=float)
        if self.kind == 'gain':
            return (1.0 + self.rho) * rows
        if self.kind == 'aligned' and slf is None:
            raise ValueError("the aligned perturbation needs the SLF")
        if slf is not None:
            slf = np.asarray(slf, dtype=float).ravel()
        out = rows.copy()
        rho2 = self.rho**2
        for n, m in enumerate(np.asarray(links)):
            support = np.flatnonzero(rows[n])
            if len(support) == 0:
                continue
            u = self._direction(rows[n], support, m, slf)
            wu = rows[n] @ u
            beta = rho2 * wu + np.sqrt(rho2**2 * wu**2 + rho2 * rows[n] @ rows[n])
            out[n] += beta * u
        return out


def true_windows(scenario: Scenario, model: WindowModel, links: np.ndarray,
                 truth: PerturbedWindow = None) -> np.ndarray:
    """Dense ground-truth window rows of ``links``."""
    rows = build_weight_matrix(scenario, model, links).values
    if truth is None:
        return rows
    return truth.apply(rows, links, scenario.slf)


def true_shadowing(scenario: Scenario, model: WindowModel, links: np.ndarray,
                   truth: PerturbedWindow = None, chunk_size: int = 1024) -> np.ndarray:
    """Noiseless shadowing of ``links`` under the ground-truth window, in chunks."""
    links = np.asarray(links, dtype=np.int64)
    out = np.empty(len(links))
    for start in range(0, len(links), chunk_size):
        chunk = links[start:start + chunk_size]
        out[start:start + chunk_size] = true_windows(scenario, model, chunk, truth) @ scenario.slf
    return out


def synthesize_measurements(scenario: Scenario, model: WindowModel, batches: Sequence[np.ndarray],
                            params: PathLossParams, rng: np.random.Generator = None,
                            truth: PerturbedWindow = None) -> pd.DataFrame:
    """Synthetic measurement table of a batch stream.

    Returns
    -------
    pandas.DataFrame
        Columns ``t, i, j, shadow_db, pathloss_db, distance_m``; ``t`` starts at 1.
        ``shadow_db`` is the noiseless shadowing, the noise goes into ``pathloss_db``.
    """
    frames = []
    for t, links in enumerate(batches, start=1):
        links = np.asarray(links, dtype=np.int64)
        i, j = link_pairs(links, scenario.P)
        distance = phi1(scenario.grid.coordinates(i), scenario.grid.coordinates(j))
        shadow = true_windows(scenario, model, links, truth) @ scenario.slf
        pathloss = synth_pathloss(params, distance, shadow, rng)
        frames.append(pd.DataFrame({
            't': t, 'i': i, 'j': j,
            'shadow_db': shadow,
            'pathloss_db': pathloss,
            'distance_m': distance,
        }))
    if not frames:
        return pd.DataFrame(columns=['t', 'i', 'j', 'shadow_db', 'pathloss_db', 'distance_m'])
    return pd.concat(frames, ignore_index=True)


def write_measurements(frame: pd.DataFrame, path: str):
    """Write the synthetic measurement CSV (header row included)."""
    frame[['t', 'i', 'j', 'shadow_db', 'pathloss_db', 'distance_m']].to_csv(path, index=False)


if __name__ == '__main__':
    pass
