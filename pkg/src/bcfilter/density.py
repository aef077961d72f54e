"""Probability densities tabulated on a uniform grid over a compact box.

A :class:`GridDensity` stores one density value per cell (the value at the
cell centre). Integrals are midpoint Riemann sums, so the mass of a cell is
``value * grid.cell_measure``. Every density produced here is normalized and
floored to a small positive level, which keeps logarithmic pooling free of
zero-probability vetoes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import AllZero, BadWeights, Degenerate, GridMismatch, NonFinite

TOL_NORM = 1e-10
# Relative to the uniform level 1/volume.
FLOOR_REL = 1e-12
M_CAP = 1e12
WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class StateGrid:
    """Uniform rectangular grid over ``[lower, upper]`` with ``cells`` bins per axis."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        cells = tuple(int(v) for v in np.atleast_1d(self.cells))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "cells", cells)
        if not (len(lower) == len(upper) == len(cells)) or not lower:
            raise ValueError("lower, upper and cells must have the same nonzero length")
        for lo, hi in zip(lower, upper):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"need finite lower < upper, got [{lo}, {hi}]")
        if any(c < 1 for c in cells) or int(np.prod(cells)) < 2:
            raise ValueError("grid needs at least two cells in total")

    @classmethod
    def line(cls, lower: float, upper: float, cells: int) -> "StateGrid":
        return cls((lower,), (upper,), (cells,))

    @property
    def ndim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def widths(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / np.asarray(self.cells)

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.widths))

    @property
    def volume(self) -> float:
        return float(np.prod(np.asarray(self.upper) - np.asarray(self.lower)))

    def axis_centers(self, axis: int) -> np.ndarray:
        w = self.widths[axis]
        return self.lower[axis] + w * (np.arange(self.cells[axis]) + 0.5)

    def axis_edges(self, axis: int) -> np.ndarray:
        return np.linspace(self.lower[axis], self.upper[axis], self.cells[axis] + 1)

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centres as an ``(n_cells, ndim)`` array in C order."""
        axes = [self.axis_centers(a) for a in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        out = np.stack([m.ravel() for m in mesh], axis=1)
        out.setflags(write=False)
        return out

    def locate(self, points: np.ndarray, periodic: Sequence[bool] | None = None) -> np.ndarray:
        """Flat cell index of each point; out-of-box points are clipped or wrapped."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.ndim:
            pts = pts.reshape(-1, self.ndim)
        periodic = periodic or [False] * self.ndim
        idx = []
        for a in range(self.ndim):
            rel = (pts[:, a] - self.lower[a]) / self.widths[a]
            i = np.floor(rel).astype(np.int64)
            if periodic[a]:
                i = np.mod(i, self.cells[a])
            else:
                i = np.clip(i, 0, self.cells[a] - 1)
            idx.append(i)
        return np.ravel_multi_index(tuple(idx), self.cells)


def _check_same_grid(*densities: "GridDensity") -> StateGrid:
    grid = densities[0].grid
    for d in densities[1:]:
        if d.grid != grid:
            raise GridMismatch(f"grids differ: {grid} vs {d.grid}")
    return grid


def _check_weights(weights, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != n:
        raise BadWeights(f"expected {n} weights, got {w.size}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise BadWeights("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise BadWeights(f"weights sum to {w.sum()!r}, not 1")
    return w


class GridDensity:
    """A normalized, strictly positive density on a :class:`StateGrid`.

    Instances are immutable; ``values`` is a read-only flat array in C order.
    Use :func:`normalize` to build one from arbitrary nonnegative raw values.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: StateGrid, values, *, check: bool = True):
        v = np.array(values, dtype=float).ravel()
        if check:
            if v.size != grid.n_cells:
                raise ValueError(f"expected {grid.n_cells} values, got {v.size}")
            if not np.all(np.isfinite(v)):
                raise NonFinite("density values must be finite")
            if np.any(v <= 0):
                raise ValueError("density values must be strictly positive")
            if v.max() > M_CAP:
                raise Degenerate(f"density exceeds the cap {M_CAP:g}")
            total = v.sum() * grid.cell_measure
            if abs(total - 1.0) > TOL_NORM:
                raise ValueError(f"density integrates to {total!r}")
        v.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", v)

    def __setattr__(self, name, value):
        raise AttributeError("GridDensity is immutable")

    def __repr__(self):
        return f"GridDensity(cells={self.grid.cells}, mean={np.round(self.mean(), 4).tolist()})"

    @classmethod
    def uniform(cls, grid: StateGrid) -> "GridDensity":
        return cls(grid, np.full(grid.n_cells, 1.0 / (grid.n_cells * grid.cell_measure)))

    @classmethod
    def from_function(cls, grid: StateGrid, fn: Callable[[np.ndarray], np.ndarray]) -> "GridDensity":
        """Tabulate ``fn`` (called on the ``(n_cells, ndim)`` centre array) and normalize."""
        return normalize(np.asarray(fn(grid.centers), dtype=float), grid)

    @property
    def masses(self) -> np.ndarray:
        return self.values * self.grid.cell_measure

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def mean(self) -> np.ndarray:
        return self.masses @ self.grid.centers

    def covariance(self) -> np.ndarray:
        c = self.grid.centers - self.mean()
        return (c * self.masses[:, None]).T @ c

    def log_values(self) -> np.ndarray:
        return np.log(self.values)


def normalize(raw_values, grid: StateGrid, floor_rel: float = FLOOR_REL) -> GridDensity:
    """Turn nonnegative raw cell values into a :class:`GridDensity`.

    The raw values are first scaled to unit mass, then floored at
    ``floor_rel / grid.volume`` and rescaled once more.
    """
    raw = np.asarray(raw_values, dtype=float).ravel()
    if raw.size != grid.n_cells:
        raise ValueError(f"expected {grid.n_cells} values, got {raw.size}")
    if not np.all(np.isfinite(raw)):
        raise NonFinite("raw values contain NaN or inf")
    if not np.any(raw > 0):
        raise AllZero("every raw value is <= 0")
    v = np.clip(raw, 0.0, None)
    v = v / (v.sum() * grid.cell_measure)
    return _floor_and_finish(v, grid, floor_rel)


def normalize_log(log_values, grid: StateGrid, floor_rel: float = FLOOR_REL) -> GridDensity:
    """Like :func:`normalize` but takes unnormalized log-densities (``-inf`` allowed)."""
    lv = np.asarray(log_values, dtype=float).ravel()
    if lv.size != grid.n_cells:
        raise ValueError(f"expected {grid.n_cells} values, got {lv.size}")
    if np.any(np.isnan(lv)) or np.any(lv == np.inf):
        raise NonFinite("log values contain NaN or +inf")
    if not np.any(np.isfinite(lv)):
        raise AllZero("every log value is -inf")
    v = np.exp(lv - logsumexp(lv) - np.log(grid.cell_measure))
    return _floor_and_finish(v, grid, floor_rel)


def _floor_and_finish(v: np.ndarray, grid: StateGrid, floor_rel: float) -> GridDensity:
    floor = floor_rel / grid.volume
    if floor > 0 and v.min() < floor:
        v = np.maximum(v, floor)
        v = v / (v.sum() * grid.cell_measure)
    return GridDensity(grid, v, check=False)


def l1_distance(p: GridDensity, q: GridDensity) -> float:
    grid = _check_same_grid(p, q)
    return float(np.abs(p.values - q.values).sum() * grid.cell_measure)


def tv_distance(p: GridDensity, q: GridDensity) -> float:
    """Total variation between the induced measures (half the L1 distance)."""
    return 0.5 * l1_distance(p, q)


def kl_divergence(p: GridDensity, q: GridDensity) -> float:
    grid = _check_same_grid(p, q)
    d = np.sum(p.values * (np.log(p.values) - np.log(q.values))) * grid.cell_measure
    return float(max(d, 0.0))


def entropy(p: GridDensity) -> float:
    """Differential entropy ``-int p ln p``; may be negative."""
    return float(-np.sum(p.values * np.log(p.values)) * p.grid.cell_measure)


def arithmetic_pool(densities: Sequence[GridDensity], weights) -> GridDensity:
    """Linear opinion pool: the weighted mixture of the inputs."""
    grid = _check_same_grid(*densities)
    w = _check_weights(weights, len(densities))
    stacked = np.stack([d.values for d in densities])
    return normalize(w @ stacked, grid)


def geometric_pool(densities: Sequence[GridDensity], weights) -> GridDensity:
    """Logarithmic opinion pool: normalized weighted geometric mean, computed in log space."""
    grid = _check_same_grid(*densities)
    w = _check_weights(weights, len(densities))
    return log_pool([d.log_values() for d in densities], w, grid)


def log_pool(log_functions, weights, grid: StateGrid) -> GridDensity:
    """Geometric pool of positive, possibly unnormalized functions given as logs.

    Rescaling any input by a positive constant leaves the result unchanged.
    """
    logs = np.atleast_2d(np.asarray(log_functions, dtype=float))
    w = _check_weights(weights, logs.shape[0])
    keep = w > 0
    return normalize_log(w[keep] @ logs[keep], grid)
