"""Local Bayesian filtering on grid densities.

Prediction pushes a density through a tabulated transition kernel
(Chapman-Kolmogorov by midpoint quadrature). The update multiplies the prior
by the likelihoods of every measurement the agent can use, own and exchanged,
and renormalizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .density import FLOOR_REL, TOL_NORM, GridDensity, StateGrid, normalize, normalize_log
from .errors import GridMismatch, KernelNotStochastic, TooLarge, ZeroEvidence

KERNEL_TOL = 1e-6
MI_MAX_POINTS = 10_000


class TransitionKernel:
    """Transition density ``p(x_next | x_prev)`` tabulated on a grid.

    ``matrix[i, j]`` is the density at next-cell ``i`` given previous cell
    ``j``; each column integrates to one over the next state.
    """

    def __init__(self, grid: StateGrid, matrix: np.ndarray):
        mat = np.asarray(matrix, dtype=float)
        n = grid.n_cells
        if mat.shape != (n, n):
            raise ValueError(f"kernel must be {n}x{n}, got {mat.shape}")
        if not np.all(np.isfinite(mat)) or np.any(mat < 0):
            raise KernelNotStochastic("kernel entries must be finite and nonnegative")
        col = mat.sum(axis=0) * grid.cell_measure
        bad = np.abs(col - 1.0) > KERNEL_TOL
        if np.any(bad):
            j = int(np.argmax(bad))
            raise KernelNotStochastic(f"column {j} integrates to {col[j]!r}")
        mat.setflags(write=False)
        self.grid = grid
        self.matrix = mat

    @classmethod
    def from_mass_matrix(cls, grid: StateGrid, masses: np.ndarray) -> "TransitionKernel":
        """Build from column-stochastic cell-to-cell probabilities."""
        m = np.asarray(masses, dtype=float)
        m = m / m.sum(axis=0, keepdims=True)
        return cls(grid, m / grid.cell_measure)

    @classmethod
    def identity(cls, grid: StateGrid) -> "TransitionKernel":
        return cls.from_mass_matrix(grid, np.eye(grid.n_cells))

    @classmethod
    def gaussian(cls, grid: StateGrid, mean_fn: Callable[[np.ndarray], np.ndarray] | None,
                 cov, periodic: Sequence[bool] | None = None) -> "TransitionKernel":
        """Additive-Gaussian dynamics ``x' = f(x) + v``, ``v ~ N(0, cov)``.

        Diagonal covariances are integrated exactly over each target cell with
        the normal CDF; a full covariance falls back to centre evaluation.
        Mass leaving a non-periodic box is dropped and the column renormalized.
        """
        d = grid.ndim
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape == (1, 1) and d > 1:
            cov = np.eye(d) * cov[0, 0]
        periodic = list(periodic or [False] * d)
        src = grid.centers
        means = src if mean_fn is None else np.asarray(mean_fn(src), dtype=float).reshape(-1, d)
        if np.allclose(cov, np.diag(np.diag(cov))):
            sd = np.sqrt(np.diag(cov))
            masses = np.ones((grid.n_cells, grid.n_cells))
            # per-axis factor tables, shape (cells_a, n_src)
            factors = []
            for a in range(d):
                edges = grid.axis_edges(a)
                period = grid.upper[a] - grid.lower[a]
                shifts = [0.0] if not periodic[a] else [-2 * period, -period, 0.0, period, 2 * period]
                if sd[a] == 0:
                    tab = np.zeros((grid.cells[a], grid.n_cells))
                    pts = means[:, a]
                    if periodic[a]:
                        pts = grid.lower[a] + np.mod(pts - grid.lower[a], period)
                    i = np.clip(np.searchsorted(edges, pts, side="right") - 1, 0, grid.cells[a] - 1)
                    tab[i, np.arange(grid.n_cells)] = 1.0
                else:
                    tab = np.zeros((grid.cells[a], grid.n_cells))
                    for s in shifts:
                        z = (edges[:, None] - means[None, :, a] - s) / sd[a]
                        cdf = ndtr(z)
                        tab += cdf[1:] - cdf[:-1]
                factors.append(tab)
            idx = np.unravel_index(np.arange(grid.n_cells), grid.shape)
            for a in range(d):
                masses *= factors[a][idx[a], :]
        else:
            inv = np.linalg.inv(cov)
            tgt = grid.centers
            diff = tgt[:, None, :] - means[None, :, :]
            for a in range(d):
                if periodic[a]:
                    period = grid.upper[a] - grid.lower[a]
                    diff[..., a] = (diff[..., a] + period / 2) % period - period / 2
            masses = np.exp(-0.5 * np.einsum("ijk,kl,ijl->ij", diff, inv, diff))
        empty = masses.sum(axis=0) <= 0
        if np.any(empty):
            # all mass left the box: keep it in the nearest cell
            near = grid.locate(means[empty], periodic)
            masses[near, np.flatnonzero(empty)] = 1.0
        return cls.from_mass_matrix(grid, masses)

    @classmethod
    def monte_carlo(cls, grid: StateGrid, step_fn: Callable[[np.ndarray, np.random.Generator], np.ndarray],
                    n_samples: int = 256, seed: int = 0,
                    periodic: Sequence[bool] | None = None) -> "TransitionKernel":
        """Estimate each column by pushing ``n_samples`` draws through ``step_fn``.

        ``step_fn(points, rng)`` maps an ``(n, ndim)`` array of previous states
        to next states, drawing its own process noise from ``rng``. Cell ``j``
        uses the stream ``SeedSequence(seed, spawn_key=(j,))`` so the kernel is
        reproducible and independent of evaluation order. Samples outside the
        box are clipped to the boundary cells (or wrapped on periodic axes).
        """
        n = grid.n_cells
        masses = np.zeros((n, n))
        for j, x in enumerate(grid.centers):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(j,)))
            pts = np.repeat(x[None, :], n_samples, axis=0)
            nxt = np.asarray(step_fn(pts, rng), dtype=float).reshape(n_samples, grid.ndim)
            cells = grid.locate(nxt, periodic)
            masses[:, j] = np.bincount(cells, minlength=n)
        return cls.from_mass_matrix(grid, masses)


class LikelihoodModel:
    """Measurement model ``p(z | x)`` evaluated on every grid cell."""

    def log_likelihood(self, z, grid: StateGrid) -> np.ndarray:
        raise NotImplementedError

    def likelihood(self, z, grid: StateGrid) -> np.ndarray:
        return np.exp(self.log_likelihood(z, grid))

    def sample(self, x, rng: np.random.Generator):
        raise NotImplementedError


class GaussianLikelihood(LikelihoodModel):
    """``z = h(x) + w`` with ``w ~ N(0, cov)``; ``h`` defaults to the identity."""

    def __init__(self, cov, h: Callable[[np.ndarray], np.ndarray] | None = None):
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.h = h
        self._inv = np.linalg.inv(self.cov)
        _, logdet = np.linalg.slogdet(2 * np.pi * self.cov)
        self._lognorm = -0.5 * logdet

    def predict_measurement(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = x if self.h is None else self.h(x)
        return np.asarray(out, dtype=float).reshape(x.shape[0], -1)

    def log_likelihood(self, z, grid: StateGrid) -> np.ndarray:
        hz = self.predict_measurement(grid.centers)
        r = np.asarray(z, dtype=float).reshape(1, -1) - hz
        return self._lognorm - 0.5 * np.einsum("ij,jk,ik->i", r, self._inv, r)

    def sample(self, x, rng: np.random.Generator) -> np.ndarray:
        mu = self.predict_measurement(np.asarray(x, dtype=float))[0]
        return rng.multivariate_normal(mu, self.cov)


class TabularLikelihood(LikelihoodModel):
    """Discrete measurement alphabet: ``table[z, cell] = P(z | cell)``."""

    def __init__(self, table):
        t = np.asarray(table, dtype=float)
        if np.any(t < 0) or not np.allclose(t.sum(axis=0), 1.0):
            raise ValueError("each column of the table must be a pmf over z")
        self.table = t

    def log_likelihood(self, z, grid: StateGrid) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.table[int(z)])

    def sample(self, x, rng: np.random.Generator):
        raise NotImplementedError("sample a tabular model through its cell index instead")


@dataclass(frozen=True)
class Measurement:
    agent: int
    k: int
    value: np.ndarray = field(compare=False)

    def __post_init__(self):
        if self.agent < 0:
            raise ValueError("agent id must be nonnegative")
        if self.k < 1:
            raise ValueError("measurements start at time index 1")


def predict(prior: GridDensity, kernel: TransitionKernel) -> GridDensity:
    if prior.grid != kernel.grid:
        raise GridMismatch("prior and kernel use different grids")
    out = kernel.matrix @ prior.values * prior.grid.cell_measure
    mass = out.sum() * prior.grid.cell_measure
    if abs(mass - 1.0) > max(TOL_NORM, KERNEL_TOL):
        raise KernelNotStochastic(f"prediction lost mass: {mass!r}")
    return normalize(out, prior.grid)


def update_with_exchange(prior: GridDensity, measurements: Sequence[Measurement],
                         models: Mapping[int, LikelihoodModel], floor_rel: float = FLOOR_REL) -> GridDensity:
    """Bayes update with the product of every supplied measurement's likelihood.

    An empty measurement set returns ``prior`` itself. The posterior is
    floored once, so a joint update is exact where a chain of single updates
    can let a floored tail be amplified by a later, conflicting measurement.
    """
    if not measurements:
        return prior
    ks = {m.k for m in measurements}
    if len(ks) > 1:
        raise ValueError(f"measurements span several time indices: {sorted(ks)}")
    grid = prior.grid
    with np.errstate(divide="ignore"):
        log_post = np.log(prior.values)
    for m in measurements:
        log_post = log_post + models[m.agent].log_likelihood(m.value, grid)
    if not np.any(np.isfinite(log_post)):
        raise ZeroEvidence("likelihood times prior is zero on every cell")
    return normalize_log(log_post, grid, floor_rel)


def mutual_information_gain(prior: GridDensity, model: LikelihoodModel, z_space) -> float:
    """``I(X; Z)`` in nats with ``Z`` restricted to the finite set ``z_space``.

    For each cell the likelihood is renormalized over ``z_space`` so the joint
    is a proper pmf, then ``H(X) - E_z H(X | z)`` is enumerated exactly.
    """
    z_space = list(z_space)
    if len(z_space) > MI_MAX_POINTS:
        raise TooLarge(f"{len(z_space)} measurement points exceeds {MI_MAX_POINTS}")
    grid = prior.grid
    lik = np.stack([model.likelihood(z, grid) for z in z_space])
    col = lik.sum(axis=0, keepdims=True)
    lik = np.divide(lik, col, out=np.full_like(lik, 1.0 / len(z_space)), where=col > 0)
    joint = lik * prior.masses[None, :]
    pz = joint.sum(axis=1)

    def h(p):
        p = p[p > 0]
        return float(-np.sum(p * np.log(p)))

    h_x = h(prior.masses / prior.masses.sum())
    h_cond = sum(pz[i] * h(joint[i] / pz[i]) for i in range(len(z_space)) if pz[i] > 0)
    return max(h_x - h_cond, 0.0)
