"""Consensus on densities: pooled rounds, closed-form limits, and loop planning.

One consensus round replaces every agent's density by a pool (linear or
logarithmic) of its inclusive neighbours' densities from the previous round,
weighted by its row of ``P``. Rounds are synchronous: all reads in round
``nu`` see round ``nu - 1`` values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .density import (
    GridDensity,
    StateGrid,
    arithmetic_pool,
    geometric_pool,
    kl_divergence,
    l1_distance,
    normalize,
    normalize_log,
    _check_same_grid,
)
from .errors import BadWeights, Infeasible, TooLarge
from .network import WeightMatrix

# (density, rng) -> (received density, achieved L1 error)
Channel = Callable[[GridDensity, np.random.Generator], tuple[GridDensity, float]]


class Pool(str, Enum):
    LINOP = "linop"
    LOGOP = "logop"

    @classmethod
    def parse(cls, value) -> "Pool":
        if isinstance(value, Pool):
            return value
        return cls(str(value).lower())


def conservative_gamma(m: int) -> float:
    """Upper bound ``2 sqrt(m)`` on the l2 norm of any disagreement vector."""
    return 2.0 * math.sqrt(m)


@dataclass
class ConsensusConfig:
    pool: Pool = Pool.LOGOP
    n_loop: int = 10
    eps_cons: float = 0.05
    eps_comm: float = 0.0
    # Gamma(previous ||theta||) -> divergence bound after filtering; None means 2 sqrt(m)
    gamma_fn: Callable[[float], float] | None = None

    def __post_init__(self):
        self.pool = Pool.parse(self.pool)
        if self.n_loop < 1:
            raise ValueError("n_loop must be >= 1")
        if self.eps_cons <= 0 or self.eps_comm < 0:
            raise ValueError("need eps_cons > 0 and eps_comm >= 0")

    def gamma(self, m: int, prev_theta_norm: float | None = None) -> float:
        cap = conservative_gamma(m)
        if self.gamma_fn is None or prev_theta_norm is None:
            return cap
        return min(float(self.gamma_fn(prev_theta_norm)), cap)

    def check_budget(self, m: int) -> None:
        """The communication term alone must leave room inside ``eps_cons``."""
        if 2 * self.n_loop * self.eps_comm * math.sqrt(m) >= self.eps_cons:
            raise Infeasible(f"2*n_loop*eps_comm*sqrt(m) = "
                             f"{2 * self.n_loop * self.eps_comm * math.sqrt(m):.4g} >= eps_cons")


@dataclass
class DisagreementVector:
    theta: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.theta))

    def __len__(self):
        return len(self.theta)


def _matrix(P) -> np.ndarray:
    return P.matrix if isinstance(P, WeightMatrix) else np.asarray(P, dtype=float)


def _pool_rows(P: np.ndarray, values: np.ndarray, grid: StateGrid, pool: Pool,
               self_values: np.ndarray | None = None) -> list[GridDensity]:
    """Apply each row of ``P`` to stacked densities; ``self_values`` overrides the diagonal term."""
    if pool is Pool.LOGOP:
        stacked = np.log(values)
        own = None if self_values is None else np.log(self_values)
    else:
        stacked = values
        own = self_values
    if own is None:
        mixed = P @ stacked
    else:
        off = P - np.diag(np.diag(P))
        mixed = off @ stacked + np.diag(P)[:, None] * own
    if pool is Pool.LOGOP:
        return [normalize_log(row, grid) for row in mixed]
    return [normalize(row, grid) for row in mixed]


def consensus_round(densities: Sequence[GridDensity], P, pool=Pool.LOGOP) -> list[GridDensity]:
    """One synchronous pooling round over every agent."""
    grid = _check_same_grid(*densities)
    p = _matrix(P)
    if p.shape != (len(densities), len(densities)):
        raise BadWeights(f"P is {p.shape} but there are {len(densities)} agents")
    _check_rows(p)
    return _pool_rows(p, np.stack([d.values for d in densities]), grid, Pool.parse(pool))


def _check_rows(p: np.ndarray) -> None:
    if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12):
        raise BadWeights("every row of P must be nonnegative and sum to 1")


@dataclass
class ConsensusTrace:
    """Densities after every loop (index 0 is the input) and per-loop channel errors."""

    history: list[list[GridDensity]]
    channel_errors: list[np.ndarray] = field(default_factory=list)

    @property
    def final(self) -> list[GridDensity]:
        return self.history[-1]

    @property
    def max_channel_error(self) -> float:
        return float(max((e.max() for e in self.channel_errors if e.size), default=0.0))


def run_consensus(densities: Sequence[GridDensity], P, n_loop: int, pool=Pool.LOGOP,
                  channel: Channel | None = None, rng: np.random.Generator | None = None,
                  keep_history: bool = True) -> ConsensusTrace:
    """Iterate :func:`consensus_round` ``n_loop`` times.

    With a ``channel``, each agent broadcasts one approximation of its
    density per loop; receivers pool those approximations with their own
    exact density.
    """
    grid = _check_same_grid(*densities)
    p = _matrix(P)
    _check_rows(p)
    pool = Pool.parse(pool)
    current = list(densities)
    history = [current]
    errors = []
    if channel is not None and rng is None:
        rng = np.random.default_rng(0)
    for _ in range(n_loop):
        exact = np.stack([d.values for d in current])
        if channel is None:
            current = _pool_rows(p, exact, grid, pool)
        else:
            sent = [channel(d, rng) for d in current]
            errors.append(np.array([e for _, e in sent]))
            received = np.stack([d.values for d, _ in sent])
            current = _pool_rows(p, received, grid, pool, self_values=exact)
        if keep_history:
            history.append(current)
        else:
            history = [history[0], current]
    return ConsensusTrace(history, errors)


def consensual_pdf_linop(initial: Sequence[GridDensity], pi) -> GridDensity:
    """Limit of repeated linear pooling: the ``pi``-weighted mixture."""
    return arithmetic_pool(initial, pi)


def consensual_pdf_logop(initial: Sequence[GridDensity], pi) -> GridDensity:
    """Limit of repeated logarithmic pooling: the normalized ``pi``-weighted geometric mean."""
    return geometric_pool(initial, pi)


def consensual_pdf(initial: Sequence[GridDensity], pi, pool=Pool.LOGOP) -> GridDensity:
    if Pool.parse(pool) is Pool.LOGOP:
        return consensual_pdf_logop(initial, pi)
    return consensual_pdf_linop(initial, pi)


def disagreement(densities: Sequence[GridDensity], reference: GridDensity) -> DisagreementVector:
    return DisagreementVector(np.array([l1_distance(d, reference) for d in densities]))


def _eq20(n: int, sigma: float, gamma: float, eps_comm: float, m: int) -> float:
    return sigma ** n * gamma + 2 * n * eps_comm * math.sqrt(m)


def plan_n_loop(sigma: float, gamma: float, eps_cons: float, eps_comm: float, m: int,
                max_loops: int = 1_000_000) -> int:
    """Smallest ``n >= 1`` with ``sigma**n * gamma + 2 n eps_comm sqrt(m) <= eps_cons``.

    Without communication error this is the closed form
    ``ceil(ln(eps_cons / gamma) / ln(sigma))`` (at least 1).
    """
    if not 0 <= sigma < 1:
        raise ValueError("sigma must lie in [0, 1)")
    if not 0 < gamma <= conservative_gamma(m) * (1 + 1e-12):
        raise ValueError("gamma must lie in (0, 2 sqrt(m)]")
    if eps_cons <= 0 or eps_comm < 0:
        raise ValueError("need eps_cons > 0 and eps_comm >= 0")
    if eps_comm == 0:
        if sigma == 0 or gamma <= eps_cons:
            return 1
        return max(1, math.ceil(math.log(eps_cons / gamma) / math.log(sigma)))
    # sigma**n * gamma decreases and the comm term grows linearly, so the
    # left side is convex in n; walk until it fits or starts rising.
    prev = math.inf
    for n in range(1, max_loops + 1):
        val = _eq20(n, sigma, gamma, eps_comm, m)
        if val <= eps_cons:
            return n
        if val > prev:
            break
        prev = val
    raise Infeasible("communication error dominates: no loop count meets eps_cons "
                     f"(best {prev:.4g} > {eps_cons:.4g})")


def max_sigma_for_n_loop(n_loop: int, gamma: float, eps_cons: float, eps_comm: float, m: int) -> float:
    """Largest contraction factor that still reaches ``eps_cons`` in ``n_loop`` loops."""
    if n_loop < 1 or gamma <= 0:
        raise ValueError("need n_loop >= 1 and gamma > 0")
    slack = eps_cons - 2 * n_loop * eps_comm * math.sqrt(m)
    if slack <= 0:
        raise Infeasible("eps_cons <= 2*n_loop*eps_comm*sqrt(m)")
    return (slack / gamma) ** (1.0 / n_loop)


def sum_kl(rho: GridDensity, initial: Sequence[GridDensity]) -> float:
    return float(sum(kl_divergence(rho, f) for f in initial))


def brute_force_kl_minimizer(initial: Sequence[GridDensity], step: float = 1e-4) -> GridDensity:
    """Exhaustive search of the cell-mass simplex for ``argmin sum_i KL(rho || F_i)``.

    Only for grids of two or three cells; the search visits every mass vector
    on a lattice of spacing ``step`` (edges included).
    """
    grid = _check_same_grid(*initial)
    n_cells = grid.n_cells
    if n_cells > 3:
        raise TooLarge("exhaustive simplex search is limited to 3 cells")
    n = int(round(1.0 / step))
    x = np.arange(n + 1) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        xlogx = np.where(x > 0, x * np.log(x), 0.0)
    # sum_i KL = m * sum_c q ln q - sum_c q * s_c  (cell masses; uniform cells)
    s = np.sum([np.log(f.masses) for f in initial], axis=0)
    m = len(initial)
    if n_cells == 2:
        obj = m * (xlogx + xlogx[::-1]) - (x * s[0] + x[::-1] * s[1])
        i = int(np.argmin(obj))
        q = np.array([x[i], x[n - i]])
    else:
        best = (np.inf, None)
        for i1 in range(n + 1):
            i2 = np.arange(n - i1 + 1)
            i3 = n - i1 - i2
            obj = (m * (xlogx[i1] + xlogx[i2] + xlogx[i3])
                   - (x[i1] * s[0] + x[i2] * s[1] + x[i3] * s[2]))
            k = int(np.argmin(obj))
            if obj[k] < best[0]:
                best = (obj[k], (i1, int(i2[k]), int(i3[k])))
        q = x[list(best[1])]
    return normalize(q, grid, floor_rel=0.0)
