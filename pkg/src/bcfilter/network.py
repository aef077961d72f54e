"""Communication digraphs, consensus weight matrices and their spectra."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import BadWeights, CannotBalance, Degenerate, NoConvergence, NotIrreducible

STOCH_TOL = 1e-12


class Digraph:
    """Directed graph on agents ``0..m-1``.

    An edge ``(src, dst)`` means ``dst`` receives from ``src``, i.e. ``src`` is
    an in-neighbour of ``dst``. Self-loops are not stored; every agent is in
    its own inclusive neighbourhood implicitly.
    """

    def __init__(self, m: int, edges: Iterable[tuple[int, int]] = ()):
        if m < 1:
            raise ValueError("need at least one agent")
        es = set()
        for s, d in edges:
            s, d = int(s), int(d)
            if not (0 <= s < m and 0 <= d < m):
                raise ValueError(f"edge ({s}, {d}) out of range for m={m}")
            if s != d:
                es.add((s, d))
        self.m = m
        self.edges = frozenset(es)

    def __repr__(self):
        return f"Digraph(m={self.m}, edges={len(self.edges)})"

    def __eq__(self, other):
        return isinstance(other, Digraph) and self.m == other.m and self.edges == other.edges

    def __hash__(self):
        return hash((self.m, self.edges))

    def adjacency(self) -> np.ndarray:
        """``A[dst, src] = 1`` for each edge, matching the row convention of ``P``."""
        a = np.zeros((self.m, self.m), dtype=bool)
        for s, d in self.edges:
            a[d, s] = True
        return a

    def in_neighbors(self, j: int) -> list[int]:
        return sorted(s for s, d in self.edges if d == j)

    def inclusive(self, j: int) -> list[int]:
        return sorted(set(self.in_neighbors(j)) | {j})

    def in_degree(self) -> np.ndarray:
        return self.adjacency().sum(axis=1)

    def out_degree(self) -> np.ndarray:
        return self.adjacency().sum(axis=0)

    def is_symmetric(self) -> bool:
        return all((d, s) in self.edges for s, d in self.edges)

    def is_strongly_connected(self) -> bool:
        if self.m == 1:
            return True
        n, _ = connected_components(csr_matrix(self.adjacency()), directed=True, connection="strong")
        return n == 1

    def subgraph(self, nodes: Sequence[int]) -> "Digraph":
        """Induced subgraph, relabelled ``0..len(nodes)-1`` in the given order."""
        pos = {v: i for i, v in enumerate(nodes)}
        return Digraph(len(nodes), [(pos[s], pos[d]) for s, d in self.edges if s in pos and d in pos])

    def symmetric_closure(self) -> "Digraph":
        return Digraph(self.m, self.edges | {(d, s) for s, d in self.edges})

    # named generators

    @classmethod
    def complete(cls, m: int) -> "Digraph":
        return cls(m, [(i, j) for i in range(m) for j in range(m) if i != j])

    @classmethod
    def ring(cls, m: int, directed: bool = False) -> "Digraph":
        return cls.circulant(m, [1], directed=directed)

    @classmethod
    def circulant(cls, m: int, offsets: Sequence[int], directed: bool = False) -> "Digraph":
        edges = set()
        for i in range(m):
            for o in offsets:
                edges.add((i, (i + o) % m))
                if not directed:
                    edges.add(((i + o) % m, i))
        return cls(m, edges)

    @classmethod
    def star(cls, m: int, hub: int = 0) -> "Digraph":
        edges = []
        for i in range(m):
            if i != hub:
                edges += [(hub, i), (i, hub)]
        return cls(m, edges)

    @classmethod
    def random_geometric(cls, m: int, radius: float, rng: np.random.Generator,
                         max_tries: int = 1000) -> "Digraph":
        """Unit-square random geometric graph (symmetric), redrawn until connected."""
        for _ in range(max_tries):
            pts = rng.random((m, 2))
            dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
            i, j = np.nonzero((dist <= radius) & ~np.eye(m, dtype=bool))
            g = cls(m, zip(i.tolist(), j.tolist()))
            if g.is_strongly_connected():
                return g
        raise NotIrreducible(f"no connected geometric graph with radius {radius} after {max_tries} draws")


@dataclass(frozen=True)
class WeightMatrix:
    """Row-stochastic consensus matrix ``P`` with ``P[j, l] = a^{jl}``."""

    matrix: np.ndarray
    graph: Digraph | None = field(default=None, compare=False)

    def __post_init__(self):
        p = np.array(self.matrix, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise BadWeights("weight matrix must be square")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise BadWeights("weights must be finite and nonnegative")
        if not np.allclose(p.sum(axis=1), 1.0, rtol=0, atol=STOCH_TOL):
            raise BadWeights(f"rows must sum to 1, got {p.sum(axis=1)}")
        p.setflags(write=False)
        object.__setattr__(self, "matrix", p)

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def row_stochastic(self) -> bool:
        return True

    @property
    def column_stochastic(self) -> bool:
        return bool(np.allclose(self.matrix.sum(axis=0), 1.0, rtol=0, atol=STOCH_TOL))

    balanced = column_stochastic

    @property
    def positive_diagonal(self) -> bool:
        return bool(np.all(np.diag(self.matrix) > 0))

    def support(self) -> Digraph:
        """The digraph whose edges are the positive off-diagonal weights."""
        d, s = np.nonzero(self.matrix > 0)
        return Digraph(self.m, [(int(a), int(b)) for b, a in zip(d, s) if a != b])

    def conforms_to(self, graph: Digraph) -> bool:
        """``a^{jl} > 0`` exactly on the inclusive neighbourhoods of ``graph``."""
        if graph.m != self.m:
            return False
        expected = graph.adjacency() | np.eye(self.m, dtype=bool)
        return bool(np.array_equal(self.matrix > 0, expected))

    def is_irreducible(self) -> bool:
        return self.support().is_strongly_connected()


def _as_matrix(P) -> np.ndarray:
    return P.matrix if isinstance(P, WeightMatrix) else np.asarray(P, dtype=float)


def stationary_distribution(P, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Left Perron vector of ``P`` by power iteration on ``P.T``."""
    wm = P if isinstance(P, WeightMatrix) else WeightMatrix(P)
    if not wm.is_irreducible():
        raise NotIrreducible("weight matrix is not irreducible")
    pt = wm.matrix.T
    pi = np.full(wm.m, 1.0 / wm.m)
    for _ in range(max_iter):
        nxt = pt @ pi
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    raise NoConvergence(f"power iteration did not converge in {max_iter} steps")


def _complement_basis(m: int) -> np.ndarray:
    """Orthonormal basis of the subspace orthogonal to the all-ones vector."""
    q, _ = np.linalg.qr(np.column_stack([np.ones(m), np.eye(m)[:, : m - 1]]))
    return q[:, 1:]


def second_largest_singular_value(P) -> float:
    """``sqrt(lambda_max(V_s^T P^T P V_s))`` with ``V_s`` spanning ``1``-perp.

    For a doubly stochastic ``P`` this is the second largest singular value,
    i.e. the per-loop contraction factor of the consensus disagreement.
    """
    p = _as_matrix(P)
    m = p.shape[0]
    if m < 2:
        raise Degenerate("need at least two agents")
    vs = _complement_basis(m)
    g = vs.T @ p.T @ p @ vs
    lam = np.linalg.eigvalsh(0.5 * (g + g.T))
    return float(np.sqrt(max(lam[-1], 0.0)))


def make_balanced_weights(g: Digraph, method: str = "metropolis") -> WeightMatrix:
    """Doubly stochastic weights conforming to ``g``.

    ``uniform-inclusive`` puts ``1/(1+d_max)`` on every in-neighbour and the
    remainder on the diagonal; it is balanced whenever in- and out-degrees
    agree at every node. ``metropolis`` uses ``1/(1+max(d_j, d_l))`` and
    needs a symmetric graph.
    """
    if not g.is_strongly_connected():
        raise NotIrreducible("graph is not strongly connected")
    wm = _weights(g, method)
    if not wm.column_stochastic:
        raise CannotBalance(f"{method} weights are not balanced on this graph "
                            f"(column sums {np.round(wm.matrix.sum(axis=0), 6).tolist()})")
    return wm


def _weights(g: Digraph, method: str) -> WeightMatrix:
    """Row-stochastic weights for ``g`` without connectivity or balance checks."""
    m = g.m
    adj = g.adjacency()
    deg = adj.sum(axis=1)
    p = np.zeros((m, m))
    if method == "uniform-inclusive":
        a = 1.0 / (1.0 + deg.max()) if m > 1 else 0.0
        p[adj] = a
    elif method == "metropolis":
        if not g.is_symmetric():
            raise CannotBalance("metropolis weights need a symmetric graph")
        for d, s in zip(*np.nonzero(adj)):
            p[d, s] = 1.0 / (1.0 + max(deg[d], deg[s]))
    else:
        raise ValueError(f"unknown weight method {method!r}")
    np.fill_diagonal(p, 0.0)
    np.fill_diagonal(p, 1.0 - p.sum(axis=1))
    return WeightMatrix(p, graph=g)


def make_hierarchical_weights(g: Digraph, tracking: Sequence[int], method: str = "metropolis") -> WeightMatrix:
    """Weights where trackers listen only to trackers and everyone else listens to all.

    Tracker rows come from ``method`` applied to the induced tracker
    subgraph; non-tracker rows come from ``method`` on the full graph. With no
    trackers (or all agents tracking) this is just the ordinary matrix.
    """
    tracking = sorted(set(int(t) for t in tracking))
    full = _weights(g, method).matrix
    if not tracking or len(tracking) == g.m:
        return WeightMatrix(full, graph=g)
    sub = _weights(g.subgraph(tracking), method).matrix
    p = full.copy()
    p[tracking, :] = 0.0
    p[np.ix_(tracking, tracking)] = sub
    return WeightMatrix(p, graph=g)


@dataclass
class HierarchyReport:
    tracking: list[int]
    top_right_zero: bool
    top_left_balanced: bool
    top_left_strongly_connected: bool
    row_stochastic: bool
    graph_strongly_connected: bool
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_hierarchical(P, m1: int | None = None, tracking: Sequence[int] | None = None) -> HierarchyReport:
    """Check the block structure required for hierarchical consensus.

    Trackers are ``0..m1-1`` unless ``tracking`` lists them explicitly; the
    matrix is permuted so that trackers come first before checking blocks.
    """
    p = _as_matrix(P)
    m = p.shape[0]
    if tracking is None:
        if m1 is None or not 1 <= m1 <= m:
            raise ValueError(f"m1 must be in [1, {m}]")
        tracking = list(range(m1))
    tracking = sorted(set(int(t) for t in tracking))
    rest = [i for i in range(m) if i not in tracking]
    order = tracking + rest
    q = p[np.ix_(order, order)]
    n1 = len(tracking)
    p1, p2 = q[:n1, :n1], q[:n1, n1:]
    v = []
    rows_ok = bool(np.allclose(q.sum(axis=1), 1.0, rtol=0, atol=STOCH_TOL)) and bool(np.all(q >= 0))
    if not rows_ok:
        v.append("P is not row stochastic")
    top_right = bool(np.all(p2 == 0))
    if not top_right:
        v.append("tracking agents put weight on non-tracking agents (P2 != 0)")
    bal = bool(np.allclose(p1.sum(axis=0), 1.0, rtol=0, atol=STOCH_TOL))
    if not bal:
        v.append("tracking block P1 is not balanced")
    sc1 = _support_sc(p1)
    if not sc1:
        v.append("tracking block P1 is not strongly connected")
    # P2 = 0 makes the support of P itself reducible whenever m1 < m, so the
    # whole-network check is on the communication links: a nonzero weight in
    # either direction between a tracker and a non-tracker counts as a link.
    links = q > 0
    links[:n1, n1:] |= links[n1:, :n1].T
    sc = _support_sc(links)
    if not sc:
        v.append("full graph is not strongly connected")
    return HierarchyReport(tracking, top_right, bal, sc1, rows_ok, sc, v)


def _support_sc(p: np.ndarray) -> bool:
    if p.shape[0] <= 1:
        return True
    n, _ = connected_components(csr_matrix(p > 0), directed=True, connection="strong")
    return n == 1
