"""Sending densities between agents.

Three codecs are available:

* ``lossless-grid``: the raw cell values as little-endian float64, bit exact.
* ``gaussian-sum``: an EM-fitted Gaussian mixture; the receiver re-tabulates it.
* ``particles``: a histogram of resampled particles.

Every transmission reports the L1 error it actually achieved, so callers can
check it against their ``eps_comm`` budget instead of trusting a nominal value.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .density import GridDensity, StateGrid, l1_distance, normalize
from .errors import ConfigError, TargetUnreachable

log = logging.getLogger(__name__)

CODECS = ("lossless-grid", "gaussian-sum", "particles")


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray  # (n_g,)
    means: np.ndarray  # (n_g, n_x)
    covs: np.ndarray  # (n_g, n_x, n_x)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        c = np.asarray(self.covs, dtype=float).reshape(len(w), mu.shape[1], mu.shape[1])
        if mu.shape[0] != len(w):
            raise ValueError("one mean per component")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", c)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def n_x(self) -> int:
        return self.means.shape[1]

    @property
    def n_parameters(self) -> int:
        """Means plus covariance upper triangles: ``n_g * n_x * (n_x + 3) / 2``."""
        return self.n_components * self.n_x * (self.n_x + 3) // 2

    def component_logpdf(self, x: np.ndarray) -> np.ndarray:
        """``log(alpha_i N(x; m_i, B_i))`` as an ``(n_points, n_g)`` array."""
        x = np.atleast_2d(x)
        out = np.empty((x.shape[0], self.n_components))
        for i, (w, mu, c) in enumerate(zip(self.weights, self.means, self.covs)):
            chol = np.linalg.cholesky(c)
            r = np.linalg.solve(chol, (x - mu).T)
            out[:, i] = (np.log(w) - 0.5 * np.sum(r * r, axis=0)
                         - np.log(np.diag(chol)).sum() - 0.5 * self.n_x * np.log(2 * np.pi))
        return out

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_logpdf(x), axis=1)

    def pdf(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def tabulate(self, grid: StateGrid) -> GridDensity:
        return normalize(self.pdf(grid.centers), grid)

    def to_bytes(self) -> bytes:
        """Wire format: ``[n_g, then per component alpha, mean, cov upper triangle]`` as ``<f8``."""
        iu = np.triu_indices(self.n_x)
        parts = [np.array([float(self.n_components)])]
        for w, mu, c in zip(self.weights, self.means, self.covs):
            parts += [np.array([w]), mu, c[iu]]
        return np.concatenate(parts).astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "GaussianMixture":
        a = np.frombuffer(payload, dtype="<f8")
        n_g = int(a[0])
        per = (a.size - 1) // n_g
        # per = 1 + n_x + n_x (n_x + 1) / 2
        n_x = int(round((-3 + np.sqrt(9 + 8 * (per - 1))) / 2))
        if n_g * (1 + n_x + n_x * (n_x + 1) // 2) + 1 != a.size:
            raise ValueError("payload length does not match a Gaussian-sum layout")
        iu = np.triu_indices(n_x)
        w, mus, covs = [], [], []
        pos = 1
        for _ in range(n_g):
            w.append(a[pos])
            mus.append(a[pos + 1: pos + 1 + n_x])
            c = np.zeros((n_x, n_x))
            c[iu] = a[pos + 1 + n_x: pos + per]
            covs.append(c + np.triu(c, 1).T)
            pos += per
        return cls(np.array(w), np.array(mus), np.array(covs))


def encode_grid(p: GridDensity) -> bytes:
    return p.values.astype("<f8").tobytes()


def decode_grid(payload: bytes, grid: StateGrid) -> GridDensity:
    return GridDensity(grid, np.frombuffer(payload, dtype="<f8").copy(), check=False)


def _floor_cov(c: np.ndarray, lam: float) -> np.ndarray:
    c = 0.5 * (c + c.T)
    vals, vecs = np.linalg.eigh(c)
    return (vecs * np.maximum(vals, lam)) @ vecs.T


def _kmeanspp(x: np.ndarray, w: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.choice(len(x), p=w)]]
    for _ in range(1, k):
        d2 = np.min([np.sum((x - c) ** 2, axis=1) for c in centers], axis=0)
        prob = w * d2
        if prob.sum() <= 0:
            centers.append(centers[-1])
            continue
        centers.append(x[rng.choice(len(x), p=prob / prob.sum())])
    return np.array(centers)


@dataclass
class EMResult:
    mixture: GaussianMixture
    log_likelihood: float
    n_iter: int
    responsibilities: np.ndarray


def em_fit(data, n_g: int, weights=None, seed: int = 0, lambda_floor: float | None = None,
           max_iter: int = 500, tol: float = 1e-8) -> EMResult:
    """Weighted EM for a Gaussian mixture.

    ``data`` is either an ``(n, n_x)`` sample array (with optional
    ``weights``) or a :class:`GridDensity`, in which case cell centres are
    weighted by cell mass. The log-likelihood reported is the weighted mean
    per unit mass. Covariance eigenvalues are floored at ``lambda_floor``
    (default ``1e-9`` times the squared data extent) after every M-step.
    """
    if n_g < 1:
        raise ValueError("n_g must be >= 1")
    if isinstance(data, GridDensity):
        x = data.grid.centers
        w = data.masses
        extent = np.asarray(data.grid.upper) - np.asarray(data.grid.lower)
    else:
        x = np.asarray(data, dtype=float)
        x = x.reshape(len(x), -1)
        w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=float)
        extent = np.ptp(x, axis=0) if len(x) > 1 else np.ones(x.shape[1])
    w = w / w.sum()
    n_x = x.shape[1]
    lam = lambda_floor if lambda_floor is not None else 1e-9 * float(np.max(extent)) ** 2
    lam = max(lam, 1e-300)

    mean = w @ x
    cov = _floor_cov(((x - mean) * w[:, None]).T @ (x - mean), lam)
    if n_g == 1:
        mix = GaussianMixture(np.array([1.0]), mean[None, :], cov[None, :, :])
        ll = float(w @ mix.logpdf(x))
        return EMResult(mix, ll, 0, np.ones((len(x), 1)))

    support = x[w > 1e-12]
    if w.max() >= 1.0 - 1e-9 or np.all(np.ptp(support, axis=0) == 0):
        warnings.warn("all mass sits on one point; returning duplicated components", RuntimeWarning)
        mix = GaussianMixture(np.full(n_g, 1.0 / n_g), np.repeat(mean[None, :], n_g, axis=0),
                              np.repeat(cov[None, :, :], n_g, axis=0))
        return EMResult(mix, float(w @ mix.logpdf(x)), 0, np.full((len(x), n_g), 1.0 / n_g))

    rng = np.random.default_rng(seed)
    mix = GaussianMixture(np.full(n_g, 1.0 / n_g), _kmeanspp(x, w, n_g, rng),
                          np.repeat(cov[None, :, :], n_g, axis=0))
    prev = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        comp = mix.component_logpdf(x)
        ll_pts = logsumexp(comp, axis=1)
        ll = float(w @ ll_pts)
        resp = np.exp(comp - ll_pts[:, None])
        if ll - prev < tol and it > 1:
            break
        prev = ll
        nk = w @ resp
        nk = np.maximum(nk, 1e-300)
        means = (resp * w[:, None]).T @ x / nk[:, None]
        covs = np.empty((n_g, n_x, n_x))
        for k in range(n_g):
            d = x - means[k]
            covs[k] = _floor_cov((d * (w * resp[:, k])[:, None]).T @ d / nk[k], lam)
        alpha = nk / nk.sum()
        alpha = np.maximum(alpha, 1e-12)
        mix = GaussianMixture(alpha / alpha.sum(), means, covs)
    return EMResult(mix, ll, it, resp)


@dataclass
class GaussianSumFit:
    mixture: GaussianMixture
    error: float
    tried: dict[int, float]


def fit_gaussian_sum(p: GridDensity, n_g: int = 1, eps_target: float = 0.0, n_g_cap: int = 8,
                     seed: int = 0, strict: bool = True) -> GaussianSumFit:
    """Fit mixtures with ``n_g, n_g + 1, ...`` components until the L1 error meets ``eps_target``.

    The best fit found is returned; if it still misses the target and
    ``strict`` is set, :class:`TargetUnreachable` carries it instead.
    """
    if n_g < 1:
        raise ValueError("n_g must be >= 1")
    tried = {}
    best = None
    k = n_g
    while True:
        mix = em_fit(p, k, seed=seed).mixture
        err = l1_distance(p, mix.tabulate(p.grid))
        tried[k] = err
        if best is None or err < best.error:
            best = GaussianSumFit(mix, err, tried)
        if err <= eps_target or k >= max(n_g_cap, n_g):
            break
        k += 1
    best.tried = tried
    if best.error > eps_target and strict:
        raise TargetUnreachable(f"best L1 error {best.error:.4g} > target {eps_target:.4g} "
                                f"with up to {k} components", best=best, achieved=best.error)
    return best


def particle_reconstruct(p: GridDensity, n_particles: int, rng: np.random.Generator) -> GridDensity:
    """Resample ``n_particles`` cells by mass and rebuild the histogram."""
    counts = rng.multinomial(n_particles, p.masses / p.masses.sum())
    return normalize(counts.astype(float), p.grid)


def corrupt(p: GridDensity, eps: float, rng: np.random.Generator, adversarial: bool = False) -> GridDensity:
    """Move ``p`` by (about) ``eps`` in L1 towards a random or worst-case density."""
    if eps <= 0:
        return p
    grid = p.grid
    if adversarial:
        raw = np.zeros(grid.n_cells)
        raw[int(np.argmin(p.values))] = 1.0
    else:
        raw = rng.random(grid.n_cells) ** 4
    r = normalize(raw, grid)
    gap = l1_distance(p, r)
    t = min(1.0, eps / gap) if gap > 0 else 0.0
    return normalize((1 - t) * p.values + t * r.values, grid)


@dataclass(frozen=True)
class ChannelConfig:
    codec: str = "lossless-grid"
    eps_comm: float = 0.0
    n_g: int = 1
    n_g_cap: int = 8
    n_particles: int = 1000
    # "raise" propagates TargetUnreachable; "record" keeps the best fit and logs it
    on_unreachable: str = "raise"

    def __post_init__(self):
        problems = []
        if self.codec not in CODECS:
            problems.append(("channel.codec", f"must be one of {CODECS}"))
        if self.eps_comm < 0:
            problems.append(("channel.eps_comm", "must be >= 0"))
        if self.eps_comm == 0 and self.codec != "lossless-grid":
            problems.append(("channel.eps_comm", "only the lossless codec can guarantee zero error"))
        if self.n_g < 1 or self.n_g_cap < self.n_g:
            problems.append(("channel.n_g", "need 1 <= n_g <= n_g_cap"))
        if self.n_particles < 1:
            problems.append(("channel.n_particles", "must be >= 1"))
        if self.on_unreachable not in ("raise", "record"):
            problems.append(("channel.on_unreachable", "must be 'raise' or 'record'"))
        if problems:
            raise ConfigError(problems)


class Transmission(NamedTuple):
    density: GridDensity
    error: float


def transmit(p: GridDensity, cfg: ChannelConfig, rng: np.random.Generator) -> Transmission:
    """Encode, send and decode one density; returns what the receiver sees and its L1 error."""
    if cfg.codec == "lossless-grid":
        return Transmission(decode_grid(encode_grid(p), p.grid), 0.0)
    if cfg.codec == "gaussian-sum":
        seed = int(rng.integers(2**32))
        try:
            fit = fit_gaussian_sum(p, cfg.n_g, cfg.eps_comm, cfg.n_g_cap, seed=seed)
        except TargetUnreachable as exc:
            if cfg.on_unreachable == "raise":
                raise
            log.warning("gaussian-sum channel missed eps_comm: %.4g", exc.achieved)
            fit = exc.best
        received = GaussianMixture.from_bytes(fit.mixture.to_bytes()).tabulate(p.grid)
        return Transmission(received, l1_distance(p, received))
    q = particle_reconstruct(p, cfg.n_particles, rng)
    return Transmission(q, l1_distance(p, q))


def make_channel(cfg: ChannelConfig):
    """Adapter with the ``(density, rng) -> (density, error)`` shape used by consensus."""
    if cfg.codec == "lossless-grid":
        return None

    def channel(p, rng):
        return transmit(p, cfg, rng)

    return channel


def make_corruption_channel(eps: float, adversarial: bool = False):
    """Channel that perturbs every transmission by ``eps`` in L1 (for error-propagation studies)."""

    def channel(p, rng):
        q = corrupt(p, eps, rng, adversarial)
        return q, l1_distance(p, q)

    return channel
