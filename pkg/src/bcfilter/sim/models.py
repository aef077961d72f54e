"""Built-in dynamics, sensors and visibility rules for scenarios.

Three dynamics models are provided:

``static``
    A constant unknown parameter (random-walk process noise for the filter).
``linear``
    ``x' = a x + b + v`` in one dimension; the Kalman filter is exact here,
    which makes it the cross-check model.
``revolve``
    State ``(phase, rate)``: the phase advances around a circle at an
    unknown constant rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..bayes import GaussianLikelihood, LikelihoodModel, TransitionKernel
from ..density import StateGrid


@dataclass
class Dynamics:
    name: str
    ndim: int
    periodic: list[bool]
    process_cov: np.ndarray
    params: dict = field(default_factory=dict)

    def mean_map(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.name == "static":
            return x
        if self.name == "linear":
            return self.params["a"] * x + self.params["b"]
        if self.name == "revolve":
            out = x.copy()
            out[:, 0] = np.mod(x[:, 0] + self.params["dt"] * x[:, 1], 2 * math.pi)
            return out
        raise ValueError(f"unknown dynamics {self.name!r}")

    def step(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Sample next states for an ``(n, ndim)`` batch."""
        mu = self.mean_map(x)
        noise = rng.multivariate_normal(np.zeros(self.ndim), self.process_cov, size=mu.shape[0])
        out = mu + noise
        for a, per in enumerate(self.periodic):
            if per:
                out[:, a] = np.mod(out[:, a], 2 * math.pi)
        return out

    def true_step(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Advance the simulated truth; static parameters stay put."""
        if self.name == "static" or not self.params.get("truth_noise", True):
            return self.mean_map(x)[0]
        return self.step(x[None, :], rng)[0]

    def kernel(self, grid: StateGrid, method: str = "auto", n_samples: int = 256,
               seed: int = 0) -> TransitionKernel:
        """Tabulate the transition density on ``grid``.

        ``auto`` integrates the Gaussian noise exactly for the affine models
        and falls back to Monte Carlo for ``revolve``.
        """
        if method == "auto":
            method = "monte-carlo" if self.name == "revolve" else "gaussian"
        if method == "gaussian":
            return TransitionKernel.gaussian(grid, self.mean_map, self.process_cov, self.periodic)
        if method == "monte-carlo":
            return TransitionKernel.monte_carlo(grid, self.step, n_samples, seed, self.periodic)
        raise ValueError(f"unknown kernel method {method!r}")


def make_dynamics(model: str, ndim: int, process_noise, **params) -> Dynamics:
    q = np.atleast_1d(np.asarray(process_noise, dtype=float))
    cov = np.diag(np.broadcast_to(q, (ndim,)).astype(float)) if q.ndim == 1 else q
    if model in ("static", "linear"):
        if ndim != 1 and model == "linear":
            raise ValueError("the linear model is one-dimensional")
        params.setdefault("a", 1.0)
        params.setdefault("b", 0.0)
        return Dynamics(model, ndim, [False] * ndim, cov, params)
    if model == "revolve":
        if ndim != 2:
            raise ValueError("the revolve model has state (phase, rate)")
        params.setdefault("dt", 1.0)
        return Dynamics(model, 2, [True, False], cov, params)
    raise ValueError(f"unknown dynamics model {model!r}")


def sensor_variance(j: int, base: float = 1000.0, slope: float = 50.0, scale: float = 1.0) -> float:
    """Heterogeneous noise level of sensor ``j`` (1-based): ``scale * (base + slope * j)``."""
    return scale * (base + slope * j)


def circle_position(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    return np.column_stack([np.cos(x[:, 0]), np.sin(x[:, 0])])


def make_sensor(model: str, variance: float, ndim: int, gain: float = 1.0) -> LikelihoodModel:
    if model == "direct":
        return GaussianLikelihood(np.eye(ndim) * variance)
    if model == "linear":
        return GaussianLikelihood([[variance]], h=lambda x: gain * x[:, :1])
    if model == "circle":
        return GaussianLikelihood(np.eye(2) * variance, h=circle_position)
    raise ValueError(f"unknown sensor model {model!r}")


def sensor_angle(j: int, m: int) -> float:
    """Angular position of sensor ``j`` (0-based) spread evenly around the circle."""
    return 2 * math.pi * j / m


def phase_visible(phase: float, j: int, m: int, half_width: float) -> bool:
    return math.cos(phase - sensor_angle(j, m)) >= math.cos(half_width)
