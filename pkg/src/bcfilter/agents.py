"""Per-agent state and the filtering half of one BCF time step."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .bayes import LikelihoodModel, Measurement, TransitionKernel, predict, update_with_exchange
from .consensus import ConsensusTrace, DisagreementVector, disagreement
from .density import GridDensity


@dataclass
class AgentState:
    id: int
    density: GridDensity
    tracking: bool = True
    last_measurement: Measurement | None = None
    metrics: list[dict] = field(default_factory=list)

    def with_density(self, density: GridDensity, **kw) -> "AgentState":
        return replace(self, density=density, **kw)


@dataclass
class StepResult:
    agents: list[AgentState]
    priors: list[GridDensity]
    posteriors: list[GridDensity]
    trace: ConsensusTrace
    consensual: GridDensity
    pi: np.ndarray
    sigma: float
    tracking: list[int]
    degraded: bool = False
    violations: list[str] = field(default_factory=list)

    def theta(self, nu: int) -> DisagreementVector:
        return disagreement(self.trace.history[nu], self.consensual)


def measurement_sets(P: np.ndarray, measurements: Sequence[Measurement],
                     allowed: Sequence[int] | None = None,
                     exchange: bool = True) -> dict[int, list[Measurement]]:
    """Measurements each agent folds into its update.

    Agent ``j`` uses its own measurement plus, with ``exchange``, those of
    its inclusive neighbours (positive entries of row ``j`` of ``P``);
    ``allowed`` restricts the senders (tracking agents in hierarchical mode).
    """
    by_agent = {m.agent: m for m in measurements}
    ok = set(by_agent) if allowed is None else set(by_agent) & set(allowed)
    m = P.shape[0]
    out = {}
    for j in range(m):
        if exchange:
            src = [l for l in np.flatnonzero(P[j] > 0) if l in ok]
        else:
            src = [j] if j in ok else []
        out[j] = [by_agent[l] for l in sorted(src)]
    return out


def local_filter(density: GridDensity, kernel: TransitionKernel | None,
                 measurements: Sequence[Measurement],
                 models: Mapping[int, LikelihoodModel]) -> tuple[GridDensity, GridDensity]:
    """Predict then update; returns ``(prior, posterior)``."""
    prior = density if kernel is None else predict(density, kernel)
    return prior, update_with_exchange(prior, measurements, models)
