"""Hierarchical consensus for networks where only some agents see the target.

Tracking agents pool only among tracking neighbours, so their estimates
alone determine the consensual density; non-tracking agents pool over all
neighbours and are dragged to the same limit. Agent ids are arbitrary; the
"trackers first" block layout is only used for validation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .agents import AgentState, StepResult, local_filter, measurement_sets
from .bayes import LikelihoodModel, Measurement, TransitionKernel
from .consensus import Channel, ConsensusConfig, Pool, consensual_pdf, consensus_round, run_consensus
from .density import GridDensity
from .errors import PartitionViolation
from .network import WeightMatrix, second_largest_singular_value, stationary_distribution, validate_hierarchical

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrackingPartition:
    m: int
    tracking: tuple[int, ...]

    def __post_init__(self):
        t = tuple(sorted(set(int(i) for i in self.tracking)))
        if any(not 0 <= i < self.m for i in t):
            raise ValueError(f"tracking ids must lie in [0, {self.m})")
        object.__setattr__(self, "tracking", t)

    @property
    def m1(self) -> int:
        return len(self.tracking)

    @property
    def non_tracking(self) -> tuple[int, ...]:
        s = set(self.tracking)
        return tuple(i for i in range(self.m) if i not in s)

    @property
    def order(self) -> list[int]:
        """Permutation putting trackers first."""
        return list(self.tracking) + list(self.non_tracking)

    def is_tracking(self, j: int) -> bool:
        return j in self.tracking


def _matrix(P) -> np.ndarray:
    return P.matrix if isinstance(P, WeightMatrix) else np.asarray(P, dtype=float)


def check_partition(P, partition: TrackingPartition) -> None:
    p = _matrix(P)
    if partition.m1 == 0:
        return
    block = p[np.ix_(partition.tracking, partition.non_tracking)]
    if np.any(block != 0):
        raise PartitionViolation("tracking agents put weight on non-tracking agents")


def hierarchical_round(densities: Sequence[GridDensity], P, partition: TrackingPartition,
                       pool=Pool.LOGOP) -> list[GridDensity]:
    """One round where trackers hear only trackers and the rest hear everyone."""
    check_partition(P, partition)
    return consensus_round(densities, P, pool)


def hierarchical_consensual_pdf(tracking_densities: Sequence[GridDensity], pool=Pool.LOGOP) -> GridDensity:
    """Consensual density determined by the trackers alone (uniform weights)."""
    m1 = len(tracking_densities)
    if m1 == 0:
        raise ValueError("need at least one tracking density")
    return consensual_pdf(tracking_densities, np.full(m1, 1.0 / m1), pool)


def run_hbcf_step(agents: Sequence[AgentState], P, partition: TrackingPartition,
                  measurements: Sequence[Measurement], config: ConsensusConfig,
                  kernel: TransitionKernel | None, models: Mapping[int, LikelihoodModel],
                  channel: Channel | None = None, rng: np.random.Generator | None = None,
                  exchange: bool = True, fallback_P=None) -> StepResult:
    """One hierarchical time step for every agent.

    Trackers predict and update with measurements from tracking measurement
    neighbours; the others only predict. Then ``config.n_loop`` hierarchical
    rounds are run. With no trackers at all the step falls back to plain
    pooling over ``fallback_P`` (the full balanced matrix) and is flagged
    ``degraded``.
    """
    p = _matrix(P)
    m = len(agents)
    pool = config.pool
    degraded = partition.m1 == 0
    violations: list[str] = []
    if degraded:
        log.info("no tracking agents this step; pooling predicted priors over the full graph")
        p = _matrix(fallback_P) if fallback_P is not None else p
    else:
        check_partition(p, partition)
        if partition.m1 < m:
            violations = validate_hierarchical(p, tracking=partition.tracking).violations
    msets = measurement_sets(p, measurements, allowed=partition.tracking, exchange=exchange)
    priors, posts = [], []
    for j, a in enumerate(agents):
        ms = msets[j] if partition.is_tracking(j) else []
        prior, post = local_filter(a.density, kernel, ms, models)
        priors.append(prior)
        posts.append(post)
    trace = run_consensus(posts, p, config.n_loop, pool, channel=channel, rng=rng)
    if degraded:
        pi = stationary_distribution(p)
        consensual = consensual_pdf(posts, pi, pool)
        sigma = second_largest_singular_value(p) if m > 1 else 0.0
    else:
        t = list(partition.tracking)
        pi = np.zeros(m)
        pi[t] = 1.0 / len(t)
        consensual = hierarchical_consensual_pdf([posts[i] for i in t], pool)
        sigma = second_largest_singular_value(p[np.ix_(t, t)]) if len(t) > 1 else 0.0
    by_agent = {mm.agent: mm for mm in measurements}
    new_agents = [
        a.with_density(trace.final[j], tracking=partition.is_tracking(j),
                       last_measurement=by_agent.get(j) if partition.is_tracking(j) else None)
        for j, a in enumerate(agents)
    ]
    return StepResult(new_agents, priors, posts, trace, consensual, pi, sigma,
                      list(partition.tracking), degraded, violations)
