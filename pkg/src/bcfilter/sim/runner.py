"""Run a scenario end to end and record per-loop metrics.

Random streams are split with ``numpy.random.SeedSequence(seed, spawn_key=...)``:

====================  ==========================
spawn key             used for
====================  ==========================
``(0,)``              true-state process noise
``(1, j, k)``         measurement noise, agent j, step k
``(2, k, nu, j)``     transmission of agent j in loop nu of step k
``(3,)``              Monte-Carlo kernel construction (one child per cell)
``(4,)``              random topology generation
====================  ==========================

Every draw therefore depends only on its key, never on evaluation order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..agents import AgentState, StepResult, local_filter, measurement_sets
from ..bayes import LikelihoodModel, Measurement, TransitionKernel
from ..comm import make_channel
from ..consensus import Channel, ConsensusConfig, Pool, consensual_pdf, plan_n_loop, run_consensus
from ..density import GridDensity, l1_distance, normalize
from ..errors import Infeasible
from ..hierarchy import TrackingPartition, run_hbcf_step
from ..network import (
    Digraph,
    WeightMatrix,
    make_balanced_weights,
    make_hierarchical_weights,
    second_largest_singular_value,
    stationary_distribution,
)
from .models import make_dynamics, make_sensor, phase_visible, sensor_variance
from .scenario import Scenario

log = logging.getLogger(__name__)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def run_bcf_step(agents: Sequence[AgentState], P, measurements: Sequence[Measurement],
                 config: ConsensusConfig, kernel: TransitionKernel | None,
                 models: Mapping[int, LikelihoodModel], channel: Channel | None = None,
                 rng: np.random.Generator | None = None, exchange: bool = True,
                 pi: np.ndarray | None = None) -> StepResult:
    """One full time step: predict, update with exchanged measurements, ``n_loop`` pooling rounds."""
    p = P.matrix if isinstance(P, WeightMatrix) else np.asarray(P, dtype=float)
    m = len(agents)
    msets = measurement_sets(p, measurements, exchange=exchange)
    priors, posts = [], []
    for j, a in enumerate(agents):
        prior, post = local_filter(a.density, kernel, msets[j], models)
        priors.append(prior)
        posts.append(post)
    trace = run_consensus(posts, p, config.n_loop, config.pool, channel=channel, rng=rng)
    if pi is None:
        pi = stationary_distribution(p) if m > 1 else np.ones(1)
    consensual = consensual_pdf(posts, pi, config.pool)
    sigma = second_largest_singular_value(p) if m > 1 else 0.0
    by_agent = {mm.agent: mm for mm in measurements}
    new_agents = [a.with_density(trace.final[j], tracking=True, last_measurement=by_agent.get(j))
                  for j, a in enumerate(agents)]
    return StepResult(new_agents, priors, posts, trace, consensual, pi, sigma, list(range(m)))


class MetricsLog:
    """Rows keyed by ``(k, nu, agent)``; agent ids are written 1-based."""

    def __init__(self, ndim: int):
        self.ndim = ndim
        self.columns = (["k", "nu", "agent", "l1_to_consensual", "theta_l2", "sigma", "achieved_eps_comm"]
                        + [f"est_mean_{i}" for i in range(ndim)]
                        + [f"true_state_{i}" for i in range(ndim)])
        self.rows: list[list] = []

    def add_step(self, k: int, res: StepResult, truth: np.ndarray) -> None:
        for nu, dens in enumerate(res.trace.history):
            theta = np.array([l1_distance(d, res.consensual) for d in dens])
            norm = float(np.linalg.norm(theta))
            err = float(res.trace.channel_errors[nu - 1].max()) if nu > 0 and res.trace.channel_errors else 0.0
            for j, d in enumerate(dens):
                self.rows.append([k, nu, j + 1, float(theta[j]), norm, float(res.sigma), err]
                                 + [float(v) for v in d.mean()] + [float(v) for v in truth])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([v if isinstance(v, int) else repr(float(v)) for v in r])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def theta_norms(self, nu: int | None = None) -> dict[int, float]:
        """``||theta||`` per step at loop ``nu`` (default: the last loop of each step)."""
        out: dict[int, tuple[int, float]] = {}
        for r in self.rows:
            k, n, norm = r[0], r[1], r[4]
            if nu is None:
                if k not in out or n >= out[k][0]:
                    out[k] = (n, norm)
            elif n == nu:
                out[k] = (n, norm)
        return {k: v[1] for k, v in out.items()}


@dataclass
class RunResult:
    scenario: Scenario
    metrics: MetricsLog
    final: list[GridDensity]
    summary: dict
    truth: list[np.ndarray]
    consensual: list[GridDensity]
    densities: list[list[GridDensity]] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    def time_to_consensus(self, threshold: float = 0.1) -> int | None:
        """First step after which every agent is within ``threshold`` (L1) of the final consensual pdf."""
        if not self.densities:
            raise ValueError("run with keep_densities=True to measure convergence times")
        ref = self.consensual[-1]
        for k, dens in enumerate(self.densities, start=1):
            if max(l1_distance(d, ref) for d in dens) <= threshold:
                return k
        return None


def _initial_density(sc: Scenario) -> GridDensity:
    if sc.prior["kind"] == "uniform":
        return GridDensity.uniform(sc.grid)
    mean = np.broadcast_to(np.asarray(sc.prior["mean"], dtype=float), (sc.grid.ndim,))
    var = np.broadcast_to(np.asarray(sc.prior["var"], dtype=float), (sc.grid.ndim,))
    c = sc.grid.centers
    return normalize(np.exp(-0.5 * np.sum((c - mean) ** 2 / var, axis=1)), sc.grid)


def _visible(sc: Scenario, k: int, truth: np.ndarray) -> list[int]:
    v = sc.visibility
    m = sc.m
    kind = v["kind"]
    if kind == "always":
        return list(range(m))
    if kind == "none":
        return []
    if kind == "intervals":
        out = []
        for key, spans in (v["intervals"] or {}).items():
            if any(a <= k <= b for a, b in spans):
                out.append(int(key) - 1)
        return sorted(out)
    if kind == "phase":
        phase = v["phase0"] + v["rate"] * k
    else:  # geometric: phase is the first state component
        phase = float(truth[0])
    return [j for j in range(m) if phase_visible(phase, j, m, v["half_width"])]


class _TransmissionChannel:
    """Wraps a codec so each transmission draws from its own keyed stream."""

    def __init__(self, inner: Channel, seed: int, k: int, m: int):
        self.inner, self.seed, self.k, self.m = inner, seed, k, m
        self.count = 0

    def __call__(self, p, _rng):
        nu, j = divmod(self.count, self.m)
        self.count += 1
        return self.inner(p, _rng_for(self.seed, self.k, nu + 1, j))


def _rng_for(seed, k, nu, j):
    return _rng(seed, 2, k, nu, j)


def run_scenario(sc: Scenario, out_dir=None, keep_densities: bool = False) -> RunResult:
    """Execute ``sc`` and (optionally) write ``metrics.csv`` and ``summary.json``."""
    m = sc.m
    grid = sc.grid
    dyn = make_dynamics(sc.dynamics["model"], grid.ndim, sc.dynamics["process_noise"],
                        a=sc.dynamics["a"], b=sc.dynamics["b"], dt=sc.dynamics["dt"],
                        truth_noise=sc.dynamics["truth_noise"])
    kernel_seed = int(np.random.SeedSequence(sc.seed, spawn_key=(3,)).generate_state(1)[0])
    kernel = dyn.kernel(grid, sc.dynamics["kernel"], sc.dynamics["mc_samples"], kernel_seed)
    s = sc.sensors
    variances = (np.atleast_1d(np.asarray(s["variances"], dtype=float)) if s["variances"] is not None
                 else np.array([sensor_variance(j + 1, s["noise_base"], s["noise_slope"], s["noise_scale"])
                                for j in range(m)]))
    models = {j: make_sensor(s["model"], float(variances[j]), grid.ndim, s["gain"]) for j in range(m)}

    graph = sc.build_graph()
    method = sc.topology["weights"]
    full_P = make_balanced_weights(graph, method) if m > 1 else WeightMatrix(np.ones((1, 1)), graph)
    full_sigma = second_largest_singular_value(full_P) if m > 1 else 0.0
    pi_full = np.full(m, 1.0 / m)

    c = sc.consensus
    eps_comm = max(c["eps_comm"], sc.channel.eps_comm)
    base_cfg = ConsensusConfig(sc.pool, c["n_loop"], c["eps_cons"], eps_comm)
    codec = make_channel(sc.channel)

    def planned(sigma, m_eff):
        if not c["plan"]:
            return c["n_loop"]
        return plan_n_loop(sigma, 2 * math.sqrt(m_eff), c["eps_cons"], eps_comm, m_eff)

    truth = np.asarray(np.broadcast_to(np.asarray(sc.dynamics["truth"], dtype=float), (grid.ndim,)), dtype=float)
    truth_rng = _rng(sc.seed, 0)
    agents = [AgentState(j, _initial_density(sc)) for j in range(m)]
    metrics = MetricsLog(grid.ndim)
    truths, consensual, kept, events = [], [], [], []
    sigmas, n_loops, within_target, max_comm = [], [], [], 0.0
    hier_violations = set()

    for k in range(1, sc.steps + 1):
        truth = dyn.true_step(truth, truth_rng) if k > 1 else truth
        truths.append(truth.copy())
        visible = _visible(sc, k, truth)
        meas = [Measurement(j, k, models[j].sample(truth, _rng(sc.seed, 1, j, k))) for j in visible]
        channel = _TransmissionChannel(codec, sc.seed, k, m) if codec is not None else None
        if sc.mode == "bcf":
            n_loop = planned(full_sigma, m)
            cfg = ConsensusConfig(sc.pool, n_loop, base_cfg.eps_cons, eps_comm)
            res = run_bcf_step(agents, full_P, meas, cfg, kernel, models, channel,
                               exchange=c["exchange"], pi=pi_full)
        else:
            part = TrackingPartition(m, visible)
            if part.m1 == 0:
                events.append({"k": k, "event": "degraded", "detail": "no tracking agents"})
                P = full_P
                sigma_eff, m_eff = full_sigma, m
            else:
                P = make_hierarchical_weights(graph, part.tracking, method)
                sub = P.matrix[np.ix_(part.tracking, part.tracking)]
                sigma_eff = second_largest_singular_value(sub) if part.m1 > 1 else 0.0
                m_eff = part.m1
            try:
                n_loop = planned(min(sigma_eff, 1 - 1e-12), m_eff)
            except Infeasible:
                n_loop = c["n_loop"]
                events.append({"k": k, "event": "plan-infeasible"})
            cfg = ConsensusConfig(sc.pool, n_loop, base_cfg.eps_cons, eps_comm)
            res = run_hbcf_step(agents, P, part, meas, cfg, kernel, models, channel,
                                exchange=c["exchange"], fallback_P=full_P)
            for v in res.violations:
                if v not in hier_violations:
                    events.append({"k": k, "event": "assumption-violation", "detail": v})
                hier_violations.add(v)
        agents = res.agents
        metrics.add_step(k, res, truth)
        consensual.append(res.consensual)
        if keep_densities:
            kept.append(list(res.trace.final))
        sigmas.append(float(res.sigma))
        n_loops.append(int(res.trace.history.__len__() - 1))
        max_comm = max(max_comm, res.trace.max_channel_error)
        # the loop plan covers the agents that define the consensual pdf (trackers in hbcf)
        bound_set = res.tracking if res.tracking and not res.degraded else range(m)
        final_norm = float(np.linalg.norm([l1_distance(res.trace.final[j], res.consensual) for j in bound_set]))
        within_target.append(final_norm <= c["eps_cons"])

    summary = {
        "scenario": sc.raw,
        "m": m,
        "mode": sc.mode,
        "pool": sc.pool.value,
        "sigma_full": full_sigma,
        "sigma_per_step": sigmas,
        "n_loop_per_step": n_loops,
        "balanced": bool(full_P.column_stochastic),
        "theta_final_within_eps_cons": within_target,
        "theta_bound_all_steps": bool(all(within_target)),
        "planned": bool(c["plan"]),
        "max_channel_error": max_comm,
        "channel_within_target": bool(max_comm <= sc.channel.eps_comm + 1e-15) if codec is not None else True,
        "events": events,
        "final_estimates": [[float(v) for v in a.density.mean()] for a in agents],
        "final_truth": [float(v) for v in truths[-1]],
    }
    result = RunResult(sc, metrics, [a.density for a in agents], summary, truths, consensual, kept, events)
    out = out_dir if out_dir is not None else sc.output.get("dir")
    if out:
        write_outputs(result, out)
    return result


def write_outputs(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.metrics.write_csv(out / "metrics.csv")
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2, default=_json_default) + "\n")
    if result.scenario.output.get("dump_densities"):
        np.savez_compressed(out / "consensual.npz",
                            values=np.stack([d.values for d in result.consensual]),
                            lower=result.scenario.grid.lower, upper=result.scenario.grid.upper,
                            cells=result.scenario.grid.cells)
    return out


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    return str(o)
