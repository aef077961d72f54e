"""Scenario files: TOML with fixed sections; unknown keys are rejected.

See ``docs/scenario.md`` for the full schema. Agent ids in files are
1-based; everything in memory is 0-based.
"""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..comm import ChannelConfig
from ..consensus import Pool
from ..density import StateGrid
from ..errors import ConfigError
from ..network import Digraph

MODES = ("bcf", "hbcf")
DYNAMICS = ("static", "linear", "revolve")
SENSORS = ("direct", "linear", "circle")
VISIBILITY = ("always", "none", "intervals", "phase", "geometric")
TOPOLOGIES = ("ring", "complete", "star", "circulant", "random_geometric", "edges")
WEIGHTS = ("metropolis", "uniform-inclusive")

# section -> {key: default}; REQUIRED marks mandatory keys
REQUIRED = object()
SCHEMA: dict[str, dict[str, Any]] = {
    "": {"name": "scenario", "mode": "bcf", "pool": "logop", "steps": REQUIRED, "seed": 0},
    "grid": {"lower": REQUIRED, "upper": REQUIRED, "cells": REQUIRED},
    "dynamics": {"model": REQUIRED, "process_noise": 0.0, "truth": REQUIRED, "a": 1.0, "b": 0.0,
                 "dt": 1.0, "truth_noise": True, "kernel": "auto", "mc_samples": 256},
    "prior": {"kind": "uniform", "mean": None, "var": None},
    "sensors": {"model": "direct", "noise_base": 1000.0, "noise_slope": 50.0, "noise_scale": 1.0,
                "variances": None, "gain": 1.0},
    "visibility": {"kind": "always", "intervals": None, "phase0": 0.0, "rate": 0.1, "half_width": 0.5},
    "topology": {"kind": REQUIRED, "m": REQUIRED, "offsets": [1], "radius": 0.4, "edges": None,
                 "weights": "metropolis"},
    "consensus": {"n_loop": 10, "plan": False, "eps_cons": 0.05, "eps_comm": 0.0, "exchange": True},
    "channel": {"codec": "lossless-grid", "eps_comm": 0.0, "n_g": 1, "n_g_cap": 8,
                "n_particles": 1000, "on_unreachable": "record"},
    "output": {"dir": None, "dump_densities": False},
}


@dataclass
class Scenario:
    """Validated scenario. ``raw`` keeps the file contents with defaults filled in."""

    name: str
    mode: str
    pool: Pool
    steps: int
    seed: int
    grid: StateGrid
    dynamics: dict
    prior: dict
    sensors: dict
    visibility: dict
    topology: dict
    consensus: dict
    channel: ChannelConfig
    output: dict
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def m(self) -> int:
        return int(self.topology["m"])

    def build_graph(self) -> Digraph:
        t = self.topology
        m = self.m
        kind = t["kind"]
        if kind == "ring":
            return Digraph.ring(m)
        if kind == "complete":
            return Digraph.complete(m)
        if kind == "star":
            return Digraph.star(m)
        if kind == "circulant":
            return Digraph.circulant(m, t["offsets"])
        if kind == "random_geometric":
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(4,)))
            return Digraph.random_geometric(m, t["radius"], rng)
        return Digraph(m, [(a - 1, b - 1) for a, b in t["edges"]])

    def with_overrides(self, **kw) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        for key, val in kw.items():
            if val is None:
                continue
            if key == "out":
                raw.setdefault("output", {})["dir"] = str(val)
            else:
                raw[key] = val
        return scenario_from_dict(raw)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        with path.open("rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError([("", f"no such file: {path}")]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([("", f"TOML syntax error: {exc}")]) from None
    return scenario_from_dict(data)


def _fill(data: dict, problems: list) -> dict:
    out = {}
    top = {k: v for k, v in data.items() if not isinstance(v, dict)}
    sections = {k: v for k, v in data.items() if isinstance(v, dict)}
    for name in sections:
        if name not in SCHEMA or name == "":
            problems.append((name, "unknown section"))
    for sec, keys in SCHEMA.items():
        given = top if sec == "" else sections.get(sec, {})
        filled = {}
        for key, val in given.items():
            if key not in keys:
                problems.append((f"{sec}.{key}" if sec else key, "unknown key"))
        for key, default in keys.items():
            path = f"{sec}.{key}" if sec else key
            if key in given:
                filled[key] = given[key]
            elif default is REQUIRED:
                problems.append((path, "required"))
            else:
                filled[key] = copy.deepcopy(default)
        out[sec] = filled
    return out


def _vec(val, n, path, problems, positive=False):
    arr = np.atleast_1d(np.asarray(val, dtype=float)) if val is not None else None
    if arr is None or arr.size not in (1, n):
        problems.append((path, f"expected a number or a list of {n}"))
        return None
    arr = np.broadcast_to(arr, (n,)).astype(float)
    if positive and np.any(arr <= 0):
        problems.append((path, "must be > 0"))
    return arr


def scenario_from_dict(data: dict) -> Scenario:
    problems: list[tuple[str, str]] = []
    raw = _fill(data, problems)
    if problems:
        raise ConfigError(problems)
    top = raw[""]

    def check(cond, path, msg):
        if not cond:
            problems.append((path, msg))

    check(top["mode"] in MODES, "mode", f"must be one of {MODES}")
    check(str(top["pool"]).lower() in ("logop", "linop"), "pool", "must be 'logop' or 'linop'")
    check(isinstance(top["steps"], int) and top["steps"] >= 1, "steps", "must be an integer >= 1")
    check(isinstance(top["seed"], int) and top["seed"] >= 0, "seed", "must be a nonnegative integer")

    g = raw["grid"]
    grid = None
    try:
        grid = StateGrid(g["lower"], g["upper"], g["cells"])
        check(all(c >= 2 for c in grid.cells), "grid.cells", "need at least 2 cells per dimension")
    except (TypeError, ValueError) as exc:
        problems.append(("grid", str(exc)))
    ndim = grid.ndim if grid else 1

    d = raw["dynamics"]
    check(d["model"] in DYNAMICS, "dynamics.model", f"must be one of {DYNAMICS}")
    if d["model"] == "revolve":
        check(ndim == 2, "grid", "the revolve model needs a 2-D grid (phase, rate)")
        if grid and ndim == 2:
            check(abs(grid.lower[0]) < 1e-12 and abs(grid.upper[0] - 2 * math.pi) < 1e-9,
                  "grid", "the phase axis must span [0, 2*pi]")
    if d["model"] == "linear":
        check(ndim == 1, "grid", "the linear model needs a 1-D grid")
    _vec(d["truth"], ndim, "dynamics.truth", problems)
    q = np.atleast_1d(np.asarray(d["process_noise"], dtype=float))
    check(np.all(q >= 0), "dynamics.process_noise", "must be >= 0")
    check(d["kernel"] in ("auto", "gaussian", "monte-carlo"), "dynamics.kernel",
          "must be auto, gaussian or monte-carlo")
    check(isinstance(d["mc_samples"], int) and d["mc_samples"] >= 1, "dynamics.mc_samples", "must be >= 1")

    pr = raw["prior"]
    check(pr["kind"] in ("uniform", "gaussian"), "prior.kind", "must be 'uniform' or 'gaussian'")
    if pr["kind"] == "gaussian":
        _vec(pr["mean"], ndim, "prior.mean", problems)
        _vec(pr["var"], ndim, "prior.var", problems, positive=True)

    t = raw["topology"]
    m = t["m"]
    check(isinstance(m, int) and m >= 1, "topology.m", "must be an integer >= 1")
    m = m if isinstance(m, int) and m >= 1 else 1
    check(t["kind"] in TOPOLOGIES, "topology.kind", f"must be one of {TOPOLOGIES}")
    check(t["weights"] in WEIGHTS, "topology.weights", f"must be one of {WEIGHTS}")
    if t["kind"] == "edges":
        edges = t["edges"] or []
        check(bool(edges) or m == 1, "topology.edges", "an explicit edge list is required")
        for i, e in enumerate(edges):
            ok = isinstance(e, list) and len(e) == 2 and all(isinstance(v, int) and 1 <= v <= m for v in e)
            check(ok, f"topology.edges[{i}]", f"must be [from, to] with ids in [1, {m}]")

    s = raw["sensors"]
    check(s["model"] in SENSORS, "sensors.model", f"must be one of {SENSORS}")
    if s["model"] == "circle":
        check(d["model"] == "revolve", "sensors.model", "circle sensors observe the revolve model")
    if s["variances"] is not None:
        v = np.atleast_1d(np.asarray(s["variances"], dtype=float))
        check(v.size == m and np.all(v > 0), "sensors.variances", f"need {m} positive values")
    check(s["noise_scale"] > 0, "sensors.noise_scale", "must be > 0")

    vis = raw["visibility"]
    check(vis["kind"] in VISIBILITY, "visibility.kind", f"must be one of {VISIBILITY}")
    if vis["kind"] == "intervals":
        iv = vis["intervals"]
        if not isinstance(iv, dict):
            problems.append(("visibility.intervals", "table of agent id -> [[start, end], ...]"))
        else:
            for key, spans in iv.items():
                path = f"visibility.intervals.{key}"
                check(str(key).isdigit() and 1 <= int(key) <= m, path, f"agent id must be in [1, {m}]")
                ok = isinstance(spans, list) and all(
                    isinstance(sp, list) and len(sp) == 2 and sp[0] <= sp[1] for sp in spans)
                check(ok, path, "must be a list of [start, end] step pairs")
    if vis["kind"] == "geometric":
        check(d["model"] == "revolve", "visibility.kind", "geometric visibility needs the revolve model")

    c = raw["consensus"]
    check(isinstance(c["n_loop"], int) and c["n_loop"] >= 1, "consensus.n_loop", "must be an integer >= 1")
    check(c["eps_cons"] > 0, "consensus.eps_cons", "must be > 0")
    check(c["eps_comm"] >= 0, "consensus.eps_comm", "must be >= 0")
    if c["plan"]:
        check(2 * c["eps_comm"] * math.sqrt(m) < c["eps_cons"], "consensus.eps_comm",
              "planning needs 2*eps_comm*sqrt(m) < eps_cons")

    ch = raw["channel"]
    channel = None
    try:
        channel = ChannelConfig(**ch)
    except ConfigError as exc:
        problems.extend(exc.problems)
    except TypeError as exc:
        problems.append(("channel", str(exc)))

    if problems:
        raise ConfigError(problems)

    # keep the TOML-shaped dict (top-level keys flat) for echoing and overrides
    echo = {k: v for k, v in raw[""].items()}
    echo.update({k: v for k, v in raw.items() if k != ""})
    return Scenario(
        name=str(top["name"]), mode=top["mode"], pool=Pool.parse(top["pool"]), steps=top["steps"],
        seed=top["seed"], grid=grid, dynamics=d, prior=pr, sensors=s, visibility=vis, topology=t,
        consensus=c, channel=channel, output=raw["output"], raw=echo,
    )
