"""Thirty-three sensors estimate one fixed number.

Only the sensors inside a sweeping window see the target at each step;
the rest listen. We compare how fast the swarm agrees under each pool.
"""

from pathlib import Path

import numpy as np

from bcfilter.sim import load_scenario, run_scenario

sc = load_scenario(Path(__file__).parent.parent / "scenarios" / "static_ring.toml")
for pool in ("linop", "logop"):
    times, errs = [], []
    for seed in range(1, 4):
        res = run_scenario(sc.with_overrides(pool=pool, seed=seed), keep_densities=True)
        times.append(res.time_to_consensus(0.1))
        errs.append(abs(res.summary["final_estimates"][0][0] - res.summary["final_truth"][0]))
    print(f"{pool}: steps to agree within 0.1 (L1) = {times}, final error = {np.round(errs, 3).tolist()}")
