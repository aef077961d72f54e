"""Tracking a target that circles a ring of sensors.

Sensors only see the target when it passes nearby, so the set of trackers
changes every step. Trackers pool among themselves; the others follow.
The number of rounds is re-planned each step from the tracker subgraph.
"""

from pathlib import Path

from bcfilter.sim import load_scenario, run_scenario

sc = load_scenario(Path(__file__).parent.parent / "scenarios" / "revolve_planned.toml").with_overrides(steps=12)
res = run_scenario(sc)
s = res.summary
print("loops per step:", s["n_loop_per_step"])
print("disagreement target met every step:", s["theta_bound_all_steps"])
print("final (phase, rate):", [round(v, 3) for v in s["final_estimates"][0]],
      "truth:", [round(v, 3) for v in s["final_truth"]])
