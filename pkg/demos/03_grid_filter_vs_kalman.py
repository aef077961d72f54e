"""A single agent on a fine grid behaves like a Kalman filter.

For a linear-Gaussian model the exact posterior is Gaussian, so the grid
filter's mean should follow the Kalman mean step by step. The measurements
are read back from the run's own seeded streams.
"""

from pathlib import Path

from bcfilter.sim import load_scenario, run_scenario
from bcfilter.sim.models import make_sensor
from bcfilter.sim.runner import _rng

sc = load_scenario(Path(__file__).parent.parent / "scenarios" / "kalman_line.toml")
res = run_scenario(sc)
d = sc.dynamics
r = sc.sensors["variances"][0]
sensor = make_sensor("direct", r, 1)

mean, var = sc.prior["mean"][0], sc.prior["var"][0]
grid_mean = {row[0]: row[7] for row in res.metrics.rows if row[1] == 0}
for k, truth in enumerate(res.truth, start=1):
    z = float(sensor.sample(truth, _rng(sc.seed, 1, 0, k))[0])
    mean, var = d["a"] * mean + d["b"], d["a"] ** 2 * var + d["process_noise"]
    gain = var / (var + r)
    mean, var = mean + gain * (z - mean), (1 - gain) * var
    if k in (1, 5, 10, 25, 50):
        print(f"step {k:>2}: grid {grid_mean[k]: .4f}   kalman {mean: .4f}   truth {truth[0]: .3f}")
