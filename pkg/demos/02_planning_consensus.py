"""How many pooling rounds are enough?

Each round shrinks disagreement by at least the second largest singular
value sigma of the weight matrix. Given sigma, a disagreement budget and a
per-message error, the planner returns the smallest loop count that meets
the budget, and we check it against an actual run.
"""

import math

import numpy as np

from bcfilter import (Digraph, Pool, StateGrid, consensual_pdf, disagreement, make_balanced_weights,
                      normalize, plan_n_loop, run_consensus, second_largest_singular_value)

rng = np.random.default_rng(0)
m = 10
P = make_balanced_weights(Digraph.random_geometric(m, 0.5, rng))
sigma = second_largest_singular_value(P)
print(f"{m} agents, sigma = {sigma:.3f}")

for eps_cons in (0.5, 0.1, 0.01):
    print(f"eps_cons = {eps_cons:<5} -> n_loop = {plan_n_loop(sigma, 2 * math.sqrt(m), eps_cons, 0.0, m)}")

grid = StateGrid.line(0, 1, 50)
ds = [normalize(rng.random(50) ** 4 + 1e-3, grid) for _ in range(m)]
target = consensual_pdf(ds, np.full(m, 1 / m), Pool.LOGOP)
trace = run_consensus(ds, P, 40, Pool.LOGOP)
print("(the planner uses the worst-case starting disagreement 2 sqrt(m), so it is conservative)")
for nu in (0, 5, 10, 20, 40):
    print(f"round {nu:>2}: ||theta|| = {disagreement(trace.history[nu], target).norm:.2e}")
