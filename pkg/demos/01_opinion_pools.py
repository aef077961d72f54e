"""Two ways to fuse opinions.

Two sensors disagree about where a target sits. The arithmetic pool keeps
both hypotheses alive; the geometric pool settles between them and is the
density closest (in summed KL) to both inputs.
"""

import numpy as np

from bcfilter import StateGrid, arithmetic_pool, geometric_pool, kl_divergence, normalize

grid = StateGrid.line(-6, 6, 240)
x = grid.centers[:, 0]
left = normalize(np.exp(-0.5 * (x + 1.5) ** 2 / 0.8), grid)
right = normalize(np.exp(-0.5 * (x - 1.0) ** 2 / 1.2), grid)

lin = arithmetic_pool([left, right], [0.5, 0.5])
log = geometric_pool([left, right], [0.5, 0.5])


def modes(p):
    v = p.values
    return [round(float(x[i]), 2) for i in range(1, len(v) - 1) if v[i] > v[i - 1] and v[i] >= v[i + 1]]


print("arithmetic pool modes:", modes(lin))
print("geometric pool modes: ", modes(log))
for name, p in (("arithmetic", lin), ("geometric", log)):
    total = kl_divergence(p, left) + kl_divergence(p, right)
    print(f"{name:>10}: KL to left + KL to right = {total:.4f}")
