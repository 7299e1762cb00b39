"""
Maximizing a bimodal surface by sampling
========================================

A 2-d surface with a tall narrow peak and a wide low one. Compare the
exhaustive grid maximum with the best of m uniform samples, then show how
keeping the best-so-far action as a prior makes repeated cheap searches
climb monotonically.
"""

import numpy as np

from qmle.argmax import approx_argmax
from qmle.distributions import ActionSpace, sample_uniform
from qmle.envs import BimodalSurface

surface = BimodalSurface.default(2)
space = ActionSpace.box(2)
rng = np.random.default_rng(0)


def best_of(actions):
    """Best row of an (M, 2) array; approx_argmax works on a batch of states."""
    a, v, _ = approx_argmax(surface.value, actions[None])
    return a[0], float(v[0])


# exhaustive reference on a 201 x 201 grid
ticks = np.linspace(-1, 1, 201)
grid = np.stack(np.meshgrid(ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 2)
best, best_value = best_of(grid)
print(f"grid max      {best_value:.4f} at {best}")

# sampled maximum: mean shortfall shrinks as the budget grows
for m in (2, 10, 100, 1000):
    shortfall = [best_value - best_of(sample_uniform(space, m, rng))[1]
                 for _ in range(200)]
    print(f"m={m:5d}       mean shortfall {np.mean(shortfall):.4f}")

# reuse: two fresh samples per round, plus the stored best
prior = sample_uniform(space, 1, rng)
for round_ in range(30):
    cands = np.vstack([sample_uniform(space, 2, rng), prior])
    best_action, value = best_of(cands)
    prior = best_action[None]
    if round_ % 5 == 4:
        print(f"round {round_ + 1:2d}      best so far {value:.4f}")
