"""
Importance against balance
==========================

The server trades total importance (higher is better) for an even spread of
selected layers across clients (lower count variance is better). On a tiny
instance the full trade-off can be enumerated and compared with what each
search recovers.
"""

import numpy as np

from fedlayer.metrics import hypervolume_ratio
from fedlayer.selector import META_HEURISTICS, SolverConfig, solve
from fedlayer.selector.oracle import random_instance, true_front

S = random_instance(3, 6, seed=7)
budgets = [2, 2, 2]
front, _ = true_front(S, budgets)
print("exact front (importance, variance):")
for imp, var in front:
    print(f"  {imp:.4f}  {var:.4f}")

# %%
# Each search keeps an archive of non-dominated masks and returns the knee
# of it as the assignment actually used.
for alg in META_HEURISTICS:
    archive, chosen = solve(S, budgets, SolverConfig(algorithm=alg))
    print(f"{alg:6s} hv ratio {hypervolume_ratio(archive.points, front):.3f}  "
          f"knee counts {chosen.sum(axis=0).tolist()}")
