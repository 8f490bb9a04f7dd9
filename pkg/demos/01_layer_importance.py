"""
Which layers matter to which client
===================================

Every client looks at the same global network through its own data. The
principal eigenvalue of each layer's tangent kernel, computed on a small
probe batch, says how much one gradient step on that layer can lower the
client's loss. Normalizing across layers gives an importance row per client.
"""

import numpy as np

from fedlayer import build_model, generate_clients
from fedlayer.lntk import importance_scores

# eight clients with skewed label mixes (small gamma means more skew)
clients = generate_clients(8, 0.5, 200, 10, seed=0)
model = build_model(12, 32, 10, seed=1, input_dim=16)

S = importance_scores(model, clients, probe_size=64, seed=0)
np.set_printoptions(precision=3, suppress=True)
print("importance rows (clients x layers):")
print(S.scores)

# %%
# Rows sum to one. At initialization the layers nearest the output dominate
# for every client, so handing each client its own top layers piles all of
# them onto the same few and leaves the rest of the network untouched. That
# imbalance is what the variance objective pushes against.
top = np.argsort(-S.scores, axis=1)[:, :3]
print("top-3 layers per client:")
print(top)
print("layer usage if everyone took its top 3:", np.bincount(top.ravel(), minlength=12))
