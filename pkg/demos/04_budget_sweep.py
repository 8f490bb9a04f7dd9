"""
How much does the budget cost?
==============================

Training fewer layers per client saves client compute but leaves a gap to
full fine-tuning. Sweeping a uniform budget shows the gap closing as the
budget grows.
"""

from fedlayer.fedsim import FederationConfig, run_federation

base = dict(n_clients=4, rounds=10, depth=8, width=16, n_classes=5, samples_per_client=80,
            probe_size=32, local_steps=8, selector={"population": 12, "iterations": 15})
final = {}
for b in (1, 2, 4, 8):
    res = run_federation(FederationConfig(budget_pattern=f"uniform:{b}", **base))
    final[b] = res.train_losses[-1]
    print(f"budget {b}: final train objective {final[b]:.4f}")

# %%
print("gap to full budget:", {b: round(float(v - final[8]), 4) for b, v in final.items()})
