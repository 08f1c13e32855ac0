"""
Cheaper updates under a budget
==============================

Updating only the subspaces that quantize the new batch worst trades a
little accuracy for update time. This sweeps the number of updated
subspaces on a small Gaussian stream.
"""

import numpy as np

from onlinepq import PQConfig, ProtocolConfig, TrainConfig, UpdateBudget, gen_gaussian_mixture, run_dynamic_protocol
from onlinepq.io import stream_groups

X, _ = gen_gaussian_mixture(4800, 64, clusters=1, seed=0)
groups = [X[g] for g in stream_groups(len(X), 12)]

print("alpha  mean update ms  mean recall@20  final mean error")
for alpha in (1, 2, 4, 8):
    cfg = ProtocolConfig(PQConfig(64, 8, 64), TrainConfig(max_iterations=20), UpdateBudget.subspaces(alpha))
    result = run_dynamic_protocol(groups, cfg)
    ms = 1e3 * np.mean([r.update_seconds for r in result])
    recall = np.mean([r.recall for r in result])
    print(f"{alpha:5d}  {ms:14.3f}  {recall:14.3f}  {result[-1].mean_qe:16.3f}")

# the same budget can be expressed as a fraction of all sub-codewords
cfg = ProtocolConfig(PQConfig(64, 8, 64), TrainConfig(max_iterations=20), UpdateBudget.subcodewords(0.5))
result = run_dynamic_protocol(groups, cfg)
print("lambda=0.5 recall:", round(float(np.mean([r.recall for r in result])), 3))
