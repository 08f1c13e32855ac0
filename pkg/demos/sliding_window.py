"""
Forgetting old data with a sliding window
=========================================

When the stream drifts, points older than the window are removed from both
the store and the codebook. Each expired point's contribution is
subtracted from the sub-codewords it was added to.
"""

import numpy as np

from onlinepq import Codebook, PQConfig, ProtocolConfig, SlidingWindow, TrainConfig, gen_gaussian_mixture
from onlinepq import run_window_protocol
from onlinepq.io import DISJOINT, stream_groups

# one point in, one point out: the codebook returns to where it was
rng = np.random.default_rng(0)
codebook = Codebook(PQConfig(4, 2, 3), rng.standard_normal((2, 3, 2)), np.full((2, 3), 4))
before = codebook.copy()
window = SlidingWindow(capacity=10)
window.insert(codebook, [0.3, -1.2, 2.0, 0.1])
window.delete_oldest(codebook)
print("largest drift after insert+delete:", np.abs(codebook.codewords - before.codewords).max())

# a stream ordered by class: each group brings classes not seen before
X, labels = gen_gaussian_mixture(6000, 32, clusters=24, seed=3, separation=6.0)
groups = [X[g] for g in stream_groups(len(X), 12, DISJOINT, labels, seed=3)]

for deletion in (True, False):
    cfg = ProtocolConfig(PQConfig(32, 4, 32), TrainConfig(max_iterations=20), window=1000, deletion=deletion)
    result = run_window_protocol(groups, cfg)
    recall = np.mean([r.recall for r in result])
    ms = 1e3 * np.median([r.update_seconds for r in result])
    print(f"deletion={deletion!s:5}  recall@20 {recall:.3f}  median update {ms:.2f} ms  "
          f"counter mass {int(result.codebook.counts[0].sum())}")
