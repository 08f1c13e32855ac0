"""
Building and growing a product-quantized index
==============================================

Train a codebook on a first chunk of data, then keep folding new vectors in
without ever re-encoding what is already stored.
"""

import numpy as np

from onlinepq import (CodeStore, PQConfig, TrainConfig, UpdateBudget, encode_batch, gen_gaussian_mixture,
                      query, train_codebook, update_minibatch)

# 6000 points in 64 dimensions drawn from a 10-component mixture
X, labels = gen_gaussian_mixture(6000, 64, clusters=10, seed=1)
config = PQConfig(D=64, M=8, K=64)
print(config, "->", config.bits_per_code, "bits per code")

# batch k-means on the first 1000 points gives the initial codebook
codebook = train_codebook(X[:1000], config, TrainConfig(max_iterations=30))
store = CodeStore(config)
store.append(np.arange(1000), encode_batch(codebook, X[:1000]))

# the rest arrives in mini-batches of 500; each one moves the codebook a little
for start in range(1000, 6000, 500):
    batch = X[start:start + 500]
    report = update_minibatch(codebook, batch, UpdateBudget.full())
    store.append(np.arange(start, start + 500), report.codes)
    print(f"after {start + 500:5d} points: mean error of the batch {report.mean_error:7.3f}, "
          f"{len(report.touched_cells)} cells moved")

# a query returns ids ranked by asymmetric distance
q = X[4321] + 0.05
for id_, dist in query(store, codebook, q, R=5):
    print(f"id {id_:5d}  label {labels[id_]}  approx distance {dist:8.3f}")
