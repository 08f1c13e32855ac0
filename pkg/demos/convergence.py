"""
Online training approaches batch training
=========================================

Stream the same data set through the online update several times and watch
the quantization error settle near the error of a batch-trained codebook.
"""

from onlinepq import PQConfig, ProtocolConfig, gen_gaussian_mixture, run_convergence

X, _ = gen_gaussian_mixture(3000, 16, clusters=8, seed=2)
result = run_convergence(X, passes=10, cfg=ProtocolConfig(PQConfig(16, 4, 16)))

print(f"start   {result.initial_error:.4f}")
for i, err in enumerate(result.pass_errors, start=1):
    print(f"pass {i:2d} {err:.4f}")
print(f"batch   {result.batch_error:.4f}")
