"""Domain types shared by the quantizer, updater, window and search code.

A codebook is stored as two dense arrays: ``codewords`` of shape
``(M, K, D // M)`` in float64 and ``counts`` of shape ``(M, K)`` in uint64.
A code is a length-``M`` integer array of sub-indices.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np


class OnlinePQError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(OnlinePQError, ValueError):
    """Array shapes do not match the configured dimensionality."""


class InvariantError(OnlinePQError, ValueError):
    """A structural invariant of a codebook, code or window was violated."""


@dataclass(frozen=True)
class PQConfig:
    """Shape of a product quantizer.

    Args:
        D: Vector dimensionality.
        M: Number of subspaces. Must divide ``D``.
        K: Sub-codewords per subspace.
    """

    D: int
    M: int
    K: int

    def __post_init__(self):
        for name in ("D", "M", "K"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise InvariantError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.M < 1:
            raise InvariantError(f"M must be >= 1, got {self.M}")
        if self.K < 2:
            raise InvariantError(f"K must be >= 2, got {self.K}")
        if self.D < self.M:
            raise InvariantError(f"D must be >= M, got D={self.D}, M={self.M}")
        if self.D % self.M:
            raise InvariantError(f"D must be a multiple of M, got D={self.D}, M={self.M}")

    @property
    def d_sub(self) -> int:
        return self.D // self.M

    @property
    def bits_per_index(self) -> int:
        """ceil(log2 K), computed exactly on integers."""
        return (self.K - 1).bit_length()

    @property
    def bits_per_code(self) -> int:
        return self.M * self.bits_per_index


def as_vector(x, D: int | None = None) -> np.ndarray:
    """Convert ``x`` to a finite float64 vector, optionally checking its length."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-d vector, got shape {v.shape}")
    if D is not None and v.shape[0] != D:
        raise DimensionError(f"expected length {D}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains NaN or Inf")
    return v


def as_matrix(X, D: int | None = None) -> np.ndarray:
    """Convert ``X`` to a finite float64 matrix of shape (n, D)."""
    A = np.asarray(X, dtype=np.float64)
    if A.ndim == 1 and A.size == 0:
        A = A.reshape(0, D or 0)
    if A.ndim != 2:
        raise DimensionError(f"expected a 2-d array, got shape {A.shape}")
    if D is not None and A.shape[1] != D:
        raise DimensionError(f"expected {D} columns, got {A.shape[1]}")
    if not np.all(np.isfinite(A)):
        raise ValueError("data contains NaN or Inf")
    return A


def split(x, config: PQConfig) -> np.ndarray:
    """Partition a vector into ``M`` contiguous sub-vectors.

    Returns an ``(M, D // M)`` view; row ``m`` holds entries
    ``[m * d_sub, (m + 1) * d_sub)`` of ``x``.
    """
    v = as_vector(x, config.D)
    return v.reshape(config.M, config.d_sub)


def split_batch(X, config: PQConfig) -> np.ndarray:
    """Batched :func:`split`: ``(n, D)`` -> ``(n, M, D // M)``."""
    A = as_matrix(X, config.D)
    return A.reshape(A.shape[0], config.M, config.d_sub)


def subspace_error(x_m, z) -> float:
    """Squared Euclidean distance between a sub-vector and a sub-codeword."""
    a = np.asarray(x_m, dtype=np.float64)
    b = np.asarray(z, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.square(a - b).sum())


@dataclass
class QuantizationMetrics:
    """Per-subspace and total squared quantization error of one vector or batch."""

    per_subspace_error: np.ndarray
    total_error: float = field(init=False)

    def __post_init__(self):
        self.per_subspace_error = np.asarray(self.per_subspace_error, dtype=np.float64)
        if np.any(self.per_subspace_error < 0):
            raise InvariantError("per-subspace errors must be non-negative")
        self.total_error = float(np.sum(self.per_subspace_error))


def check_code(code, config: PQConfig) -> np.ndarray:
    """Validate a code and return it as an int64 array of length ``M``."""
    c = np.asarray(code)
    if c.shape != (config.M,):
        raise DimensionError(f"code must have {config.M} entries, got shape {c.shape}")
    if c.size and not np.issubdtype(c.dtype, np.integer):
        raise InvariantError(f"code entries must be integers, got dtype {c.dtype}")
    c = c.astype(np.int64)
    if np.any(c < 0) or np.any(c >= config.K):
        raise InvariantError(f"code entries must lie in [0, {config.K})")
    return c


class Codebook:
    """Mutable ``M x K`` grid of sub-codewords with assignment counters.

    The codebook has a single writer; concurrent readers should work on
    :meth:`copy` snapshots.
    """

    def __init__(self, config: PQConfig, codewords=None, counts=None):
        self.config = config
        shape = (config.M, config.K, config.d_sub)
        if codewords is None:
            codewords = np.zeros(shape)
        if counts is None:
            counts = np.zeros((config.M, config.K), dtype=np.uint64)
        self.codewords = np.array(codewords, dtype=np.float64)
        counts = np.asarray(counts)
        if counts.shape == (config.M, config.K) and np.any(counts < 0):
            raise InvariantError("counter n[m][k] must be non-negative")
        self.counts = counts.astype(np.uint64)
        self.validate()

    def validate(self) -> None:
        """Raise :class:`InvariantError` naming the first violated invariant."""
        cfg = self.config
        if self.codewords.shape != (cfg.M, cfg.K, cfg.d_sub):
            raise InvariantError(
                f"codewords shape {self.codewords.shape} != (M, K, D/M) = "
                f"{(cfg.M, cfg.K, cfg.d_sub)}"
            )
        if self.counts.shape != (cfg.M, cfg.K):
            raise InvariantError(f"counts shape {self.counts.shape} != (M, K) = {(cfg.M, cfg.K)}")
        if not np.all(np.isfinite(self.codewords)):
            raise InvariantError("sub-codewords must be finite")

    def copy(self) -> "Codebook":
        return Codebook(self.config, self.codewords.copy(), self.counts.copy())

    def totals(self) -> np.ndarray:
        """Per-subspace counter sums, shape ``(M,)``."""
        return self.counts.sum(axis=1)

    def identical(self, other: "Codebook") -> bool:
        """Bitwise equality of configuration, codewords and counters."""
        return (
            self.config == other.config
            and np.array_equal(self.counts, other.counts)
            and self.codewords.tobytes() == other.codewords.tobytes()
        )

    def __repr__(self):
        c = self.config
        return f"Codebook(D={c.D}, M={c.M}, K={c.K}, total={int(self.counts[0].sum())})"


def nearest_all(subs: np.ndarray, codewords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest sub-codeword in every subspace for a batch.

    Candidates come from one batched product scoring ``x.z - |z|^2 / 2``
    (larger is nearer); rows whose runner-up lies within rounding slack of the
    best are rescored with the direct squared difference. The result is the
    exact argmin of the squared distance with ties going to the lowest index,
    and the returned error is the directly computed squared distance.

    Args:
        subs: ``(n, M, d)`` sub-vectors.
        codewords: ``(M, K, d)`` sub-codewords.

    Returns:
        ``(indices, errors)``, both of shape ``(n, M)``.
    """
    n, M, d = subs.shape
    K = codewords.shape[1]
    if n == 0:
        return np.zeros((0, M), dtype=np.int64), np.zeros((0, M))
    z2 = np.square(codewords).sum(axis=-1)
    # bounded score blocks avoid page-faulting a fresh huge temporary per call
    rows = max(1, _SCORE_BLOCK // (M * K))
    if n > rows:
        parts = [_nearest_block(subs[s:s + rows], codewords, z2) for s in range(0, n, rows)]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
    return _nearest_block(subs, codewords, z2)


_SCORE_BLOCK = 1 << 18


_workspace = threading.local()


def _buffer(shape: tuple) -> np.ndarray:
    # per-thread scratch reused across calls; fresh multi-megabyte temporaries
    # page-fault on every call
    size = int(np.prod(shape))
    buf = getattr(_workspace, "score", None)
    if buf is None or buf.size < size:
        buf = _workspace.score = np.empty(size)
    return buf[:size].reshape(shape)


def _nearest_block(subs, codewords, z2):
    n, M, d = subs.shape
    K = codewords.shape[1]
    # (M, n, d+1) @ (M, d+1, K): x.z - |z|^2 / 2
    xa = np.empty((M, n, d + 1))
    xa[:, :, :d] = subs.transpose(1, 0, 2)
    xa[:, :, d] = 1.0
    za = np.empty((M, d + 1, K))
    za[:, :d, :] = codewords.transpose(0, 2, 1)
    za[:, d, :] = -0.5 * z2
    score = np.matmul(xa, za, out=_buffer((M, n, K)))
    best = score.argmax(axis=-1)
    top = np.take_along_axis(score, best[..., None], axis=-1)[..., 0]
    if K > 1:
        np.put_along_axis(score, best[..., None], -np.inf, axis=-1)
        runner_up = score.max(axis=-1)
        np.put_along_axis(score, best[..., None], top[..., None], axis=-1)
    else:
        runner_up = np.full_like(top, -np.inf)
    x2 = np.square(subs).sum(axis=-1).T
    slack = 1e-9 * (x2 + z2.max(axis=1)[:, None]) + 1e-300
    for m, i in zip(*np.nonzero(top - runner_up <= slack)):
        cand = np.flatnonzero(score[m, i] >= top[m, i] - slack[m, i])
        exact = np.square(codewords[m, cand] - subs[i, m]).sum(axis=-1)
        best[m, i] = cand[np.lexsort((cand, exact))[0]]
    idx = best.T.astype(np.int64)
    chosen = codewords[np.arange(M)[None, :], idx]
    err = np.square(subs - chosen).sum(axis=-1)
    return idx, err


def nearest_subcodewords(sub: np.ndarray, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact nearest sub-codeword for each row of ``sub`` within one subspace.

    Args:
        sub: ``(n, d)`` sub-vectors.
        Z: ``(K, d)`` sub-codewords.

    Returns:
        ``(indices, errors)`` of shapes ``(n,)``; ties go to the lowest index.
    """
    idx, err = nearest_all(sub[:, None, :], Z[None, :, :])
    return idx[:, 0], err[:, 0]
