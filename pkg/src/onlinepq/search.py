"""Compact code storage and asymmetric-distance (ADC) search."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .core import (Codebook, DimensionError, InvariantError, PQConfig, QuantizationMetrics,
                   as_matrix, as_vector, check_code)
from .online import assign_batch


def index_bytes(K: int) -> int:
    """Bytes used per sub-index: ceil(ceil(log2 K) / 8), at least 1."""
    return max(1, -(-((K - 1).bit_length()) // 8))


def index_dtype(K: int) -> np.dtype:
    w = index_bytes(K)
    if w == 1:
        return np.dtype(np.uint8)
    if w == 2:
        return np.dtype(np.uint16)
    if w <= 4:
        return np.dtype(np.uint32)
    return np.dtype(np.uint64)


def pack_codes(codes, K: int) -> bytes:
    """Serialize ``(n, M)`` codes, each sub-index little-endian in ``index_bytes(K)`` bytes."""
    c = np.asarray(codes)
    if c.ndim == 1:
        c = c[None, :]
    if c.size and (c.min() < 0 or c.max() >= K):
        raise InvariantError(f"sub-index out of range [0, {K})")
    w = index_bytes(K)
    wide = np.ascontiguousarray(c.astype("<u8"))
    return wide.view(np.uint8).reshape(c.shape[0], c.shape[1], 8)[:, :, :w].tobytes()


def unpack_codes(data: bytes, M: int, K: int) -> np.ndarray:
    """Inverse of :func:`pack_codes`; validates every sub-index against ``K``."""
    w = index_bytes(K)
    raw = np.frombuffer(data, dtype=np.uint8)
    if raw.size % (M * w):
        raise InvariantError(f"packed length {raw.size} is not a multiple of M*{w}")
    n = raw.size // (M * w)
    wide = np.zeros((n, M, 8), dtype=np.uint8)
    wide[:, :, :w] = raw.reshape(n, M, w)
    codes = wide.view("<u8").reshape(n, M)
    if codes.size and codes.max() >= K:
        raise InvariantError(f"sub-index out of range [0, {K})")
    return codes.astype(index_dtype(K))


class CodeStore:
    """Insertion-ordered map from integer id to code.

    Ids must be strictly increasing across appends. Codes are held as an
    ``(n, M)`` array of the narrowest unsigned type that fits ``K``; storage
    grows geometrically so appends cost O(batch) amortized.
    """

    def __init__(self, config: PQConfig):
        self.config = config
        self._dtype = index_dtype(config.K)
        self._ids = np.zeros(0, dtype=np.int64)
        self._codes = np.zeros((0, config.M), dtype=self._dtype)
        self._start = 0
        self._stop = 0

    def __len__(self):
        return self._stop - self._start

    @property
    def ids(self) -> np.ndarray:
        return self._ids[self._start:self._stop]

    @property
    def codes(self) -> np.ndarray:
        return self._codes[self._start:self._stop]

    @property
    def bytes_per_code(self) -> int:
        return self.config.M * index_bytes(self.config.K)

    @property
    def bits_per_code(self) -> int:
        """Idealized code size ``M * ceil(log2 K)``."""
        return self.config.bits_per_code

    def _reserve(self, extra: int) -> None:
        n = len(self)
        if self._stop + extra <= self._ids.shape[0]:
            return
        cap = max(16, 2 * (n + extra))
        ids = np.zeros(cap, dtype=np.int64)
        codes = np.zeros((cap, self.config.M), dtype=self._dtype)
        ids[:n] = self.ids
        codes[:n] = self.codes
        self._ids, self._codes = ids, codes
        self._start, self._stop = 0, n

    def append(self, ids, codes) -> None:
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        codes = np.asarray(codes)
        if codes.ndim == 1:
            codes = codes[None, :]
        if codes.shape != (ids.shape[0], self.config.M):
            raise DimensionError(f"codes shape {codes.shape} does not match {ids.shape[0]} ids x M={self.config.M}")
        if ids.size == 0:
            return
        if codes.min() < 0 or codes.max() >= self.config.K:
            raise InvariantError(f"sub-index out of range [0, {self.config.K})")
        if np.any(np.diff(ids) <= 0) or (len(self) and ids[0] <= self._ids[self._stop - 1]):
            raise InvariantError("store ids must be strictly increasing")
        self._reserve(ids.shape[0])
        end = self._stop + ids.shape[0]
        self._ids[self._stop:end] = ids
        self._codes[self._stop:end] = codes
        self._stop = end

    def pop_oldest(self, n: int) -> np.ndarray:
        """Drop the ``n`` oldest entries and return their ids."""
        n = min(n, len(self))
        gone = self._ids[self._start:self._start + n].copy()
        self._start += n
        return gone

    def remove(self, ids) -> None:
        ids = np.unique(np.asarray(ids, dtype=np.int64))
        if ids.size == 0:
            return
        current = self.ids
        if ids.size <= current.size and np.array_equal(current[:ids.size], ids):
            self._start += ids.size
            return
        keep = ~np.isin(current, ids)
        self._ids, self._codes = current[keep].copy(), self.codes[keep].copy()
        self._start, self._stop = 0, self._ids.shape[0]

    def get(self, id_: int) -> np.ndarray:
        pos = np.searchsorted(self.ids, id_)
        if pos >= len(self) or self.ids[pos] != id_:
            raise KeyError(id_)
        return self.codes[pos].astype(np.int64)

    def cluster(self, m: int, k: int) -> np.ndarray:
        """Ids whose code uses sub-codeword ``k`` in subspace ``m``."""
        return self.ids[self.codes[:, m] == k]

    def stats(self) -> dict:
        return {
            "D": self.config.D,
            "M": self.config.M,
            "K": self.config.K,
            "entries": len(self),
            "bits_per_code": self.bits_per_code,
            "bytes_per_code": self.bytes_per_code,
        }


def encode(codebook: Codebook, x) -> np.ndarray:
    """Code of ``x``: the nearest sub-codeword index in every subspace."""
    v = as_vector(x, codebook.config.D)
    codes, _ = assign_batch(codebook, v[None, :])
    return codes[0]


def encode_batch(codebook: Codebook, X) -> np.ndarray:
    codes, _ = assign_batch(codebook, as_matrix(X, codebook.config.D))
    return codes


def quantize(codebook: Codebook, x) -> tuple[np.ndarray, QuantizationMetrics]:
    """Like :func:`encode` but also returns the per-subspace quantization error."""
    v = as_vector(x, codebook.config.D)
    codes, errs = assign_batch(codebook, v[None, :])
    return codes[0], QuantizationMetrics(errs[0])


def reconstruct(codebook: Codebook, code) -> np.ndarray:
    """Concatenate the sub-codewords referenced by ``code``."""
    c = check_code(code, codebook.config)
    return codebook.codewords[np.arange(codebook.config.M), c].reshape(-1)


class DistanceTable:
    """Squared distances from one query's sub-vectors to every sub-codeword.

    ``table[m, k] = |q_m - z[m][k]|^2``.
    """

    def __init__(self, table: np.ndarray):
        self.table = table

    def adc(self, codes) -> np.ndarray:
        """Approximate squared distances for an ``(n, M)`` code array."""
        codes = np.asarray(codes)
        if codes.ndim == 1:
            codes = codes[None, :]
        M = self.table.shape[0]
        out = np.zeros(codes.shape[0])
        for m in range(M):
            out += self.table[m, codes[:, m]]
        return out


def build_distance_table(codebook: Codebook, q) -> DistanceTable:
    cfg = codebook.config
    sub = as_vector(q, cfg.D).reshape(cfg.M, 1, cfg.d_sub)
    return DistanceTable(np.square(codebook.codewords - sub).sum(axis=-1))


def _top_r(dist: np.ndarray, ids: np.ndarray, R: int) -> np.ndarray:
    """Positions of the ``R`` smallest distances, ties broken by lower id."""
    n = dist.shape[0]
    if R < n:
        threshold = np.partition(dist, R - 1)[R - 1]
        cand = np.flatnonzero(dist <= threshold)
    else:
        cand = np.arange(n)
    order = np.lexsort((ids[cand], dist[cand]))
    return cand[order[:R]]


def query(store: CodeStore, codebook: Codebook, q, R: int = 20) -> list[tuple[int, float]]:
    """Top-``R`` stored ids by ADC distance to ``q``, nearest first."""
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    table = build_distance_table(codebook, q)
    if len(store) == 0:
        return []
    dist = table.adc(store.codes)
    ids = store.ids
    pos = _top_r(dist, ids, R)
    return [(int(ids[p]), float(dist[p])) for p in pos]


def query_batch(store: CodeStore, codebook: Codebook, Q, R: int = 20) -> list[np.ndarray]:
    """Top-``R`` id arrays for each row of ``Q``."""
    Q = as_matrix(Q, codebook.config.D)
    return [np.array([i for i, _ in query(store, codebook, q, R)], dtype=np.int64) for q in Q]


def exact_topk_arrays(ids: np.ndarray, X: np.ndarray, q: np.ndarray, R: int) -> np.ndarray:
    """Exact squared-Euclidean top-``R`` over an id array and matching rows."""
    if ids.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    diff = X - q[None, :]
    dist = np.einsum("ij,ij->i", diff, diff)
    return ids[_top_r(dist, ids, R)]


def exact_topk(raw_vectors: Mapping[int, np.ndarray], q, R: int) -> list[int]:
    """Exact nearest ids to ``q`` among ``raw_vectors``; ties go to the lower id."""
    if not raw_vectors:
        return []
    ids = np.fromiter(raw_vectors.keys(), dtype=np.int64, count=len(raw_vectors))
    X = np.stack([np.asarray(raw_vectors[i], dtype=np.float64) for i in ids])
    q = as_vector(q, X.shape[1])
    return [int(i) for i in exact_topk_arrays(ids, X, q, R)]


def recall_at_R(approx_results: Sequence[Sequence[int]], true_nn: Sequence[int], R: int) -> float:
    """Fraction of queries whose true nearest neighbour is in their top-``R`` list."""
    if len(true_nn) == 0:
        raise ValueError("recall needs at least one query")
    if len(approx_results) != len(true_nn):
        raise ValueError(f"{len(approx_results)} result lists for {len(true_nn)} queries")
    hits = sum(int(t) in set(int(i) for i in list(res)[:R]) for res, t in zip(approx_results, true_nn))
    return hits / len(true_nn)
