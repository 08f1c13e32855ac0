"""Synthetic data and the dynamic-database experiment protocols.

Each protocol keeps the raw vectors it has seen only to compute exact
ground truth for recall; the index itself works from codes alone.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Codebook, PQConfig, as_matrix
from .online import UpdateBudget, assign_batch, update_minibatch, update_streaming
from .search import CodeStore
from .trainer import TrainConfig, train_codebook
from .window import SlidingWindow

DYNAMIC = "dynamic"
FIXED = "fixed"
RECORD_FIELDS = ("iteration", "recall", "update_seconds", "mean_qe", "store_size")


def gen_gaussian_mixture(n: int, D: int, clusters: int = 1, seed: int = 0,
                         separation: float = 4.0) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``n`` points from an isotropic unit-variance Gaussian mixture.

    With ``clusters == 1`` this is the standard normal in ``D`` dimensions.
    Otherwise centers are placed at distance ``separation`` from one another
    (exactly when ``clusters <= D``, via orthonormal directions) and each
    point picks a cluster uniformly.

    Returns:
        ``(X, labels)`` with shapes ``(n, D)`` and ``(n,)``.
    """
    if n < 1 or D < 1 or clusters < 1:
        raise ValueError("n, D and clusters must all be >= 1")
    rng = np.random.default_rng(seed)
    if clusters == 1:
        centers = np.zeros((1, D))
    elif clusters <= D:
        q, _ = np.linalg.qr(rng.standard_normal((D, clusters)))
        centers = q.T * (separation / np.sqrt(2.0))
    else:
        dirs = rng.standard_normal((clusters, D))
        centers = dirs / np.linalg.norm(dirs, axis=1, keepdims=True) * (separation / np.sqrt(2.0))
    labels = rng.integers(clusters, size=n)
    X = centers[labels] + rng.standard_normal((n, D))
    return X, labels


@dataclass
class ProtocolConfig:
    """Settings shared by the dynamic and sliding-window protocols.

    Attributes:
        query_policy: ``dynamic`` queries each incoming group against the
            current store before inserting it; ``fixed`` holds the last group
            out as a query set evaluated after every update.
        update_batch: Split each group into mini-batches of this size
            (``1`` gives streaming updates); ``None`` updates with the whole group.
        window: Sliding-window length in points, ``None`` for unbounded.
        deletion: Whether expired points are removed from the codebook.
    """

    pq: PQConfig
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    budget: UpdateBudget = field(default_factory=UpdateBudget)
    groups: int = 12
    query_policy: str = DYNAMIC
    R: int = 20
    seed: int = 0
    update_batch: int | None = None
    window: int | None = None
    deletion: bool = True

    def __post_init__(self):
        if self.query_policy not in (DYNAMIC, FIXED):
            raise ValueError(f"unknown query policy {self.query_policy!r}")
        if self.groups < 3:
            raise ValueError(f"at least 3 groups are needed, got {self.groups}")
        if self.R < 1:
            raise ValueError("R must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    recall: float
    update_seconds: float
    mean_qe: float
    store_size: int


@dataclass
class ProtocolResult:
    """Per-iteration records plus the final index state."""

    records: list[IterationRecord]
    codebook: Codebook
    store: CodeStore
    init_count: int
    inserted: int
    window: SlidingWindow | None = None

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


def batch_recall(store: CodeStore, codebook: Codebook, Q: np.ndarray, true_ids: np.ndarray,
                 R: int, chunk: int = 128) -> float:
    """Recall@R of ADC search, without materializing the top-R lists.

    A query hits when fewer than ``R`` stored entries rank ahead of its true
    neighbour, ranking by ADC distance and then by id (the order
    :func:`onlinepq.search.query` uses).
    """
    if len(store) == 0 or Q.shape[0] == 0:
        return 0.0
    cfg = codebook.config
    ids, codes = store.ids, store.codes
    pos = np.searchsorted(ids, true_ids)
    order = np.arange(ids.shape[0])
    subs = Q.reshape(Q.shape[0], cfg.M, 1, cfg.d_sub)
    hits = 0
    for s in range(0, Q.shape[0], chunk):
        tables = np.square(codebook.codewords[None] - subs[s:s + chunk]).sum(axis=-1)
        # (N, chunk) layout turns every lookup into a contiguous row gather
        dist = np.zeros((ids.shape[0], tables.shape[0]))
        for m in range(cfg.M):
            dist += np.ascontiguousarray(tables[:, m, :].T)[codes[:, m]]
        p = pos[s:s + chunk]
        d_true = dist[p, np.arange(p.shape[0])][None, :]
        ahead = np.count_nonzero(dist < d_true, axis=0)
        ahead += np.count_nonzero((dist == d_true) & (order[:, None] < p[None, :]), axis=0)
        hits += int(np.count_nonzero(ahead < R))
    return hits / Q.shape[0]


def exact_nn(ids: np.ndarray, X: np.ndarray, Q: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Id of the exact nearest row of ``X`` for every query (lower id on ties)."""
    out = np.empty(Q.shape[0], dtype=np.int64)
    x2 = np.einsum("ij,ij->i", X, X)
    for s in range(0, Q.shape[0], chunk):
        q = Q[s:s + chunk]
        approx = x2[None, :] - 2.0 * (q @ X.T)
        q2 = np.einsum("ij,ij->i", q, q)
        slack = (1e-9 * (q2 + x2.max()) + 1e-300)[:, None]
        low = approx.min(axis=1, keepdims=True)
        near = approx <= low + slack
        best = approx.argmin(axis=1)
        # rescore near-ties with the direct difference
        for i in np.flatnonzero(np.count_nonzero(near, axis=1) > 1):
            cand = np.flatnonzero(near[i])
            d = np.square(X[cand] - q[i]).sum(axis=-1)
            best[i] = cand[np.lexsort((ids[cand], d))[0]]
        out[s:s + q.shape[0]] = ids[best]
    return out


class _RawVectors:
    """Raw vectors kept for ground truth only."""

    def __init__(self, D):
        self.ids = np.zeros(0, dtype=np.int64)
        self.X = np.zeros((0, D))

    def add(self, ids, X):
        self.ids = np.concatenate([self.ids, ids])
        self.X = np.concatenate([self.X, X])

    def remove(self, ids):
        keep = ~np.isin(self.ids, ids)
        self.ids, self.X = self.ids[keep], self.X[keep]


def _chunks(n, size):
    if size is None or size >= n:
        return [slice(0, n)]
    return [slice(s, min(s + size, n)) for s in range(0, n, size)]


def iter_protocol(groups: Sequence[np.ndarray], cfg: ProtocolConfig, windowed: bool = False):
    """Generator form of the protocols: yields one record per iteration.

    The :class:`ProtocolResult` is the generator's return value, so several
    runs can be advanced in lockstep (useful when comparing update times).
    """
    groups = [as_matrix(g, cfg.pq.D) for g in groups]
    if len(groups) < 3:
        raise ValueError(f"{len(groups)} groups are too few for the {cfg.query_policy} query policy")
    init = groups[0]
    if cfg.query_policy == FIXED:
        queries_fixed, updates = groups[-1], groups[1:-1]
    else:
        queries_fixed, updates = None, groups[1:]

    codebook = train_codebook(init, cfg.pq, cfg.train_cfg)
    store = CodeStore(cfg.pq)
    init_ids = np.arange(init.shape[0], dtype=np.int64)
    init_codes, _ = assign_batch(codebook, init)
    store.append(init_ids, init_codes)
    raw = _RawVectors(cfg.pq.D)
    raw.add(init_ids, init)
    next_id = init.shape[0]
    window = SlidingWindow(cfg.window, next_id=next_id) if windowed else None

    records = []
    inserted = 0
    for t, group in enumerate(updates, start=1):
        if cfg.query_policy == DYNAMIC:
            truth = exact_nn(raw.ids, raw.X, group)
            recall = batch_recall(store, codebook, group, truth, cfg.R)

        ids = np.arange(next_id, next_id + group.shape[0], dtype=np.int64)
        next_id += group.shape[0]
        err_sum = 0.0
        expired_ids = []
        start = time.perf_counter()
        for sl in _chunks(group.shape[0], cfg.update_batch):
            if window is None:
                if sl.stop - sl.start == 1:
                    code, report = update_streaming(codebook, group[sl.start])
                else:
                    report = update_minibatch(codebook, group[sl], cfg.budget)
                store.append(ids[sl], report.codes)
            else:
                report, expired = window.step_batch(codebook, group[sl], cfg.budget,
                                                    ids=ids[sl], delete=cfg.deletion)
                store.append(ids[sl], report.codes)
                if expired:
                    gone = [e.id for e in expired]
                    store.remove(gone)
                    expired_ids.extend(gone)
            err_sum += float(report.per_subspace_error.sum())
        elapsed = time.perf_counter() - start
        inserted += group.shape[0]

        raw.add(ids, group)
        if expired_ids:
            raw.remove(expired_ids)
        if cfg.query_policy == FIXED:
            truth = exact_nn(raw.ids, raw.X, queries_fixed)
            recall = batch_recall(store, codebook, queries_fixed, truth, cfg.R)
        record = IterationRecord(t, float(recall), elapsed, err_sum / group.shape[0], len(store))
        records.append(record)
        yield record
    return ProtocolResult(records, codebook, store, init.shape[0], inserted, window)


def _run(groups, cfg, windowed):
    gen = iter_protocol(groups, cfg, windowed)
    while True:
        try:
            next(gen)
        except StopIteration as stop:
            return stop.value


def run_dynamic_protocol(groups: Sequence[np.ndarray], cfg: ProtocolConfig) -> ProtocolResult:
    """Grow a database group by group, measuring recall and update cost.

    Group 0 trains the codebook and seeds the store. Under the dynamic query
    policy every later group is first used as queries against the store as it
    stands, then folded into the codebook under ``cfg.budget`` and appended.
    Under the fixed policy the last group is a held-out query set evaluated
    after each update. Only the update and append are timed.
    """
    return _run(groups, cfg, windowed=False)


def run_window_protocol(groups: Sequence[np.ndarray], cfg: ProtocolConfig) -> ProtocolResult:
    """Like :func:`run_dynamic_protocol` but the index tracks a sliding window.

    Points after the initial group live in a window of ``cfg.window`` points;
    expired points leave the store and, if ``cfg.deletion``, have their
    contribution removed from the codebook. The initial group never expires.
    """
    return _run(groups, cfg, windowed=True)


@dataclass
class ConvergenceResult:
    pass_errors: list[float]
    batch_error: float
    initial_error: float


def mean_quantization_error(codebook: Codebook, X: np.ndarray) -> float:
    _, errs = assign_batch(codebook, X)
    return float(errs.sum(axis=1).mean())


def run_convergence(data, passes: int, cfg: ProtocolConfig, init_size: int | None = None) -> ConvergenceResult:
    """Stream the full data set through online updates ``passes`` times.

    The online codebook starts from batch training on the first
    ``init_size`` points (default ``K``). After every pass the mean squared
    quantization error of all points against the current codebook is
    recorded. The reference is a batch codebook trained on all of ``data``
    with the same training settings.
    """
    if passes < 1:
        raise ValueError("passes must be >= 1")
    X = as_matrix(data, cfg.pq.D)
    init_size = cfg.pq.K if init_size is None else init_size
    codebook = train_codebook(X[:max(1, init_size)], cfg.pq, cfg.train_cfg)
    initial = mean_quantization_error(codebook, X)
    errors = []
    for _ in range(passes):
        for x in X:
            update_streaming(codebook, x)
        errors.append(mean_quantization_error(codebook, X))
    batch = train_codebook(X, cfg.pq, cfg.train_cfg)
    return ConvergenceResult(errors, mean_quantization_error(batch, X), initial)


def write_records_csv(records: Sequence[IterationRecord], path_or_file) -> None:
    """Write records with header ``iteration,recall,update_seconds,mean_qe,store_size``."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.writer(fh)
        writer.writerow(RECORD_FIELDS)
        for r in records:
            writer.writerow([r.iteration, repr(r.recall), repr(r.update_seconds), repr(r.mean_qe), r.store_size])
    finally:
        if own:
            fh.close()
