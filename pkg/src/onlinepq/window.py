"""Sliding-window index: newest points add their contribution, expired ones remove it."""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import Codebook, InvariantError, OnlinePQError, as_matrix, as_vector, nearest_subcodewords
from .online import BatchUpdateReport, UpdateBudget, update_minibatch, update_streaming


class CapacityError(OnlinePQError):
    """A bare insert was attempted on a full window."""


class ProtocolError(OnlinePQError):
    """Entries were deleted out of FIFO order or ids were not increasing."""


@dataclass
class WindowEntry:
    id: int
    vector: np.ndarray
    code: np.ndarray
    # subspaces whose counter/codeword actually received this point
    applied: np.ndarray


class SlidingWindow:
    """FIFO of the ``capacity`` most recent points and their insertion-time codes.

    Args:
        capacity: Window length ``L``; ``None`` means unbounded, in which case
            nothing ever expires and the window behaves like plain online PQ.
        reassign_on_delete: Re-determine the nearest sub-codeword of an expired
            point at deletion time instead of using its stored code. This can
            underflow a counter after the codebook drifts.
        next_id: Id handed to the first auto-numbered insertion.
    """

    def __init__(self, capacity: int | None, reassign_on_delete: bool = False, next_id: int = 0):
        if capacity is not None and capacity < 1:
            raise ValueError(f"window capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.reassign_on_delete = reassign_on_delete
        self.entries: deque[WindowEntry] = deque()
        self.next_id = next_id

    def __len__(self):
        return len(self.entries)

    @property
    def full(self) -> bool:
        return self.capacity is not None and len(self.entries) >= self.capacity

    def ids(self) -> list[int]:
        return [e.id for e in self.entries]

    def _take_id(self, id_):
        if id_ is None:
            id_ = self.next_id
        id_ = int(id_)
        if self.entries and id_ <= self.entries[-1].id:
            raise ProtocolError(f"id {id_} is not greater than the newest id {self.entries[-1].id}")
        self.next_id = id_ + 1
        return id_

    def _push(self, codebook: Codebook, x, id_) -> np.ndarray:
        v = as_vector(x, codebook.config.D)
        id_ = self._take_id(id_)
        code, _ = update_streaming(codebook, v)
        applied = np.ones(codebook.config.M, dtype=bool)
        self.entries.append(WindowEntry(id_, v, code, applied))
        return code

    def insert(self, codebook: Codebook, x, id: int | None = None) -> np.ndarray:
        """Add ``x`` to the window and the codebook. Raises on a full window."""
        if self.full:
            raise CapacityError(f"window is full (L={self.capacity}); use step()")
        return self._push(codebook, x, id)

    def delete(self, codebook: Codebook, entry: WindowEntry) -> None:
        """Remove the oldest entry and subtract its contribution from the codebook."""
        if not self.entries or self.entries[0] is not entry:
            raise ProtocolError("only the oldest window entry can be deleted")
        self.entries.popleft()
        self._downdate(codebook, [entry])

    def delete_oldest(self, codebook: Codebook) -> WindowEntry:
        entry = self.entries[0]
        self.delete(codebook, entry)
        return entry

    def step(self, codebook: Codebook, x, id: int | None = None) -> tuple[np.ndarray, int | None]:
        """Insert ``x``; if the window was already full, then expire the oldest point."""
        was_full = self.full
        code = self._push(codebook, x, id)
        expired = None
        if was_full:
            expired = self.delete_oldest(codebook).id
        return code, expired

    def step_batch(self, codebook: Codebook, X, budget: UpdateBudget = UpdateBudget(),
                   ids=None, delete: bool = True) -> tuple[BatchUpdateReport, list[WindowEntry]]:
        """Mini-batch version of :meth:`step`.

        The batch is inserted with :func:`update_minibatch`, then the oldest
        entries are expired until the window fits its capacity. With
        ``delete=False`` expired entries leave the window but the codebook
        keeps their contribution.

        Returns:
            The insertion report and the expired entries, oldest first.
        """
        start = time.perf_counter()
        A = as_matrix(X, codebook.config.D)
        if ids is None:
            ids = range(self.next_id, self.next_id + A.shape[0])
        report = update_minibatch(codebook, A, budget)
        applied = report.updated[np.arange(codebook.config.M)[None, :], report.codes]
        for i, id_ in enumerate(ids):
            id_ = self._take_id(id_)
            self.entries.append(WindowEntry(id_, A[i], report.codes[i], applied[i]))
        expired = []
        if self.capacity is not None:
            while len(self.entries) > self.capacity:
                expired.append(self.entries.popleft())
        if delete and expired:
            self._downdate(codebook, expired)
        report.elapsed = time.perf_counter() - start
        return report, expired

    def _downdate(self, codebook: Codebook, entries: list[WindowEntry]) -> None:
        # n -= c, then z -= sum(x - z_cur) / n; a cell reaching n == 0 keeps its codeword
        cfg = codebook.config
        X = np.stack([e.vector for e in entries]).reshape(len(entries), cfg.M, cfg.d_sub)
        codes = np.stack([e.code for e in entries])
        applied = np.stack([e.applied for e in entries])
        plan = []
        for m in range(cfg.M):
            rows = np.flatnonzero(applied[:, m])
            if rows.size == 0:
                continue
            sub = X[rows, m, :]
            if self.reassign_on_delete:
                k, _ = nearest_subcodewords(sub, codebook.codewords[m])
            else:
                k = codes[rows, m]
            counts = np.bincount(k, minlength=cfg.K).astype(np.uint64)
            short = np.flatnonzero(codebook.counts[m] < counts)
            if short.size:
                raise InvariantError(f"counter underflow at cell ({m}, {short[0]})")
            plan.append((m, sub, k, counts))
        for m, sub, k, counts in plan:
            Z = codebook.codewords[m]
            sums = np.zeros_like(Z)
            np.add.at(sums, k, sub - Z[k])
            cells = np.flatnonzero(counts)
            codebook.counts[m, cells] -= counts[cells]
            live = cells[codebook.counts[m, cells] > 0]
            n = codebook.counts[m, live].astype(np.float64)
            Z[live] = Z[live] - sums[live] / n[:, None]

def window_insert(w: SlidingWindow, codebook: Codebook, x, id: int | None = None) -> np.ndarray:
    return w.insert(codebook, x, id)


def window_delete(w: SlidingWindow, codebook: Codebook, entry: WindowEntry) -> None:
    w.delete(codebook, entry)


def step(w: SlidingWindow, codebook: Codebook, x_new, id: int | None = None):
    return w.step(codebook, x_new, id)
