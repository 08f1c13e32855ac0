"""Incremental codebook maintenance: streaming, mini-batch and budgeted updates."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import Codebook, DimensionError, as_matrix, as_vector, nearest_all, nearest_subcodewords

FULL = "full"
SUBSPACE = "subspace_constrained"
SUBCODEWORD = "subcodeword_constrained"


@dataclass(frozen=True)
class UpdateBudget:
    """How much of the codebook a mini-batch update may touch.

    Only one constraint applies at a time: ``alpha`` (number of subspaces)
    for ``subspace_constrained`` and ``lam`` (fraction of the ``M*K``
    sub-codewords) for ``subcodeword_constrained``.
    """

    mode: str = FULL
    alpha: int | None = None
    lam: float | None = None

    def __post_init__(self):
        if self.mode == FULL:
            return
        if self.mode == SUBSPACE:
            if self.alpha is None or int(self.alpha) != self.alpha or self.alpha < 1:
                raise ValueError(f"alpha must be a positive integer, got {self.alpha!r}")
        elif self.mode == SUBCODEWORD:
            if self.lam is None or not 0.0 <= self.lam <= 1.0:
                raise ValueError(f"lambda must lie in [0, 1], got {self.lam!r}")
        else:
            raise ValueError(f"unknown budget mode {self.mode!r}")

    def check(self, M: int) -> None:
        """Reject a subspace budget larger than the number of subspaces."""
        if self.mode == SUBSPACE and self.alpha > M:
            raise ValueError(f"alpha must lie in [1, {M}], got {self.alpha}")

    @classmethod
    def full(cls) -> "UpdateBudget":
        return cls(FULL)

    @classmethod
    def subspaces(cls, alpha: int) -> "UpdateBudget":
        return cls(SUBSPACE, alpha=alpha)

    @classmethod
    def subcodewords(cls, lam: float) -> "UpdateBudget":
        return cls(SUBCODEWORD, lam=lam)

    @classmethod
    def parse(cls, text: str) -> "UpdateBudget":
        """Parse ``full``, ``subspace:<int>`` or ``subcode:<float>``."""
        text = text.strip()
        if text == "full":
            return cls.full()
        kind, _, value = text.partition(":")
        try:
            if kind == "subspace":
                return cls.subspaces(int(value))
            if kind == "subcode":
                return cls.subcodewords(float(value))
        except ValueError as exc:
            raise ValueError(f"bad budget {text!r}: {exc}") from None
        raise ValueError(f"bad budget {text!r}; expected full, subspace:A or subcode:L")

    def __str__(self):
        if self.mode == SUBSPACE:
            return f"subspace:{self.alpha}"
        if self.mode == SUBCODEWORD:
            return f"subcode:{self.lam}"
        return "full"


@dataclass
class BatchUpdateReport:
    """Outcome of one update.

    Attributes:
        codes: ``(B, M)`` codes assigned against the pre-update codebook.
        updated: ``(M, K)`` mask of cells whose counter and codeword changed.
        per_subspace_error: ``(M,)`` summed squared error over the batch.
        per_cell_error: ``(M, K)`` summed squared error per cell.
        cell_counts: ``(M, K)`` number of batch points assigned to each cell.
        elapsed: Wall time of the update in seconds.
    """

    codes: np.ndarray
    updated: np.ndarray
    per_subspace_error: np.ndarray
    per_cell_error: np.ndarray
    cell_counts: np.ndarray
    elapsed: float = 0.0

    @property
    def touched_cells(self) -> set[tuple[int, int]]:
        return {(int(m), int(k)) for m, k in zip(*np.nonzero(self.updated))}

    @property
    def updated_subspaces(self) -> np.ndarray:
        return np.flatnonzero(self.updated.any(axis=1))

    @property
    def mean_error(self) -> float:
        B = self.codes.shape[0]
        return float(self.per_subspace_error.sum() / B) if B else 0.0


def assign_nearest(x_m, codebook: Codebook, m: int) -> tuple[int, float]:
    """Nearest sub-codeword of subspace ``m`` to ``x_m`` (lowest index on ties)."""
    cfg = codebook.config
    if not 0 <= m < cfg.M:
        raise IndexError(f"subspace index {m} out of range [0, {cfg.M})")
    sub = np.asarray(x_m, dtype=np.float64)
    if sub.shape != (cfg.d_sub,):
        raise DimensionError(f"sub-vector must have length {cfg.d_sub}, got shape {sub.shape}")
    k, err = nearest_subcodewords(sub[None, :], codebook.codewords[m])
    return int(k[0]), float(err[0])


def assign_batch(codebook: Codebook, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Codes ``(n, M)`` and per-subspace errors ``(n, M)`` for a validated batch."""
    cfg = codebook.config
    return nearest_all(X.reshape(X.shape[0], cfg.M, cfg.d_sub), codebook.codewords)

def update_streaming(codebook: Codebook, x) -> tuple[np.ndarray, BatchUpdateReport]:
    """Fold one vector into the codebook (sequential k-means step per subspace).

    For each subspace the nearest sub-codeword ``k`` is found against the
    current codebook, its counter is incremented and it moves towards the
    sub-vector by ``1 / n`` of the difference.
    """
    start = time.perf_counter()
    cfg = codebook.config
    sub = as_vector(x, cfg.D).reshape(cfg.M, cfg.d_sub)
    Z = codebook.codewords
    dist = np.square(Z - sub[:, None, :]).sum(axis=-1)
    code = dist.argmin(axis=1)
    rows = np.arange(cfg.M)
    errs = dist[rows, code]
    codebook.counts[rows, code] += np.uint64(1)
    n = codebook.counts[rows, code].astype(np.float64)
    z = Z[rows, code]
    Z[rows, code] = z + (sub - z) / n[:, None]
    updated = np.zeros((cfg.M, cfg.K), dtype=bool)
    updated[np.arange(cfg.M), code] = True
    cell_err = np.zeros((cfg.M, cfg.K))
    cell_err[np.arange(cfg.M), code] = errs
    report = BatchUpdateReport(
        codes=code[None, :],
        updated=updated,
        per_subspace_error=errs,
        per_cell_error=cell_err,
        cell_counts=updated.astype(np.int64),
        elapsed=time.perf_counter() - start,
    )
    return code, report


def select_subspaces(errors, alpha: int) -> np.ndarray:
    """Indices of the ``alpha`` subspaces with the largest summed error.

    Returned in rank order; equal errors rank the lower index first.
    """
    e = np.asarray(errors, dtype=np.float64)
    if not 1 <= alpha <= e.shape[0]:
        raise ValueError(f"alpha must lie in [1, {e.shape[0]}], got {alpha}")
    return np.argsort(-e, kind="stable")[:alpha]


def subcodeword_budget(lam: float, M: int, K: int) -> int:
    """floor(lam * M * K), but at least 1 whenever ``lam > 0``."""
    if lam <= 0:
        return 0
    # the epsilon absorbs representation error such as 0.29 * 100 = 28.999...
    return max(1, math.floor(lam * M * K + 1e-9))


def _top_cells(cell_error: np.ndarray, touched: np.ndarray, budget: int) -> np.ndarray:
    flat_touched = np.flatnonzero(touched.ravel())
    if budget <= 0 or flat_touched.size == 0:
        return np.zeros(touched.shape, dtype=bool)
    errs = cell_error.ravel()[flat_touched]
    # flat index order is lexicographic (m, k); stable sort keeps it for ties
    chosen = flat_touched[np.argsort(-errs, kind="stable")[:budget]]
    mask = np.zeros(touched.size, dtype=bool)
    mask[chosen] = True
    return mask.reshape(touched.shape)


def select_subcodewords(cell_error: Mapping[tuple[int, int], float], lam: float,
                        M: int, K: int) -> list[tuple[int, int]]:
    """Cells with the highest summed error under a ``lam * M * K`` budget.

    Args:
        cell_error: Summed error for each touched cell ``(m, k)``; cells absent
            from the mapping received no batch points and are never chosen.
        lam: Fraction of all ``M * K`` cells that may be updated.

    Returns:
        Selected cells ranked by error, ties in lexicographic ``(m, k)`` order.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    errs = np.zeros((M, K))
    touched = np.zeros((M, K), dtype=bool)
    for (m, k), e in cell_error.items():
        errs[m, k] = e
        touched[m, k] = True
    mask = _top_cells(errs, touched, subcodeword_budget(lam, M, K))
    ranked = sorted(zip(*np.nonzero(mask)), key=lambda mk: (-errs[mk], mk[0], mk[1]))
    return [(int(m), int(k)) for m, k in ranked]


def _selection_mask(budget: UpdateBudget, subspace_error, cell_error, touched) -> np.ndarray:
    M, K = touched.shape
    if budget.mode == SUBSPACE:
        mask = np.zeros((M, K), dtype=bool)
        mask[select_subspaces(subspace_error, budget.alpha)] = True
        return mask & touched
    if budget.mode == SUBCODEWORD:
        return _top_cells(cell_error, touched, subcodeword_budget(budget.lam, M, K))
    return touched.copy()


def apply_batch(codebook: Codebook, subs: np.ndarray, codes: np.ndarray, mask: np.ndarray) -> None:
    """Add the batch contribution of every cell in ``mask`` to the codebook.

    ``n += c`` then ``z += sum(x - z_old) / n`` for each selected cell.
    """
    K = codebook.config.K
    for m in np.flatnonzero(mask.any(axis=1)):
        k = codes[:, m]
        sel = mask[m, k]
        if not sel.all():
            k = k[sel]
            sub = subs[sel, m, :]
        else:
            sub = subs[:, m, :]
        Z = codebook.codewords[m]
        sums = np.zeros_like(Z)
        np.add.at(sums, k, sub - Z[k])
        counts = np.bincount(k, minlength=K).astype(np.uint64)
        cells = np.flatnonzero(counts)
        codebook.counts[m, cells] += counts[cells]
        n = codebook.counts[m, cells].astype(np.float64)
        Z[cells] = Z[cells] + sums[cells] / n[:, None]


def update_minibatch(codebook: Codebook, X, budget: UpdateBudget = UpdateBudget()) -> BatchUpdateReport:
    """Fold a mini-batch into the codebook under an update budget.

    All points are assigned against the pre-update codebook. Per-cell counts
    and summed errors drive the budget selection; each selected cell gets
    ``n += c`` and ``z += sum_i (x_i - z_old) / n``. Unselected cells keep
    their counter and codeword. Codes are returned for every point.
    """
    start = time.perf_counter()
    cfg = codebook.config
    budget.check(cfg.M)
    A = as_matrix(X, cfg.D)
    B = A.shape[0]
    if B == 0:
        zeros = np.zeros((cfg.M, cfg.K))
        return BatchUpdateReport(
            codes=np.zeros((0, cfg.M), dtype=np.int64),
            updated=np.zeros((cfg.M, cfg.K), dtype=bool),
            per_subspace_error=np.zeros(cfg.M),
            per_cell_error=zeros,
            cell_counts=np.zeros((cfg.M, cfg.K), dtype=np.int64),
        )
    codes, errs = assign_batch(codebook, A)
    flat = codes + (np.arange(cfg.M) * cfg.K)[None, :]
    size = cfg.M * cfg.K
    cell_counts = np.bincount(flat.ravel(), minlength=size).reshape(cfg.M, cfg.K)
    cell_err = np.bincount(flat.ravel(), weights=errs.ravel(), minlength=size).reshape(cfg.M, cfg.K)
    subspace_err = errs.sum(axis=0)
    touched = cell_counts > 0
    mask = _selection_mask(budget, subspace_err, cell_err, touched)
    apply_batch(codebook, A.reshape(B, cfg.M, cfg.d_sub), codes, mask)
    return BatchUpdateReport(
        codes=codes,
        updated=mask,
        per_subspace_error=subspace_err,
        per_cell_error=cell_err,
        cell_counts=cell_counts,
        elapsed=time.perf_counter() - start,
    )
