"""Dataset readers and codebook / code-store persistence.

Codebook files are line-oriented text::

    onlinepq-codebook
    format_version 1
    D <int>
    M <int>
    K <int>
    cell <m> <k> <count> <v_1> ... <v_{D/M}>     (M*K lines, %.17g floats)

Store files are little-endian binary: ``b"OPQS"``, version u32, D u32,
M u32, K u32, entry count u64, then per entry an id u64 followed by the
packed code (``M * index_bytes(K)`` bytes).
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Codebook, InvariantError, OnlinePQError, PQConfig
from .search import CodeStore, index_bytes, pack_codes, unpack_codes

CODEBOOK_MAGIC = "onlinepq-codebook"
CODEBOOK_VERSION = 1
STORE_MAGIC = b"OPQS"
STORE_VERSION = 1
STORE_HEADER = struct.Struct("<4sIIIIQ")


class FormatError(OnlinePQError, ValueError):
    """A file could not be parsed or describes an invalid object."""


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to a temporary sibling of ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- vectors -----------------------------------------------------------------

def read_fvecs(path, limit: int | None = None) -> np.ndarray:
    """Read an ``.fvecs`` file into a float64 array of shape ``(n, d)``."""
    raw = Path(path).read_bytes()
    if not raw:
        return np.zeros((0, 0))
    if len(raw) < 4:
        raise FormatError("truncated record header at byte offset 0")
    d = struct.unpack_from("<i", raw, 0)[0]
    if d <= 0:
        raise FormatError(f"non-positive dimension {d} at byte offset 0")
    rec = 4 * (d + 1)
    n_full = len(raw) // rec
    if limit is not None:
        n_full = min(n_full, limit)
    body = np.frombuffer(raw, dtype="<i4", count=n_full * (d + 1)).reshape(n_full, d + 1)
    mismatch = np.flatnonzero(body[:, 0] != d)
    if mismatch.size:
        i = int(mismatch[0])
        raise FormatError(f"dimension {int(body[i, 0])} != {d} at byte offset {i * rec}")
    if limit is None and len(raw) % rec:
        bad = n_full * rec
        if len(raw) - bad >= 4:
            d2 = struct.unpack_from("<i", raw, bad)[0]
            if d2 != d:
                raise FormatError(f"dimension {d2} != {d} at byte offset {bad}")
        raise FormatError(f"truncated record at byte offset {bad}")
    return body[:, 1:].copy().view("<f4").astype(np.float64)


def write_fvecs(path, X) -> None:
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    out = np.empty((n, d + 1), dtype="<i4")
    out[:, 0] = d
    out[:, 1:] = X.astype("<f4").view("<i4")
    Path(path).write_bytes(out.tobytes())


def read_csv(path, limit: int | None = None, label: bool = False):
    """Read comma-separated vectors, one per line; blank lines are skipped.

    Args:
        label: Treat the last column as an integer class label.

    Returns:
        ``(X, labels)`` where ``labels`` is ``None`` unless ``label`` is set.
    """
    rows, labels = [], []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if limit is not None and len(rows) >= limit:
                break
            fields = line.split(",")
            try:
                if label:
                    labels.append(int(fields[-1]))
                    fields = fields[:-1]
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {exc}") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise FormatError(f"line {lineno}: expected {width} values, got {len(values)}")
            rows.append(values)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), width or 0)
    return X, (np.array(labels, dtype=np.int64) if label else None)


def write_csv(path, X, labels=None) -> None:
    X = np.asarray(X, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(X):
            fields = [repr(float(v)) for v in row]
            if labels is not None:
                fields.append(str(int(labels[i])))
            fh.write(",".join(fields) + "\n")


# -- streams -----------------------------------------------------------------

AS_IS = "as_is"
HALF_OVERLAP = "by_label_halfoverlap"
DISJOINT = "by_label_disjoint"


def _class_blocks(labels: np.ndarray, n_blocks: int, rng) -> list[np.ndarray]:
    classes = np.unique(labels)
    if classes.size < n_blocks:
        raise ValueError(f"{classes.size} classes cannot fill {n_blocks} class blocks")
    members = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
    sizes = np.array([m.size for m in members])
    # contiguous class ranges with roughly equal point counts
    cuts = np.searchsorted(np.cumsum(sizes), np.linspace(0, sizes.sum(), n_blocks + 1)[1:-1]) + 1
    bounds = [0]
    for i, c in enumerate(cuts.tolist(), start=1):
        # every block keeps at least one class
        bounds.append(min(max(c, bounds[-1] + 1), classes.size - (n_blocks - i)))
    bounds.append(classes.size)
    return [np.concatenate(members[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


def stream_groups(n: int, groups: int, order: str = AS_IS, labels=None, seed: int = 0) -> list[np.ndarray]:
    """Split ``n`` items into ``groups`` index arrays in stream order.

    ``as_is`` keeps file order. ``by_label_disjoint`` gives each group its own
    contiguous run of classes. ``by_label_halfoverlap`` orders by class and
    places every group boundary in the middle of a class, so each pair of
    consecutive groups splits one class's points between them.
    """
    if groups < 1:
        raise ValueError("groups must be >= 1")
    if order == AS_IS:
        return [g for g in np.array_split(np.arange(n), groups)]
    if labels is None:
        raise ValueError(f"order {order!r} needs labels")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    if order == DISJOINT:
        return _class_blocks(labels, groups, rng)
    if order == HALF_OVERLAP:
        if groups < 2:
            raise ValueError("half-overlap ordering needs at least 2 groups")
        classes = np.unique(labels)
        if classes.size < groups - 1:
            raise ValueError(f"{classes.size} classes cannot supply {groups - 1} shared boundaries")
        classes = rng.permutation(classes)
        members = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
        order_idx = np.concatenate(members)
        sizes = np.array([m.size for m in members])
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        mids = starts + sizes // 2
        # boundary i sits in the middle of one class, chosen near i*n/groups
        picks = []
        for i in range(1, groups):
            c = int(np.argmin(np.abs(mids - i * labels.size / groups)))
            lo = picks[-1] + 1 if picks else 0
            picks.append(min(max(c, lo), classes.size - (groups - i)))
        bounds = [0] + [int(mids[c]) for c in picks] + [labels.size]
        return [order_idx[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    raise ValueError(f"unknown stream order {order!r}")


@dataclass
class DatasetSource:
    """Where stream vectors come from and how they are ordered."""

    path: str
    format: str = "fvecs"
    limit: int | None = None
    order: str = AS_IS
    labels_path: str | None = None

    def load(self):
        """Return ``(X, labels)``; labels come from the csv's last column or ``labels_path``."""
        labels = None
        if self.format == "fvecs":
            X = read_fvecs(self.path, self.limit)
        elif self.format == "csv":
            X, labels = read_csv(self.path, self.limit, label=self.order != AS_IS and self.labels_path is None)
        else:
            raise ValueError(f"unknown format {self.format!r}")
        if self.labels_path is not None:
            labels = np.loadtxt(self.labels_path, dtype=np.int64, ndmin=1)[: X.shape[0]]
        return X, labels


# -- codebook ----------------------------------------------------------------

def dumps_codebook(codebook: Codebook) -> str:
    cfg = codebook.config
    lines = [CODEBOOK_MAGIC, f"format_version {CODEBOOK_VERSION}", f"D {cfg.D}", f"M {cfg.M}", f"K {cfg.K}"]
    for m in range(cfg.M):
        for k in range(cfg.K):
            vals = " ".join("%.17g" % v for v in codebook.codewords[m, k])
            lines.append(f"cell {m} {k} {int(codebook.counts[m, k])} {vals}")
    return "\n".join(lines) + "\n"


def loads_codebook(text: str) -> Codebook:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != CODEBOOK_MAGIC:
        raise FormatError("not a codebook file (missing header)")
    header = {}
    for ln in lines[1:5]:
        key, _, value = ln.partition(" ")
        header[key] = value.strip()
    try:
        version = int(header["format_version"])
        D, M, K = int(header["D"]), int(header["M"]), int(header["K"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad codebook header: {exc}") from None
    if version != CODEBOOK_VERSION:
        raise FormatError(f"unsupported codebook format_version {version}")
    try:
        cfg = PQConfig(D, M, K)
    except InvariantError as exc:
        raise FormatError(f"invalid configuration: {exc}") from None
    cells = lines[5:]
    if len(cells) != M * K:
        raise FormatError(f"cell count {len(cells)} != M*K = {M * K}")
    codewords = np.empty((M, K, cfg.d_sub))
    counts = np.zeros((M, K), dtype=np.uint64)
    seen = np.zeros((M, K), dtype=bool)
    for i, ln in enumerate(cells, start=6):
        parts = ln.split()
        if parts[0] != "cell" or len(parts) != 4 + cfg.d_sub:
            raise FormatError(f"line {i}: cell must hold m, k, count and D/M={cfg.d_sub} values")
        try:
            m, k, n = int(parts[1]), int(parts[2]), int(parts[3])
            vals = [float(v) for v in parts[4:]]
        except ValueError as exc:
            raise FormatError(f"line {i}: {exc}") from None
        if not (0 <= m < M and 0 <= k < K):
            raise FormatError(f"line {i}: cell ({m}, {k}) outside M x K")
        if seen[m, k]:
            raise FormatError(f"line {i}: duplicate cell ({m}, {k})")
        if n < 0:
            raise FormatError(f"line {i}: counter n[m][k] must be non-negative")
        if not np.all(np.isfinite(vals)):
            raise FormatError(f"line {i}: sub-codewords must be finite")
        seen[m, k] = True
        counts[m, k] = n
        codewords[m, k] = vals
    return Codebook(cfg, codewords, counts)


def save_codebook(codebook: Codebook, path) -> None:
    atomic_write(path, dumps_codebook(codebook).encode("ascii"))


def load_codebook(path) -> Codebook:
    return loads_codebook(Path(path).read_text(encoding="ascii"))


# -- code store --------------------------------------------------------------

def dumps_store(store: CodeStore) -> bytes:
    cfg = store.config
    n = len(store)
    header = STORE_HEADER.pack(STORE_MAGIC, STORE_VERSION, cfg.D, cfg.M, cfg.K, n)
    entry = np.dtype([("id", "<u8"), ("code", np.uint8, (store.bytes_per_code,))])
    body = np.zeros(n, dtype=entry)
    body["id"] = store.ids
    if n:
        body["code"] = np.frombuffer(pack_codes(store.codes, cfg.K), dtype=np.uint8).reshape(n, -1)
    return header + body.tobytes()


def loads_store(data: bytes) -> CodeStore:
    if len(data) < STORE_HEADER.size:
        raise FormatError("truncated store header")
    magic, version, D, M, K, n = STORE_HEADER.unpack_from(data, 0)
    if magic != STORE_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != STORE_VERSION:
        raise FormatError(f"unsupported store format_version {version}")
    try:
        cfg = PQConfig(D, M, K)
    except InvariantError as exc:
        raise FormatError(f"invalid configuration: {exc}") from None
    width = M * index_bytes(K)
    expected = STORE_HEADER.size + n * (8 + width)
    if len(data) != expected:
        raise FormatError(f"store size {len(data)} != header + {n} entries = {expected}")
    entry = np.dtype([("id", "<u8"), ("code", np.uint8, (width,))])
    body = np.frombuffer(data, dtype=entry, offset=STORE_HEADER.size, count=n)
    try:
        codes = unpack_codes(body["code"].tobytes(), M, K)
    except InvariantError as exc:
        raise FormatError(str(exc)) from None
    store = CodeStore(cfg)
    ids = body["id"]
    if n and ids.max() > np.iinfo(np.int64).max:
        raise FormatError("id exceeds the signed 64-bit range")
    try:
        store.append(ids.astype(np.int64), codes)
    except InvariantError as exc:
        raise FormatError(str(exc)) from None
    return store


def save_store(store: CodeStore, path) -> None:
    atomic_write(path, dumps_store(store))


def load_store(path) -> CodeStore:
    return loads_store(Path(path).read_bytes())
