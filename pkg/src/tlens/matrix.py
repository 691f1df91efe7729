"""Hypersparse traffic matrices and their aggregate summaries.

A TrafficMatrix tallies the packets of one window into (src, dst) ->
count entries.  Storage is three parallel arrays sorted by (src, dst),
so memory scales with the number of distinct links, never with the id
space; ids up to 2**128 are held in object arrays when they outgrow
uint64.  The sum of all counts always equals the window's n_valid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from tlens.ingest import Window
from tlens.permute import KeyedPermutation

AGGREGATE_FIELDS = (
    "valid_packets",
    "unique_links",
    "max_link_packets",
    "unique_sources",
    "max_source_packets",
    "max_source_fanout",
    "unique_destinations",
    "max_dest_packets",
    "max_dest_fanin",
)


@dataclass(frozen=True)
class NetworkAggregates:
    """The scalar summary catalog of one traffic matrix.

    valid_packets is the total count; the unique_* fields count distinct
    links, sources and destinations; the max_* fields give the heaviest
    link, the busiest source (packets and fan-out) and the busiest
    destination (packets and fan-in).
    """

    valid_packets: int
    unique_links: int
    max_link_packets: int
    unique_sources: int
    max_source_packets: int
    max_source_fanout: int
    unique_destinations: int
    max_dest_packets: int
    max_dest_fanin: int

    def as_dict(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in AGGREGATE_FIELDS}


@dataclass(frozen=True)
class DegreeVectors:
    """Per-node and per-link count distributions of one matrix.

    source_packets and dest_packets map node id -> packets sent or
    received; source_fanout and dest_fanin map node id -> distinct peer
    count; link_packets maps (src, dst) -> packets.
    """

    source_packets: dict[int, int]
    source_fanout: dict[int, int]
    dest_packets: dict[int, int]
    dest_fanin: dict[int, int]
    link_packets: dict[tuple[int, int], int]


class RangeMask:
    """A set of node ids selecting a subrange of the address space."""

    __slots__ = ("ids",)

    def __init__(self, ids: Iterable[int]):
        self.ids = frozenset(int(i) for i in ids)
        if any(i < 0 for i in self.ids):
            raise ValueError("mask ids must be non-negative")

    @classmethod
    def from_intervals(cls, intervals: Iterable[tuple[int, int]]) -> "RangeMask":
        ids: list[int] = []
        for lo, hi in intervals:
            if lo > hi:
                raise ValueError(f"empty interval [{lo}, {hi}]")
            ids.extend(range(lo, hi + 1))
        return cls(ids)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, value: int) -> bool:
        return value in self.ids


def _as_ids(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype == object or arr.dtype.kind not in "ui":
        lst = [int(v) for v in (values.tolist() if isinstance(values, np.ndarray) else values)]
        if any(v < 0 for v in lst):
            raise ValueError("ids must be non-negative")
        try:
            return np.array(lst, dtype=np.uint64)
        except OverflowError:
            out = np.empty(len(lst), dtype=object)
            out[:] = lst
            return out
    if arr.dtype.kind == "i":
        if len(arr) and int(arr.min()) < 0:
            raise ValueError("ids must be non-negative")
        return arr.astype(np.uint64)
    return arr.astype(np.uint64, copy=False)


def _member_mask(ids: np.ndarray, members: frozenset[int]) -> np.ndarray:
    if ids.dtype == object:
        return np.fromiter((int(v) in members for v in ids), dtype=bool, count=len(ids))
    if not members:
        return np.zeros(len(ids), dtype=bool)
    table = np.fromiter(members, dtype=np.uint64, count=len(members))
    return np.isin(ids, table)


def _group_pairs(
    src: np.ndarray, dst: np.ndarray, counts: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sort pairs by (src, dst) and sum counts of duplicates."""
    n = len(src)
    if n == 0:
        return src[:0], dst[:0], np.zeros(0, dtype=np.int64)
    if (
        src.dtype == np.uint64
        and dst.dtype == np.uint64
        and int(src.max()) < (1 << 32)
        and int(dst.max()) < (1 << 32)
    ):
        # Pack both ids into one u64 key: a single sort beats lexsort.
        packed = (src << np.uint64(32)) | dst
        order = np.argsort(packed, kind="stable")
        key = packed[order]
        boundary = np.empty(len(key), dtype=bool)
        boundary[0] = True
        np.not_equal(key[1:], key[:-1], out=boundary[1:])
    else:
        order = np.lexsort((dst, src))
        s, d = src[order], dst[order]
        boundary = np.empty(n, dtype=bool)
        boundary[0] = True
        if src.dtype == object:
            boundary[1:] = [
                s[i] != s[i - 1] or d[i] != d[i - 1] for i in range(1, n)
            ]
        else:
            boundary[1:] = (s[1:] != s[:-1]) | (d[1:] != d[:-1])
    starts = np.flatnonzero(boundary)
    out_src = src[order][starts]
    out_dst = dst[order][starts]
    if counts is None:
        edges = np.append(starts, n)
        out_counts = np.diff(edges).astype(np.int64)
    else:
        out_counts = np.add.reduceat(counts[order].astype(np.int64), starts)
    return out_src, out_dst, out_counts


class TrafficMatrix:
    """Sparse packet tallies of one window, keyed by (src, dst).

    Entries are stored sorted by source then destination.  ``n_valid``
    is the window contract the matrix was built under and always equals
    the sum of counts; subrange views keep their parent's contract in
    ``parent_n_valid``.
    """

    __slots__ = ("src", "dst", "count", "n_valid", "window_index", "time_span", "parent_n_valid")

    def __init__(self, src, dst, count, n_valid, window_index, time_span, parent_n_valid):
        for arr in (src, dst, count):
            arr.flags.writeable = False
        self.src = src
        self.dst = dst
        self.count = count
        self.n_valid = n_valid
        self.window_index = window_index
        self.time_span = time_span
        self.parent_n_valid = parent_n_valid

    @classmethod
    def from_arrays(
        cls,
        src,
        dst,
        counts=None,
        *,
        n_valid: int | None = None,
        window_index: int = 0,
        time_span: tuple[int, int] = (0, 0),
        parent_n_valid: int | None = None,
    ) -> "TrafficMatrix":
        """Build from parallel pair columns; counts default to one per pair."""
        src = _as_ids(src)
        dst = _as_ids(dst)
        if len(src) != len(dst):
            raise ValueError("src and dst lengths differ")
        if counts is not None:
            counts = np.asarray(counts, dtype=np.int64)
            if len(counts) != len(src):
                raise ValueError("counts length differs from pairs")
            if len(counts) and int(counts.min()) < 1:
                raise ValueError("counts must be positive")
        g_src, g_dst, g_count = _group_pairs(src, dst, counts)
        total = int(g_count.sum())
        if n_valid is None:
            n_valid = total
        elif n_valid != total:
            raise ValueError(f"count total {total} does not match n_valid {n_valid}")
        return cls(g_src, g_dst, g_count, n_valid, window_index, tuple(time_span), parent_n_valid)

    @classmethod
    def from_entries(
        cls,
        entries: Mapping[tuple[int, int], int],
        *,
        window_index: int = 0,
        time_span: tuple[int, int] = (0, 0),
    ) -> "TrafficMatrix":
        """Build from a {(src, dst): count} mapping."""
        pairs = sorted(entries.items())
        src = [s for (s, _), _ in pairs]
        dst = [d for (_, d), _ in pairs]
        cnt = [c for _, c in pairs]
        return cls.from_arrays(src, dst, cnt, window_index=window_index, time_span=time_span)

    @property
    def nnz(self) -> int:
        return len(self.count)

    @property
    def total(self) -> int:
        return int(self.count.sum())

    def entries(self) -> Iterator[tuple[tuple[int, int], int]]:
        for s, d, c in zip(self.src.tolist(), self.dst.tolist(), self.count.tolist()):
            yield (int(s), int(d)), int(c)

    def to_dict(self) -> dict[tuple[int, int], int]:
        return dict(self.entries())

    def row_ids(self) -> np.ndarray:
        """Distinct source ids, ascending."""
        if self.nnz == 0:
            return self.src[:0]
        boundary = self._row_boundary()
        return self.src[np.flatnonzero(boundary)]

    def _row_boundary(self) -> np.ndarray:
        boundary = np.empty(self.nnz, dtype=bool)
        boundary[0] = True
        if self.src.dtype == object:
            s = self.src
            boundary[1:] = [s[i] != s[i - 1] for i in range(1, self.nnz)]
        else:
            boundary[1:] = self.src[1:] != self.src[:-1]
        return boundary

    def row_packet_counts(self) -> np.ndarray:
        """Packets sent per distinct source, aligned with row_ids()."""
        if self.nnz == 0:
            return np.zeros(0, dtype=np.int64)
        starts = np.flatnonzero(self._row_boundary())
        return np.add.reduceat(self.count, starts)

    def row_fanout_counts(self) -> np.ndarray:
        """Distinct destinations per source, aligned with row_ids()."""
        if self.nnz == 0:
            return np.zeros(0, dtype=np.int64)
        edges = np.append(np.flatnonzero(self._row_boundary()), self.nnz)
        return np.diff(edges).astype(np.int64)

    def _col_order(self) -> np.ndarray:
        return np.argsort(self.dst, kind="stable")

    def col_ids(self) -> np.ndarray:
        """Distinct destination ids, ascending."""
        if self.nnz == 0:
            return self.dst[:0]
        d = self.dst[self._col_order()]
        boundary = self._boundary_of(d)
        return d[np.flatnonzero(boundary)]

    @staticmethod
    def _boundary_of(sorted_ids: np.ndarray) -> np.ndarray:
        boundary = np.empty(len(sorted_ids), dtype=bool)
        boundary[0] = True
        if sorted_ids.dtype == object:
            boundary[1:] = [
                sorted_ids[i] != sorted_ids[i - 1] for i in range(1, len(sorted_ids))
            ]
        else:
            boundary[1:] = sorted_ids[1:] != sorted_ids[:-1]
        return boundary

    def col_packet_counts(self) -> np.ndarray:
        """Packets received per distinct destination, aligned with col_ids()."""
        if self.nnz == 0:
            return np.zeros(0, dtype=np.int64)
        order = self._col_order()
        starts = np.flatnonzero(self._boundary_of(self.dst[order]))
        return np.add.reduceat(self.count[order], starts)

    def col_fanin_counts(self) -> np.ndarray:
        """Distinct sources per destination, aligned with col_ids()."""
        if self.nnz == 0:
            return np.zeros(0, dtype=np.int64)
        order = self._col_order()
        starts = np.flatnonzero(self._boundary_of(self.dst[order]))
        edges = np.append(starts, self.nnz)
        return np.diff(edges).astype(np.int64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrafficMatrix):
            return NotImplemented
        return (
            self.n_valid == other.n_valid
            and self.nnz == other.nnz
            and all(a == b for a, b in zip(self.src.tolist(), other.src.tolist()))
            and all(a == b for a, b in zip(self.dst.tolist(), other.dst.tolist()))
            and bool(np.array_equal(self.count, other.count))
        )

    __hash__ = None

    def __repr__(self) -> str:  # pragma: no cover
        return f"TrafficMatrix(nnz={self.nnz}, n_valid={self.n_valid}, window={self.window_index})"


def build_matrix(window: Window) -> TrafficMatrix:
    """Tally a window into its traffic matrix; counts sum to len(window)."""
    return TrafficMatrix.from_arrays(
        window.src,
        window.dst,
        window_index=window.index,
        time_span=(window.t_start, window.t_end) if len(window) else (0, 0),
    )


def aggregates(matrix: TrafficMatrix) -> NetworkAggregates:
    """Compute the nine-field scalar summary of a matrix."""
    if matrix.nnz == 0:
        return NetworkAggregates(0, 0, 0, 0, 0, 0, 0, 0, 0)
    row_packets = matrix.row_packet_counts()
    row_fanout = matrix.row_fanout_counts()
    col_packets = matrix.col_packet_counts()
    col_fanin = matrix.col_fanin_counts()
    return NetworkAggregates(
        valid_packets=matrix.total,
        unique_links=matrix.nnz,
        max_link_packets=int(matrix.count.max()),
        unique_sources=len(row_packets),
        max_source_packets=int(row_packets.max()),
        max_source_fanout=int(row_fanout.max()),
        unique_destinations=len(col_packets),
        max_dest_packets=int(col_packets.max()),
        max_dest_fanin=int(col_fanin.max()),
    )


DEGREE_QUANTITIES = (
    "source_packets",
    "source_fanout",
    "dest_packets",
    "dest_fanin",
    "link_packets",
)


def degree_values(matrix: TrafficMatrix, quantity: str) -> np.ndarray:
    """The named per-node (or per-link) count column of a matrix."""
    if quantity == "source_packets":
        return matrix.row_packet_counts()
    if quantity == "source_fanout":
        return matrix.row_fanout_counts()
    if quantity == "dest_packets":
        return matrix.col_packet_counts()
    if quantity == "dest_fanin":
        return matrix.col_fanin_counts()
    if quantity == "link_packets":
        return np.asarray(matrix.count)
    raise ValueError(f"unknown degree quantity {quantity!r}")


def degree_vectors(matrix: TrafficMatrix) -> DegreeVectors:
    """Expand a matrix into its per-node and per-link count maps."""
    row_ids = [int(v) for v in matrix.row_ids().tolist()]
    col_ids = [int(v) for v in matrix.col_ids().tolist()]
    return DegreeVectors(
        source_packets=dict(zip(row_ids, matrix.row_packet_counts().tolist())),
        source_fanout=dict(zip(row_ids, matrix.row_fanout_counts().tolist())),
        dest_packets=dict(zip(col_ids, matrix.col_packet_counts().tolist())),
        dest_fanin=dict(zip(col_ids, matrix.col_fanin_counts().tolist())),
        link_packets=matrix.to_dict(),
    )


def anonymize(matrix: TrafficMatrix, key: bytes | KeyedPermutation) -> TrafficMatrix:
    """Relabel every id through the keyed permutation; counts move intact.

    Passing a KeyedPermutation instance reuses its id cache across
    windows.  The mapping only permutes labels, so every aggregate and
    the multiset of each degree vector are unchanged.
    """
    perm = key if isinstance(key, KeyedPermutation) else KeyedPermutation(key)
    if matrix.nnz == 0:
        return matrix
    uniq = sorted({int(v) for v in matrix.src.tolist()} | {int(v) for v in matrix.dst.tolist()})
    mapping = {v: perm.apply(v) for v in uniq}
    new_src = [mapping[int(v)] for v in matrix.src.tolist()]
    new_dst = [mapping[int(v)] for v in matrix.dst.tolist()]
    return TrafficMatrix.from_arrays(
        new_src,
        new_dst,
        matrix.count,
        n_valid=matrix.n_valid,
        window_index=matrix.window_index,
        time_span=matrix.time_span,
        parent_n_valid=matrix.parent_n_valid,
    )


def subrange_include(matrix: TrafficMatrix, mask: RangeMask) -> TrafficMatrix:
    """Keep entries whose source AND destination both fall in the mask."""
    keep = _member_mask(matrix.src, mask.ids) & _member_mask(matrix.dst, mask.ids)
    return _take(matrix, keep)


def subrange_exclude(matrix: TrafficMatrix, mask: RangeMask) -> TrafficMatrix:
    """Drop the subrange_include entries; the exact set complement."""
    keep = ~(_member_mask(matrix.src, mask.ids) & _member_mask(matrix.dst, mask.ids))
    return _take(matrix, keep)


def _take(matrix: TrafficMatrix, keep: np.ndarray) -> TrafficMatrix:
    src = matrix.src[keep]
    dst = matrix.dst[keep]
    count = matrix.count[keep]
    return TrafficMatrix(
        src,
        dst,
        count,
        int(count.sum()),
        matrix.window_index,
        matrix.time_span,
        matrix.n_valid if matrix.parent_n_valid is None else matrix.parent_n_valid,
    )


def merge_matrices(matrices: Sequence[TrafficMatrix]) -> TrafficMatrix:
    """Entrywise sum of matrices, as if their windows were one block."""
    if not matrices:
        raise ValueError("nothing to merge")
    if len(matrices) == 1:
        return matrices[0]
    if any(m.src.dtype == object for m in matrices):
        src = np.concatenate([np.asarray(m.src, dtype=object) for m in matrices])
        dst = np.concatenate([np.asarray(m.dst, dtype=object) for m in matrices])
    else:
        src = np.concatenate([m.src for m in matrices])
        dst = np.concatenate([m.dst for m in matrices])
    count = np.concatenate([m.count for m in matrices])
    spans = [m.time_span for m in matrices]
    return TrafficMatrix.from_arrays(
        src,
        dst,
        count,
        window_index=matrices[0].window_index,
        time_span=(min(s for s, _ in spans), max(e for _, e in spans)),
    )


def save_matrix(matrix: TrafficMatrix, base_path: str | Path) -> tuple[Path, Path]:
    """Write <base>.tsv entries and a <base>.json sidecar; returns both paths."""
    base = Path(base_path)
    tsv_path = base.with_suffix(".tsv") if base.suffix != ".tsv" else base
    sidecar_path = tsv_path.with_suffix(".json")
    lines = [
        f"{int(s)}\t{int(d)}\t{int(c)}"
        for s, d, c in zip(matrix.src.tolist(), matrix.dst.tolist(), matrix.count.tolist())
    ]
    tsv_path.write_text("\n".join(lines) + ("\n" if lines else ""))
    meta = {
        "n_valid": matrix.n_valid,
        "window_index": matrix.window_index,
        "time_span": list(matrix.time_span),
        "parent_n_valid": matrix.parent_n_valid,
    }
    sidecar_path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return tsv_path, sidecar_path


def load_matrix(base_path: str | Path) -> TrafficMatrix:
    """Read a matrix written by save_matrix; round-trips bit-exactly."""
    base = Path(base_path)
    tsv_path = base.with_suffix(".tsv") if base.suffix != ".tsv" else base
    sidecar_path = tsv_path.with_suffix(".json")
    src: list[int] = []
    dst: list[int] = []
    count: list[int] = []
    for lineno, line in enumerate(tsv_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValueError(f"{tsv_path}: expected 3 fields on line {lineno}")
        src.append(int(fields[0]))
        dst.append(int(fields[1]))
        count.append(int(fields[2]))
    meta = json.loads(sidecar_path.read_text())
    matrix = TrafficMatrix.from_arrays(
        src,
        dst,
        count,
        n_valid=meta["n_valid"],
        window_index=meta["window_index"],
        time_span=tuple(meta["time_span"]),
        parent_n_valid=meta["parent_n_valid"],
    )
    return matrix
