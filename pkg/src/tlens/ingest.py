"""Packet-stream ingestion: parsing, validity filtering, and count windowing.

Two interchangeable record formats are supported:

* CSV with rows ``timestamp_us,src,dst``.  An optional header line and
  ``#`` comment lines are skipped; ``.gz`` paths are decompressed
  transparently.  Ids may be arbitrarily large non-negative integers.
* A binary format for throughput: magic ``TLNS``, a version byte, then
  fixed 24-byte little-endian records (u64 timestamp, u64 src, u64 dst).

Windows hold exactly ``n_valid`` packets each; a trailing partial window
is never emitted, only counted.  ``window_stream`` is the record-at-a-time
reference path, ``scan_windows`` the columnar fast path.  Both produce
identical windows for the same input.
"""

from __future__ import annotations

import gzip
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np
import pandas as pd

BINARY_MAGIC = b"TLNS"
BINARY_VERSION = 1
_RECORD = struct.Struct("<QQQ")

_U64_MAX = (1 << 64) - 1

CSV_HEADER = "timestamp_us,src,dst"


class ParseError(ValueError):
    """Malformed input. Carries a 1-based line (CSV) or record index (binary)."""

    def __init__(self, message: str, *, line: int | None = None, record: int | None = None):
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif record is not None:
            where = f" (record {record})"
        super().__init__(message + where)
        self.line = line
        self.record = record


@dataclass(frozen=True)
class PacketRecord:
    """One observed packet: microsecond timestamp and integer endpoint ids."""

    timestamp: int
    src: int
    dst: int

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")
        if self.src < 0 or self.dst < 0:
            raise ValueError("endpoint ids must be non-negative")


@dataclass(frozen=True)
class WindowSpec:
    """Count-based windowing: every window holds exactly n_valid packets."""

    n_valid: int

    def __post_init__(self):
        if self.n_valid < 1:
            raise ValueError(f"n_valid must be >= 1, got {self.n_valid}")


@dataclass(frozen=True)
class PacketFilter:
    """Validity predicate over closed id intervals and an optional time range.

    Each of ``src_ranges`` and ``dst_ranges`` is a tuple of ``(lo, hi)``
    closed intervals; empty means "accept any id".  ``time_range`` is a
    closed ``(lo, hi)`` microsecond interval or None.  A record is valid
    iff every configured constraint accepts it, so the default filter
    accepts everything.
    """

    src_ranges: tuple[tuple[int, int], ...] = ()
    dst_ranges: tuple[tuple[int, int], ...] = ()
    time_range: tuple[int, int] | None = None

    def __post_init__(self):
        for name, ranges in (("src", self.src_ranges), ("dst", self.dst_ranges)):
            for lo, hi in ranges:
                if lo > hi:
                    raise ValueError(f"empty {name} interval [{lo}, {hi}]")
        if self.time_range is not None and self.time_range[0] > self.time_range[1]:
            raise ValueError(f"empty time interval {self.time_range}")

    @staticmethod
    def _in_ranges(value: int, ranges: tuple[tuple[int, int], ...]) -> bool:
        return any(lo <= value <= hi for lo, hi in ranges)

    def matches(self, record: PacketRecord) -> bool:
        if self.time_range is not None:
            lo, hi = self.time_range
            if not lo <= record.timestamp <= hi:
                return False
        if self.src_ranges and not self._in_ranges(record.src, self.src_ranges):
            return False
        if self.dst_ranges and not self._in_ranges(record.dst, self.dst_ranges):
            return False
        return True

    def column_mask(self, ts: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
        """Vectorized matches() over parallel columns."""
        mask = np.ones(len(ts), dtype=bool)
        if self.time_range is not None:
            lo, hi = self.time_range
            mask &= (ts >= lo) & (ts <= hi)
        for ranges, col in ((self.src_ranges, src), (self.dst_ranges, dst)):
            if ranges:
                hit = np.zeros(len(col), dtype=bool)
                for lo, hi in ranges:
                    hit |= (col >= lo) & (col <= hi)
                mask &= hit
        return mask


class Window:
    """An immutable block of exactly n_valid consecutive valid packets."""

    __slots__ = ("index", "timestamps", "src", "dst")

    def __init__(self, index: int, timestamps: np.ndarray, src: np.ndarray, dst: np.ndarray):
        for arr in (timestamps, src, dst):
            arr.flags.writeable = False
        self.index = index
        self.timestamps = timestamps
        self.src = src
        self.dst = dst

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def t_start(self) -> int:
        return int(self.timestamps[0])

    @property
    def t_end(self) -> int:
        return int(self.timestamps[-1])

    def records(self) -> list[PacketRecord]:
        return [
            PacketRecord(int(t), int(s), int(d))
            for t, s, d in zip(self.timestamps.tolist(), self.src.tolist(), self.dst.tolist())
        ]

    def __repr__(self) -> str:  # pragma: no cover
        return f"Window(index={self.index}, n={len(self)}, t=[{self.t_start}, {self.t_end}])"


def _id_array(values: Sequence[int] | list[int]) -> np.ndarray:
    """uint64 column, falling back to object dtype when ids exceed 64 bits."""
    try:
        return np.array(values, dtype=np.uint64)
    except (OverflowError, TypeError):
        arr = np.empty(len(values), dtype=object)
        arr[:] = values
        return arr


def _open_raw(path: str | Path) -> IO[bytes]:
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def detect_format(path: str | Path) -> str:
    """Sniff "binary" vs "csv" from the magic bytes."""
    with _open_raw(path) as fh:
        head = fh.read(len(BINARY_MAGIC))
    return "binary" if head == BINARY_MAGIC else "csv"


def _resolve_format(path: str | Path, fmt: str) -> str:
    if fmt == "auto":
        return detect_format(path)
    if fmt not in ("csv", "binary"):
        raise ValueError(f"unknown format {fmt!r}")
    return fmt


def _parse_csv_records(fh: IO[bytes], tolerance: int) -> Iterator[PacketRecord]:
    text = io.TextIOWrapper(fh, encoding="utf-8", newline="")
    prev_ts: int | None = None
    seen_data = False
    for lineno, raw in enumerate(text, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        if not seen_data:
            # Optional header: a first content line with a non-integer field.
            try:
                [int(f) for f in fields]
            except ValueError:
                seen_data = True
                continue
        if len(fields) != 3:
            raise ParseError(f"expected 3 fields, got {len(fields)}", line=lineno)
        try:
            ts, src, dst = int(fields[0]), int(fields[1]), int(fields[2])
        except ValueError as exc:
            raise ParseError(f"non-integer field: {exc}", line=lineno) from None
        if ts < 0 or src < 0 or dst < 0:
            raise ParseError("negative value", line=lineno)
        if prev_ts is not None and ts + tolerance < prev_ts:
            raise ParseError(
                f"timestamp regression {prev_ts} -> {ts} exceeds tolerance {tolerance}",
                line=lineno,
            )
        prev_ts = ts
        seen_data = True
        yield PacketRecord(ts, src, dst)


def _parse_binary_records(fh: IO[bytes], tolerance: int) -> Iterator[PacketRecord]:
    head = fh.read(len(BINARY_MAGIC) + 1)
    if len(head) < len(BINARY_MAGIC) + 1 or head[: len(BINARY_MAGIC)] != BINARY_MAGIC:
        raise ParseError("missing binary magic")
    if head[len(BINARY_MAGIC)] != BINARY_VERSION:
        raise ParseError(f"unsupported binary version {head[len(BINARY_MAGIC)]}")
    prev_ts: int | None = None
    index = 0
    while True:
        chunk = fh.read(_RECORD.size)
        if not chunk:
            return
        if len(chunk) < _RECORD.size:
            raise ParseError("truncated record", record=index)
        ts, src, dst = _RECORD.unpack(chunk)
        if prev_ts is not None and ts + tolerance < prev_ts:
            raise ParseError(
                f"timestamp regression {prev_ts} -> {ts} exceeds tolerance {tolerance}",
                record=index,
            )
        prev_ts = ts
        yield PacketRecord(ts, src, dst)
        index += 1


def parse_records(
    path: str | Path,
    fmt: str = "auto",
    *,
    time_tolerance: int = 0,
) -> Iterator[PacketRecord]:
    """Yield PacketRecords from a capture file.

    Timestamps must be non-decreasing; a backward step larger than
    ``time_tolerance`` microseconds raises ParseError identifying the
    offending line or record.
    """
    fmt = _resolve_format(path, fmt)
    fh = _open_raw(path)
    try:
        if fmt == "binary":
            yield from _parse_binary_records(fh, time_tolerance)
        else:
            yield from _parse_csv_records(fh, time_tolerance)
    finally:
        fh.close()


def filter_valid(
    records: Iterable[PacketRecord], packet_filter: PacketFilter | None = None
) -> Iterator[PacketRecord]:
    """Drop records rejected by the filter; order is preserved."""
    if packet_filter is None:
        packet_filter = PacketFilter()
    return (r for r in records if packet_filter.matches(r))


class WindowStream:
    """Iterator of Windows cut from a record stream.

    ``dropped`` (size of the trailing partial window) and
    ``windows_emitted`` are populated once iteration completes.
    """

    def __init__(self, records: Iterable[PacketRecord], spec: WindowSpec):
        self._records = records
        self.spec = spec
        self.dropped: int | None = None
        self.windows_emitted: int | None = None

    def __iter__(self) -> Iterator[Window]:
        n = self.spec.n_valid
        ts: list[int] = []
        src: list[int] = []
        dst: list[int] = []
        index = 0
        for rec in self._records:
            ts.append(rec.timestamp)
            src.append(rec.src)
            dst.append(rec.dst)
            if len(ts) == n:
                yield Window(index, _id_array(ts), _id_array(src), _id_array(dst))
                ts, src, dst = [], [], []
                index += 1
        self.dropped = len(ts)
        self.windows_emitted = index


def window_stream(records: Iterable[PacketRecord], spec: WindowSpec) -> WindowStream:
    """Group already-valid records into exact n_valid windows."""
    return WindowStream(records, spec)


def _peek_csv_header(path: str | Path) -> int:
    """Number of leading lines pandas must skip (comments plus any header)."""
    with _open_raw(path) as fh:
        text = io.TextIOWrapper(fh, encoding="utf-8", newline="")
        for lineno, raw in enumerate(text):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            first = line.split(",")[0]
            try:
                int(first)
            except ValueError:
                return lineno + 1
            return 0
    return 0


def _csv_chunks(
    path: str | Path, tolerance: int, chunk_rows: int
) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    skip = _peek_csv_header(path)
    try:
        reader = pd.read_csv(
            path,
            header=None,
            names=["t", "s", "d"],
            dtype={"t": np.uint64, "s": np.uint64, "d": np.uint64},
            comment="#",
            skiprows=skip,
            chunksize=chunk_rows,
            engine="c",
            compression="infer",
        )
    except pd.errors.EmptyDataError:
        return
    row_base = 0
    prev_last: int | None = None
    with reader:
        for frame in reader:
            if frame.isna().any().any():
                bad = int(frame.index[frame.isna().any(axis=1)][0])
                raise ParseError("short or empty field", line=bad + 1)
            ts = frame["t"].to_numpy()
            src = frame["s"].to_numpy()
            dst = frame["d"].to_numpy()
            _check_monotone(ts, prev_last, tolerance, row_base)
            prev_last = int(ts[-1]) if len(ts) else prev_last
            row_base += len(ts)
            yield ts, src, dst


def _binary_chunks(
    path: str | Path, tolerance: int, chunk_rows: int
) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    with _open_raw(path) as fh:
        head = fh.read(len(BINARY_MAGIC) + 1)
        if len(head) < len(BINARY_MAGIC) + 1 or head[: len(BINARY_MAGIC)] != BINARY_MAGIC:
            raise ParseError("missing binary magic")
        if head[len(BINARY_MAGIC)] != BINARY_VERSION:
            raise ParseError(f"unsupported binary version {head[len(BINARY_MAGIC)]}")
        row_base = 0
        prev_last: int | None = None
        while True:
            buf = fh.read(chunk_rows * _RECORD.size)
            if not buf:
                return
            if len(buf) % _RECORD.size:
                raise ParseError("truncated record", record=row_base + len(buf) // _RECORD.size)
            flat = np.frombuffer(buf, dtype="<u8")
            cols = flat.reshape(-1, 3)
            ts = cols[:, 0].copy()
            _check_monotone(ts, prev_last, tolerance, row_base)
            prev_last = int(ts[-1])
            row_base += len(ts)
            yield ts, cols[:, 1].copy(), cols[:, 2].copy()


def _check_monotone(ts: np.ndarray, prev_last: int | None, tolerance: int, row_base: int) -> None:
    if len(ts) == 0:
        return
    if prev_last is not None and int(ts[0]) + tolerance < prev_last:
        raise ParseError(
            f"timestamp regression {prev_last} -> {int(ts[0])} exceeds tolerance {tolerance}",
            record=row_base,
        )
    if len(ts) > 1:
        bad = ts[1:] + np.uint64(tolerance) < ts[:-1]
        if bad.any():
            i = int(np.argmax(bad))
            raise ParseError(
                f"timestamp regression {int(ts[i])} -> {int(ts[i + 1])} "
                f"exceeds tolerance {tolerance}",
                record=row_base + i + 1,
            )


class WindowScan:
    """Columnar window reader; equivalent to the record path but faster.

    The CSV reader parses ids as uint64.  Should a file hold wider ids,
    the scan transparently restarts on the record path and skips the
    windows already emitted, so callers see one consistent sequence.
    """

    def __init__(
        self,
        path: str | Path,
        spec: WindowSpec,
        *,
        packet_filter: PacketFilter | None = None,
        fmt: str = "auto",
        time_tolerance: int = 0,
        chunk_rows: int = 1 << 20,
    ):
        self.path = Path(path)
        self.spec = spec
        self.packet_filter = packet_filter
        self.fmt = _resolve_format(path, fmt)
        self.time_tolerance = time_tolerance
        self.chunk_rows = chunk_rows
        self.dropped: int | None = None
        self.windows_emitted: int | None = None
        self.filtered_out: int | None = None

    def _columnar(self) -> Iterator[Window]:
        chunks = (
            _binary_chunks(self.path, self.time_tolerance, self.chunk_rows)
            if self.fmt == "binary"
            else _csv_chunks(self.path, self.time_tolerance, self.chunk_rows)
        )
        n = self.spec.n_valid
        pend_t: list[np.ndarray] = []
        pend_s: list[np.ndarray] = []
        pend_d: list[np.ndarray] = []
        pending = 0
        filtered = 0
        index = 0
        for ts, src, dst in chunks:
            if self.packet_filter is not None:
                mask = self.packet_filter.column_mask(ts, src, dst)
                filtered += len(ts) - int(mask.sum())
                ts, src, dst = ts[mask], src[mask], dst[mask]
            if len(ts) == 0:
                continue
            pend_t.append(ts)
            pend_s.append(src)
            pend_d.append(dst)
            pending += len(ts)
            if pending < n:
                continue
            t_all = np.concatenate(pend_t)
            s_all = np.concatenate(pend_s)
            d_all = np.concatenate(pend_d)
            full = (pending // n) * n
            for start in range(0, full, n):
                yield Window(
                    index,
                    t_all[start : start + n].copy(),
                    s_all[start : start + n].copy(),
                    d_all[start : start + n].copy(),
                )
                index += 1
            pend_t = [t_all[full:]]
            pend_s = [s_all[full:]]
            pend_d = [d_all[full:]]
            pending -= full
        self.dropped = pending
        self.windows_emitted = index
        self.filtered_out = filtered

    def _records_fallback(self, skip_windows: int) -> Iterator[Window]:
        records = filter_valid(
            parse_records(self.path, self.fmt, time_tolerance=self.time_tolerance),
            self.packet_filter,
        )
        stream = window_stream(records, self.spec)
        for window in stream:
            if window.index >= skip_windows:
                yield window
        self.dropped = stream.dropped
        self.windows_emitted = stream.windows_emitted
        self.filtered_out = None

    def __iter__(self) -> Iterator[Window]:
        emitted = 0
        try:
            for window in self._columnar():
                yield window
                emitted += 1
        except (OverflowError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            # Ids wider than uint64: re-read on the arbitrary-precision path.
            yield from self._records_fallback(emitted)


def scan_windows(
    path: str | Path,
    spec: WindowSpec,
    *,
    packet_filter: PacketFilter | None = None,
    fmt: str = "auto",
    time_tolerance: int = 0,
    chunk_rows: int = 1 << 20,
) -> WindowScan:
    """Stream Windows straight from a capture file.

    Args:
        path: capture file; ``.gz`` is decompressed, format sniffed when
            ``fmt="auto"``.
        spec: window size contract.
        packet_filter: validity predicate applied before windowing.
        time_tolerance: allowed backward timestamp jitter in microseconds.
        chunk_rows: rows per read for the columnar path.

    Returns a WindowScan; after full iteration its ``dropped``,
    ``windows_emitted`` and ``filtered_out`` counters are set.
    """
    return WindowScan(
        path,
        spec,
        packet_filter=packet_filter,
        fmt=fmt,
        time_tolerance=time_tolerance,
        chunk_rows=chunk_rows,
    )


def write_csv(
    path: str | Path,
    timestamps: Sequence[int] | np.ndarray,
    src: Sequence[int] | np.ndarray,
    dst: Sequence[int] | np.ndarray,
    *,
    header: bool = False,
    append: bool = False,
) -> None:
    """Write one CSV block of records; gzip chosen by the ``.gz`` suffix."""
    frame = pd.DataFrame({"t": timestamps, "s": src, "d": dst})
    mode = "ab" if append else "wb"
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, mode) as fh:
        if header and not append:
            fh.write((CSV_HEADER + "\n").encode())
        frame.to_csv(fh, index=False, header=False)


class BinaryWriter:
    """Incremental writer for the fixed-record binary format."""

    def __init__(self, path: str | Path):
        self._fh = open(path, "wb")
        self._fh.write(BINARY_MAGIC + bytes([BINARY_VERSION]))

    def write(self, timestamps: np.ndarray, src: np.ndarray, dst: np.ndarray) -> None:
        cols = np.empty((len(timestamps), 3), dtype="<u8")
        cols[:, 0] = timestamps
        cols[:, 1] = src
        cols[:, 2] = dst
        self._fh.write(cols.tobytes())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "BinaryWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_binary(
    path: str | Path,
    timestamps: Sequence[int] | np.ndarray,
    src: Sequence[int] | np.ndarray,
    dst: Sequence[int] | np.ndarray,
) -> None:
    """Write a whole binary capture in one call. Ids must fit in 64 bits."""
    with BinaryWriter(path) as writer:
        writer.write(
            np.asarray(timestamps, dtype=np.uint64),
            np.asarray(src, dtype=np.uint64),
            np.asarray(dst, dtype=np.uint64),
        )
