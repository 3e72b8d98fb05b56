"""Reading ingestion, tumbling-window segmentation and history-based data completion."""
from __future__ import annotations

import socket
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, TextIO

import numpy as np

from .model import (
    DEFAULT_LAYOUT,
    RSS_CEILING_DBM,
    RSS_FLOOR_DBM,
    BodyLayout,
    DataSegment,
    TagReading,
    Trace,
)


class ParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None, field: str | None = None):
        self.lineno = lineno
        self.field = field
        where = f"line {lineno}: " if lineno is not None else ""
        what = f"field '{field}': " if field else ""
        super().__init__(f"{where}{what}{message}")


class StreamOrderError(ValueError):
    pass


_FIELDS = ("timestamp_ms", "antenna_id", "tag_id", "rss_dbm")


def parse_record(line: str, layout: BodyLayout = DEFAULT_LAYOUT, lineno: int | None = None,
                 rss_floor: float = RSS_FLOOR_DBM) -> tuple[TagReading, str | None]:
    """Parse ``timestamp_ms,antenna_id,tag_id,rss_dbm[,label]`` into a reading and its label."""
    parts = line.strip().split(",")
    if len(parts) not in (4, 5):
        raise ParseError(f"expected 4 or 5 comma-separated fields, got {len(parts)}", lineno)
    values = []
    for name, text, conv in zip(_FIELDS, parts, (int, int, int, float)):
        try:
            values.append(conv(text.strip()))
        except ValueError:
            raise ParseError(f"not a number: {text!r}", lineno, name) from None
    ts, ant, tag, rss = values
    if ts < 0:
        raise ParseError(f"negative timestamp {ts}", lineno, "timestamp_ms")
    if not 0 <= ant < layout.num_antennas:
        raise ParseError(f"antenna {ant} out of range 0..{layout.num_antennas - 1}",
                         lineno, "antenna_id")
    if not 0 <= tag < layout.num_tags:
        raise ParseError(f"tag {tag} out of range 0..{layout.num_tags - 1}", lineno, "tag_id")
    if not (rss_floor <= rss <= RSS_CEILING_DBM):
        raise ParseError(f"rss {rss} outside [{rss_floor}, {RSS_CEILING_DBM}]", lineno, "rss_dbm")
    label = parts[4].strip() if len(parts) == 5 else None
    return TagReading(ts, ant, tag, rss), label or None


def parse_reading(line: str, layout: BodyLayout = DEFAULT_LAYOUT,
                  lineno: int | None = None) -> TagReading:
    return parse_record(line, layout, lineno)[0]


def iter_records(lines: Iterable[str], layout: BodyLayout = DEFAULT_LAYOUT
                 ) -> Iterator[tuple[TagReading, str | None]]:
    """Yield parsed records, skipping blank and ``#`` comment lines."""
    for lineno, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield parse_record(stripped, layout, lineno)


def load_trace(path: str | Path, layout: BodyLayout = DEFAULT_LAYOUT,
               subject: int | None = None) -> Trace:
    """Read a reading log into a ``Trace``; the label is the first label seen, if any."""
    label = None
    rows = []
    with open(path, encoding="utf-8") as fh:
        for reading, lab in iter_records(fh, layout):
            rows.append(reading)
            if label is None and lab is not None:
                label = lab
    return Trace.from_readings(rows, label=label, subject=subject)


def format_record(reading: TagReading, label: str | None = None) -> str:
    line = f"{reading.timestamp_ms},{reading.antenna_id},{reading.tag_id},{reading.rss_dbm:.2f}"
    return f"{line},{label}" if label else line


def write_trace(path: str | Path, trace: Trace, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write(f"# {header}\n")
        lab = f",{trace.label}" if trace.label else ""
        for t, a, g, r in zip(trace.timestamps, trace.antennas, trace.tags, trace.rss):
            fh.write(f"{t},{a},{g},{r:.2f}{lab}\n")


def open_source(spec: str) -> Iterator[str]:
    """Line iterator over ``-`` (stdin), ``tcp:PORT`` (one accepted connection) or a file path."""
    if spec == "-":
        yield from sys.stdin
    elif spec.startswith("tcp:"):
        yield from _tcp_lines(int(spec[4:]))
    else:
        with open(spec, encoding="utf-8") as fh:
            yield from fh


def _tcp_lines(port: int, host: str = "127.0.0.1") -> Iterator[str]:
    with socket.create_server((host, port)) as server:
        conn, _ = server.accept()
        with conn, conn.makefile("r", encoding="utf-8", newline="\n") as fh:
            yield from fh


class Segmenter:
    """Incremental tumbling-window cutter.

    Windows are aligned at ``origin + k * window_len_ms`` (origin 0 by
    default), starting with the window that holds the first reading. A window
    closes once a reading at or beyond its end arrives, and empty windows in
    between are emitted too.
    """

    def __init__(self, window_len_ms: int, origin_ms: int | None = None):
        if window_len_ms <= 0:
            raise ValueError("window length must be positive")
        self.window_len_ms = int(window_len_ms)
        self.origin_ms = origin_ms
        self._start: int | None = None
        self._buf: list[TagReading] = []
        self._last_ts: int | None = None

    def push(self, reading: TagReading) -> list[DataSegment]:
        ts = reading.timestamp_ms
        if self._last_ts is not None and ts < self._last_ts:
            raise StreamOrderError(f"timestamp {ts} precedes previous {self._last_ts}")
        self._last_ts = ts
        if self._start is None:
            origin = 0 if self.origin_ms is None else self.origin_ms
            self._start = origin + ((ts - origin) // self.window_len_ms) * self.window_len_ms
        closed = []
        while ts >= self._start + self.window_len_ms:
            closed.append(DataSegment.from_readings(self._start, self.window_len_ms, self._buf))
            self._buf = []
            self._start += self.window_len_ms
        self._buf.append(reading)
        return closed

    def flush(self) -> list[DataSegment]:
        if self._start is None:
            return []
        seg = DataSegment.from_readings(self._start, self.window_len_ms, self._buf)
        self._buf = []
        self._start = None
        return [seg]


def segment_stream(readings: Iterable[TagReading], window_len_s: float) -> list[DataSegment]:
    seg = Segmenter(int(round(window_len_s * 1000)))
    out: list[DataSegment] = []
    for r in readings:
        out.extend(seg.push(r))
    out.extend(seg.flush())
    return out


def segment_trace(trace: Trace, window_len_s: float,
                  origin_ms: int | None = None) -> list[DataSegment]:
    """Array version of ``segment_stream`` for whole traces held in memory."""
    if len(trace) == 0:
        return []
    ts = trace.timestamps
    if np.any(np.diff(ts) < 0):
        raise StreamOrderError("trace timestamps are not non-decreasing")
    wl = int(round(window_len_s * 1000))
    origin = 0 if origin_ms is None else origin_ms
    first = origin + ((int(ts[0]) - origin) // wl) * wl
    n_win = (int(ts[-1]) - first) // wl + 1
    edges = first + wl * np.arange(n_win + 1)
    cuts = np.searchsorted(ts, edges, side="left")
    return [
        DataSegment(int(edges[k]), wl, ts[cuts[k]:cuts[k + 1]], trace.antennas[cuts[k]:cuts[k + 1]],
                    trace.tags[cuts[k]:cuts[k + 1]], trace.rss[cuts[k]:cuts[k + 1]])
        for k in range(n_win)
    ]


def count_matrix(seg: DataSegment, layout: BodyLayout = DEFAULT_LAYOUT) -> np.ndarray:
    n_a, n_t = layout.num_antennas, layout.num_tags
    flat = np.bincount(seg.antennas * n_t + seg.tags, minlength=n_a * n_t)
    return flat.reshape(n_a, n_t)


def _overlap_counts(cur: np.ndarray, hist: np.ndarray) -> float:
    total = cur.sum()
    if total == 0:
        return 0.0
    return float(np.minimum(cur, hist).sum() / total)


def overlap(current: DataSegment, hist: DataSegment, layout: BodyLayout = DEFAULT_LAYOUT) -> float:
    """Fraction of the current tag-count mass also present in ``hist``; 0 for an empty current."""
    return _overlap_counts(count_matrix(current, layout), count_matrix(hist, layout))


@dataclass(frozen=True)
class HistoryBuffer:
    """Most recent raw segments, oldest first."""

    capacity: int
    segments: tuple[DataSegment, ...] = ()

    @classmethod
    def for_config(cls, window_len_s: float, history_span_s: float = 20.0) -> "HistoryBuffer":
        return cls(int(np.floor(history_span_s / window_len_s + 1e-9)))

    def __len__(self) -> int:
        return len(self.segments)


def push_history(buffer: HistoryBuffer, raw_seg: DataSegment) -> HistoryBuffer:
    if buffer.capacity <= 0:
        return buffer
    segs = (buffer.segments + (raw_seg,))[-buffer.capacity:]
    return HistoryBuffer(buffer.capacity, segs)


def complete(current: DataSegment, buffer: HistoryBuffer, threshold: float = 0.7,
             layout: BodyLayout = DEFAULT_LAYOUT) -> DataSegment:
    """Fill false negatives in ``current`` by prepending recent history.

    Walks the buffer from the newest segment backwards. While the overlap of
    the (growing) current segment with the next historical one stays below
    ``threshold``, that segment's readings are prepended; the walk stops at the
    first sufficiently overlapping segment or when the buffer runs out.
    Segments already listed in ``completed_from`` are skipped, which makes a
    repeated call a no-op.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    done = {start for start, _ in current.completed_from}
    cur_counts = count_matrix(current, layout)
    pieces = []
    provenance = list(current.completed_from)
    for hist in reversed(buffer.segments):
        if hist.window_start_ms in done:
            continue
        hist_counts = count_matrix(hist, layout)
        if _overlap_counts(cur_counts, hist_counts) >= threshold:
            break
        pieces.append(hist)
        cur_counts = cur_counts + hist_counts
        provenance.append((hist.window_start_ms, len(hist)))
    if not pieces:
        return current
    # oldest history first, so prepending keeps timestamps ordered
    parts = pieces[::-1] + [current]
    return DataSegment(
        current.window_start_ms,
        current.window_len_ms,
        np.concatenate([p.timestamps for p in parts]),
        np.concatenate([p.antennas for p in parts]),
        np.concatenate([p.tags for p in parts]),
        np.concatenate([p.rss for p in parts]),
        tuple(provenance),
    )


def completed_segments(segments: Iterable[DataSegment], window_len_s: float,
                       history_span_s: float = 20.0, threshold: float = 0.7,
                       layout: BodyLayout = DEFAULT_LAYOUT,
                       enabled: bool = True) -> Iterator[DataSegment]:
    """Run completion over consecutive raw segments, maintaining the history buffer."""
    buf = HistoryBuffer.for_config(window_len_s, history_span_s)
    for raw in segments:
        yield complete(raw, buf, threshold, layout) if enabled else raw
        buf = push_history(buf, raw)
