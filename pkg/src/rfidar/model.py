"""Domain types shared across the recognition pipeline.

Readings are kept as parallel numpy arrays inside segments and traces; the
``TagReading`` record is the unit used at the ingestion boundary.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RSS_FLOOR_DBM = -95.0
RSS_CEILING_DBM = 0.0
FEATURE_VERSION = 1

DEFAULT_ANTENNAS = ("back", "chest", "left_foot", "right_foot")
DEFAULT_PARTS = (
    "left_wrist",
    "right_wrist",
    "left_arm",
    "right_arm",
    "body",
    "left_leg",
    "right_leg",
    "left_ankle",
    "right_ankle",
)
DEFAULT_ACTIVITIES = (
    "sitting",
    "standing",
    "walking",
    "cleaning_window",
    "cleaning_table",
    "vacuuming",
    "riding_bike",
    "stairs",
)


class LayoutError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class TagReading:
    timestamp_ms: int
    antenna_id: int
    tag_id: int
    rss_dbm: float


@dataclass(frozen=True)
class BodyLayout:
    antennas: tuple[str, ...]
    body_parts: tuple[str, ...]
    tags_per_part: int
    tag_to_part: tuple[int, ...]

    def __post_init__(self):
        if not self.antennas or not self.body_parts:
            raise LayoutError("layout needs at least one antenna and one body part")
        if self.tags_per_part < 1:
            raise LayoutError("tags_per_part must be >= 1")
        n_parts = len(self.body_parts)
        if len(self.tag_to_part) != n_parts * self.tags_per_part:
            raise LayoutError(
                f"{len(self.tag_to_part)} tags != {n_parts} parts x {self.tags_per_part}"
            )
        counts = np.bincount(np.asarray(self.tag_to_part, dtype=int), minlength=n_parts)
        if len(counts) != n_parts or np.any(counts != self.tags_per_part):
            raise LayoutError("every body part must carry exactly tags_per_part tags")

    @classmethod
    def uniform(cls, antennas: Sequence[str], parts: Sequence[str], tags_per_part: int):
        """Layout where tags ``p*tags_per_part .. (p+1)*tags_per_part-1`` sit on part ``p``."""
        tag_to_part = tuple(p for p in range(len(parts)) for _ in range(tags_per_part))
        return cls(tuple(antennas), tuple(parts), tags_per_part, tag_to_part)

    @property
    def num_antennas(self) -> int:
        return len(self.antennas)

    @property
    def num_parts(self) -> int:
        return len(self.body_parts)

    @property
    def num_tags(self) -> int:
        return len(self.tag_to_part)

    def tags_of_part(self, part: int) -> tuple[int, ...]:
        return tuple(t for t, p in enumerate(self.tag_to_part) if p == part)

    def fingerprint(self, resample_len: int) -> str:
        """Short hash identifying the feature-vector layout."""
        payload = repr(
            (self.antennas, self.body_parts, self.tags_per_part, self.tag_to_part,
             int(resample_len), FEATURE_VERSION)
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


DEFAULT_LAYOUT = BodyLayout.uniform(DEFAULT_ANTENNAS, DEFAULT_PARTS, 4)


def read_layout_manifest(path: str | Path) -> BodyLayout:
    """Parse ``antenna,<index>,<name>`` / ``tag,<index>,<part_name>`` lines."""
    antennas: dict[int, str] = {}
    tags: dict[int, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 3 or fields[0] not in ("antenna", "tag"):
            raise LayoutError(f"{path}:{lineno}: expected 'antenna|tag,<index>,<name>'")
        try:
            index = int(fields[1])
        except ValueError:
            raise LayoutError(f"{path}:{lineno}: bad index {fields[1]!r}") from None
        target = antennas if fields[0] == "antenna" else tags
        if index in target:
            raise LayoutError(f"{path}:{lineno}: duplicate {fields[0]} index {index}")
        target[index] = fields[2]
    for kind, table in (("antenna", antennas), ("tag", tags)):
        if sorted(table) != list(range(len(table))):
            raise LayoutError(f"{path}: {kind} indices must be dense from 0")
    parts: list[str] = []
    for i in range(len(tags)):
        if tags[i] not in parts:
            parts.append(tags[i])
    tag_to_part = tuple(parts.index(tags[i]) for i in range(len(tags)))
    per_part = len(tags) // len(parts) if parts else 0
    return BodyLayout(tuple(antennas[i] for i in range(len(antennas))), tuple(parts),
                      per_part, tag_to_part)


def write_layout_manifest(layout: BodyLayout, path: str | Path) -> None:
    lines = [f"antenna,{i},{name}" for i, name in enumerate(layout.antennas)]
    lines += [f"tag,{t},{layout.body_parts[p]}" for t, p in enumerate(layout.tag_to_part)]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class ActivityLabel:
    id: int
    name: str


def activity_labels(names: Iterable[str] = DEFAULT_ACTIVITIES) -> tuple[ActivityLabel, ...]:
    names = tuple(names)
    if len(set(names)) != len(names):
        raise ValueError("activity names must be unique")
    return tuple(ActivityLabel(i, n) for i, n in enumerate(names))


@dataclass(frozen=True)
class PipelineConfig:
    window_len_s: float = 5.0
    history_span_s: float = 20.0
    overlap_threshold: float = 0.7
    resample_len: int = 32
    rss_floor_dbm: float = RSS_FLOOR_DBM
    normalize_per_subject: bool = False

    def __post_init__(self):
        if not self.window_len_s > 0:
            raise ValueError("window_len_s must be > 0")
        if self.history_span_s < self.window_len_s:
            raise ValueError("history_span_s must be >= window_len_s")
        if not 0.0 <= self.overlap_threshold <= 1.0:
            raise ValueError("overlap_threshold must lie in [0, 1]")
        if self.resample_len < 2:
            raise ValueError("resample_len must be >= 2")

    @property
    def window_len_ms(self) -> int:
        return int(round(self.window_len_s * 1000))

    @property
    def history_capacity(self) -> int:
        # small epsilon so 20/5 is not floored to 3 by float error
        return int(np.floor(self.history_span_s / self.window_len_s + 1e-9))


def series_key_order(layout: BodyLayout) -> list[tuple[int, int]]:
    return [(a, t) for a in range(layout.num_antennas) for t in range(layout.num_tags)]


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Trace:
    """A time-ordered reading log, optionally labelled with activity and subject."""

    timestamps: np.ndarray
    antennas: np.ndarray
    tags: np.ndarray
    rss: np.ndarray
    label: str | None = None
    subject: int | None = None
    rss_floor: float = RSS_FLOOR_DBM  # empty-series sentinel, in the same units as ``rss``

    def __post_init__(self):
        object.__setattr__(self, "timestamps", _frozen(self.timestamps, np.int64))
        object.__setattr__(self, "antennas", _frozen(self.antennas, np.int64))
        object.__setattr__(self, "tags", _frozen(self.tags, np.int64))
        object.__setattr__(self, "rss", _frozen(self.rss, np.float64))
        n = len(self.timestamps)
        if not (len(self.antennas) == len(self.tags) == len(self.rss) == n):
            raise ValueError("trace arrays must have equal length")

    def __len__(self) -> int:
        return len(self.timestamps)

    @classmethod
    def from_readings(cls, readings: Iterable[TagReading], label=None, subject=None) -> "Trace":
        rows = [(r.timestamp_ms, r.antenna_id, r.tag_id, r.rss_dbm) for r in readings]
        if not rows:
            return cls([], [], [], [], label, subject)
        ts, ant, tag, rss = zip(*rows)
        return cls(ts, ant, tag, rss, label, subject)

    def readings(self) -> list[TagReading]:
        return [TagReading(int(t), int(a), int(g), float(r))
                for t, a, g, r in zip(self.timestamps, self.antennas, self.tags, self.rss)]

    def with_rss(self, rss: np.ndarray, rss_floor: float | None = None) -> "Trace":
        floor = self.rss_floor if rss_floor is None else rss_floor
        return Trace(self.timestamps, self.antennas, self.tags, rss, self.label, self.subject,
                     floor)


@dataclass(frozen=True, eq=False)
class DataSegment:
    """Readings of one tumbling window plus any appended history.

    ``completed_from`` lists ``(source window_start_ms, count)`` for every
    historical segment appended by data completion.
    """

    window_start_ms: int
    window_len_ms: int
    timestamps: np.ndarray
    antennas: np.ndarray
    tags: np.ndarray
    rss: np.ndarray
    completed_from: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        ant = np.asarray(self.antennas, dtype=np.int64)
        tag = np.asarray(self.tags, dtype=np.int64)
        rss = np.asarray(self.rss, dtype=np.float64)
        if not (len(ts) == len(ant) == len(tag) == len(rss)):
            raise ValueError("segment arrays must have equal length")
        if len(ts) > 1:
            d = np.diff(ts)
            tie_bad = (d == 0) & ((np.diff(ant) < 0) | ((np.diff(ant) == 0) & (np.diff(tag) < 0)))
            if np.any(d < 0) or np.any(tie_bad):
                order = np.lexsort((tag, ant, ts))
                ts, ant, tag, rss = ts[order], ant[order], tag[order], rss[order]
        object.__setattr__(self, "timestamps", _frozen(ts, np.int64))
        object.__setattr__(self, "antennas", _frozen(ant, np.int64))
        object.__setattr__(self, "tags", _frozen(tag, np.int64))
        object.__setattr__(self, "rss", _frozen(rss, np.float64))
        object.__setattr__(self, "completed_from", tuple(
            (int(s), int(c)) for s, c in self.completed_from))

    @classmethod
    def from_readings(cls, window_start_ms: int, window_len_ms: int,
                      readings: Sequence[TagReading]) -> "DataSegment":
        ts = [r.timestamp_ms for r in readings]
        return cls(window_start_ms, window_len_ms, ts,
                   [r.antenna_id for r in readings], [r.tag_id for r in readings],
                   [r.rss_dbm for r in readings])

    @classmethod
    def empty(cls, window_start_ms: int, window_len_ms: int) -> "DataSegment":
        return cls(window_start_ms, window_len_ms, [], [], [], [])

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def window_end_ms(self) -> int:
        return self.window_start_ms + self.window_len_ms

    @property
    def readings(self) -> list[TagReading]:
        return [TagReading(int(t), int(a), int(g), float(r))
                for t, a, g, r in zip(self.timestamps, self.antennas, self.tags, self.rss)]

    def native_mask(self) -> np.ndarray:
        return (self.timestamps >= self.window_start_ms) & (self.timestamps < self.window_end_ms)
