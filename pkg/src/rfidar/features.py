"""Temporal and spatial feature extraction from a (completed) data segment.

Layout of the vector produced by :func:`extract`::

    [7 temporal features per (antenna, tag) series, lexicographic key order
     | Pearson correlation per tag pair (i < j)
     | Pearson correlation per antenna pair (i < j)]

The small per-series functions are the reference definitions; ``extract``
computes the same quantities in batch.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import (
    DEFAULT_LAYOUT,
    RSS_FLOOR_DBM,
    BodyLayout,
    DataSegment,
    PipelineConfig,
    series_key_order,
)

N_TEMPORAL = 7
TEMPORAL_NAMES = ("mean", "var", "max", "min", "mcr", "energy", "entropy")

# zero-variance guard for resampled vectors (relative to signal magnitude)
_FLAT_RTOL = 1e-12


def empty_series_features(floor: float = RSS_FLOOR_DBM) -> np.ndarray:
    return np.array([floor, 0.0, floor, floor, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class ReadingSeries:
    key: tuple[int, int]
    times: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    @classmethod
    def empty(cls, key):
        return cls(key, np.zeros(0, dtype=np.int64), np.zeros(0))


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    layout_fingerprint: str

    def __len__(self) -> int:
        return len(self.values)


def feature_dim(num_antennas: int, num_tags: int) -> int:
    return N_TEMPORAL * num_antennas * num_tags + comb(num_tags, 2) + comb(num_antennas, 2)


def split_series(seg: DataSegment, layout: BodyLayout = DEFAULT_LAYOUT
                 ) -> dict[tuple[int, int], ReadingSeries]:
    n_t = layout.num_tags
    keys = seg.antennas * n_t + seg.tags
    order = np.argsort(keys, kind="stable")
    bounds = np.searchsorted(keys[order], np.arange(layout.num_antennas * n_t + 1))
    out = {}
    for flat, key in enumerate(series_key_order(layout)):
        idx = order[bounds[flat]:bounds[flat + 1]]
        out[key] = ReadingSeries(key, seg.timestamps[idx], seg.rss[idx])
    return out


def mean_crossing_rate(samples: Sequence[float]) -> float:
    x = np.asarray(samples, dtype=float)
    if len(x) < 2:
        return 0.0
    s = np.sign(x - x.mean())
    return float(np.count_nonzero(s[:-1] * s[1:] < 0) / (len(x) - 1))


def _resample_grid(times: np.ndarray, start_ms: float, end_ms: float, k: int) -> np.ndarray:
    lo = min(float(times[0]), start_ms) if len(times) else start_ms
    hi = max(float(times[-1]), end_ms) if len(times) else end_ms
    return np.linspace(lo, hi, k)


def resample(series: ReadingSeries, window: tuple[float, float], k: int = 32,
             floor: float = RSS_FLOOR_DBM) -> np.ndarray:
    """Linear interpolation onto ``k`` evenly spaced points spanning window and samples.

    Empty series map to ``k`` copies of ``floor``; the ends are held constant.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(series) == 0:
        return np.full(k, float(floor))
    if len(series) == 1:
        return np.full(k, float(series.values[0]))
    grid = _resample_grid(series.times, window[0], window[1], k)
    return np.interp(grid, series.times.astype(float), series.values)


def spectral_energy(x: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    k = len(x)
    power = np.abs(np.fft.fft(x)) ** 2
    return float(power[1:].sum() / k)


def spectral_entropy(x: Sequence[float]) -> float:
    power = np.abs(np.fft.fft(np.asarray(x, dtype=float)))[1:] ** 2
    total = power.sum()
    if total <= 0:
        return 0.0
    p = power[power > 0] / total
    return float(-(p * np.log(p)).sum())


def temporal_features(series: ReadingSeries, window: tuple[float, float], k: int = 32,
                      floor: float = RSS_FLOOR_DBM) -> np.ndarray:
    if len(series) == 0:
        return empty_series_features(floor)
    v = np.asarray(series.values, dtype=float)
    r = resample(series, window, k, floor)
    return np.array([v.mean(), v.var(), v.max(), v.min(), mean_crossing_rate(v),
                     spectral_energy(r), spectral_entropy(r)])


def _is_flat(x: np.ndarray) -> bool:
    return float(np.ptp(x)) <= _FLAT_RTOL * max(1.0, float(np.abs(x).max()))


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if len(a) < 2 or _is_flat(a) or _is_flat(b):
        return 0.0
    da = a - a.mean()
    db = b - b.mean()
    r = float(da @ db / np.sqrt((da @ da) * (db @ db)))
    return min(1.0, max(-1.0, r))


def representative_series(seg: DataSegment, tag_id: int,
                          layout: BodyLayout = DEFAULT_LAYOUT) -> ReadingSeries:
    """Series of ``tag_id`` from the antenna that read it most often (lowest index on ties)."""
    counts = _counts(seg, layout)
    ant = int(np.argmax(counts[:, tag_id]))
    if counts[ant, tag_id] == 0:
        return ReadingSeries.empty((ant, tag_id))
    return split_series(seg, layout)[(ant, tag_id)]


def representative_series_for_antenna(seg: DataSegment, antenna_id: int,
                                      layout: BodyLayout = DEFAULT_LAYOUT) -> ReadingSeries:
    counts = _counts(seg, layout)
    tag = int(np.argmax(counts[antenna_id, :]))
    if counts[antenna_id, tag] == 0:
        return ReadingSeries.empty((antenna_id, tag))
    return split_series(seg, layout)[(antenna_id, tag)]


def _counts(seg: DataSegment, layout: BodyLayout) -> np.ndarray:
    n_a, n_t = layout.num_antennas, layout.num_tags
    return np.bincount(seg.antennas * n_t + seg.tags, minlength=n_a * n_t).reshape(n_a, n_t)


def _window(seg: DataSegment) -> tuple[float, float]:
    return float(seg.window_start_ms), float(seg.window_end_ms)


def spatial_features(seg: DataSegment, k: int = 32, layout: BodyLayout = DEFAULT_LAYOUT,
                     floor: float = RSS_FLOOR_DBM) -> np.ndarray:
    series = split_series(seg, layout)
    counts = _counts(seg, layout)
    win = _window(seg)
    tag_rep = [resample(series[(int(np.argmax(counts[:, t])), t)], win, k, floor)
               for t in range(layout.num_tags)]
    ant_rep = [resample(series[(a, int(np.argmax(counts[a, :])))], win, k, floor)
               for a in range(layout.num_antennas)]
    out = [pearson(tag_rep[i], tag_rep[j])
           for i in range(layout.num_tags) for j in range(i + 1, layout.num_tags)]
    out += [pearson(ant_rep[i], ant_rep[j])
            for i in range(layout.num_antennas) for j in range(i + 1, layout.num_antennas)]
    return np.array(out, dtype=float)


def _corr_upper(rows: np.ndarray) -> np.ndarray:
    centered = rows - rows.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered ** 2).sum(axis=1))
    flat = np.ptp(rows, axis=1) <= _FLAT_RTOL * np.maximum(1.0, np.abs(rows).max(axis=1))
    safe = np.where(flat, 1.0, norms)
    unit = centered / safe[:, None]
    unit[flat] = 0.0
    corr = np.clip(unit @ unit.T, -1.0, 1.0)
    iu = np.triu_indices(len(rows), 1)
    return corr[iu]


def extract(seg: DataSegment, config: PipelineConfig = PipelineConfig(),
            layout: BodyLayout = DEFAULT_LAYOUT) -> FeatureVector:
    n_a, n_t = layout.num_antennas, layout.num_tags
    if len(seg) and (seg.antennas.max() >= n_a or seg.tags.max() >= n_t):
        raise ValueError("segment contains ids outside the layout")
    k = config.resample_len
    floor = config.rss_floor_dbm
    n_series = n_a * n_t
    keys = seg.antennas * n_t + seg.tags
    order = np.argsort(keys, kind="stable")
    skeys = keys[order]
    vals = seg.rss[order]
    times = seg.timestamps[order].astype(float)
    counts = np.bincount(skeys, minlength=n_series)
    bounds = np.concatenate([[0], np.cumsum(counts)])
    present = counts > 0

    temporal = np.tile(empty_series_features(floor), (n_series, 1))
    resampled = np.full((n_series, k), float(floor))
    if len(vals):
        safe_n = np.maximum(counts, 1)
        mean = np.bincount(skeys, weights=vals, minlength=n_series) / safe_n
        dev = vals - mean[skeys]
        var = np.bincount(skeys, weights=dev * dev, minlength=n_series) / safe_n
        starts = bounds[:-1][present]
        mx = np.maximum.reduceat(vals, starts)
        mn = np.minimum.reduceat(vals, starts)
        sgn = np.sign(dev)
        cross = (sgn[:-1] * sgn[1:] < 0) & (skeys[:-1] == skeys[1:])
        n_cross = np.bincount(skeys[:-1][cross], minlength=n_series)
        mcr = np.where(counts >= 2, n_cross / np.maximum(counts - 1, 1), 0.0)

        win = _window(seg)
        for s in np.flatnonzero(present):
            lo, hi = bounds[s], bounds[s + 1]
            if hi - lo == 1:
                resampled[s] = vals[lo]
            else:
                grid = _resample_grid(times[lo:hi], win[0], win[1], k)
                resampled[s] = np.interp(grid, times[lo:hi], vals[lo:hi])
        power = np.abs(np.fft.fft(resampled[present], axis=1))[:, 1:] ** 2
        total = power.sum(axis=1)
        energy = total / k
        with np.errstate(divide="ignore", invalid="ignore"):
            p = power / np.where(total > 0, total, 1.0)[:, None]
            plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
        entropy = np.where(total > 0, -plogp.sum(axis=1), 0.0)

        temporal[present, 0] = mean[present]
        temporal[present, 1] = var[present]
        temporal[present, 2] = mx
        temporal[present, 3] = mn
        temporal[present, 4] = mcr[present]
        temporal[present, 5] = energy
        temporal[present, 6] = entropy

    counts2 = counts.reshape(n_a, n_t)
    tag_rep = resampled[np.argmax(counts2, axis=0) * n_t + np.arange(n_t)]
    ant_rep = resampled[np.arange(n_a) * n_t + np.argmax(counts2, axis=1)]
    values = np.concatenate([temporal.ravel(), _corr_upper(tag_rep), _corr_upper(ant_rep)])
    values.setflags(write=False)
    return FeatureVector(values, layout.fingerprint(k))


def write_feature_csv(path: str | Path, rows: Sequence[tuple[str, int, np.ndarray]],
                      fingerprint: str) -> None:
    """Feature dump: a ``# fingerprint=`` line, a column header, then one instance per row."""
    rows = list(rows)
    dim = len(rows[0][2]) if rows else 0
    with open(path, "w", newline="") as fh:
        fh.write(f"# fingerprint={fingerprint}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "subject_id"] + [f"f{i}" for i in range(dim)])
        for label, subject, values in rows:
            w.writerow([label, subject] + [repr(float(v)) for v in values])


def read_feature_csv(path: str | Path) -> tuple[str, list[tuple[str, int, np.ndarray]]]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# fingerprint="):
            raise ValueError(f"{path}: missing fingerprint header")
        fingerprint = first.split("=", 1)[1]
        reader = csv.reader(fh)
        next(reader)
        rows = [(r[0], int(r[1]), np.array([float(v) for v in r[2:]])) for r in reader]
    return fingerprint, rows
