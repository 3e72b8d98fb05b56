"""Trace-to-instance plumbing and the streaming recognizer."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import svm
from .features import extract, feature_dim
from .model import DEFAULT_LAYOUT, BodyLayout, DataSegment, PipelineConfig, TagReading, Trace
from .sim import read_manifest
from .stream import (
    HistoryBuffer,
    Segmenter,
    complete,
    completed_segments,
    load_trace,
    push_history,
    segment_trace,
)


def trace_segments(trace: Trace, config: PipelineConfig, layout: BodyLayout = DEFAULT_LAYOUT,
                   completion: bool = True) -> list[DataSegment]:
    raw = segment_trace(trace, config.window_len_s)
    return list(completed_segments(raw, config.window_len_s, config.history_span_s,
                                   config.overlap_threshold, layout, enabled=completion))


def build_instances(traces: Sequence[Trace], config: PipelineConfig,
                    layout: BodyLayout = DEFAULT_LAYOUT, class_names: Sequence[str] | None = None,
                    completion: bool = True) -> svm.InstanceSet:
    """One instance per window of every trace; history never crosses trace boundaries."""
    if class_names is None:
        class_names = sorted({t.label for t in traces if t.label is not None})
    class_names = tuple(class_names)
    lookup = {n: i for i, n in enumerate(class_names)}
    rows, labels, subjects = [], [], []
    for trace in traces:
        if trace.label not in lookup:
            raise ValueError(f"trace label {trace.label!r} not among classes {class_names}")
        cfg = config if trace.rss_floor == config.rss_floor_dbm else \
            replace(config, rss_floor_dbm=trace.rss_floor)
        for seg in trace_segments(trace, cfg, layout, completion):
            rows.append(extract(seg, cfg, layout).values)
            labels.append(lookup[trace.label])
            subjects.append(-1 if trace.subject is None else trace.subject)
    dim = feature_dim(layout.num_antennas, layout.num_tags)
    X = np.stack(rows) if rows else np.zeros((0, dim))
    return svm.InstanceSet(X, labels, layout.fingerprint(config.resample_len), class_names,
                           subjects)


def load_dataset(data_dir: str | Path, layout: BodyLayout | None = None
                 ) -> tuple[list[Trace], BodyLayout, tuple[str, ...]]:
    """Load traces listed in ``manifest.csv``; the layout comes from ``layout.txt`` if present."""
    from .model import read_layout_manifest

    d = Path(data_dir)
    if layout is None:
        layout = read_layout_manifest(d / "layout.txt") if (d / "layout.txt").exists() \
            else DEFAULT_LAYOUT
    rows = read_manifest(d / "manifest.csv")
    traces = []
    names: list[str] = []
    for r in rows:
        t = load_trace(d / r.file, layout, subject=r.subject)
        if t.label is None:
            t = Trace(t.timestamps, t.antennas, t.tags, t.rss, r.activity, r.subject)
        traces.append(t)
        if r.activity not in names:
            names.append(r.activity)
    return traces, layout, tuple(names)


@dataclass
class WindowResult:
    window_end_ms: int
    label: int
    votes: np.ndarray
    elapsed_s: float
    segment: DataSegment


class Recognizer:
    """Online recognizer: completes and classifies each window as it closes.

    ``rss_transform`` maps raw RSS before segmentation (per-subject z-score
    for models trained on normalized data).
    """

    def __init__(self, model: svm.SvmModel, config: PipelineConfig,
                 layout: BodyLayout = DEFAULT_LAYOUT, completion: bool = True,
                 rss_transform=None, extra_delay_s: float = 0.0):
        fp = layout.fingerprint(config.resample_len)
        if fp != model.fingerprint:
            raise svm.FingerprintMismatch(f"model layout {model.fingerprint} != pipeline {fp}")
        self.model = model
        self.config = config
        self.layout = layout
        self.completion = completion
        self.rss_transform = rss_transform
        self.extra_delay_s = extra_delay_s
        self._segmenter = Segmenter(config.window_len_ms)
        self._history = HistoryBuffer.for_config(config.window_len_s, config.history_span_s)

    def process_segment(self, raw: DataSegment) -> WindowResult:
        t0 = time.perf_counter()
        seg = complete(raw, self._history, self.config.overlap_threshold, self.layout) \
            if self.completion else raw
        fv = extract(seg, self.config, self.layout)
        label, votes = svm.predict(self.model, fv)
        if self.extra_delay_s:
            time.sleep(self.extra_delay_s)
        elapsed = time.perf_counter() - t0
        self._history = push_history(self._history, raw)
        return WindowResult(raw.window_end_ms, label, votes, elapsed, seg)

    def push(self, reading: TagReading) -> list[WindowResult]:
        if self.rss_transform is not None:
            reading = TagReading(reading.timestamp_ms, reading.antenna_id, reading.tag_id,
                                 float(self.rss_transform(reading.rss_dbm)))
        return [self.process_segment(s) for s in self._segmenter.push(reading)]

    def flush(self) -> list[WindowResult]:
        return [self.process_segment(s) for s in self._segmenter.flush()]

    def run(self, readings: Iterable[TagReading]) -> Iterator[WindowResult]:
        for r in readings:
            yield from self.push(r)
        yield from self.flush()
