import numpy as np
import pytest
from hypothesis import given, strategies as st

from rfidar.model import (
    DEFAULT_LAYOUT,
    BodyLayout,
    DataSegment,
    LayoutError,
    PipelineConfig,
    Trace,
    activity_labels,
    read_layout_manifest,
    series_key_order,
    write_layout_manifest,
)


def test_default_layout_shape():
    assert DEFAULT_LAYOUT.num_antennas == 4
    assert DEFAULT_LAYOUT.num_parts == 9
    assert DEFAULT_LAYOUT.num_tags == 36
    assert DEFAULT_LAYOUT.tags_of_part(4) == (16, 17, 18, 19)


def test_series_key_order_default():
    keys = series_key_order(DEFAULT_LAYOUT)
    assert len(keys) == 144
    assert keys[0] == (0, 0) and keys[-1] == (3, 35)


def test_series_key_order_small():
    assert series_key_order(BodyLayout.uniform(["a"], ["p"], 1)) == [(0, 0)]
    lay = BodyLayout(("a", "b"), ("p", "q", "r"), 1, (0, 1, 2))
    assert series_key_order(lay) == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]


def test_layout_rejects_uneven_parts():
    with pytest.raises(LayoutError):
        BodyLayout(("a",), ("p", "q"), 2, (0, 0, 0, 1))
    with pytest.raises(LayoutError):
        BodyLayout((), ("p",), 1, (0,))


def test_layout_manifest_roundtrip(tmp_path):
    path = tmp_path / "layout.txt"
    write_layout_manifest(DEFAULT_LAYOUT, path)
    assert read_layout_manifest(path) == DEFAULT_LAYOUT


def test_layout_manifest_errors(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("antenna,0,a\nantenna,0,b\ntag,0,p\n")
    with pytest.raises(LayoutError, match="duplicate"):
        read_layout_manifest(path)
    path.write_text("antenna,1,a\ntag,0,p\n")
    with pytest.raises(LayoutError, match="dense"):
        read_layout_manifest(path)


def test_fingerprint_tracks_layout_and_k():
    fp = DEFAULT_LAYOUT.fingerprint(32)
    assert fp == DEFAULT_LAYOUT.fingerprint(32)
    assert fp != DEFAULT_LAYOUT.fingerprint(16)
    other = BodyLayout.uniform(["a", "b"], ["p"], 4)
    assert other.fingerprint(32) != fp


def test_activity_labels_unique():
    labels = activity_labels()
    assert [l.id for l in labels] == list(range(8))
    with pytest.raises(ValueError):
        activity_labels(["a", "a"])


def test_pipeline_config_validation():
    cfg = PipelineConfig()
    assert cfg.window_len_ms == 5000
    assert cfg.history_capacity == 4
    assert PipelineConfig(window_len_s=7.0).history_capacity == 2
    assert PipelineConfig(window_len_s=20.0).history_capacity == 1
    for bad in ({"window_len_s": 0}, {"overlap_threshold": 1.5},
                {"window_len_s": 30.0}, {"resample_len": 1}):
        with pytest.raises(ValueError):
            PipelineConfig(**bad)


def test_segment_sorts_ties_by_antenna_then_tag():
    seg = DataSegment(0, 1000, [5, 5, 1], [2, 1, 3], [0, 4, 0], [-50, -51, -52])
    assert list(seg.timestamps) == [1, 5, 5]
    assert list(seg.antennas) == [3, 1, 2]
    assert list(seg.rss) == [-52, -51, -50]


def test_segment_arrays_are_read_only():
    seg = DataSegment.from_readings(0, 1000, [])
    with pytest.raises(ValueError):
        seg.rss[...] = 0


@given(st.lists(st.tuples(st.integers(0, 10_000), st.integers(0, 3), st.integers(0, 35),
                          st.floats(-95, 0)), max_size=40))
def test_trace_readings_roundtrip(rows):
    rows.sort()
    t = Trace(*zip(*rows)) if rows else Trace([], [], [], [])
    again = Trace.from_readings(t.readings())
    assert np.array_equal(again.timestamps, t.timestamps)
    assert np.array_equal(again.rss, t.rss)
