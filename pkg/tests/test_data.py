import numpy as np
import pytest

from rsad.data import (
    AnomalySpec,
    DataError,
    SeriesSet,
    SynthSpec,
    apply_normalize,
    concat_series,
    fit_normalize,
    make_windows,
    normal_only,
    parse_daphnet,
    segmentize,
    split,
    synth_generate,
    unapply_normalize,
    window_count,
    RawRecord,
)


def write_lines(tmp_path, lines, name="session.txt"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return path


def records_with_annotations(annotations):
    return [
        RawRecord(timestamp_ms=15 * i, channels=tuple(float(i + c) for c in range(9)), annotation=a)
        for i, a in enumerate(annotations)
    ]


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def test_parse_daphnet_sample_line(tmp_path):
    path = write_lines(tmp_path, ["15 70 39 -970 0 0 0 0 0 0 1"])
    records = parse_daphnet(path)
    assert len(records) == 1
    rec = records[0]
    assert rec.timestamp_ms == 15
    assert rec.channels == (70.0, 39.0, -970.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    assert rec.annotation == 1


def test_parse_daphnet_wrong_field_count_names_line(tmp_path):
    path = write_lines(tmp_path, ["15 70 39 -970 0 0 0 0 0 0 1", "1 2 3 4 5 6 7 8 9 0"])
    with pytest.raises(DataError, match=":2"):
        parse_daphnet(path)


def test_parse_daphnet_empty_file_distinct_error(tmp_path):
    path = write_lines(tmp_path, [])
    with pytest.raises(DataError, match="no records"):
        parse_daphnet(path)


def test_parse_daphnet_non_numeric_token(tmp_path):
    path = write_lines(tmp_path, ["15 70 x -970 0 0 0 0 0 0 1"])
    with pytest.raises(DataError, match="non-numeric"):
        parse_daphnet(path)


def test_parse_daphnet_bad_annotation(tmp_path):
    path = write_lines(tmp_path, ["15 70 39 -970 0 0 0 0 0 0 3"])
    with pytest.raises(DataError, match="annotation"):
        parse_daphnet(path)


def test_parse_daphnet_preserves_file_order(tmp_path):
    lines = [f"{15 * i} {i} 0 0 0 0 0 0 0 0 1" for i in range(5)]
    records = parse_daphnet(write_lines(tmp_path, lines))
    assert [r.timestamp_ms for r in records] == [0, 15, 30, 45, 60]


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------


def test_segmentize_splits_on_out_of_experiment_runs():
    series = segmentize(records_with_annotations([0, 0, 1, 1, 2, 1, 0, 1]))
    assert series.segment_bounds == [(0, 4), (4, 5)]
    assert series.t == 5
    assert series.labels.tolist() == [False, False, True, False, False]


def test_segmentize_all_dropped_is_error():
    with pytest.raises(DataError, match="annotation 0"):
        segmentize(records_with_annotations([0, 0, 0]))


def test_segmentize_freeze_labels():
    series = segmentize(records_with_annotations([1, 2, 2, 1]))
    assert series.labels.tolist() == [False, True, True, False]
    assert series.segment_bounds == [(0, 4)]


def test_concat_series_keeps_segments_apart():
    a = segmentize(records_with_annotations([1, 1, 1]))
    b = segmentize(records_with_annotations([1, 2]))
    merged = concat_series([a, b])
    assert merged.segment_bounds == [(0, 3), (3, 5)]
    assert merged.t == 5


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def make_series(x, labels=None, bounds=None):
    x = np.asarray(x, dtype=np.float64)
    labels = np.zeros(x.shape[1], dtype=bool) if labels is None else np.asarray(labels, bool)
    bounds = [(0, x.shape[1])] if bounds is None else bounds
    return SeriesSet(x=x, labels=labels, segment_bounds=bounds)


def test_normalize_constant_channel_clamps_std_to_zeros():
    series = make_series(np.full((1, 50), 3.7))
    stats = fit_normalize(series)
    assert stats.std[0] == 1e-8
    out = apply_normalize(series, stats)
    # mean rounding divided by the clamped std leaves ~1e-7 residue at most
    assert np.max(np.abs(out.x)) < 1e-6


def test_normalize_standardized_channel_is_identity():
    rng = np.random.default_rng(0)
    raw = rng.normal(size=(1, 400))
    raw = (raw - raw.mean()) / raw.std()
    series = make_series(raw)
    out = apply_normalize(series, fit_normalize(series))
    assert np.max(np.abs(out.x - raw)) < 1e-12


def test_normalize_moments_oracle():
    rng = np.random.default_rng(1)
    series = make_series(rng.normal(loc=5.0, scale=3.0, size=(4, 1000)))
    out = apply_normalize(series, fit_normalize(series))
    for ch in range(4):
        assert abs(out.x[ch].mean()) < 1e-10
        assert 1.0 - 1e-9 <= out.x[ch].std() <= 1.0 + 1e-9


def test_normalize_roundtrip_within_tolerance():
    rng = np.random.default_rng(2)
    series = make_series(rng.normal(loc=-2.0, scale=40.0, size=(3, 500)))
    stats = fit_normalize(series)
    restored = unapply_normalize(apply_normalize(series, stats))
    assert np.max(np.abs(restored.x - series.x)) < 1e-9


def test_unapply_without_stats_is_error():
    with pytest.raises(DataError):
        unapply_normalize(make_series(np.zeros((1, 10))))


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------


def brute_force_offsets(length, w, h, stride):
    return [s for s in range(0, length, stride) if s + w + h <= length]


def test_make_windows_counts_dense_stride():
    series = make_series(np.arange(10.0)[None, :])
    windows = make_windows(series, w=4, h=2, stride=1)
    assert len(windows) == 5
    assert [win.origin_index for win in windows] == [0, 1, 2, 3, 4]
    assert np.array_equal(windows[0].x, [[0.0, 1.0, 2.0, 3.0]])
    assert np.array_equal(windows[0].x_f, [[4.0, 5.0]])


def test_make_windows_nonoverlapping_stride():
    # offsets advance by the stride while start + w + h <= length, so a
    # 10-step segment with w=4, h=2, stride=4 fits starts 0 and 4
    series = make_series(np.arange(10.0)[None, :])
    windows = make_windows(series, w=4, h=2, stride=4)
    assert [win.origin_index for win in windows] == [0, 4]
    assert len(windows) == window_count(10, 4, 2, 4) == 2


def test_make_windows_label_true_if_any_anomalous_input_step():
    labels = np.zeros(12, dtype=bool)
    labels[5] = True
    series = make_series(np.arange(12.0)[None, :], labels=labels)
    windows = make_windows(series, w=4, h=2, stride=1)
    for win in windows:
        expected = win.origin_index <= 5 < win.origin_index + 4
        assert win.label == expected


def test_make_windows_never_cross_segments():
    series = make_series(np.arange(20.0)[None, :], bounds=[(0, 10), (10, 20)])
    windows = make_windows(series, w=4, h=2, stride=1)
    for win in windows:
        seg = 0 if win.origin_index < 10 else 1
        lo, hi = series.segment_bounds[seg]
        assert lo <= win.origin_index and win.origin_index + 4 + 2 <= hi
    assert len(windows) == 10


def test_make_windows_no_fitting_segment_is_error():
    series = make_series(np.arange(5.0)[None, :])
    with pytest.raises(DataError, match="long enough"):
        make_windows(series, w=8, h=2, stride=1)


def test_window_count_matches_brute_force_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(300):
        w = int(rng.integers(1, 12))
        h = int(rng.integers(1, 6))
        stride = int(rng.integers(1, 8))
        length = int(rng.integers(0, 80))
        expected = len(brute_force_offsets(length, w, h, stride))
        assert window_count(length, w, h, stride) == expected, (length, w, h, stride)


def test_make_windows_label_rule_brute_force():
    rng = np.random.default_rng(4)
    labels = rng.random(60) < 0.15
    series = make_series(rng.normal(size=(2, 60)), labels=labels, bounds=[(0, 25), (25, 60)])
    for win in make_windows(series, w=6, h=3, stride=2):
        assert win.label == bool(any(labels[win.origin_index + k] for k in range(6)))


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def test_split_boundaries_per_segment():
    series = make_series(np.arange(100.0)[None, :])
    with pytest.warns(UserWarning):
        train, val, test = split(series, (0.6, 0.2, 0.2))
    assert train.t == 60 and val.t == 20 and test.t == 20
    assert np.array_equal(train.x[0], np.arange(60.0))
    assert np.array_equal(val.x[0], np.arange(60.0, 80.0))
    assert np.array_equal(test.x[0], np.arange(80.0, 100.0))


def test_split_warns_when_validation_has_no_anomalies():
    series = make_series(np.arange(100.0)[None, :])
    with pytest.warns(UserWarning, match="percentile"):
        split(series, (0.6, 0.2, 0.2))


def test_split_all_normal_series_labels_stay_false():
    series = make_series(np.random.default_rng(5).normal(size=(2, 90)))
    with pytest.warns(UserWarning):
        train, val, test = split(series, (0.5, 0.25, 0.25))
    assert not train.labels.any() and not val.labels.any() and not test.labels.any()


def test_split_then_filter_removes_anomalous_training_windows():
    labels = np.zeros(120, dtype=bool)
    labels[10:20] = True
    labels[80:90] = True
    series = make_series(np.random.default_rng(6).normal(size=(2, 120)), labels=labels)
    train, _, _ = split(series, (0.6, 0.2, 0.2))
    windows = normal_only(make_windows(train, w=8, h=2, stride=1))
    assert windows
    assert all(not w.label for w in windows)


def test_split_rejects_bad_ratios():
    series = make_series(np.zeros((1, 30)))
    with pytest.raises(DataError):
        split(series, (0.5, 0.5, 0.5))
    with pytest.raises(DataError):
        split(series, (1.0, -0.5, 0.5))


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


def test_synth_no_anomalies_all_labels_false():
    series = synth_generate(SynthSpec(m=3, t=500), seed=0)
    assert series.x.shape == (3, 500)
    assert not series.labels.any()


def test_synth_spike_interval_labels_exactly():
    spec = SynthSpec(m=2, t=400, anomalies=(AnomalySpec("spike", 100, 110),))
    series = synth_generate(spec, seed=1)
    assert series.labels.sum() == 10
    assert series.labels[100:110].all()


def test_synth_same_seed_bit_identical():
    spec = SynthSpec(
        m=4,
        t=600,
        anomalies=(
            AnomalySpec("spike", 50, 60),
            AnomalySpec("frequency_shift", 200, 250, channel=1),
            AnomalySpec("correlation_break", 400, 460, channel=3),
        ),
    )
    a = synth_generate(spec, seed=9)
    b = synth_generate(spec, seed=9)
    assert a.x.tobytes() == b.x.tobytes()
    assert np.array_equal(a.labels, b.labels)
    c = synth_generate(spec, seed=10)
    assert a.x.tobytes() != c.x.tobytes()


def test_synth_overlapping_intervals_rejected():
    with pytest.raises(DataError, match="overlap"):
        SynthSpec(
            m=2,
            t=400,
            anomalies=(AnomalySpec("spike", 100, 150), AnomalySpec("spike", 140, 160)),
        )


def test_synth_anomalies_change_the_signal():
    base = SynthSpec(m=3, t=300)
    spiked = SynthSpec(m=3, t=300, anomalies=(AnomalySpec("spike", 100, 120),))
    plain = synth_generate(base, seed=3)
    marked = synth_generate(spiked, seed=3)
    assert np.max(np.abs(plain.x[:, 100:120] - marked.x[:, 100:120])) > 0.1


def test_synth_validates_bounds():
    with pytest.raises(DataError):
        SynthSpec(m=2, t=100, anomalies=(AnomalySpec("spike", 90, 120),))
    with pytest.raises(DataError):
        SynthSpec(m=2, t=100, anomalies=(AnomalySpec("spike", 10, 20, channel=5),))
    with pytest.raises(DataError):
        AnomalySpec("wiggle", 0, 10)
