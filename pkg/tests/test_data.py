import numpy as np
import pytest

from wbht.data import (
    NormStats,
    SeriesTable,
    SynthConfig,
    WindowBatch,
    generate_synthetic,
    ingest_csv,
    make_windows,
    minmax_normalize,
    split_series,
    write_csv,
)
from wbht.errors import ConfigurationError, ContractError, DataError
from wbht.rng import Rng


def _table(steps=10, features=2, labels=False):
    rng = Rng(0)
    return SeriesTable(np.arange(steps), rng.normal((steps, features)),
                       [f"f{i}" for i in range(features)],
                       np.zeros(steps, dtype=int) if labels else None)


# -- ingestion -------------------------------------------------------------------


def test_ingest_well_formed(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("timestamp,a,b\n0,1.0,2.0\n1,3.0,4.0\n2,5.0,6.0\n")
    table = ingest_csv(path)
    assert len(table) == 3
    assert table.columns == ["a", "b"]
    assert table.labels is None


def test_ingest_with_labels(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("timestamp,a,label\n0,1.0,0\n1,2.0,1\n")
    table = ingest_csv(path)
    np.testing.assert_array_equal(table.labels, [0, 1])


def test_ingest_duplicate_timestamp_names_row(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("timestamp,a\n0,1.0\n0,2.0\n")
    with pytest.raises(DataError) as exc:
        ingest_csv(path)
    assert "row 3" in str(exc.value)


def test_ingest_unparseable_cell_names_row(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("timestamp,a\n0,1.0\n1,oops\n")
    with pytest.raises(DataError) as exc:
        ingest_csv(path)
    assert "row 3" in str(exc.value)


def test_ingest_ragged_row_names_row(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("timestamp,a,b\n0,1.0,2.0\n1,3.0\n")
    with pytest.raises(DataError) as exc:
        ingest_csv(path)
    assert "row 3" in str(exc.value)


def test_ingest_requires_timestamp_first(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("time,a\n0,1.0\n")
    with pytest.raises(DataError):
        ingest_csv(path)


def test_roundtrip_bit_exact(tmp_path):
    cfg = SynthConfig(seed=5, total_steps=200, bh_event_count=2, bh_duration=(5, 10))
    table = generate_synthetic(cfg)
    path = tmp_path / "series.csv"
    write_csv(table, path)
    again = ingest_csv(path)
    assert again.columns == table.columns
    assert again.features.tobytes() == table.features.tobytes()
    np.testing.assert_array_equal(again.timestamps, table.timestamps)
    np.testing.assert_array_equal(again.labels, table.labels)


def test_written_files_use_lf_and_utf8(tmp_path):
    path = tmp_path / "series.csv"
    write_csv(_table(3), path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.decode("utf-8").endswith("\n")


# -- windowing -------------------------------------------------------------------


def test_make_windows_count_formula():
    batch = make_windows(_table(10), 4, 2)
    assert len(batch) == 4  # offsets 0, 2, 4, 6
    np.testing.assert_array_equal(batch.windows[1], _table(10).features[2:6])


def test_make_windows_single_window_boundary():
    batch = make_windows(_table(6), 6, 3)
    assert len(batch) == 1


def test_make_windows_rejects_oversized_window():
    with pytest.raises(ContractError):
        make_windows(_table(5), 6, 1)


def test_window_label_is_or_of_step_labels():
    table = _table(10, labels=True)
    table.labels[5] = 1
    batch = make_windows(table, 4, 2)
    np.testing.assert_array_equal(batch.labels, [0, 1, 1, 0])


def test_windowing_covers_every_labeled_step():
    # stride <= W guarantees every step lands in some window
    rng = Rng(3)
    for seed in range(5):
        table = _table(50, labels=True)
        hits = rng.integers(0, 50, (6,))
        table.labels[...] = 0
        table.labels[hits] = 1
        for stride in (1, 3, 5):
            batch = make_windows(table, 5, stride)
            starts = np.arange(0, 50 - 5 + 1, stride)
            covered = np.zeros(50, dtype=bool)
            for s in starts:
                covered[s:s + 5] = True
            flagged = batch.labels.sum()
            expected = sum(1 for s in starts if table.labels[s:s + 5].any())
            assert flagged == expected
            if covered.all():
                assert flagged > 0


# -- normalization -----------------------------------------------------------------


def test_minmax_formula():
    batch = WindowBatch(np.array([[[0.0], [5.0], [10.0]]]))
    stats = NormStats(np.array([0.0]), np.array([10.0]))
    out = minmax_normalize(batch, stats)
    np.testing.assert_allclose(out.windows, [[[0.0], [0.5], [1.0]]])


def test_minmax_constant_feature_maps_to_zero():
    batch = WindowBatch(np.full((2, 3, 1), 7.0))
    stats = NormStats(np.array([7.0]), np.array([7.0]))
    out = minmax_normalize(batch, stats)
    np.testing.assert_array_equal(out.windows, np.zeros((2, 3, 1)))


def test_minmax_does_not_clip_out_of_range():
    batch = WindowBatch(np.array([[[20.0]]]))
    stats = NormStats(np.array([0.0]), np.array([10.0]))
    assert minmax_normalize(batch, stats).windows[0, 0, 0] == 2.0


def test_minmax_idempotent_under_same_stats():
    rng = Rng(4)
    batch = WindowBatch(rng.uniform((4, 5, 3)) * 10.0)
    stats = NormStats(batch.windows.min(axis=(0, 1)), batch.windows.max(axis=(0, 1)))
    once = minmax_normalize(batch, stats)
    zero_one = NormStats(np.zeros(3), np.ones(3))
    twice = minmax_normalize(once, zero_one)
    np.testing.assert_allclose(twice.windows, once.windows, atol=1e-15)


def test_normstats_rejects_inverted_range():
    with pytest.raises(ContractError):
        NormStats(np.array([1.0]), np.array([0.0]))


# -- synthetic generator ----------------------------------------------------------------


def test_synth_deterministic():
    cfg = SynthConfig(seed=11, total_steps=500, bh_event_count=3, bh_duration=(5, 10))
    a = generate_synthetic(cfg)
    b = generate_synthetic(cfg)
    assert a.features.tobytes() == b.features.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)


def test_synth_egress_suppressed_during_events():
    cfg = SynthConfig(seed=2, total_steps=2000, bh_event_count=5, bh_duration=(20, 40),
                      bh_suppression=0.1)
    table = generate_synthetic(cfg)
    egress = table.features[:, 1]
    bh = table.labels == 1
    assert bh.any()
    assert egress[bh].mean() < 0.2 * egress[~bh].mean()


def test_synth_ingress_unaffected_during_events():
    cfg = SynthConfig(seed=2, total_steps=2000, bh_event_count=5, bh_duration=(20, 40))
    table = generate_synthetic(cfg)
    ingress = table.features[:, 0]
    bh = table.labels == 1
    # ingress keeps flowing: same order of magnitude inside and outside
    assert ingress[bh].mean() > 0.5 * ingress[~bh].mean()


def test_synth_label_bookkeeping():
    cfg = SynthConfig(seed=3, total_steps=3000, bh_event_count=4, bh_duration=(10, 20))
    table = generate_synthetic(cfg)
    total = table.labels.sum()
    assert 4 * 10 <= total <= 4 * 20


def test_synth_events_respect_clean_region():
    cfg = SynthConfig(seed=4, total_steps=1000, bh_event_count=3, bh_duration=(5, 10),
                      bh_region_frac=0.6)
    table = generate_synthetic(cfg)
    assert table.labels[:600].sum() == 0
    assert table.labels[600:].sum() > 0


def test_synth_rejects_unfittable_events():
    with pytest.raises(ConfigurationError):
        generate_synthetic(SynthConfig(total_steps=300, bh_event_count=20,
                                       bh_duration=(20, 60)))


def test_synth_rejects_excessive_suppression():
    with pytest.raises(ConfigurationError):
        SynthConfig(bh_suppression=0.5)


def test_synth_univariate_mode():
    cfg = SynthConfig(seed=5, total_steps=300, n_features=1, bh_event_count=2,
                      bh_duration=(5, 8))
    table = generate_synthetic(cfg)
    assert table.columns == ["egress_rate"]
    assert table.features.shape == (300, 1)


def test_synth_default_columns():
    cfg = SynthConfig(seed=6, total_steps=100, bh_event_count=0)
    table = generate_synthetic(cfg)
    assert table.columns == ["ingress_packets", "egress_packets",
                             "ingress_bytes", "egress_bytes"]


def test_synth_config_roundtrip():
    cfg = SynthConfig(seed=9, total_steps=400, bh_event_count=2, bh_duration=(3, 7))
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg


# -- splitting ----------------------------------------------------------------------


def test_split_fractions():
    table = _table(100, labels=True)
    train, val, test = split_series(table, 0.6, 0.2)
    assert len(train) == 60 and len(val) == 20 and len(test) == 20
    assert train.timestamps[0] == 0 and test.timestamps[-1] == 99


def test_split_rejects_bad_fractions():
    with pytest.raises(ConfigurationError):
        split_series(_table(10), 0.8, 0.3)


def test_default_config_train_region_is_clean():
    cfg = SynthConfig(seed=1, total_steps=4000, bh_event_count=5, bh_duration=(10, 30))
    table = generate_synthetic(cfg)
    train, _, _ = split_series(table)
    assert train.labels.sum() == 0
