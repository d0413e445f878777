import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condpca.data import (
    PHASE_I,
    PHASE_II,
    Dataset,
    IngestSchema,
    concat,
    day_blocks,
    downsample_hourly,
    gap_report,
    load_dataset,
    split_phases,
    write_dataset,
)
from condpca.errors import EmptyDataError, OrderingError, RangeError, SchemaError

T0 = np.datetime64("2024-01-01T00:00:00", "ns")
HOUR = np.timedelta64(1, "h")


def make(n=10, p=2, seed=0, scenario=True):
    r = np.random.default_rng(seed)
    return Dataset(timestamps=T0 + np.arange(n) * HOUR, X=r.normal(size=(n, p)),
                   z=r.normal(size=n), phase=np.full(n, PHASE_I, dtype=object),
                   outputs=tuple(f"s{j}" for j in range(p)),
                   scenario=np.full(n, "baseline", dtype=object) if scenario else None)


def write_csv(path, rows, header="timestamp,s1,s2,z"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


SCHEMA = IngestSchema(outputs=("s1", "s2"), confounder="z")


def test_load_three_valid_rows(tmp_path):
    f = write_csv(tmp_path / "a.csv", ["2024-01-01T00:00:00,1,2,3",
                                       "2024-01-01T01:00:00,4,5,6",
                                       "2024-01-01T02:00:00,7,8,9"])
    d = load_dataset(f, SCHEMA)
    assert (d.n, d.dropped) == (3, 0)
    np.testing.assert_array_equal(d.X, [[1, 2], [4, 5], [7, 8]])
    np.testing.assert_array_equal(d.z, [3, 6, 9])


def test_sentinel_row_dropped(tmp_path):
    f = write_csv(tmp_path / "a.csv", ["2024-01-01T00:00:00,1,2,3",
                                       "2024-01-01T01:00:00,NA,5,6",
                                       "2024-01-01T02:00:00,7,8,9"])
    d = load_dataset(f, SCHEMA)
    assert (d.n, d.dropped) == (2, 1)


def test_missing_confounder_column_named(tmp_path):
    f = write_csv(tmp_path / "a.csv", ["2024-01-01T00:00:00,1,2"], header="timestamp,s1,s2")
    with pytest.raises(SchemaError, match="'z'"):
        load_dataset(f, SCHEMA)


def test_optional_confounder(tmp_path):
    f = write_csv(tmp_path / "a.csv", ["2024-01-01T00:00:00,1,2"], header="timestamp,s1,s2")
    d = load_dataset(f, IngestSchema(outputs=("s1", "s2"), confounder=None))
    np.testing.assert_array_equal(d.z, [0.0])


def test_unsorted_and_empty(tmp_path):
    f = write_csv(tmp_path / "a.csv", ["2024-01-01T01:00:00,1,2,3",
                                       "2024-01-01T00:00:00,4,5,6"])
    with pytest.raises(OrderingError):
        load_dataset(f, SCHEMA)
    g = write_csv(tmp_path / "b.csv", ["2024-01-01T00:00:00,NA,2,3"])
    with pytest.raises(EmptyDataError):
        load_dataset(g, SCHEMA)


def test_schema_invariants():
    with pytest.raises(SchemaError):
        IngestSchema(outputs=(), confounder="z")
    with pytest.raises(SchemaError):
        IngestSchema(outputs=("z", "a"), confounder="z")


def test_custom_delimiter(tmp_path):
    f = tmp_path / "a.tsv"
    f.write_text("timestamp;s1;s2;z\n2024-01-01T00:00:00;1;2;3\n")
    d = load_dataset(f, IngestSchema(outputs=("s1", "s2"), confounder="z", delimiter=";"))
    assert d.n == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_round_trip_bit_exact(tmp_path_factory, n, p, seed):
    d = make(n, p, seed)
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_dataset(d, path)
    back = load_dataset(path, IngestSchema(outputs=d.outputs, confounder="z"))
    assert back.equals(d)
    assert back.X.tobytes() == d.X.tobytes()


def test_dataset_invariants():
    d = make(5)
    with pytest.raises(Exception):
        Dataset(timestamps=d.timestamps[::-1], X=d.X, z=d.z, phase=d.phase, outputs=d.outputs)
    bad = d.X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(Exception):
        Dataset(timestamps=d.timestamps, X=bad, z=d.z, phase=d.phase, outputs=d.outputs)
    with pytest.raises(ValueError):
        d.X[0, 0] = 1.0  # read-only


def test_downsample_constant_hour():
    ts = T0 + np.arange(3600) * np.timedelta64(1, "s")
    c = 2.75
    d = downsample_hourly(ts, np.full((3600, 1), c), np.full(3600, -c))
    assert d.n == 1
    assert d.X[0, 0] == c and d.z[0] == -c


def test_downsample_two_samples_mean():
    ts = T0 + np.array([0, 1800], dtype="timedelta64[s]")
    d = downsample_hourly(ts, np.array([[1.0], [3.0]]), np.array([0.0, 0.0]))
    assert d.X[0, 0] == 2.0


def test_downsample_empty_hour_recorded():
    # brute-force bucket enumeration oracle
    secs = np.array([0, 600, 7200 + 5, 7200 + 900])
    ts = T0 + secs.astype("timedelta64[s]")
    X = np.array([[1.0], [2.0], [10.0], [20.0]])
    d = downsample_hourly(ts, X, np.zeros(4))
    buckets = {}
    for s, x in zip(secs, X[:, 0]):
        buckets.setdefault(s // 3600, []).append(x)
    assert d.n == len(buckets) == 2
    np.testing.assert_array_equal(d.X[:, 0], [np.mean(v) for _, v in sorted(buckets.items())])
    gaps = d.gaps()
    assert len(gaps) == 1 and gaps[0]["missing_hours"] == 1
    assert json.loads(gap_report(d))["gap_count"] == 1


def test_downsample_unsorted():
    ts = T0 + np.array([10, 0], dtype="timedelta64[s]")
    with pytest.raises(OrderingError):
        downsample_hourly(ts, np.ones((2, 1)), np.ones(2))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_downsample_idempotent_on_hourly(n, seed):
    d = make(n, 2, seed, scenario=False)
    again = downsample_hourly(d.timestamps, d.X, d.z, outputs=d.outputs)
    np.testing.assert_array_equal(again.X, d.X)
    np.testing.assert_array_equal(again.z, d.z)
    np.testing.assert_array_equal(again.timestamps, d.timestamps)


def test_split_counts_and_errors():
    d = make(10)
    one, two = split_phases(d, d.timestamps[7])
    assert (one.n, two.n) == (7, 3)
    assert set(one.phase) == {PHASE_I} and set(two.phase) == {PHASE_II}
    with pytest.raises(RangeError):
        split_phases(d, d.timestamps[0] - HOUR)
    with pytest.raises(RangeError):
        split_phases(d, d.timestamps[-1] + HOUR)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 50), st.data())
def test_split_partitions(n, data):
    d = make(n)
    k = data.draw(st.integers(1, n - 1))
    one, two = split_phases(d, d.timestamps[k])
    back = concat([one, two])
    np.testing.assert_array_equal(back.X, d.X)
    np.testing.assert_array_equal(back.timestamps, d.timestamps)
    assert one.n + two.n == n


def test_day_blocks_skip_gaps():
    hours = np.concatenate([np.arange(48), np.arange(49, 96)])
    # day 2 lacks hour 48; day 3 starts at row 71
    assert list(day_blocks(hours)) == [0, 24, 71]
    assert list(day_blocks(np.arange(30))) == [0]


def test_in_control_labels():
    d = make(4)
    d2 = Dataset(timestamps=d.timestamps, X=d.X, z=d.z, phase=d.phase, outputs=d.outputs,
                 scenario=np.array(["baseline", "A", "", "C"], dtype=object))
    np.testing.assert_array_equal(d2.in_control(), [True, False, True, False])


def test_written_file_is_plain_csv(tmp_path):
    d = make(3)
    write_dataset(d, tmp_path / "x.csv")
    frame = pd.read_csv(tmp_path / "x.csv")
    assert list(frame.columns) == ["timestamp", "s0", "s1", "z", "phase", "scenario"]
