"""Time-indexed measurement data: ingestion, hourly aggregation, phase split."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import EmptyDataError, OrderingError, RangeError, SchemaError

PHASE_I = "PhaseI"
PHASE_II = "PhaseII"
IN_CONTROL_SCENARIOS = ("", "baseline", "in-control")

_HOUR = np.timedelta64(1, "h")


def _as_datetime(values) -> np.ndarray:
    ts = pd.to_datetime(pd.Series(values), utc=True, format="ISO8601")
    return ts.dt.tz_localize(None).to_numpy(dtype="datetime64[ns]")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Hourly outputs ``X`` (n x p) with confounder ``z`` and phase labels.

    Timestamps are UTC ``datetime64[ns]`` and strictly increasing. Arrays are
    copied and frozen on construction.
    """

    timestamps: np.ndarray
    X: np.ndarray
    z: np.ndarray
    phase: np.ndarray
    outputs: tuple = ()
    confounder: str = "z"
    scenario: np.ndarray | None = None
    dropped: int = 0

    def __post_init__(self):
        ts = np.asarray(self.timestamps)
        if not np.issubdtype(ts.dtype, np.datetime64):
            ts = _as_datetime(ts)
        ts = ts.astype("datetime64[ns]")
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        z = np.asarray(self.z, dtype=np.float64).ravel()
        n = ts.shape[0]
        if n == 0:
            raise EmptyDataError("dataset has no rows")
        phase = np.asarray(self.phase, dtype=object)
        if phase.ndim == 0:
            phase = np.full(n, phase.item(), dtype=object)
        if X.shape[0] != n or z.shape[0] != n or phase.shape[0] != n:
            raise SchemaError(
                f"row count mismatch: timestamps={n}, X={X.shape[0]}, "
                f"z={z.shape[0]}, phase={phase.shape[0]}"
            )
        if X.shape[1] < 1:
            raise SchemaError("at least one output column is required")
        if not (np.isfinite(X).all() and np.isfinite(z).all()):
            raise SchemaError("non-finite values in outputs or confounder")
        if n > 1 and not (np.diff(ts) > np.timedelta64(0, "ns")).all():
            raise OrderingError("timestamps must be strictly increasing")
        outputs = tuple(self.outputs) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(outputs) != X.shape[1]:
            raise SchemaError("number of output names does not match X")
        scen = self.scenario
        if scen is not None:
            scen = np.asarray(scen, dtype=object)
            if scen.shape[0] != n:
                raise SchemaError("scenario labels do not match row count")
            scen = _readonly(scen)
        object.__setattr__(self, "timestamps", _readonly(ts))
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "z", _readonly(z))
        object.__setattr__(self, "phase", _readonly(phase))
        object.__setattr__(self, "outputs", outputs)
        object.__setattr__(self, "scenario", scen)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def hours(self) -> np.ndarray:
        """Timestamps as float hours since the Unix epoch."""
        return (self.timestamps - np.datetime64(0, "ns")) / _HOUR

    def gaps(self) -> list[dict]:
        """Breaks in the nominal hourly spacing."""
        if self.n < 2:
            return []
        d = np.diff(self.timestamps) / _HOUR
        idx = np.flatnonzero(d > 1.0 + 1e-9)
        return [
            {
                "after_row": int(i),
                "before_row": int(i + 1),
                "start": str(self.timestamps[i]),
                "end": str(self.timestamps[i + 1]),
                "missing_hours": float(d[i] - 1.0),
            }
            for i in idx
        ]

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(
            self,
            timestamps=self.timestamps[rows],
            X=self.X[rows],
            z=self.z[rows],
            phase=self.phase[rows],
            scenario=None if self.scenario is None else self.scenario[rows],
            dropped=0,
        )

    def in_control(self) -> np.ndarray:
        """Boolean mask of rows whose scenario label marks them in control."""
        if self.scenario is None:
            return np.ones(self.n, dtype=bool)
        return np.array([str(s) in IN_CONTROL_SCENARIOS for s in self.scenario])

    def equals(self, other: "Dataset") -> bool:
        if not isinstance(other, Dataset):
            return False
        same_scen = (self.scenario is None and other.scenario is None) or (
            self.scenario is not None
            and other.scenario is not None
            and np.array_equal(self.scenario.astype(str), other.scenario.astype(str))
        )
        return (
            np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.phase.astype(str), other.phase.astype(str))
            and self.outputs == other.outputs
            and self.confounder == other.confounder
            and same_scen
        )


@dataclass(frozen=True)
class IngestSchema:
    """Column layout of a data file. ``confounder=None`` reads no confounder
    column and fills ``z`` with zeros (enough for marginal PCA)."""

    outputs: tuple
    confounder: str | None
    timestamp: str = "timestamp"
    sentinel: str = "NA"
    delimiter: str = ","
    phase: str = "phase"
    scenario: str = "scenario"

    def __post_init__(self):
        outs = tuple(self.outputs)
        if not outs:
            raise SchemaError("at least one output column is required")
        if self.confounder in outs:
            raise SchemaError(f"confounder column {self.confounder!r} is also an output")
        if len(set(outs)) != len(outs):
            raise SchemaError("duplicate output column names")
        object.__setattr__(self, "outputs", outs)


def _to_float(col: pd.Series, sentinel: str) -> np.ndarray:
    s = col.astype(str).str.strip()
    missing = (s == sentinel) | (s == "")
    out = np.full(len(s), np.nan)
    good = ~missing.to_numpy()
    try:
        out[good] = np.array([float(v) for v in s[good]], dtype=np.float64)
    except ValueError as exc:
        raise SchemaError(f"column {col.name!r}: {exc}") from None
    return out


def load_dataset(path, schema: IngestSchema) -> Dataset:
    """Read a delimited text file into a :class:`Dataset`.

    Rows with a missing or non-finite value in any selected column are
    dropped; the count is kept in ``Dataset.dropped``.
    """
    frame = pd.read_csv(
        path, sep=schema.delimiter, dtype=str, keep_default_na=False
    )
    frame.columns = [c.strip() for c in frame.columns]
    needed = (schema.timestamp, *schema.outputs)
    if schema.confounder is not None:
        needed = needed + (schema.confounder,)
    for col in needed:
        if col not in frame.columns:
            raise SchemaError(f"missing column {col!r} in {path}")
    X = np.column_stack([_to_float(frame[c], schema.sentinel) for c in schema.outputs])
    if schema.confounder is None:
        z = np.zeros(len(frame))
    else:
        z = _to_float(frame[schema.confounder], schema.sentinel)
    ts_raw = frame[schema.timestamp].astype(str).str.strip()
    ts_ok = ((ts_raw != schema.sentinel) & (ts_raw != "")).to_numpy()
    keep = ts_ok & np.isfinite(X).all(axis=1) & np.isfinite(z)
    dropped = int((~keep).sum())
    if not keep.any():
        raise EmptyDataError(f"no usable rows in {path}")
    ts = _as_datetime(ts_raw[keep].to_numpy())
    if ts.size > 1 and not (np.diff(ts) > np.timedelta64(0, "ns")).all():
        raise OrderingError(f"timestamps in {path} are not strictly increasing")
    if schema.phase in frame.columns:
        phase = frame[schema.phase].to_numpy(dtype=object)[keep]
        phase = np.where(phase == "", PHASE_I, phase)
    else:
        phase = np.full(keep.sum(), PHASE_I, dtype=object)
    scen = None
    if schema.scenario in frame.columns:
        scen = frame[schema.scenario].to_numpy(dtype=object)[keep]
    return Dataset(
        timestamps=ts,
        X=X[keep],
        z=z[keep],
        phase=phase,
        outputs=schema.outputs,
        confounder=schema.confounder or "z",
        scenario=scen,
        dropped=dropped,
    )


def format_timestamps(ts: np.ndarray) -> list[str]:
    ts = np.asarray(ts, dtype="datetime64[ns]")
    whole = (ts.astype("int64") % 1_000_000_000 == 0).all()
    return list(np.datetime_as_string(ts, unit="s" if whole else "ns"))


def write_dataset(d: Dataset, path, delimiter: str = ",") -> None:
    """Write ``d`` so that :func:`load_dataset` reproduces it bit for bit."""
    cols = {"timestamp": format_timestamps(d.timestamps)}
    for j, name in enumerate(d.outputs):
        cols[name] = [repr(float(v)) for v in d.X[:, j]]
    cols[d.confounder] = [repr(float(v)) for v in d.z]
    cols["phase"] = [str(v) for v in d.phase]
    if d.scenario is not None:
        cols["scenario"] = [str(v) for v in d.scenario]
    pd.DataFrame(cols).to_csv(path, sep=delimiter, index=False)


def schema_for(d: Dataset, delimiter: str = ",") -> IngestSchema:
    return IngestSchema(outputs=d.outputs, confounder=d.confounder, delimiter=delimiter)


def downsample_hourly(
    timestamps,
    X,
    z,
    outputs: Sequence[str] = (),
    confounder: str = "z",
    phase: str = PHASE_I,
) -> Dataset:
    """Average high-rate samples into clock-hour buckets.

    Buckets are ``floor(timestamp)`` to the hour; hours without samples emit
    no row and show up in :meth:`Dataset.gaps`.
    """
    ts = np.asarray(timestamps)
    if not np.issubdtype(ts.dtype, np.datetime64):
        ts = _as_datetime(ts)
    ts = ts.astype("datetime64[ns]")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    z = np.asarray(z, dtype=np.float64).ravel()
    if ts.size == 0:
        raise EmptyDataError("no samples to downsample")
    if ts.size > 1 and (np.diff(ts) < np.timedelta64(0, "ns")).any():
        raise OrderingError("raw timestamps must be sorted")
    buckets = ts.astype("datetime64[h]")
    starts = np.flatnonzero(np.r_[True, buckets[1:] != buckets[:-1]])
    counts = np.diff(np.r_[starts, ts.size])
    Xh = np.add.reduceat(X, starts, axis=0) / counts[:, None]
    zh = np.add.reduceat(z, starts) / counts
    return Dataset(
        timestamps=buckets[starts].astype("datetime64[ns]"),
        X=Xh,
        z=zh,
        phase=np.full(starts.size, phase, dtype=object),
        outputs=tuple(outputs),
        confounder=confounder,
    )


def split_phases(d: Dataset, cut) -> tuple[Dataset, Dataset]:
    """Rows strictly before ``cut`` become Phase I, the rest Phase II."""
    cut = np.datetime64(_as_datetime([cut])[0]) if not isinstance(
        cut, np.datetime64) else cut.astype("datetime64[ns]")
    if not (d.timestamps[0] < cut <= d.timestamps[-1]):
        raise RangeError(
            f"cut {cut} outside ({d.timestamps[0]}, {d.timestamps[-1]}]"
        )
    k = int(np.searchsorted(d.timestamps, cut, side="left"))
    one = d.take(np.arange(k))
    two = d.take(np.arange(k, d.n))
    one = replace(one, phase=np.full(one.n, PHASE_I, dtype=object))
    two = replace(two, phase=np.full(two.n, PHASE_II, dtype=object))
    return one, two


def phase_rows(d: Dataset, label: str) -> Dataset:
    mask = d.phase.astype(str) == label
    if not mask.any():
        raise EmptyDataError(f"no rows labelled {label}")
    return d.take(np.flatnonzero(mask))


def concat(parts: Sequence[Dataset]) -> Dataset:
    first = parts[0]
    scen = None
    if all(p.scenario is not None for p in parts):
        scen = np.concatenate([p.scenario for p in parts])
    return Dataset(
        timestamps=np.concatenate([p.timestamps for p in parts]),
        X=np.vstack([p.X for p in parts]),
        z=np.concatenate([p.z for p in parts]),
        phase=np.concatenate([p.phase for p in parts]),
        outputs=first.outputs,
        confounder=first.confounder,
        scenario=scen,
    )


def gap_report(d: Dataset) -> str:
    gaps = d.gaps()
    doc = {
        "rows": d.n,
        "dropped_rows": d.dropped,
        "first": str(d.timestamps[0]),
        "last": str(d.timestamps[-1]),
        "gap_count": len(gaps),
        "missing_hours": float(sum(g["missing_hours"] for g in gaps)),
        "gaps": gaps,
    }
    return json.dumps(doc, indent=2)


def day_blocks(d_or_hours, block_len: int = 24) -> np.ndarray:
    """Start rows of complete, gap-free blocks of ``block_len`` hourly rows.

    Blocks are aligned to calendar days when ``block_len`` is 24; a block
    containing a gap is skipped.
    """
    hours = d_or_hours.hours if isinstance(d_or_hours, Dataset) else np.asarray(
        d_or_hours, dtype=np.float64)
    h = np.rint(hours).astype(np.int64)
    day = np.floor_divide(h, block_len)
    starts = []
    i, n = 0, h.size
    while i < n:
        j = i
        while j + 1 < n and day[j + 1] == day[i]:
            j += 1
        if j - i + 1 == block_len and h[j] - h[i] == block_len - 1:
            starts.append(i)
        i = j + 1
    return np.asarray(starts, dtype=np.int64)
