"""Survival records, two-sample datasets, CSV ingestion and follow-up diagnostics."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .exceptions import DegenerateError, ParseError, SchemaError, ValidationError


class SurvivalRecord(NamedTuple):
    time: float
    status: int
    x_covariates: tuple[float, ...] = ()
    z_covariates: tuple[float, ...] = ()


def _as_matrix(values, n: int, name: str) -> np.ndarray:
    if values is None:
        return np.empty((n, 0))
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(n, -1) if n else arr.reshape(0, 0)
    if arr.shape[0] != n:
        raise ValidationError(f"{name} has {arr.shape[0]} rows, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains missing or non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class SurvivalSample:
    """Right-censored observations of one group, stored column-wise.

    ``status`` is 1 for an observed event and 0 for a censored follow-up
    time. ``x`` holds incidence covariates (no intercept column) and ``z``
    latency covariates; both may have zero columns.
    """

    time: np.ndarray
    status: np.ndarray
    x: np.ndarray = None
    z: np.ndarray = None
    label: int = 1

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).ravel()
        status_raw = np.asarray(self.status).ravel()
        if status_raw.shape != time.shape:
            raise ValidationError("time and status must have the same length")
        if not np.all(np.isfinite(time)):
            bad = int(np.flatnonzero(~np.isfinite(time))[0])
            raise ValidationError(f"row {bad + 1}: time must be finite")
        if np.any(time < 0):
            bad = int(np.flatnonzero(time < 0)[0])
            raise ValidationError(f"row {bad + 1}: time must be nonnegative, got {time[bad]}")
        status_f = status_raw.astype(float)
        ok = (status_f == 0) | (status_f == 1)
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0])
            raise ValidationError(f"row {bad + 1}: status must be 0 or 1, got {status_raw[bad]}")
        n = time.shape[0]
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "status", status_f.astype(np.int8))
        object.__setattr__(self, "x", _as_matrix(self.x, n, "x covariates"))
        object.__setattr__(self, "z", _as_matrix(self.z, n, "z covariates"))
        for arr in (self.time, self.status, self.x, self.z):
            arr.flags.writeable = False

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def n_events(self) -> int:
        return int(self.status.sum())

    @property
    def records(self) -> list[SurvivalRecord]:
        return [
            SurvivalRecord(float(t), int(s), tuple(map(float, xi)), tuple(map(float, zi)))
            for t, s, xi, zi in zip(self.time, self.status, self.x, self.z)
        ]

    @classmethod
    def from_records(cls, records: Iterable, label: int = 1) -> "SurvivalSample":
        recs = [r if isinstance(r, SurvivalRecord) else SurvivalRecord(*r) for r in records]
        if not recs:
            raise ValidationError("a sample needs at least one record")
        dims_x = {len(r.x_covariates) for r in recs}
        dims_z = {len(r.z_covariates) for r in recs}
        if len(dims_x) > 1 or len(dims_z) > 1:
            raise ValidationError("records have inconsistent covariate dimensions")
        n = len(recs)
        return cls(
            time=[r.time for r in recs],
            status=[r.status for r in recs],
            x=np.array([r.x_covariates for r in recs], dtype=float).reshape(n, dims_x.pop()),
            z=np.array([r.z_covariates for r in recs], dtype=float).reshape(n, dims_z.pop()),
            label=label,
        )

    def take(self, index, label: int | None = None) -> "SurvivalSample":
        if not isinstance(index, slice):
            index = np.asarray(index)
        return SurvivalSample(
            self.time[index], self.status[index], self.x[index], self.z[index],
            self.label if label is None else label,
        )

    def scaled(self, c: float) -> "SurvivalSample":
        """Copy with every follow-up time multiplied by ``c``."""
        return SurvivalSample(self.time * c, self.status, self.x, self.z, self.label)

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, SurvivalSample):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.status, other.status)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.z, other.z)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class TwoSampleDataset:
    sample1: SurvivalSample
    sample2: SurvivalSample
    group_values: tuple[str, str] = ("1", "2")

    def __post_init__(self):
        s1, s2 = self.sample1, self.sample2
        if s1.x.shape[1] != s2.x.shape[1] or s1.z.shape[1] != s2.z.shape[1]:
            raise ValidationError("covariate dimensions differ between the two samples")

    @property
    def n1(self) -> int:
        return self.sample1.n

    @property
    def n2(self) -> int:
        return self.sample2.n

    @property
    def a_n(self) -> float:
        return math.sqrt(self.n1 * self.n2 / (self.n1 + self.n2))

    def pooled(self) -> SurvivalSample:
        """Concatenation of both samples, group 1 first."""
        s1, s2 = self.sample1, self.sample2
        return SurvivalSample(
            np.concatenate([s1.time, s2.time]),
            np.concatenate([s1.status, s2.status]),
            np.vstack([s1.x, s2.x]),
            np.vstack([s1.z, s2.z]),
            label=0,
        )

    def swapped(self) -> "TwoSampleDataset":
        return TwoSampleDataset(
            self.sample2.take(slice(None), label=1),
            self.sample1.take(slice(None), label=2),
            (self.group_values[1], self.group_values[0]),
        )

    def scaled(self, c: float) -> "TwoSampleDataset":
        return TwoSampleDataset(self.sample1.scaled(c), self.sample2.scaled(c), self.group_values)

    def __eq__(self, other):
        if not isinstance(other, TwoSampleDataset):
            return NotImplemented
        return self.sample1 == other.sample1 and self.sample2 == other.sample2

    __hash__ = None


@dataclass(frozen=True)
class CsvSchema:
    """Column names used to read a survival CSV file."""

    time: str = "time"
    status: str = "status"
    group: str | None = None
    x: tuple[str, ...] = ()
    z: tuple[str, ...] = ()

    def columns(self) -> list[str]:
        cols = [self.time, self.status]
        if self.group is not None:
            cols.append(self.group)
        for c in (*self.x, *self.z):
            if c not in cols:
                cols.append(c)
        return cols


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"), newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _number(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(f"row {row}: column '{column}' is not numeric: {text!r}", row=row) from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}: column '{column}' is not finite: {text!r}", row=row)
    return value


def parse_csv(source, schema: CsvSchema | None = None):
    """Read a header-first UTF-8 CSV into a sample or a two-sample dataset.

    Without a group column a single :class:`SurvivalSample` is returned.
    With one, the distinct group values are sorted lexicographically and the
    first becomes sample 1.
    """
    schema = schema or CsvSchema()
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("empty input: header row required") from None
        for col in schema.columns():
            if col not in header:
                raise SchemaError(f"missing column '{col}'", column=col)
        pos = {name: header.index(name) for name in schema.columns()}
        times, statuses, groups, xs, zs = [], [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise ParseError(f"row {row_no}: expected {len(header)} fields, got {len(row)}", row=row_no)
            cell = lambda name: row[pos[name]].strip()  # noqa: E731
            t = _number(cell(schema.time), row_no, schema.time)
            s = _number(cell(schema.status), row_no, schema.status)
            if t < 0:
                raise ValidationError(f"row {row_no}: time must be nonnegative, got {t}", row=row_no)
            if s not in (0.0, 1.0):
                raise ValidationError(f"row {row_no}: status must be 0 or 1, got {cell(schema.status)}", row=row_no)
            times.append(t)
            statuses.append(int(s))
            xs.append([_number(cell(c), row_no, c) for c in schema.x])
            zs.append([_number(cell(c), row_no, c) for c in schema.z])
            if schema.group is not None:
                g = cell(schema.group)
                if g == "":
                    raise ParseError(f"row {row_no}: missing group value", row=row_no)
                groups.append(g)
    finally:
        if isinstance(source, (str, os.PathLike)):
            fh.close()

    if not times:
        raise ValidationError("no data rows")
    n = len(times)
    time = np.asarray(times)
    status = np.asarray(statuses)
    x = np.asarray(xs, dtype=float).reshape(n, len(schema.x))
    z = np.asarray(zs, dtype=float).reshape(n, len(schema.z))
    if schema.group is None:
        return SurvivalSample(time, status, x, z, label=1)

    levels = sorted(set(groups))
    if len(levels) != 2:
        raise ValidationError(f"group column '{schema.group}' must have exactly 2 values, found {len(levels)}")
    g = np.asarray(groups)
    m1, m2 = g == levels[0], g == levels[1]
    return TwoSampleDataset(
        SurvivalSample(time[m1], status[m1], x[m1], z[m1], label=1),
        SurvivalSample(time[m2], status[m2], x[m2], z[m2], label=2),
        group_values=(levels[0], levels[1]),
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def to_csv(data, schema: CsvSchema | None = None) -> str:
    """Serialize a sample or dataset so that :func:`parse_csv` reads it back unchanged."""
    schema = schema or CsvSchema()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if isinstance(data, TwoSampleDataset):
        group = schema.group or "group"
        parts = [(data.group_values[0], data.sample1), (data.group_values[1], data.sample2)]
    else:
        group = None
        parts = [(None, data)]
    header = [schema.time, schema.status] + ([group] if group else []) + list(schema.x) + list(schema.z)
    writer.writerow(header)
    for level, sample in parts:
        if sample.x.shape[1] != len(schema.x) or sample.z.shape[1] != len(schema.z):
            raise SchemaError("schema covariate columns do not match the data")
        for t, s, xi, zi in zip(sample.time, sample.status, sample.x, sample.z):
            row = [_fmt(t), str(int(s))] + ([level] if group else [])
            row += [_fmt(v) for v in xi] + [_fmt(v) for v in zi]
            writer.writerow(row)
    return buf.getvalue()


@dataclass(frozen=True)
class SampleDiagnostics:
    label: int
    n: int
    n_events: int
    censoring_rate: float
    last_event_time: float
    plateau_size: int
    plateau_fraction: float
    follow_up_warning: bool


@dataclass(frozen=True)
class DatasetDiagnostics:
    samples: tuple[SampleDiagnostics, ...]
    plateau_threshold: float
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "plateau_threshold": self.plateau_threshold,
            "samples": [asdict(s) for s in self.samples],
            "warnings": list(self.warnings),
        }


def sample_diagnostics(sample: SurvivalSample, plateau_threshold: float = 0.05) -> SampleDiagnostics:
    events = sample.status == 1
    if not events.any():
        raise DegenerateError(f"sample {sample.label}: no events: MST undefined")
    last = float(sample.time[events].max())
    plateau = int(np.count_nonzero((sample.status == 0) & (sample.time > last)))
    frac = plateau / sample.n
    return SampleDiagnostics(
        label=sample.label,
        n=sample.n,
        n_events=int(events.sum()),
        censoring_rate=1.0 - events.mean(),
        last_event_time=last,
        plateau_size=plateau,
        plateau_fraction=frac,
        follow_up_warning=frac < plateau_threshold,
    )


def validate_dataset(ds: TwoSampleDataset | SurvivalSample, plateau_threshold: float = 0.05) -> DatasetDiagnostics:
    """Per-sample size, censoring and plateau summary with a sufficient-follow-up flag.

    The plateau counts censored observations strictly after the last event
    time. A plateau fraction under ``plateau_threshold`` raises the flag.
    """
    samples: Sequence[SurvivalSample]
    samples = (ds,) if isinstance(ds, SurvivalSample) else (ds.sample1, ds.sample2)
    diags = tuple(sample_diagnostics(s, plateau_threshold) for s in samples)
    warnings = tuple(
        f"sample {d.label}: plateau holds {d.plateau_fraction:.1%} of observations "
        f"(< {plateau_threshold:.0%}); follow-up may be insufficient"
        for d in diags
        if d.follow_up_warning
    )
    return DatasetDiagnostics(diags, plateau_threshold, warnings)
