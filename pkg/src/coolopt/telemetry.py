"""Telemetry ingest, validation and cleaning.

Raw plant telemetry arrives as a CSV on a 10-minute grid.  Parsing turns each
data row into a :class:`TelemetryRecord` (or a reject), cleaning sorts,
deduplicates and drops rows that break the record invariants, and the result
is held column-wise in a :class:`CleanDataset`.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import AllRowsInvalid, EmptyFile, InvalidConfig, MissingColumn, RowParseError

log = logging.getLogger(__name__)

STEP = timedelta(minutes=10)
STEP_MINUTES = 10
N_LOOPS = 3

# multiplicative factor to L/s
FLOW_UNITS = {
    "L/s": 1.0,
    "m3/h": 1.0 / 3.6,
    "GPM": 0.0630901964,
}

REQUIRED_FIELDS = (
    "timestamp", "p_it", "t_sup",
    "t_ret_1", "t_ret_2", "t_ret_3",
    "q_1", "q_2", "q_3",
    "p_acc",
)
OPTIONAL_FIELDS = ("p_total", "pue", "waste_heat_1", "waste_heat_2", "waste_heat_3")

_TS_FORMATS = ("%m/%d/%Y %H:%M", "%m/%d/%Y %H:%M:%S", "%Y/%m/%d %H:%M")


@dataclass(frozen=True)
class TelemetryRecord:
    timestamp: datetime
    p_it: float
    t_sup: float
    t_ret: tuple
    q: tuple
    p_acc: float
    p_total: Optional[float] = None
    pue: Optional[float] = None
    waste_heat: Optional[tuple] = None

    def violations(self):
        """Names of the record invariants this record breaks."""
        bad = []
        numeric = (self.p_it, self.t_sup, self.p_acc, *self.t_ret, *self.q)
        if not all(math.isfinite(v) for v in numeric):
            bad.append("non_finite")
        if not self.p_it > 0:
            bad.append("p_it_not_positive")
        if not self.p_acc >= 0:
            bad.append("p_acc_negative")
        if any(not v >= 0 for v in self.q):
            bad.append("flow_negative")
        if self.pue is not None and not self.pue >= 1.0:
            bad.append("pue_below_one")
        ts = self.timestamp
        if ts.minute % STEP_MINUTES or ts.second or ts.microsecond:
            bad.append("off_grid_timestamp")
        return bad


@dataclass(frozen=True)
class CalendarContext:
    hour: int
    month: int
    weekday: int
    low_load_flag: bool


@dataclass
class ColumnSchema:
    """Maps logical telemetry fields to CSV header names.

    ``flow_unit`` declares the unit of the flow columns in the file; flows are
    converted to L/s at parse time.
    """

    columns: dict = field(default_factory=dict)
    flow_unit: str = "L/s"

    def __post_init__(self):
        if self.flow_unit not in FLOW_UNITS:
            raise InvalidConfig(f"unknown flow unit {self.flow_unit!r}; expected one of {sorted(FLOW_UNITS)}")
        unknown = set(self.columns) - set(REQUIRED_FIELDS) - set(OPTIONAL_FIELDS)
        if unknown:
            raise InvalidConfig(f"unknown schema fields: {sorted(unknown)}")

    def column(self, name):
        return self.columns.get(name, name)


@dataclass
class ParsedTelemetry:
    records: list
    rejects: list  # RowParseError instances
    n_rows: int


def _parse_timestamp(text):
    text = text.strip()
    try:
        ts = datetime.fromisoformat(text)
    except ValueError:
        for fmt in _TS_FORMATS:
            try:
                ts = datetime.strptime(text, fmt)
                break
            except ValueError:
                continue
        else:
            raise ValueError(f"unrecognised timestamp {text!r}")
    # facility-local wall time; any offset is dropped, not converted
    return ts.replace(tzinfo=None)


def _parse_float(text):
    text = text.strip()
    if not text:
        raise ValueError("blank")
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("not finite")
    return value


def parse_telemetry_csv(path, schema=None, strict=False):
    """Read a telemetry CSV into records.

    Rows whose required fields cannot be parsed are returned in
    ``rejects`` as :class:`RowParseError` objects carrying the file line
    number (header is line 1).  With ``strict=True`` the first bad row raises
    instead.
    """
    schema = schema or ColumnSchema()
    path = Path(path)
    flow_factor = FLOW_UNITS[schema.flow_unit]
    records, rejects = [], []
    n_rows = 0
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyFile(f"{path}: no header row") from None
        index = {name: i for i, name in enumerate(header)}
        for name in REQUIRED_FIELDS:
            if schema.column(name) not in index:
                raise MissingColumn(schema.column(name))
        optional = {name: index[schema.column(name)] for name in OPTIONAL_FIELDS if schema.column(name) in index}

        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            n_rows += 1
            if len(row) != len(header):
                err = RowParseError(line_no, "*", f"expected {len(header)} fields, got {len(row)}")
                if strict:
                    raise err
                rejects.append(err)
                continue
            values = {}
            err = None
            for name in REQUIRED_FIELDS:
                col = schema.column(name)
                text = row[index[col]]
                try:
                    values[name] = _parse_timestamp(text) if name == "timestamp" else _parse_float(text)
                except ValueError as exc:
                    err = RowParseError(line_no, col, str(exc))
                    break
            if err is not None:
                if strict:
                    raise err
                rejects.append(err)
                continue
            opt = {}
            for name, i in optional.items():
                try:
                    opt[name] = _parse_float(row[i])
                except ValueError:
                    opt[name] = None
            waste = tuple(opt.get(f"waste_heat_{k}") for k in (1, 2, 3))
            records.append(TelemetryRecord(
                timestamp=values["timestamp"],
                p_it=values["p_it"],
                t_sup=values["t_sup"],
                t_ret=(values["t_ret_1"], values["t_ret_2"], values["t_ret_3"]),
                q=tuple(values[f"q_{k}"] * flow_factor for k in (1, 2, 3)),
                p_acc=values["p_acc"],
                p_total=opt.get("p_total"),
                pue=opt.get("pue"),
                waste_heat=None if all(w is None for w in waste) else waste,
            ))
    if n_rows == 0:
        raise EmptyFile(f"{path}: no data rows")
    log.info("parsed %d rows from %s (%d rejected)", n_rows, path, len(rejects))
    return ParsedTelemetry(records=records, rejects=rejects, n_rows=n_rows)


@dataclass
class CleanDataset:
    """Column-wise, time-ordered telemetry that satisfies every record invariant.

    ``timestamps`` is ``datetime64[m]``; absent optional values are NaN.
    """

    timestamps: np.ndarray
    p_it: np.ndarray
    t_sup: np.ndarray
    t_ret: np.ndarray  # (n, 3)
    q: np.ndarray  # (n, 3), L/s
    p_acc: np.ndarray
    p_total: np.ndarray
    pue: np.ndarray
    waste_heat: np.ndarray  # (n, 3)
    gaps: list = field(default_factory=list)
    duplicates: list = field(default_factory=list)
    removed: list = field(default_factory=list)  # (timestamp, reasons)

    def __len__(self):
        return len(self.timestamps)

    @classmethod
    def from_arrays(cls, timestamps, p_it, t_sup, t_ret, q, p_acc, p_total=None, pue=None, waste_heat=None):
        n = len(timestamps)
        nan = np.full(n, np.nan)
        return cls(
            timestamps=np.asarray(timestamps, dtype="datetime64[m]"),
            p_it=np.asarray(p_it, dtype=float),
            t_sup=np.asarray(t_sup, dtype=float),
            t_ret=np.asarray(t_ret, dtype=float).reshape(n, N_LOOPS),
            q=np.asarray(q, dtype=float).reshape(n, N_LOOPS),
            p_acc=np.asarray(p_acc, dtype=float),
            p_total=nan.copy() if p_total is None else np.asarray(p_total, dtype=float),
            pue=nan.copy() if pue is None else np.asarray(pue, dtype=float),
            waste_heat=np.full((n, N_LOOPS), np.nan) if waste_heat is None else np.asarray(waste_heat, dtype=float),
        )

    @property
    def records(self):
        out = []
        for i in range(len(self)):
            wh = self.waste_heat[i]
            out.append(TelemetryRecord(
                timestamp=self.timestamps[i].astype(datetime),
                p_it=float(self.p_it[i]),
                t_sup=float(self.t_sup[i]),
                t_ret=tuple(float(v) for v in self.t_ret[i]),
                q=tuple(float(v) for v in self.q[i]),
                p_acc=float(self.p_acc[i]),
                p_total=None if np.isnan(self.p_total[i]) else float(self.p_total[i]),
                pue=None if np.isnan(self.pue[i]) else float(self.pue[i]),
                waste_heat=None if np.isnan(wh).all() else tuple(None if np.isnan(v) else float(v) for v in wh),
            ))
        return out

    def subset(self, mask):
        return CleanDataset.from_arrays(
            self.timestamps[mask], self.p_it[mask], self.t_sup[mask], self.t_ret[mask], self.q[mask],
            self.p_acc[mask], self.p_total[mask], self.pue[mask], self.waste_heat[mask],
        )

    def to_frame(self):
        import pandas as pd

        df = pd.DataFrame({"timestamp": self.timestamps.astype("datetime64[s]")})
        df["p_it"] = self.p_it
        df["t_sup"] = self.t_sup
        for k in range(N_LOOPS):
            df[f"t_ret_{k + 1}"] = self.t_ret[:, k]
        for k in range(N_LOOPS):
            df[f"q_{k + 1}"] = self.q[:, k]
        df["p_acc"] = self.p_acc
        df["p_total"] = self.p_total
        df["pue"] = self.pue
        for k in range(N_LOOPS):
            df[f"waste_heat_{k + 1}"] = self.waste_heat[:, k]
        return df


def clean_and_order(records):
    """Sort by time, drop duplicate timestamps and invalid rows, report gaps.

    Duplicate timestamps keep the first occurrence in input order.  Every
    dropped row is logged and listed on the returned dataset.
    """
    if not records:
        raise ValueError("clean_and_order needs at least one record")
    removed = []
    valid = []
    for rec in records:
        bad = rec.violations()
        if bad:
            removed.append((rec.timestamp, tuple(bad)))
            log.warning("dropping record at %s: %s", rec.timestamp, ",".join(bad))
        else:
            valid.append(rec)
    if not valid:
        raise AllRowsInvalid(f"all {len(records)} records violate telemetry invariants")

    ordered = sorted(valid, key=lambda r: r.timestamp)  # stable: first occurrence wins
    kept, duplicates = [], []
    for rec in ordered:
        if kept and rec.timestamp == kept[-1].timestamp:
            duplicates.append(rec.timestamp)
            log.warning("duplicate timestamp %s dropped", rec.timestamp)
            continue
        kept.append(rec)

    gaps = []
    for prev, cur in zip(kept, kept[1:]):
        t = prev.timestamp + STEP
        while t < cur.timestamp:
            gaps.append(t)
            t += STEP

    def col(getter):
        return np.array([getter(r) for r in kept], dtype=float)

    ds = CleanDataset(
        timestamps=np.array([r.timestamp for r in kept], dtype="datetime64[m]"),
        p_it=col(lambda r: r.p_it),
        t_sup=col(lambda r: r.t_sup),
        t_ret=np.array([r.t_ret for r in kept], dtype=float),
        q=np.array([r.q for r in kept], dtype=float),
        p_acc=col(lambda r: r.p_acc),
        p_total=col(lambda r: np.nan if r.p_total is None else r.p_total),
        pue=col(lambda r: np.nan if r.pue is None else r.pue),
        waste_heat=np.array(
            [[np.nan] * N_LOOPS if r.waste_heat is None else [np.nan if w is None else w for w in r.waste_heat]
             for r in kept],
            dtype=float,
        ),
        gaps=gaps,
        duplicates=duplicates,
        removed=removed,
    )
    return ds


def derive_calendar(record, low_load_threshold=10.0):
    ts = record.timestamp
    return CalendarContext(
        hour=ts.hour,
        month=ts.month,
        weekday=ts.weekday(),
        low_load_flag=bool(record.p_it < low_load_threshold),
    )


def calendar_arrays(timestamps):
    """Vectorised hour, month, weekday (Monday=0) for ``datetime64`` input."""
    ts = np.asarray(timestamps, dtype="datetime64[m]")
    days = ts.astype("datetime64[D]")
    hour = ((ts - days).astype("timedelta64[m]").astype(np.int64) // 60).astype(np.int64)
    months = ts.astype("datetime64[M]")
    month = (months.astype(np.int64) % 12 + 1).astype(np.int64)
    # 1970-01-01 was a Thursday
    weekday = ((days.astype(np.int64) + 3) % 7).astype(np.int64)
    return hour, month, weekday


def write_telemetry_csv(dataset, path):
    df = dataset.to_frame()
    df["timestamp"] = df["timestamp"].dt.strftime("%Y-%m-%dT%H:%M")
    df.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def write_rejects_csv(rejects, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["line", "column", "reason"])
        for err in rejects:
            w.writerow([err.line, err.column, err.reason])


def write_gap_report(dataset, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["missing_timestamp"])
        for ts in dataset.gaps:
            w.writerow([ts.strftime("%Y-%m-%dT%H:%M")])
