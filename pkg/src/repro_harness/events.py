"""Append-only metric event log and its consumers.

Events are single-line JSON objects (`step`, `time_ms`, `tag`, `kind`,
`payload`) appended atomically to events.jsonl. One writer per file (the
wrapped experiment); readers tolerate a truncated final line so a crashed
child never poisons the log. Wall-clock (`time_ms`) is excluded from the
canonical digest used for replay comparison.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass

from repro_harness.errors import (
    CorruptLogError,
    InvalidPayloadError,
    LabelMismatchError,
    NoConfusionRecordsError,
    StepRegressionError,
    TagNotFoundError,
)

SCALAR = "scalar"
HISTOGRAM = "histogram"
CONFUSION = "confusion"
GRID = "grid"
TEXT = "text"
_KINDS = (SCALAR, HISTOGRAM, CONFUSION, GRID, TEXT)

# tail status of read_events
CLEAN = "clean"
TRUNCATED_TAIL_DROPPED = "truncated_tail_dropped"

EVENTS_FILENAME = "events.jsonl"


@dataclass(frozen=True)
class EventRecord:
    step: int
    time_ms: int
    tag: str
    kind: str
    payload: object


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _finite_float(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate_record(rec: EventRecord):
    if not _is_int(rec.step) or rec.step < 0:
        raise InvalidPayloadError(f"step must be a non-negative integer, got {rec.step!r}")
    if not _is_int(rec.time_ms) or rec.time_ms < 0:
        raise InvalidPayloadError(f"time_ms must be a non-negative integer, got {rec.time_ms!r}")
    if not isinstance(rec.tag, str) or not rec.tag:
        raise InvalidPayloadError("tag must be a non-empty string")
    if rec.kind not in _KINDS:
        raise InvalidPayloadError(f"unknown kind {rec.kind!r}")
    p = rec.payload
    if rec.kind == SCALAR:
        if not _finite_float(p):
            raise InvalidPayloadError(f"scalar payload must be a finite number, got {p!r}")
    elif rec.kind == HISTOGRAM:
        _validate_histogram(p)
    elif rec.kind == CONFUSION:
        _validate_confusion(p)
    elif rec.kind == GRID:
        _validate_grid(p)
    else:  # TEXT
        if not isinstance(p, str):
            raise InvalidPayloadError("text payload must be a string")


def _validate_histogram(p):
    if not isinstance(p, dict) or set(p) != {"edges", "counts"}:
        raise InvalidPayloadError("histogram payload must have exactly edges and counts")
    edges, counts = p["edges"], p["counts"]
    if not isinstance(edges, list) or len(edges) < 2 or not all(_finite_float(e) for e in edges):
        raise InvalidPayloadError("histogram edges must be >= 2 finite numbers")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise InvalidPayloadError("histogram edges must be strictly ascending")
    if (not isinstance(counts, list) or len(counts) != len(edges) - 1
            or not all(_is_int(c) and c >= 0 for c in counts)):
        raise InvalidPayloadError("histogram counts must be len(edges)-1 non-negative integers")


def _validate_confusion(p):
    if not isinstance(p, dict) or set(p) != {"labels", "counts"}:
        raise InvalidPayloadError("confusion payload must have exactly labels and counts")
    labels, counts = p["labels"], p["counts"]
    if not isinstance(labels, list) or not labels or not all(isinstance(l, str) for l in labels):
        raise InvalidPayloadError("confusion labels must be a non-empty string list")
    if len(set(labels)) != len(labels):
        raise InvalidPayloadError("confusion labels must be unique")
    k = len(labels)
    if (not isinstance(counts, list) or len(counts) != k
            or any(not isinstance(row, list) or len(row) != k for row in counts)
            or any(not (_is_int(c) and c >= 0) for row in counts for c in row)):
        raise InvalidPayloadError("confusion counts must be a KxK non-negative integer matrix")


def _validate_grid(p):
    keys = {"x_min", "x_max", "y_min", "y_max", "rows", "cols", "values"}
    if not isinstance(p, dict) or set(p) != keys:
        raise InvalidPayloadError(f"grid payload must have exactly keys {sorted(keys)}")
    for key in ("x_min", "x_max", "y_min", "y_max"):
        if not _finite_float(p[key]):
            raise InvalidPayloadError(f"grid {key} must be a finite number")
    rows, cols, values = p["rows"], p["cols"], p["values"]
    if not _is_int(rows) or rows < 1 or not _is_int(cols) or cols < 1:
        raise InvalidPayloadError("grid rows and cols must be positive integers")
    if (not isinstance(values, list) or len(values) != rows
            or any(not isinstance(r, list) or len(r) != cols for r in values)):
        raise InvalidPayloadError("grid values must be a rows x cols matrix")
    for row in values:
        for v in row:
            if not _finite_float(v) or not 0.0 <= v <= 1.0:
                raise InvalidPayloadError("grid values must lie in [0, 1]")


def _record_to_obj(rec, with_time=True):
    obj = {"step": rec.step}
    if with_time:
        obj["time_ms"] = rec.time_ms
    obj["tag"] = rec.tag
    obj["kind"] = rec.kind
    obj["payload"] = rec.payload
    return obj


def record_to_line(rec: EventRecord) -> bytes:
    """One complete newline-terminated JSON line (shortest float repr)."""
    return (json.dumps(_record_to_obj(rec), ensure_ascii=False,
                       separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def _record_from_obj(obj) -> EventRecord:
    if not isinstance(obj, dict) or set(obj) != {"step", "time_ms", "tag", "kind", "payload"}:
        raise InvalidPayloadError("event line keys do not match the schema")
    payload = obj["payload"]
    if obj["kind"] == SCALAR and _finite_float(payload):
        payload = float(payload)
    rec = EventRecord(step=obj["step"], time_ms=obj["time_ms"], tag=obj["tag"],
                      kind=obj["kind"], payload=payload)
    validate_record(rec)
    return rec


class EventLog:
    """Append-side handle. Enforces per-tag step monotonicity and writes each
    record as a single unbuffered write of one complete line."""

    def __init__(self, path, _clock=time.monotonic):
        self._path = path
        self._clock = _clock
        self._t0 = _clock()
        self._last_step = {}
        try:
            existing, _ = read_events(path)
            for rec in existing:
                self._last_step[rec.tag] = rec.step
        except FileNotFoundError:
            pass
        self._fh = open(path, "ab", buffering=0)

    def append(self, rec: EventRecord):
        validate_record(rec)
        last = self._last_step.get(rec.tag)
        if last is not None and rec.step < last:
            raise StepRegressionError(rec.tag, rec.step, last)
        self._fh.write(record_to_line(rec))
        self._last_step[rec.tag] = rec.step

    def _now_ms(self):
        return int((self._clock() - self._t0) * 1000)

    def scalar(self, tag, value, step, time_ms=None):
        self.append(EventRecord(step, self._now_ms() if time_ms is None else time_ms,
                                tag, SCALAR, float(value)))

    def histogram(self, tag, edges, counts, step, time_ms=None):
        payload = {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}
        self.append(EventRecord(step, self._now_ms() if time_ms is None else time_ms,
                                tag, HISTOGRAM, payload))

    def confusion(self, tag, labels, counts, step, time_ms=None):
        payload = {"labels": list(labels), "counts": [[int(c) for c in row] for row in counts]}
        self.append(EventRecord(step, self._now_ms() if time_ms is None else time_ms,
                                tag, CONFUSION, payload))

    def grid(self, tag, x_min, x_max, y_min, y_max, values, step, time_ms=None):
        values = [[float(v) for v in row] for row in values]
        payload = {"x_min": float(x_min), "x_max": float(x_max),
                   "y_min": float(y_min), "y_max": float(y_max),
                   "rows": len(values), "cols": len(values[0]) if values else 0,
                   "values": values}
        self.append(EventRecord(step, self._now_ms() if time_ms is None else time_ms,
                                tag, GRID, payload))

    def text(self, tag, message, step, time_ms=None):
        self.append(EventRecord(step, self._now_ms() if time_ms is None else time_ms,
                                tag, TEXT, str(message)))

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_events(path):
    """Parse a log tolerantly.

    Returns (records, tail_status). A malformed FINAL line is a crash
    artifact: dropped and flagged. A malformed line anywhere else raises
    CorruptLogError with its 1-based line number.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n")
    if parts and parts[-1] == b"":
        parts.pop()  # file ended with a complete line
    records = []
    for i, raw in enumerate(parts):
        try:
            rec = _record_from_obj(json.loads(raw.decode("utf-8")))
        except (InvalidPayloadError, json.JSONDecodeError, UnicodeDecodeError) as exc:
            if i == len(parts) - 1:
                return records, TRUNCATED_TAIL_DROPPED
            raise CorruptLogError(i + 1, str(exc)) from None
        records.append(rec)
    return records, CLEAN


def last_scalar_per_tag(records) -> dict:
    """Final scalar value per tag (the manifest's metrics_summary)."""
    out = {}
    for rec in records:
        if rec.kind == SCALAR:
            out[rec.tag] = rec.payload
    return out


# --- multi-run aggregation ----------------------------------------------------

@dataclass(frozen=True)
class SeriesPoint:
    step: int
    mean: float
    std: float  # sample std (n-1), 0 when n == 1
    min: float
    max: float
    n: int


@dataclass(frozen=True)
class AggregateSeries:
    tag: str
    points: tuple


def aggregate(run_logs, tag) -> AggregateSeries:
    """Align scalar series across runs on the union of steps.

    Every step seen in any run contributes a point; n records how many runs
    support it. Within one run the last value at a (tag, step) wins.
    """
    maps = []
    for records in run_logs:
        by_step = {}
        for rec in records:
            if rec.kind == SCALAR and rec.tag == tag:
                by_step[rec.step] = rec.payload
        maps.append(by_step)
    if not any(maps):
        raise TagNotFoundError(tag)
    points = []
    for step in sorted(set().union(*maps)):
        values = sorted(m[step] for m in maps if step in m)
        # sorted before reduction: summation order no longer depends on run
        # order, so aggregate is bit-exactly permutation invariant
        n = len(values)
        mean = sum(values) / n
        if n > 1:
            std = math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1))
        else:
            std = 0.0
        points.append(SeriesPoint(step=step, mean=mean, std=std,
                                  min=min(values), max=max(values), n=n))
    return AggregateSeries(tag=tag, points=tuple(points))


def series_to_csv(series: AggregateSeries) -> str:
    """CSV export with the exact aggregated numbers (shortest float repr)."""
    lines = ["step,mean,std,min,max,n"]
    for p in series.points:
        lines.append(f"{p.step},{p.mean!r},{p.std!r},{p.min!r},{p.max!r},{p.n}")
    return "\n".join(lines) + "\n"


# --- confusion matrices -------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple
    counts: tuple  # tuple of row tuples, rows = true class

    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def accuracy(self):
        """trace/total; None when the matrix is empty of samples."""
        total = self.total()
        if total == 0:
            return None
        return sum(self.counts[i][i] for i in range(len(self.labels))) / total


def accumulate_confusion(records) -> ConfusionMatrix:
    """Elementwise sum of all confusion payloads sharing one label set."""
    labels = None
    acc = None
    for rec in records:
        if rec.kind != CONFUSION:
            continue
        p = rec.payload
        if labels is None:
            labels = tuple(p["labels"])
            acc = [[0] * len(labels) for _ in labels]
        elif tuple(p["labels"]) != labels:
            raise LabelMismatchError(
                f"confusion label sets differ: {labels} vs {tuple(p['labels'])}")
        for i, row in enumerate(p["counts"]):
            for j, c in enumerate(row):
                acc[i][j] += c
    if labels is None:
        raise NoConfusionRecordsError("no confusion events present")
    return ConfusionMatrix(labels=labels, counts=tuple(tuple(row) for row in acc))


# --- canonical digest ---------------------------------------------------------

def canonical_digest(records) -> str:
    """SHA-256 over the canonicalized event lines; wall-clock (time_ms) is
    excluded because it is never reproducible."""
    h = hashlib.sha256()
    for rec in records:
        line = json.dumps(_record_to_obj(rec, with_time=False), ensure_ascii=False,
                          separators=(",", ":"), allow_nan=False) + "\n"
        h.update(line.encode("utf-8"))
    return h.hexdigest()


def digest_of_log(path) -> str:
    records, _ = read_events(path)
    return canonical_digest(records)
