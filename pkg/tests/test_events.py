"""Event log append/read contracts, aggregation, and confusion accumulation.

The aggregation oracle recomputes mean/std/min/max from scratch (two-pass,
fsum) on randomized inputs.
"""

import math

import pytest

from repro_harness.errors import (
    CorruptLogError,
    InvalidPayloadError,
    LabelMismatchError,
    NoConfusionRecordsError,
    StepRegressionError,
    TagNotFoundError,
)
from repro_harness.events import (
    CLEAN,
    TRUNCATED_TAIL_DROPPED,
    EventLog,
    EventRecord,
    accumulate_confusion,
    aggregate,
    canonical_digest,
    last_scalar_per_tag,
    read_events,
    record_to_line,
    series_to_csv,
    validate_record,
)
from repro_harness.seeds import make_stream

from conftest import scalar_rec


def confusion_rec(step, labels, counts, tag="confusion"):
    return EventRecord(step=step, time_ms=0, tag=tag, kind="confusion",
                       payload={"labels": list(labels),
                                "counts": [list(r) for r in counts]})


# --- append ---------------------------------------------------------------------

def test_append_in_order(tmp_path):
    path = tmp_path / "events.jsonl"
    with EventLog(path) as log:
        log.scalar("loss", 0.5, step=1, time_ms=0)
        log.scalar("loss", 0.4, step=2, time_ms=1)
    records, status = read_events(path)
    assert status == CLEAN
    assert [(r.step, r.payload) for r in records] == [(1, 0.5), (2, 0.4)]


def test_step_regression_rejected(tmp_path):
    with EventLog(tmp_path / "e.jsonl") as log:
        log.scalar("loss", 0.5, step=2, time_ms=0)
        with pytest.raises(StepRegressionError):
            log.scalar("loss", 0.6, step=1, time_ms=0)
        # repeated step is allowed, other tags are independent
        log.scalar("loss", 0.45, step=2, time_ms=0)
        log.scalar("accuracy", 0.9, step=1, time_ms=0)


def test_step_state_survives_reopen(tmp_path):
    path = tmp_path / "e.jsonl"
    with EventLog(path) as log:
        log.scalar("loss", 0.5, step=5, time_ms=0)
    with EventLog(path) as log:
        with pytest.raises(StepRegressionError):
            log.scalar("loss", 0.6, step=4, time_ms=0)


def test_histogram_shape_rule(tmp_path):
    with EventLog(tmp_path / "e.jsonl") as log:
        log.histogram("w", edges=[0.0, 1.0, 2.0], counts=[3, 4], step=1, time_ms=0)
        with pytest.raises(InvalidPayloadError):
            log.histogram("w", edges=[0.0, 1.0, 2.0], counts=[3], step=2, time_ms=0)


def test_invalid_payloads_rejected():
    bad = [
        EventRecord(1, 0, "t", "scalar", float("nan")),
        EventRecord(1, 0, "t", "scalar", float("inf")),
        EventRecord(1, 0, "t", "scalar", "0.5"),
        EventRecord(1, 0, "", "scalar", 0.5),
        EventRecord(-1, 0, "t", "scalar", 0.5),
        EventRecord(1, 0, "t", "wavelet", 0.5),
        EventRecord(1, 0, "t", "histogram", {"edges": [1.0, 1.0], "counts": [0]}),
        EventRecord(1, 0, "t", "confusion",
                    {"labels": ["a"], "counts": [[1, 2]]}),
        EventRecord(1, 0, "t", "grid",
                    {"x_min": 0.0, "x_max": 1.0, "y_min": 0.0, "y_max": 1.0,
                     "rows": 1, "cols": 2, "values": [[0.5, 1.5]]}),
    ]
    for rec in bad:
        with pytest.raises(InvalidPayloadError):
            validate_record(rec)


# --- read tolerance ----------------------------------------------------------------

def _write_lines(path, lines):
    with open(path, "wb") as fh:
        fh.write(b"".join(lines))


def test_read_well_formed(tmp_path):
    path = tmp_path / "e.jsonl"
    lines = [record_to_line(scalar_rec(i, "m", i * 0.1)) for i in (1, 2, 3)]
    _write_lines(path, lines)
    records, status = read_events(path)
    assert len(records) == 3 and status == CLEAN


def test_truncated_final_line_dropped(tmp_path):
    path = tmp_path / "e.jsonl"
    lines = [record_to_line(scalar_rec(i, "m", i * 0.1)) for i in (1, 2, 3)]
    _write_lines(path, lines[:2] + [lines[2][: len(lines[2]) // 2]])
    records, status = read_events(path)
    assert len(records) == 2
    assert status == TRUNCATED_TAIL_DROPPED


def test_complete_but_invalid_final_line_dropped(tmp_path):
    path = tmp_path / "e.jsonl"
    good = record_to_line(scalar_rec(1, "m", 0.5))
    _write_lines(path, [good, b"{\"oops\": true}\n"])
    records, status = read_events(path)
    assert len(records) == 1 and status == TRUNCATED_TAIL_DROPPED


def test_mid_file_corruption_is_hard_error(tmp_path):
    path = tmp_path / "e.jsonl"
    good = [record_to_line(scalar_rec(i, "m", i * 0.1)) for i in (1, 2, 3)]
    _write_lines(path, [good[0], b"garbage\n", good[2]])
    with pytest.raises(CorruptLogError) as exc_info:
        read_events(path)
    assert exc_info.value.line_no == 2


def test_empty_log_is_clean(tmp_path):
    path = tmp_path / "e.jsonl"
    path.touch()
    assert read_events(path) == ([], CLEAN)


def test_log_durability_prefixes(tmp_path):
    path = tmp_path / "e.jsonl"
    recs = [scalar_rec(i, "m", i * 1.5) for i in range(1, 6)]
    log = EventLog(path)
    for i, rec in enumerate(recs, start=1):
        log.append(rec)
        got, status = read_events(path)
        assert status == CLEAN and got == recs[:i]
    log.close()


# --- aggregation -----------------------------------------------------------------

def test_aggregate_two_runs_hand_value():
    runs = [[scalar_rec(1, "loss", 1.0)], [scalar_rec(1, "loss", 3.0)]]
    series = aggregate(runs, "loss")
    (point,) = series.points
    assert point.mean == 2.0
    assert abs(point.std - math.sqrt(2)) < 1e-15
    assert point.min == 1.0 and point.max == 3.0 and point.n == 2


def test_aggregate_single_run_zero_std():
    run = [scalar_rec(1, "loss", 0.7), scalar_rec(2, "loss", 0.6)]
    series = aggregate([run], "loss")
    assert all(p.std == 0.0 and p.n == 1 for p in series.points)
    assert [p.mean for p in series.points] == [0.7, 0.6]


def test_aggregate_union_of_steps():
    runs = [[scalar_rec(1, "m", 1.0)], [scalar_rec(2, "m", 2.0)]]
    series = aggregate(runs, "m")
    assert [(p.step, p.n) for p in series.points] == [(1, 1), (2, 1)]


def test_aggregate_last_value_wins_within_run():
    run = [scalar_rec(1, "m", 1.0), scalar_rec(1, "m", 9.0)]
    assert aggregate([run], "m").points[0].mean == 9.0


def test_aggregate_permutation_invariance():
    runs = [[scalar_rec(1, "m", v)] for v in (0.3, 0.9, 0.5)]
    assert aggregate(runs, "m") == aggregate(list(reversed(runs)), "m")


def test_aggregate_ignores_non_scalar():
    runs = [[confusion_rec(1, ["a", "b"], [[1, 0], [0, 1]], tag="m"),
             scalar_rec(1, "m", 2.0)]]
    assert aggregate(runs, "m").points[0].mean == 2.0


def test_aggregate_tag_not_found():
    with pytest.raises(TagNotFoundError):
        aggregate([[scalar_rec(1, "loss", 1.0)]], "accuracy")


def test_aggregate_matches_bruteforce_oracle():
    stream = make_stream(77)
    n_runs = 6
    runs = []
    for _ in range(n_runs):
        records = []
        for step in range(1, 11):
            if stream.next_unit_float() < 0.8:  # runs may skip steps
                records.append(scalar_rec(step, "m", stream.next_unit_float() * 10 - 5))
        runs.append(records)
    series = aggregate(runs, "m")
    for point in series.points:
        values = []
        for run in runs:
            vals = [r.payload for r in run if r.step == point.step]
            if vals:
                values.append(vals[-1])
        n = len(values)
        mean = math.fsum(values) / n
        std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1)) if n > 1 else 0.0
        assert abs(point.mean - mean) <= 1e-12
        assert abs(point.std - std) <= 1e-12
        assert point.min == min(values) and point.max == max(values)
        assert point.n == n


def test_series_to_csv_format():
    series = aggregate([[scalar_rec(1, "m", 1.0)], [scalar_rec(1, "m", 3.0)]], "m")
    text = series_to_csv(series)
    lines = text.splitlines()
    assert lines[0] == "step,mean,std,min,max,n"
    assert lines[1] == f"1,2.0,{math.sqrt(2)!r},1.0,3.0,2"


# --- confusion ---------------------------------------------------------------------

def test_confusion_identity_accuracy():
    cm = accumulate_confusion([confusion_rec(1, ["a", "b"], [[5, 0], [0, 5]])])
    assert cm.accuracy() == 1.0


def test_confusion_hand_accuracy():
    cm = accumulate_confusion([confusion_rec(1, ["a", "b"], [[3, 1], [2, 4]])])
    assert cm.accuracy() == 0.7


def test_confusion_additivity():
    eye = [[1, 0], [0, 1]]
    cm = accumulate_confusion([confusion_rec(1, ["a", "b"], eye),
                               confusion_rec(2, ["a", "b"], eye)])
    assert cm.counts == ((2, 0), (0, 2))


def test_confusion_label_mismatch():
    with pytest.raises(LabelMismatchError):
        accumulate_confusion([confusion_rec(1, ["a", "b"], [[1, 0], [0, 1]]),
                              confusion_rec(2, ["b", "a"], [[1, 0], [0, 1]])])


def test_confusion_requires_records():
    with pytest.raises(NoConfusionRecordsError):
        accumulate_confusion([scalar_rec(1, "m", 1.0)])


def test_zero_matrix_accuracy_omitted():
    cm = accumulate_confusion([confusion_rec(1, ["a"], [[0]])])
    assert cm.accuracy() is None


# --- summaries and digests ------------------------------------------------------------

def test_last_scalar_per_tag():
    records = [scalar_rec(1, "loss", 0.9), scalar_rec(2, "loss", 0.4),
               scalar_rec(1, "accuracy", 0.8)]
    assert last_scalar_per_tag(records) == {"loss": 0.4, "accuracy": 0.8}


def test_canonical_digest_ignores_wall_clock():
    a = [scalar_rec(1, "m", 0.5, time_ms=0), scalar_rec(2, "m", 0.4, time_ms=10)]
    b = [scalar_rec(1, "m", 0.5, time_ms=999), scalar_rec(2, "m", 0.4, time_ms=12345)]
    assert canonical_digest(a) == canonical_digest(b)
    c = [scalar_rec(1, "m", 0.5), scalar_rec(2, "m", 0.40000001)]
    assert canonical_digest(a) != canonical_digest(c)
