"""Manifest lifecycle, canonical serialization, and strict parsing."""

import json

import pytest

from repro_harness.errors import (
    AlreadyFinalizedError,
    DuplicateParamError,
    EmptyExperimentNameError,
    MalformedManifestError,
    SchemaVersionUnsupportedError,
)
from repro_harness.manifest import (
    create_manifest,
    finalize_manifest,
    format_timestamp,
    load_manifest,
    mark_running,
    parse_manifest,
    save_manifest,
    serialize_manifest,
)
from repro_harness.vcs import CodeRef

from conftest import COMMIT_A, FIXED_NOW

WATERMARK_PARAMS = [("seed", "42"), ("lr", "0.01"), ("epochs", "100")]


def make(env_fp, params=WATERMARK_PARAMS, name="watermark_classification", seed=42):
    return create_manifest(name, params, CodeRef.for_commit(COMMIT_A), seed,
                           "user", env_fp, command=("train", "--lr", "0.01"),
                           now=FIXED_NOW)


def test_create_echoes_inputs(env_fp):
    m = make(env_fp)
    assert m.experiment_name == "watermark_classification"
    assert m.params == (("seed", "42"), ("lr", "0.01"), ("epochs", "100"))
    assert m.seed == 42
    assert m.seed_origin == "user"
    assert m.status == "pending"
    assert m.created_at == "2026-08-10T12:00:00.123Z"
    assert m.exit_code is None and m.duration_ms is None
    assert m.metrics_summary == {}


def test_create_empty_params_ok(env_fp):
    assert make(env_fp, params=[]).params == ()


def test_create_rejects_duplicate_param(env_fp):
    with pytest.raises(DuplicateParamError):
        make(env_fp, params=[("lr", "0.1"), ("lr", "0.2")])


def test_create_rejects_empty_name(env_fp):
    with pytest.raises(EmptyExperimentNameError):
        make(env_fp, name="")


def test_serialize_contains_seed_and_terminates(env_fp):
    data = serialize_manifest(make(env_fp))
    assert b'"seed":42' in data
    assert data.endswith(b"\n")
    assert b" " not in data.split(b'"determinism_note"')[0]  # compact encoding


def test_serialize_key_order_documented(env_fp):
    doc = json.loads(serialize_manifest(make(env_fp)))
    assert list(doc) == [
        "schema_version", "experiment_name", "code_ref", "params", "command",
        "seed", "seed_origin", "env", "created_at", "status", "exit_code",
        "duration_ms", "metrics_summary",
    ]
    assert list(doc["code_ref"]) == ["kind", "commit_id", "repo_url",
                                     "snapshot_hash", "snapshot_path"]
    assert list(doc["env"]) == ["os_name", "tool_version", "hostname",
                                "determinism_note"]


def test_serialize_is_pure(env_fp):
    m = make(env_fp)
    assert serialize_manifest(m) == serialize_manifest(m)


def test_round_trip_identity(env_fp):
    m = make(env_fp)
    data = serialize_manifest(m)
    assert parse_manifest(data) == m
    assert serialize_manifest(parse_manifest(data)) == data


def test_round_trip_finalized(env_fp):
    m = finalize_manifest(make(env_fp), 0, 1500, {"loss": 0.25, "accuracy": 0.9})
    assert parse_manifest(serialize_manifest(m)) == m


def test_param_order_is_significant(env_fp):
    m1 = make(env_fp, params=[("a", "1"), ("b", "2")])
    m2 = make(env_fp, params=[("b", "2"), ("a", "1")])
    assert serialize_manifest(m1) != serialize_manifest(m2)
    # parse preserves the permuted order
    assert parse_manifest(serialize_manifest(m2)).params == (("b", "2"), ("a", "1"))


def test_parse_rejects_truncated(env_fp):
    data = serialize_manifest(make(env_fp))
    with pytest.raises(MalformedManifestError):
        parse_manifest(data[: len(data) // 2])


def test_parse_rejects_unknown_schema_version(env_fp):
    doc = json.loads(serialize_manifest(make(env_fp)))
    doc["schema_version"] = 999
    with pytest.raises(SchemaVersionUnsupportedError) as exc_info:
        parse_manifest(json.dumps(doc).encode())
    assert exc_info.value.found == 999


def test_parse_rejects_unknown_keys(env_fp):
    doc = json.loads(serialize_manifest(make(env_fp)))
    doc["color"] = "blue"
    with pytest.raises(MalformedManifestError, match="extra"):
        parse_manifest(json.dumps(doc).encode())


def test_parse_rejects_missing_keys(env_fp):
    doc = json.loads(serialize_manifest(make(env_fp)))
    del doc["seed"]
    with pytest.raises(MalformedManifestError, match="missing"):
        parse_manifest(json.dumps(doc).encode())


def test_parse_rejects_invariant_breaks(env_fp):
    doc = json.loads(serialize_manifest(make(env_fp)))
    bad = dict(doc)
    bad["status"] = "succeeded"  # succeeded requires exit_code 0
    with pytest.raises(MalformedManifestError):
        parse_manifest(json.dumps(bad).encode())
    bad = dict(doc)
    bad["params"] = [["lr", "1"], ["lr", "2"]]
    with pytest.raises(MalformedManifestError, match="duplicate"):
        parse_manifest(json.dumps(bad).encode())


def test_finalize_success_and_failure(env_fp):
    m = make(env_fp)
    ok = finalize_manifest(m, 0, 10, {"loss": 0.5})
    assert ok.status == "succeeded" and ok.exit_code == 0
    assert ok.metrics_summary == {"loss": 0.5}
    bad = finalize_manifest(m, 1, 10, {})
    assert bad.status == "failed" and bad.exit_code == 1
    # original untouched
    assert m.status == "pending"


def test_finalize_twice_rejected(env_fp):
    done = finalize_manifest(make(env_fp), 0, 10, {})
    with pytest.raises(AlreadyFinalizedError):
        finalize_manifest(done, 0, 10, {})


def test_mark_running_transitions(env_fp):
    m = mark_running(make(env_fp))
    assert m.status == "running"
    with pytest.raises(AlreadyFinalizedError):
        mark_running(m)
    finalized = finalize_manifest(m, 0, 10, {})
    assert finalized.status == "succeeded"


def test_format_timestamp_milliseconds():
    assert format_timestamp(FIXED_NOW) == "2026-08-10T12:00:00.123Z"


def test_save_and_load_round_trip(tmp_path, env_fp):
    m = finalize_manifest(make(env_fp), 0, 77, {"loss": 0.1})
    save_manifest(m, tmp_path)
    assert load_manifest(tmp_path) == m
    assert not list(tmp_path.glob("*.tmp"))


def test_snapshot_code_ref_round_trip(env_fp):
    ref = CodeRef.for_snapshot("ab" * 32, "code")
    m = create_manifest("snap", [], ref, 1, "generated", env_fp, now=FIXED_NOW)
    back = parse_manifest(serialize_manifest(m))
    assert back.code_ref == ref


def test_code_ref_invariants():
    with pytest.raises(ValueError):
        CodeRef(kind="commit", commit_id="short")
    with pytest.raises(ValueError):
        CodeRef(kind="commit", commit_id=COMMIT_A, snapshot_hash="0" * 64)
    with pytest.raises(ValueError):
        CodeRef(kind="snapshot", snapshot_hash="0" * 64)  # missing path
    with pytest.raises(ValueError):
        CodeRef(kind="tarball")
