"""Run manifest: the single file binding code identity, parameters, seed,
environment, and outcome of one experiment execution.

Serialization is canonical: UTF-8 JSON, documented fixed key order, compact
separators, newline-terminated. Equal manifests produce byte-identical
output, so manifests are diffable and hashable.

Key order of manifest.json:
    schema_version, experiment_name, code_ref, params, command, seed,
    seed_origin, env, created_at, status, exit_code, duration_ms,
    metrics_summary
(`command` extends the recorded replay triple: for arbitrary wrapped programs
the entry point is not fixed, so replay needs it recorded.)
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from repro_harness.errors import (
    AlreadyFinalizedError,
    DuplicateParamError,
    EmptyExperimentNameError,
    MalformedManifestError,
    SchemaVersionUnsupportedError,
)
from repro_harness.vcs import CodeRef

SCHEMA_VERSION = 1

PENDING = "pending"
RUNNING = "running"
SUCCEEDED = "succeeded"
FAILED = "failed"
_STATUSES = (PENDING, RUNNING, SUCCEEDED, FAILED)

_MASK64 = 0xFFFFFFFFFFFFFFFF
_MANIFEST_KEYS = [
    "schema_version", "experiment_name", "code_ref", "params", "command",
    "seed", "seed_origin", "env", "created_at", "status", "exit_code",
    "duration_ms", "metrics_summary",
]
_CODE_REF_KEYS = ["kind", "commit_id", "repo_url", "snapshot_hash", "snapshot_path"]
_ENV_KEYS = ["os_name", "tool_version", "hostname", "determinism_note"]

_RFC3339_RE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}\.\d{3}Z$")


@dataclass(frozen=True)
class EnvFingerprint:
    os_name: str
    tool_version: str
    hostname: str
    determinism_note: str = ""


@dataclass(frozen=True)
class RunManifest:
    schema_version: int
    experiment_name: str
    code_ref: CodeRef
    params: tuple  # ordered ((name, value), ...), values are verbatim strings
    command: tuple  # child command tokens, () when not applicable
    seed: int
    seed_origin: str  # "user" | "generated"
    env: EnvFingerprint
    created_at: str  # RFC 3339 UTC, millisecond precision
    status: str
    exit_code: int | None = None
    duration_ms: int | None = None
    metrics_summary: dict | None = None

    def summary(self) -> dict:
        return dict(self.metrics_summary or {})


def format_timestamp(dt: datetime) -> str:
    """RFC 3339 UTC with millisecond precision, e.g. 2026-08-10T12:34:56.789Z."""
    dt = dt.astimezone(timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.") + f"{dt.microsecond // 1000:03d}Z"


def create_manifest(experiment_name, params, code_ref, seed, seed_origin, env,
                    command=(), now=None) -> RunManifest:
    """Build a pending manifest embedding all inputs verbatim.

    `now` takes an injected datetime for testability; defaults to the clock.
    """
    if not experiment_name:
        raise EmptyExperimentNameError("experiment name must be non-empty")
    params = tuple((str(n), str(v)) for n, v in params)
    seen = set()
    for name, _ in params:
        if name in seen:
            raise DuplicateParamError(name)
        seen.add(name)
    if now is None:
        now = datetime.now(timezone.utc)
    m = RunManifest(
        schema_version=SCHEMA_VERSION,
        experiment_name=experiment_name,
        code_ref=code_ref,
        params=params,
        command=tuple(str(t) for t in command),
        seed=int(seed),
        seed_origin=seed_origin,
        env=env,
        created_at=format_timestamp(now),
        status=PENDING,
        metrics_summary={},
    )
    _validate(m)
    return m


def mark_running(m: RunManifest) -> RunManifest:
    """Transition pending -> running (written before the child spawns, so a
    crashed harness leaves a truthful status behind)."""
    if m.status != PENDING:
        raise AlreadyFinalizedError(f"cannot mark {m.status} manifest running")
    return replace(m, status=RUNNING)


def finalize_manifest(m: RunManifest, exit_code, duration_ms, metrics_summary) -> RunManifest:
    """Record the outcome: succeeded iff exit_code == 0, else failed."""
    if m.status not in (PENDING, RUNNING):
        raise AlreadyFinalizedError(f"manifest already finalized with status {m.status}")
    exit_code = int(exit_code)
    duration_ms = int(duration_ms)
    if duration_ms < 0:
        raise MalformedManifestError("duration_ms must be non-negative")
    out = replace(
        m,
        status=SUCCEEDED if exit_code == 0 else FAILED,
        exit_code=exit_code,
        duration_ms=duration_ms,
        metrics_summary={str(k): float(v) for k, v in dict(metrics_summary).items()},
    )
    _validate(out)
    return out


def serialize_manifest(m: RunManifest) -> bytes:
    """Canonical bytes: fixed key order, compact, newline-terminated UTF-8."""
    doc = {
        "schema_version": m.schema_version,
        "experiment_name": m.experiment_name,
        "code_ref": {
            "kind": m.code_ref.kind,
            "commit_id": m.code_ref.commit_id,
            "repo_url": m.code_ref.repo_url,
            "snapshot_hash": m.code_ref.snapshot_hash,
            "snapshot_path": m.code_ref.snapshot_path,
        },
        "params": [[n, v] for n, v in m.params],
        "command": list(m.command),
        "seed": m.seed,
        "seed_origin": m.seed_origin,
        "env": {
            "os_name": m.env.os_name,
            "tool_version": m.env.tool_version,
            "hostname": m.env.hostname,
            "determinism_note": m.env.determinism_note,
        },
        "created_at": m.created_at,
        "status": m.status,
        "exit_code": m.exit_code,
        "duration_ms": m.duration_ms,
        "metrics_summary": {k: m.metrics_summary[k] for k in sorted(m.metrics_summary or {})},
    }
    return (json.dumps(doc, ensure_ascii=False, separators=(",", ":"),
                       allow_nan=False) + "\n").encode("utf-8")


def parse_manifest(data: bytes) -> RunManifest:
    """Strict parse: rejects unknown keys, missing keys, and invariant breaks."""
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedManifestError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedManifestError("top level is not an object")
    if set(doc) != set(_MANIFEST_KEYS):
        extra = sorted(set(doc) - set(_MANIFEST_KEYS))
        missing = sorted(set(_MANIFEST_KEYS) - set(doc))
        raise MalformedManifestError(f"key mismatch (extra={extra}, missing={missing})")
    sv = doc["schema_version"]
    if not isinstance(sv, int) or isinstance(sv, bool):
        raise MalformedManifestError("schema_version must be an integer")
    if sv != SCHEMA_VERSION:
        raise SchemaVersionUnsupportedError(sv)

    cr = doc["code_ref"]
    if not isinstance(cr, dict) or set(cr) != set(_CODE_REF_KEYS):
        raise MalformedManifestError("code_ref keys do not match the schema")
    envd = doc["env"]
    if not isinstance(envd, dict) or set(envd) != set(_ENV_KEYS):
        raise MalformedManifestError("env keys do not match the schema")

    raw_params = doc["params"]
    if not isinstance(raw_params, list) or any(
        not (isinstance(p, list) and len(p) == 2
             and isinstance(p[0], str) and isinstance(p[1], str))
        for p in raw_params
    ):
        raise MalformedManifestError("params must be an array of [name, value] string pairs")
    command = doc["command"]
    if not isinstance(command, list) or any(not isinstance(t, str) for t in command):
        raise MalformedManifestError("command must be an array of strings")
    ms = doc["metrics_summary"]
    if not isinstance(ms, dict) or any(
        not isinstance(v, (int, float)) or isinstance(v, bool) for v in ms.values()
    ):
        raise MalformedManifestError("metrics_summary must map tags to numbers")

    try:
        code_ref = CodeRef(
            kind=cr["kind"], commit_id=cr["commit_id"], repo_url=cr["repo_url"],
            snapshot_hash=cr["snapshot_hash"], snapshot_path=cr["snapshot_path"],
        )
    except ValueError as exc:
        raise MalformedManifestError(str(exc)) from exc

    m = RunManifest(
        schema_version=sv,
        experiment_name=doc["experiment_name"],
        code_ref=code_ref,
        params=tuple((n, v) for n, v in raw_params),
        command=tuple(command),
        seed=doc["seed"],
        seed_origin=doc["seed_origin"],
        env=EnvFingerprint(
            os_name=envd["os_name"], tool_version=envd["tool_version"],
            hostname=envd["hostname"], determinism_note=envd["determinism_note"],
        ),
        created_at=doc["created_at"],
        status=doc["status"],
        exit_code=doc["exit_code"],
        duration_ms=doc["duration_ms"],
        metrics_summary={k: float(v) for k, v in ms.items()},
    )
    _validate(m)
    return m


def _validate(m: RunManifest):
    if not isinstance(m.experiment_name, str) or not m.experiment_name:
        raise MalformedManifestError("experiment_name must be a non-empty string")
    seen = set()
    for name, value in m.params:
        if not isinstance(name, str) or not isinstance(value, str):
            raise MalformedManifestError("param names and values must be strings")
        if name in seen:
            raise MalformedManifestError(f"duplicate param name {name!r}")
        seen.add(name)
    if not isinstance(m.seed, int) or isinstance(m.seed, bool) or not 0 <= m.seed <= _MASK64:
        raise MalformedManifestError("seed must be a 64-bit unsigned integer")
    if m.seed_origin not in ("user", "generated"):
        raise MalformedManifestError(f"unknown seed_origin {m.seed_origin!r}")
    for field in ("os_name", "tool_version", "hostname"):
        v = getattr(m.env, field)
        if not isinstance(v, str) or not v:
            raise MalformedManifestError(f"env.{field} must be a non-empty string")
    if not isinstance(m.env.determinism_note, str):
        raise MalformedManifestError("env.determinism_note must be a string")
    if not isinstance(m.created_at, str) or not _RFC3339_RE.match(m.created_at):
        raise MalformedManifestError(f"created_at not RFC 3339 UTC: {m.created_at!r}")
    if m.status not in _STATUSES:
        raise MalformedManifestError(f"unknown status {m.status!r}")
    if m.status == SUCCEEDED and m.exit_code != 0:
        raise MalformedManifestError("status=succeeded requires exit_code=0")
    if m.status == FAILED and (m.exit_code is None or m.exit_code == 0):
        raise MalformedManifestError("status=failed requires a nonzero exit_code")
    if m.status in (PENDING, RUNNING) and m.exit_code is not None:
        raise MalformedManifestError(f"status={m.status} must not carry an exit_code")
    if m.exit_code is not None and (not isinstance(m.exit_code, int) or isinstance(m.exit_code, bool)):
        raise MalformedManifestError("exit_code must be an integer")
    if m.duration_ms is not None:
        if not isinstance(m.duration_ms, int) or isinstance(m.duration_ms, bool) or m.duration_ms < 0:
            raise MalformedManifestError("duration_ms must be a non-negative integer")
    for tag, value in (m.metrics_summary or {}).items():
        if not isinstance(tag, str) or not tag:
            raise MalformedManifestError("metric tags must be non-empty strings")
        if not math.isfinite(value):
            raise MalformedManifestError(f"metric {tag!r} is not finite")


# --- file helpers -----------------------------------------------------------

MANIFEST_FILENAME = "manifest.json"


def manifest_path(run_dir) -> Path:
    return Path(run_dir) / MANIFEST_FILENAME


def save_manifest(m: RunManifest, run_dir):
    """Atomic write (temp file + rename) so readers never see a torn manifest."""
    path = manifest_path(run_dir)
    tmp = path.with_suffix(".json.tmp")
    tmp.write_bytes(serialize_manifest(m))
    os.replace(tmp, path)


def load_manifest(run_dir) -> RunManifest:
    path = manifest_path(run_dir)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise MalformedManifestError(f"no {MANIFEST_FILENAME} in {run_dir}") from None
    return parse_manifest(data)
