"""Run orchestration: directories, environment injection, child execution,
manifest lifecycle, and multi-run batches.

The child reports metrics only by appending to $RUN_DIR/events.jsonl; stdout
is captured but never parsed. Per-run seeds derive from the root seed by
label ("run/<index>"), so an auditor can recompute every RUN_SEED from the
batch's recorded root seed.
"""

from __future__ import annotations

import json
import os
import platform
import socket
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from repro_harness import __version__
from repro_harness.errors import CollisionError, IoFailureError, SpawnFailureError
from repro_harness.events import EVENTS_FILENAME, last_scalar_per_tag, read_events
from repro_harness.manifest import (
    EnvFingerprint,
    RunManifest,
    create_manifest,
    finalize_manifest,
    mark_running,
    save_manifest,
)
from repro_harness.seeds import RootSeed, derive_subseed, resolve_seed
from repro_harness.vcs import (
    CodeRef,
    RequireSnapshot,
    UseCommit,
    enforce_clean,
    inspect_repository,
    snapshot_code,
)

ENV_RUN_SEED = "RUN_SEED"
ENV_RUN_DIR = "RUN_DIR"
ENV_RUN_MANIFEST = "RUN_MANIFEST"

BATCH_FILENAME = "batch.json"
STDOUT_FILENAME = "stdout.log"
STDERR_FILENAME = "stderr.log"
SNAPSHOT_DIRNAME = "code"


@dataclass
class RunRequest:
    experiment_name: str
    command: tuple              # program + args, non-empty
    params: tuple = ()          # ordered (name, value) pairs mirrored from the CLI
    base_dir: str = "runs"
    allow_dirty: bool = False
    multi_run: int = 1
    user_seed: int | None = None
    parallel: int = 1
    repo_path: str = "."        # working tree the gate inspects / snapshots
    ignore_rules: tuple = ()    # extra snapshot ignore globs
    determinism_note: str = ""

    def __post_init__(self):
        if not self.command:
            raise ValueError("command must be non-empty")
        if self.multi_run < 1:
            raise ValueError("multi_run must be >= 1")
        if self.parallel < 1:
            raise ValueError("parallel must be >= 1")


@dataclass
class RunResult:
    run_dir: Path
    manifest: RunManifest
    exit_code: int
    duration_ms: int


def environment_fingerprint(determinism_note="") -> EnvFingerprint:
    return EnvFingerprint(
        os_name=platform.system() or "unknown",
        tool_version=__version__,
        hostname=socket.gethostname() or "unknown",
        determinism_note=determinism_note,
    )


def timestamp_compact(dt: datetime) -> str:
    """UTC YYYYMMDDThhmmssmmm; sorts lexicographically."""
    dt = dt.astimezone(timezone.utc)
    return dt.strftime("%Y%m%dT%H%M%S") + f"{dt.microsecond // 1000:03d}"


def prepare_run_dir(base, experiment_name, started_at: datetime, run_index: int) -> Path:
    """Create `<base>/<name>/<timestamp>/run-<index>/`; never reuses a directory."""
    if run_index < 0:
        raise ValueError("run_index must be >= 0")
    run_dir = (Path(base) / experiment_name / timestamp_compact(started_at)
               / f"run-{run_index}")
    if run_dir.exists():
        raise CollisionError(run_dir)
    try:
        run_dir.mkdir(parents=True)
    except FileExistsError:
        raise CollisionError(run_dir) from None
    except OSError as exc:
        raise IoFailureError(run_dir, str(exc)) from exc
    return run_dir


def _resolve_code_ref(code_source, req: RunRequest, run_dir: Path) -> CodeRef:
    if isinstance(code_source, CodeRef):
        return code_source
    if isinstance(code_source, UseCommit):
        return code_source.code_ref
    if isinstance(code_source, RequireSnapshot):
        return snapshot_code(req.repo_path, run_dir / SNAPSHOT_DIRNAME, req.ignore_rules)
    raise TypeError(f"unsupported code source {code_source!r}")


def execute(req: RunRequest, run_index: int, code_source, root: RootSeed,
            started_at: datetime | None = None, now=None) -> RunResult:
    """Run the wrapped command once in a fresh run directory.

    A nonzero child exit is a failed RunResult, not an exception. The manifest
    is written with status=running before the spawn so a killed harness never
    leaves a fabricated outcome behind.
    """
    if started_at is None:
        started_at = datetime.now(timezone.utc)
    run_dir = prepare_run_dir(req.base_dir, req.experiment_name, started_at, run_index)
    code_ref = _resolve_code_ref(code_source, req, run_dir)
    run_seed = derive_subseed(root, f"run/{run_index}")
    # Manifests record the derived per-run seed, which the harness generated;
    # the verbatim user seed (if any) lives in batch.json as the root.
    m = create_manifest(req.experiment_name, req.params, code_ref, run_seed,
                        "generated", environment_fingerprint(req.determinism_note),
                        command=req.command, now=now)
    return _spawn_and_finalize(m, req.command, run_dir)


def _spawn_and_finalize(m: RunManifest, command, run_dir: Path,
                        cwd=None) -> RunResult:
    m = mark_running(m)
    save_manifest(m, run_dir)
    events_path = run_dir / EVENTS_FILENAME
    events_path.touch()

    env = dict(os.environ)
    env[ENV_RUN_SEED] = str(m.seed)
    env[ENV_RUN_DIR] = str(run_dir.resolve())
    env[ENV_RUN_MANIFEST] = str((run_dir / "manifest.json").resolve())

    t0 = time.monotonic()
    try:
        with open(run_dir / STDOUT_FILENAME, "wb") as out_fh, \
                open(run_dir / STDERR_FILENAME, "wb") as err_fh:
            proc = subprocess.Popen(list(command), env=env, cwd=cwd,
                                    stdout=out_fh, stderr=err_fh)
            exit_code = proc.wait()
    except FileNotFoundError as exc:
        raise SpawnFailureError(command[0], str(exc)) from exc
    except OSError as exc:
        raise SpawnFailureError(command[0], str(exc)) from exc
    duration_ms = int((time.monotonic() - t0) * 1000)

    records, _ = read_events(events_path)
    m = finalize_manifest(m, exit_code, duration_ms, last_scalar_per_tag(records))
    save_manifest(m, run_dir)
    return RunResult(run_dir=run_dir, manifest=m, exit_code=exit_code,
                     duration_ms=duration_ms)


def _write_batch_summary(batch_dir: Path, req: RunRequest, root: RootSeed,
                         created_at: str, run_names, completed):
    doc = {
        "experiment_name": req.experiment_name,
        "root_seed": root.value,
        "seed_origin": root.origin,
        "created_at": created_at,
        "command": list(req.command),
        "params": [[n, v] for n, v in req.params],
        "run_dirs": list(run_names),
        "completed": sorted(completed),
    }
    tmp = batch_dir / (BATCH_FILENAME + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, batch_dir / BATCH_FILENAME)


def run_batch(req: RunRequest, now=None) -> list:
    """Gate once, then execute `multi_run` sibling runs (run-0..run-N-1).

    Run i draws sub-seed label "run/i". batch.json is rewritten as runs
    complete so a partial batch records exactly which indices finished.
    """
    started_at = now if now is not None else datetime.now(timezone.utc)
    state = inspect_repository(req.repo_path)
    decision = enforce_clean(state, req.allow_dirty)
    root = resolve_seed(req.user_seed)

    batch_dir = Path(req.base_dir) / req.experiment_name / timestamp_compact(started_at)
    run_names = [f"run-{i}" for i in range(req.multi_run)]
    created_at = started_at.astimezone(timezone.utc).isoformat()
    batch_dir.mkdir(parents=True, exist_ok=True)
    completed = []
    _write_batch_summary(batch_dir, req, root, created_at, run_names, completed)

    def one(i):
        return execute(req, i, decision, root, started_at=started_at)

    results = [None] * req.multi_run
    if req.parallel > 1 and req.multi_run > 1:
        with ThreadPoolExecutor(max_workers=req.parallel) as pool:
            futures = {i: pool.submit(one, i) for i in range(req.multi_run)}
            first_error = None
            for i in range(req.multi_run):
                try:
                    results[i] = futures[i].result()
                    completed.append(i)
                except Exception as exc:
                    if first_error is None:
                        first_error = exc
            _write_batch_summary(batch_dir, req, root, created_at, run_names, completed)
            if first_error is not None:
                raise first_error
    else:
        for i in range(req.multi_run):
            try:
                results[i] = one(i)
            except Exception:
                _write_batch_summary(batch_dir, req, root, created_at, run_names, completed)
                raise
            completed.append(i)
            _write_batch_summary(batch_dir, req, root, created_at, run_names, completed)
    return results
