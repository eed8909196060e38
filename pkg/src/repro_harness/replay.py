"""Replay a recorded run from its manifest (or an explicit repository triple)
and verify the reproduction against the original.

Verdict tiers: exact (canonical event digests equal), metric_equal (scalar
series equal within tolerance), divergent (first differing point reported),
failed (params or seed mismatch, or the plan could not be satisfied).
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import shutil
import subprocess
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from repro_harness.errors import (
    CloneFailureError,
    CommitNotFoundError,
    MissingCommitError,
    SnapshotHashMismatchError,
    VcsToolUnavailableError,
)
from repro_harness.events import EVENTS_FILENAME, canonical_digest, read_events
from repro_harness.manifest import RunManifest, create_manifest, load_manifest
from repro_harness.runner import (
    SNAPSHOT_DIRNAME,
    _spawn_and_finalize,
    environment_fingerprint,
)
from repro_harness.vcs import CodeRef, tree_hash

REMOTE = "remote"
LOCAL_SNAPSHOT = "snapshot"

DEFAULT_TOLERANCE = 1e-6

EXACT = "exact"
METRIC_EQUAL = "metric_equal"
DIVERGENT = "divergent"
FAILED = "failed"


@dataclass(frozen=True)
class ReplayPlan:
    source: str                  # "remote" | "snapshot"
    command: tuple
    params: tuple
    seed: int
    workspace: Path
    repo_url: str = ""
    commit_id: str = ""
    snapshot_dir: Path | None = None   # original <run_dir>/code for snapshot runs
    snapshot_hash: str = ""
    code_ref: CodeRef | None = None
    experiment_name: str = "replay"


@dataclass
class ReproductionReport:
    verdict: str
    manifest_diff: list = field(default_factory=list)  # (field, original, replay)
    first_divergence: tuple | None = None              # (tag, step, original, replay)
    event_digest_original: str = ""
    event_digest_replay: str = ""
    tolerance: float = DEFAULT_TOLERANCE

    def to_json_obj(self):
        return {
            "verdict": self.verdict,
            "manifest_diff": [list(d) for d in self.manifest_diff],
            "first_divergence": list(self.first_divergence) if self.first_divergence else None,
            "event_digest_original": self.event_digest_original,
            "event_digest_replay": self.event_digest_replay,
            "tolerance": self.tolerance,
        }


def plan_replay(original: RunManifest, run_dir, workspace, repo_override=None) -> ReplayPlan:
    """Build a plan from a recorded manifest; the original seed and verbatim
    params ride along, never re-derived."""
    run_dir = Path(run_dir)
    if not original.command:
        raise MissingCommitError(
            "original manifest records no command; pass one explicitly")
    common = dict(command=original.command, params=original.params,
                  seed=original.seed, workspace=Path(workspace),
                  code_ref=original.code_ref,
                  experiment_name=f"{original.experiment_name}-replay")
    ref = original.code_ref
    if ref.kind == "commit":
        url = repo_override or ref.repo_url
        if not url:
            raise MissingCommitError(
                "manifest has a commit reference but no repository URL; pass --repo")
        return ReplayPlan(source=REMOTE, repo_url=url, commit_id=ref.commit_id, **common)
    snapshot_dir = run_dir / (ref.snapshot_path or SNAPSHOT_DIRNAME)
    if not snapshot_dir.is_dir():
        raise MissingCommitError(
            f"manifest has a snapshot reference but {snapshot_dir} is missing "
            "and no remote is recorded")
    return ReplayPlan(source=LOCAL_SNAPSHOT, snapshot_dir=snapshot_dir,
                      snapshot_hash=ref.snapshot_hash, **common)


def plan_from_triple(repo_url, commit_id, command, seed, workspace, params=()) -> ReplayPlan:
    """Plan from the minimal shareable triple (URL, commit, parameters)."""
    if not repo_url or not commit_id:
        raise MissingCommitError("replay triple requires both a repository URL and a commit id")
    return ReplayPlan(source=REMOTE, repo_url=repo_url, commit_id=str(commit_id).lower(),
                      command=tuple(command), params=tuple(params), seed=int(seed),
                      workspace=Path(workspace),
                      code_ref=CodeRef.for_commit(str(commit_id).lower(), repo_url))


def _git(args, cwd=None):
    try:
        proc = subprocess.run(["git", *args], cwd=cwd, capture_output=True,
                              text=True, check=False)
    except FileNotFoundError as exc:
        raise VcsToolUnavailableError("git executable not found on PATH") from exc
    return proc.returncode, proc.stdout.strip(), proc.stderr.strip()


def _clone_at_commit(repo_url, commit_id, dest: Path):
    rc, _, err = _git(["clone", "--quiet", repo_url, str(dest)])
    if rc != 0:
        raise CloneFailureError(f"git clone {repo_url} failed: {err}")
    rc, _, err = _git(["checkout", "--quiet", "--detach", commit_id], cwd=dest)
    if rc != 0:
        raise CommitNotFoundError(commit_id)
    rc, head, _ = _git(["rev-parse", "HEAD"], cwd=dest)
    if rc != 0 or head.lower() != commit_id.lower():
        raise CommitNotFoundError(commit_id)


def materialize(plan: ReplayPlan, workspace=None) -> Path:
    """Produce the code tree to run against.

    Remote plans clone into a content-addressed cache keyed by (url, commit)
    under <workspace>/cache (per-key exclusive file lock). Snapshot plans copy
    the stored tree and verify its recorded content hash byte for byte.
    """
    workspace = Path(workspace if workspace is not None else plan.workspace)
    workspace.mkdir(parents=True, exist_ok=True)
    if plan.source == REMOTE:
        key = hashlib.sha256(f"{plan.repo_url}\n{plan.commit_id}".encode()).hexdigest()[:16]
        cache_root = workspace / "cache"
        cache_root.mkdir(parents=True, exist_ok=True)
        target = cache_root / key
        lock_path = cache_root / f"{key}.lock"
        with open(lock_path, "w") as lock_fh:
            fcntl.flock(lock_fh, fcntl.LOCK_EX)
            try:
                if target.is_dir():
                    rc, head, _ = _git(["rev-parse", "HEAD"], cwd=target)
                    if rc == 0 and head.lower() == plan.commit_id.lower():
                        return target
                    shutil.rmtree(target)
                _clone_at_commit(plan.repo_url, plan.commit_id, target)
            finally:
                fcntl.flock(lock_fh, fcntl.LOCK_UN)
        return target

    dest = workspace / "snapshot"
    if dest.exists():
        shutil.rmtree(dest)
    shutil.copytree(plan.snapshot_dir, dest)
    actual = tree_hash(dest)
    if actual != plan.snapshot_hash:
        raise SnapshotHashMismatchError(plan.snapshot_hash, actual)
    return dest


def run_replay(plan: ReplayPlan, now=None) -> Path:
    """Materialize the code, execute the recorded command inside it with the
    original seed, and return the replay run directory."""
    code_dir = materialize(plan)
    run_dir = plan.workspace / "run"
    run_dir.mkdir(parents=True)
    if now is None:
        now = datetime.now(timezone.utc)
    m = create_manifest(
        plan.experiment_name, plan.params, plan.code_ref, plan.seed,
        "user",  # the replayed seed is supplied verbatim from the plan
        environment_fingerprint(), command=plan.command, now=now)
    _spawn_and_finalize(m, plan.command, run_dir, cwd=code_dir)
    return run_dir


def _scalar_map(records):
    out = {}
    for rec in records:
        if rec.kind == "scalar":
            out[(rec.tag, rec.step)] = rec.payload
    return out


def _close(a, b, tol):
    return a == b or abs(a - b) <= tol * max(abs(a), abs(b))


def verify_reproduction(original_run_dir, replay_run_dir,
                        tolerance=DEFAULT_TOLERANCE) -> ReproductionReport:
    """Compare a replayed run against its original.

    params and seed must match (else failed); equal canonical event digests
    mean exact; otherwise scalar series are compared pointwise within the
    relative tolerance, reporting the first divergence in (step, tag) order.
    """
    original_run_dir = Path(original_run_dir)
    replay_run_dir = Path(replay_run_dir)
    orig_m = load_manifest(original_run_dir)
    repl_m = load_manifest(replay_run_dir)

    report = ReproductionReport(verdict=FAILED, tolerance=tolerance)
    if orig_m.params != repl_m.params:
        report.manifest_diff.append(("params", list(orig_m.params), list(repl_m.params)))
    if orig_m.seed != repl_m.seed:
        report.manifest_diff.append(("seed", orig_m.seed, repl_m.seed))
    if report.manifest_diff:
        return report

    orig_records, _ = read_events(original_run_dir / EVENTS_FILENAME)
    repl_records, _ = read_events(replay_run_dir / EVENTS_FILENAME)
    report.event_digest_original = canonical_digest(orig_records)
    report.event_digest_replay = canonical_digest(repl_records)
    if report.event_digest_original == report.event_digest_replay:
        report.verdict = EXACT
        return report

    orig_scalars = _scalar_map(orig_records)
    repl_scalars = _scalar_map(repl_records)
    keys = sorted(set(orig_scalars) | set(repl_scalars), key=lambda k: (k[1], k[0]))
    for tag, step in keys:
        a = orig_scalars.get((tag, step))
        b = repl_scalars.get((tag, step))
        if a is None or b is None or not _close(a, b, tolerance):
            report.verdict = DIVERGENT
            report.first_divergence = (tag, step, a, b)
            return report
    report.verdict = METRIC_EQUAL
    return report


def write_report(report: ReproductionReport, path):
    Path(path).write_text(json.dumps(report.to_json_obj(), indent=2) + "\n",
                          encoding="utf-8")
