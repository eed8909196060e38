import json
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path

import pytest

from repro_harness.manifest import EnvFingerprint, create_manifest, finalize_manifest, save_manifest
from repro_harness.vcs import CodeRef

FIXED_NOW = datetime(2026, 8, 10, 12, 0, 0, 123000, tzinfo=timezone.utc)

COMMIT_A = "a" * 40
SNAP_HASH = "0" * 64


def git(repo, *args):
    proc = subprocess.run(["git", "-C", str(repo), *args],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc.stdout.strip()


@pytest.fixture
def env_fp():
    return EnvFingerprint(os_name="Linux", tool_version="0.1.0", hostname="testhost")


@pytest.fixture
def fresh_repo(tmp_path):
    """A committed git repo containing a toy dataset, with origin set so
    clones work. Returns the repo path."""
    repo = tmp_path / "repo"
    repo.mkdir()
    git(repo, "init", "-q")
    git(repo, "config", "user.email", "test@example.com")
    git(repo, "config", "user.name", "Test")
    from repro_harness.dataprep import Toy2DSpec, generate_2d, points_to_csv
    spec = Toy2DSpec(family="gaussian_blobs", n_points=60, seed=11,
                     centers=((0.0, 0.0), (2.0, 2.0)), sigma=0.35)
    (repo / "data.csv").write_text(points_to_csv(generate_2d(spec)), encoding="utf-8")
    (repo / "train.txt").write_text("placeholder\n", encoding="utf-8")
    git(repo, "add", "-A")
    git(repo, "commit", "-qm", "initial")
    git(repo, "remote", "add", "origin", str(repo))
    return repo


def demo_command(epochs=20, lr=0.1, grid_resolution=8, dataset="data.csv"):
    """Invoke the bundled trainer through the current interpreter (keeps tests
    independent of PATH)."""
    return (sys.executable, "-m", "repro_harness", "demo-train",
            "--dataset", dataset, "--epochs", str(epochs), "--lr", str(lr),
            "--grid-resolution", str(grid_resolution))


def write_run_dir(run_dir: Path, records, env, seed=1, name="synthetic",
                  params=(), exit_code=0):
    """Materialize a finished run directory without spawning a child."""
    from repro_harness.events import record_to_line, last_scalar_per_tag
    run_dir.mkdir(parents=True)
    with open(run_dir / "events.jsonl", "wb") as fh:
        for rec in records:
            fh.write(record_to_line(rec))
    m = create_manifest(name, params, CodeRef.for_commit(COMMIT_A), seed,
                        "generated", env, command=("true",), now=FIXED_NOW)
    m = finalize_manifest(m, exit_code, 5, last_scalar_per_tag(records))
    save_manifest(m, run_dir)
    return m


def scalar_rec(step, tag, value, time_ms=0):
    from repro_harness.events import EventRecord
    return EventRecord(step=step, time_ms=time_ms, tag=tag, kind="scalar",
                       payload=float(value))
