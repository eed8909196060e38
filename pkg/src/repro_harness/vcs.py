"""Version-control gate: refuse to run uncommitted code, capture the commit
id, or fall back to a content-hashed snapshot of the working tree.

Git is driven through a small subprocess adapter (injectable for tests).
Commands used: `rev-parse --is-inside-work-tree`, `rev-parse HEAD`,
`status --porcelain`, `remote get-url origin`.
"""

from __future__ import annotations

import hashlib
import re
import shutil
import subprocess
from dataclasses import dataclass
from fnmatch import fnmatch
from pathlib import Path

from repro_harness.errors import (
    DestinationNotEmptyError,
    DirtyWorktreeError,
    IoFailureError,
    NotARepositoryError,
    VcsToolUnavailableError,
)

_COMMIT_RE = re.compile(r"^[0-9a-f]{40}$")
_SNAPSHOT_RE = re.compile(r"^[0-9a-f]{64}$")

# Snapshots always skip VCS metadata, the harness output dir, and bytecode
# caches; user rules extend this set.
DEFAULT_IGNORE_RULES = (".git", "runs", "__pycache__", "*.pyc")

COMMIT = "commit"
SNAPSHOT = "snapshot"


@dataclass(frozen=True)
class CodeRef:
    kind: str
    commit_id: str | None = None
    repo_url: str | None = None
    snapshot_hash: str | None = None
    snapshot_path: str | None = None

    def __post_init__(self):
        if self.kind == COMMIT:
            if not self.commit_id or not _COMMIT_RE.match(self.commit_id):
                raise ValueError(f"commit kind requires a 40-hex commit_id, got {self.commit_id!r}")
            if self.snapshot_hash is not None or self.snapshot_path is not None:
                raise ValueError("commit kind must not carry snapshot fields")
        elif self.kind == SNAPSHOT:
            if not self.snapshot_hash or not _SNAPSHOT_RE.match(self.snapshot_hash):
                raise ValueError(f"snapshot kind requires a 64-hex hash, got {self.snapshot_hash!r}")
            if not self.snapshot_path:
                raise ValueError("snapshot kind requires snapshot_path")
            if self.commit_id is not None:
                raise ValueError("snapshot kind must not carry a commit_id")
        else:
            raise ValueError(f"unknown code_ref kind {self.kind!r}")

    @classmethod
    def for_commit(cls, commit_id, repo_url=None):
        return cls(kind=COMMIT, commit_id=commit_id, repo_url=repo_url or None)

    @classmethod
    def for_snapshot(cls, snapshot_hash, snapshot_path):
        return cls(kind=SNAPSHOT, snapshot_hash=snapshot_hash, snapshot_path=snapshot_path)


@dataclass(frozen=True)
class RepoState:
    repo_url: str  # origin remote, "" when absent
    head_commit: str
    is_dirty: bool
    changed_paths: tuple

    def __post_init__(self):
        if not _COMMIT_RE.match(self.head_commit):
            raise ValueError(f"head_commit must be 40 lowercase hex chars, got {self.head_commit!r}")
        if self.is_dirty != bool(self.changed_paths):
            raise ValueError("is_dirty must hold exactly when changed_paths is non-empty")


@dataclass(frozen=True)
class UseCommit:
    code_ref: CodeRef


@dataclass(frozen=True)
class RequireSnapshot:
    pass


def _run_git(args, cwd):
    try:
        proc = subprocess.run(
            ["git", *args], cwd=str(cwd),
            capture_output=True, text=True, check=False,
        )
    except FileNotFoundError as exc:
        raise VcsToolUnavailableError("git executable not found on PATH") from exc
    return proc.returncode, proc.stdout, proc.stderr


def _porcelain_path(line):
    # porcelain v1: "XY path" or "XY old -> new" for renames
    path = line[3:]
    if " -> " in path:
        path = path.split(" -> ", 1)[1]
    if path.startswith('"') and path.endswith('"'):
        path = path[1:-1]
    return path


def inspect_repository(path, git_runner=_run_git) -> RepoState:
    """Reflect the working tree: dirty iff any tracked file is modified or
    staged, or any non-ignored untracked file exists."""
    path = Path(path)
    if not path.exists():
        raise NotARepositoryError(path, "path does not exist")
    rc, out, _ = git_runner(["rev-parse", "--is-inside-work-tree"], path)
    if rc != 0 or out.strip() != "true":
        raise NotARepositoryError(path)
    rc, out, err = git_runner(["rev-parse", "HEAD"], path)
    if rc != 0:
        raise NotARepositoryError(path, f"no commits yet ({err.strip() or 'unborn HEAD'})")
    head = out.strip().lower()
    rc, out, _ = git_runner(["status", "--porcelain"], path)
    if rc != 0:
        raise NotARepositoryError(path, "git status failed")
    changed = tuple(_porcelain_path(line) for line in out.splitlines() if line.strip())
    rc, out, _ = git_runner(["remote", "get-url", "origin"], path)
    repo_url = out.strip() if rc == 0 else ""
    return RepoState(
        repo_url=repo_url,
        head_commit=head,
        is_dirty=bool(changed),
        changed_paths=changed,
    )


def enforce_clean(state: RepoState, allow_dirty: bool):
    """Gate decision. Clean trees run against their commit; dirty trees either
    refuse (default) or are marked for a code snapshot (--allow-dirty)."""
    if not state.is_dirty:
        return UseCommit(CodeRef.for_commit(state.head_commit, state.repo_url))
    if not allow_dirty:
        raise DirtyWorktreeError(list(state.changed_paths))
    return RequireSnapshot()


def _is_ignored(rel_posix, rules):
    parts = rel_posix.split("/")
    for rule in rules:
        if fnmatch(rel_posix, rule):
            return True
        if any(fnmatch(part, rule) for part in parts):
            return True
    return False


def _walk_files(root: Path, ignore_rules):
    """Non-ignored regular files under root, as posix relpaths sorted bytewise."""
    out = []
    stack = [root]
    while stack:
        d = stack.pop()
        for entry in d.iterdir():
            rel = entry.relative_to(root).as_posix()
            if _is_ignored(rel, ignore_rules):
                continue
            if entry.is_symlink():
                continue
            if entry.is_dir():
                stack.append(entry)
            elif entry.is_file():
                out.append(rel)
    out.sort(key=lambda p: p.encode("utf-8"))
    return out


def tree_hash(root, ignore_rules=()) -> str:
    """Content hash of a file tree, independent of enumeration order and
    timestamps.

    SHA-256 over the byte sequence `relpath LF sha256hex(content) LF` for
    every non-ignored regular file, sorted by UTF-8 relpath bytes. The empty
    tree hashes to SHA-256 of the empty byte string.
    """
    root = Path(root)
    h = hashlib.sha256()
    for rel in _walk_files(root, ignore_rules):
        content_hash = hashlib.sha256((root / rel).read_bytes()).hexdigest()
        h.update(rel.encode("utf-8"))
        h.update(b"\n")
        h.update(content_hash.encode("ascii"))
        h.update(b"\n")
    return h.hexdigest()


def snapshot_code(src, dest, ignore_rules=()) -> CodeRef:
    """Copy the non-ignored tree into dest and return a snapshot CodeRef.

    The recorded hash is computed over the copied tree, so replay can verify
    the stored snapshot byte for byte. Extra rules extend (never replace) the
    defaults.
    """
    src = Path(src)
    dest = Path(dest)
    if not src.exists():
        raise IoFailureError(src, "source tree does not exist")
    if dest.exists() and any(dest.iterdir()):
        raise DestinationNotEmptyError(f"snapshot destination {dest} is not empty")
    rules = tuple(DEFAULT_IGNORE_RULES) + tuple(ignore_rules)
    try:
        dest.mkdir(parents=True, exist_ok=True)
        for rel in _walk_files(src, rules):
            target = dest / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.copy2(src / rel, target)
    except OSError as exc:
        raise IoFailureError(exc.filename or dest, str(exc)) from exc
    return CodeRef.for_snapshot(tree_hash(dest), dest.name)
