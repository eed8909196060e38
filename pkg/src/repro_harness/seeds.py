"""Root-seed resolution and labeled sub-seed derivation.

The root seed is either supplied by the user (recorded verbatim) or drawn
from OS entropy and logged. Every harness-internal random choice flows from
it through labeled sub-seeds, so fixing the root seed fixes splits, candidate
sampling, and per-run seeds.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass

from repro_harness.errors import EmptyLabelError, EntropyUnavailableError
from repro_harness.kernels import SplitMix64, splitmix64_next

_MASK64 = 0xFFFFFFFFFFFFFFFF
_FNV_OFFSET = 14695981039346656037
_FNV_PRIME = 1099511628211

USER = "user"
GENERATED = "generated"


@dataclass(frozen=True)
class RootSeed:
    value: int
    origin: str  # "user" | "generated"

    def __post_init__(self):
        if not 0 <= self.value <= _MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.value}")
        if self.origin not in (USER, GENERATED):
            raise ValueError(f"unknown seed origin: {self.origin!r}")


def _os_entropy():
    try:
        return secrets.randbits(64)
    except Exception as exc:
        raise EntropyUnavailableError(str(exc)) from exc


def resolve_seed(user_seed=None, entropy=_os_entropy):
    """User seed passes through verbatim; otherwise draw one and mark it generated.

    The caller must record the resolved seed in the manifest either way.
    """
    if user_seed is not None:
        return RootSeed(value=user_seed, origin=USER)
    return RootSeed(value=entropy() & _MASK64, origin=GENERATED)


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a over bytes (offset basis/prime frozen by the file format)."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def derive_subseed(root: RootSeed, label) -> int:
    """Deterministic 64-bit sub-seed for a purpose label.

    value = splitmix64_next(root.value XOR fnv1a64(label)). Pure and
    format-frozen: identical (root, label) yields identical output forever.
    """
    if isinstance(label, str):
        label = label.encode("utf-8")
    if not label:
        raise EmptyLabelError("sub-seed label must be non-empty")
    return splitmix64_next(root.value ^ fnv1a64(label))


def make_stream(seed: int) -> SplitMix64:
    """Deterministic PRNG stream seeded with a 64-bit value."""
    return SplitMix64(seed)
