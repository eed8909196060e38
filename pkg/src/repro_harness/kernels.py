"""Kernel selection: compiled extension when available, pure Python otherwise.

Set REPRO_HARNESS_PURE=1 to force the pure-Python implementation (used by the
parity tests and the benchmark). Both implementations are bit-identical.
"""

import os

if os.environ.get("REPRO_HARNESS_PURE"):
    from repro_harness import _kernels_py as _impl
else:
    try:
        from repro_harness import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from repro_harness import _kernels_py as _impl

IMPLEMENTATION = _impl.IMPLEMENTATION
SplitMix64 = _impl.SplitMix64
splitmix64_next = _impl.splitmix64_next
welford_chunk = _impl.welford_chunk
