"""Pure-Python kernels: splitmix64 streams and Welford accumulation.

Bit-identical fallback for the compiled extension in _kernels.pyx. Any change
here must be mirrored there; tests/test_kernels_parity.py asserts equality.

The algorithms are format-frozen: identical inputs must produce identical
outputs forever, across both implementations.
"""

import math

IMPLEMENTATION = "pure"

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# next_unit_float uses the top 53 bits: 2**-53 scaling
_INV_2_53 = 1.0 / (1 << 53)


def splitmix64_next(x):
    """One splitmix64 step from state x; returns the 64-bit output."""
    z = (x + _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Deterministic PRNG stream over the splitmix64 state sequence.

    Single-owner mutable state: not safe for concurrent draws.
    """

    __slots__ = ("_state",)

    def __init__(self, seed):
        self._state = seed & _MASK64

    @property
    def state(self):
        return self._state

    def next_u64(self):
        s = (self._state + _GAMMA) & _MASK64
        self._state = s
        z = ((s ^ (s >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def next_unit_float(self):
        """Uniform in [0, 1) with a full 53-bit mantissa."""
        return (self.next_u64() >> 11) * _INV_2_53

    def next_below(self, bound):
        """Uniform integer in [0, bound) without modulo bias.

        Lemire multiply-shift with rejection of the biased low-word range.
        """
        if bound <= 0 or bound > (1 << 64):
            raise ValueError(f"bound must be in [1, 2**64], got {bound}")
        threshold = ((1 << 64) - bound) % bound
        while True:
            m = self.next_u64() * bound
            if (m & _MASK64) >= threshold:
                return m >> 64

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle, descending index order."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def unit_floats(self, n):
        """n uniform floats in [0, 1) as a list (bulk draw)."""
        return [self.next_unit_float() for _ in range(n)]


def welford_chunk(counts, means, m2s, values, channels):
    """Fold a chunk of channel-interleaved samples into Welford state.

    counts/means/m2s are per-channel state buffers (mutated in place);
    values holds len(values)//channels samples, channel-major within each
    sample. Values are validated for finiteness before any state changes.
    """
    n = len(values)
    if n % channels != 0:
        raise ValueError(f"chunk length {n} not a multiple of {channels} channels")
    for i in range(n):
        if not math.isfinite(values[i]):
            raise ValueError(f"non-finite sample at flat index {i}")
    for i in range(n):
        c = i % channels
        v = values[i]
        cnt = counts[c] + 1
        counts[c] = cnt
        delta = v - means[c]
        mean = means[c] + delta / cnt
        means[c] = mean
        m2s[c] += delta * (v - mean)
