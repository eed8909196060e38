# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: splitmix64 streams and Welford accumulation.

Bit-identical twin of _kernels_py.py; tests/test_kernels_parity.py asserts
equality between the two. Keep the algorithms in lockstep.
"""

from libc.math cimport isfinite

cdef extern from *:
    ctypedef unsigned long long uint64_t
    ctypedef unsigned int uint128_t "unsigned __int128"

IMPLEMENTATION = "compiled"

cdef uint64_t _GAMMA = 0x9E3779B97F4A7C15ULL
cdef uint64_t _MIX1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t _MIX2 = 0x94D049BB133111EBULL
cdef double _INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * _MIX1
    z = (z ^ (z >> 27)) * _MIX2
    return z ^ (z >> 31)


def splitmix64_next(x):
    """One splitmix64 step from state x; returns the 64-bit output."""
    return _mix(<uint64_t> (x & 0xFFFFFFFFFFFFFFFF) + _GAMMA)


cdef class SplitMix64:
    """Deterministic PRNG stream over the splitmix64 state sequence.

    Single-owner mutable state: not safe for concurrent draws.
    """

    cdef uint64_t _state

    def __init__(self, seed):
        self._state = <uint64_t> (seed & 0xFFFFFFFFFFFFFFFF)

    @property
    def state(self):
        return self._state

    cdef inline uint64_t _next(self) nogil:
        self._state += _GAMMA
        return _mix(self._state)

    cdef inline uint64_t _below(self, uint64_t b) nogil:
        # Lemire multiply-shift; (0 - b) wraps to 2**64 - b in uint64.
        cdef uint64_t threshold = (0 - b) % b
        cdef uint128_t m
        while True:
            m = (<uint128_t> self._next()) * b
            if (<uint64_t> m) >= threshold:
                return <uint64_t> (m >> 64)

    def next_u64(self):
        return self._next()

    def next_unit_float(self):
        """Uniform in [0, 1) with a full 53-bit mantissa."""
        return <double> (self._next() >> 11) * _INV_2_53

    def next_below(self, bound):
        """Uniform integer in [0, bound) without modulo bias.

        Lemire multiply-shift with rejection of the biased low-word range.
        """
        if bound <= 0 or bound > (1 << 64):
            raise ValueError(f"bound must be in [1, 2**64], got {bound}")
        if bound == (1 << 64):
            return self._next()
        return self._below(<uint64_t> bound)

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle, descending index order."""
        cdef Py_ssize_t i, j
        for i in range(len(items) - 1, 0, -1):
            j = <Py_ssize_t> self._below(<uint64_t> (i + 1))
            items[i], items[j] = items[j], items[i]

    def unit_floats(self, n):
        """n uniform floats in [0, 1) as a list (bulk draw)."""
        cdef Py_ssize_t i
        cdef list out = []
        for i in range(n):
            out.append(<double> (self._next() >> 11) * _INV_2_53)
        return out


def welford_chunk(long long[:] counts, double[:] means, double[:] m2s,
                  double[:] values, Py_ssize_t channels):
    """Fold a chunk of channel-interleaved samples into Welford state.

    counts/means/m2s are per-channel state buffers (mutated in place);
    values holds len(values)//channels samples, channel-major within each
    sample. Values are validated for finiteness before any state changes.
    """
    cdef Py_ssize_t n = values.shape[0]
    if n % channels != 0:
        raise ValueError(f"chunk length {n} not a multiple of {channels} channels")
    cdef Py_ssize_t i, c
    cdef double v, delta, mean
    cdef long long cnt
    for i in range(n):
        if not isfinite(values[i]):
            raise ValueError(f"non-finite sample at flat index {i}")
    for i in range(n):
        c = i % channels
        v = values[i]
        cnt = counts[c] + 1
        counts[c] = cnt
        delta = v - means[c]
        mean = means[c] + delta / <double> cnt
        means[c] = mean
        m2s[c] += delta * (v - mean)
