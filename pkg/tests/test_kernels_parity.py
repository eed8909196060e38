"""Bit-exact parity between the compiled kernels and the pure-Python fallback.

Every draw, shuffle, and Welford state transition must agree exactly; the
benchmark and the import-time selection rely on the two being interchangeable.
"""

from array import array

import pytest

from repro_harness import _kernels_py as pure

compiled = pytest.importorskip(
    "repro_harness._kernels", reason="compiled kernels not built")


BOUNDS = [1, 2, 3, 7, 10, 97, 2**16, 2**32 + 1, 2**63 - 1, 2**63, 2**64 - 1, 2**64]


def test_splitmix64_next_matches():
    for x in [0, 1, 42, 2**63, 2**64 - 1, 0x123456789ABCDEF0]:
        assert compiled.splitmix64_next(x) == pure.splitmix64_next(x)


def test_u64_sequences_match():
    for seed in [0, 1, 42, 2**64 - 1]:
        a = compiled.SplitMix64(seed)
        b = pure.SplitMix64(seed)
        assert [a.next_u64() for _ in range(2000)] == [b.next_u64() for _ in range(2000)]
        assert a.state == b.state


def test_unit_floats_match():
    a = compiled.SplitMix64(7)
    b = pure.SplitMix64(7)
    assert a.unit_floats(2000) == b.unit_floats(2000)


@pytest.mark.parametrize("bound", BOUNDS)
def test_next_below_matches(bound):
    a = compiled.SplitMix64(99)
    b = pure.SplitMix64(99)
    assert [a.next_below(bound) for _ in range(500)] == \
           [b.next_below(bound) for _ in range(500)]
    assert a.state == b.state  # same rejection pattern, same draws consumed


def test_next_below_rejects_bad_bounds():
    for impl in (compiled, pure):
        s = impl.SplitMix64(1)
        with pytest.raises(ValueError):
            s.next_below(0)
        with pytest.raises(ValueError):
            s.next_below(2**64 + 1)


def test_shuffle_matches():
    for n in [0, 1, 2, 3, 10, 257]:
        a_items = list(range(n))
        b_items = list(range(n))
        compiled.SplitMix64(5).shuffle(a_items)
        pure.SplitMix64(5).shuffle(b_items)
        assert a_items == b_items


def test_welford_chunk_matches():
    stream = pure.SplitMix64(123)
    values = array("d", [stream.next_unit_float() * 10 - 5 for _ in range(3 * 500)])
    states = []
    for impl in (compiled, pure):
        counts = array("q", [0, 0, 0])
        means = array("d", [0.0, 0.0, 0.0])
        m2s = array("d", [0.0, 0.0, 0.0])
        impl.welford_chunk(counts, means, m2s, values, 3)
        states.append((list(counts), list(means), list(m2s)))
    assert states[0] == states[1]  # bitwise: same op order in both kernels


def test_welford_chunk_errors_match():
    for impl in (compiled, pure):
        counts = array("q", [0])
        means = array("d", [0.0])
        m2s = array("d", [0.0])
        with pytest.raises(ValueError, match="not a multiple"):
            impl.welford_chunk(counts, means, m2s, array("d", [1.0, 2.0, 3.0]), 2)
        with pytest.raises(ValueError, match="non-finite"):
            impl.welford_chunk(counts, means, m2s, array("d", [1.0, float("nan")]), 1)
        # validation precedes mutation: state untouched
        assert list(counts) == [0] and list(means) == [0.0] and list(m2s) == [0.0]
