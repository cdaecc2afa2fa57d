"""Tests for the portable deterministic RNG."""

import hashlib
from collections import Counter

import pytest

pytest.importorskip("hypothesis")
from hypothesis import given, settings
from hypothesis import strategies as st

from collabqr.rng import Rng, derive_seed

M64 = (1 << 64) - 1


def reference_splitmix64_stream(seed: int, n: int) -> list[int]:
    """Direct transcription of the published splitmix64 reference, as an oracle."""
    x = seed & M64
    out = []
    for _ in range(n):
        x = (x + 0x9E3779B97F4A7C15) & M64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        out.append(z ^ (z >> 31))
    return out


@pytest.mark.parametrize("seed", [0, 1, 42, 1234567890123456789, M64])
def test_stream_matches_reference(seed):
    rng = Rng(seed)
    assert [rng.next_u64() for _ in range(100)] == reference_splitmix64_stream(seed, 100)


def test_same_seed_same_stream():
    a, b = Rng(42), Rng(42)
    assert [a.next_u64() for _ in range(50)] == [b.next_u64() for _ in range(50)]


def test_random_in_unit_interval():
    rng = Rng(7)
    for _ in range(1000):
        x = rng.random()
        assert 0.0 <= x < 1.0


def test_randint_inclusive_bounds_and_coverage():
    rng = Rng(3)
    seen = Counter(rng.randint(2, 5) for _ in range(2000))
    assert set(seen) == {2, 3, 4, 5}


def test_randint_single_value():
    rng = Rng(9)
    assert all(rng.randint(4, 4) == 4 for _ in range(10))


def test_randint_rejects_empty_range():
    with pytest.raises(ValueError):
        Rng(1).randint(5, 4)


def test_shuffle_is_permutation_and_deterministic():
    a = list(range(20))
    b = list(range(20))
    Rng(11).shuffle(a)
    Rng(11).shuffle(b)
    assert a == b
    assert sorted(a) == list(range(20))


def test_sample_distinct():
    rng = Rng(5)
    got = rng.sample(list(range(10)), 4)
    assert len(got) == 4
    assert len(set(got)) == 4
    with pytest.raises(ValueError):
        rng.sample([1, 2], 3)


def test_choice():
    rng = Rng(2)
    assert rng.choice([42]) == 42
    assert rng.choice(["a", "b"]) in ("a", "b")
    with pytest.raises(ValueError):
        rng.choice([])


def test_weighted_index_matches_linear_scan():
    rng = Rng(13)
    weights = [0.5, 0.0, 2.0, 1.5, 0.25]
    cumulative = []
    total = 0.0
    for w in weights:
        total += w
        cumulative.append(total)
    check = Rng(13)
    for _ in range(500):
        idx = rng.weighted_index(cumulative)
        x = check.random() * cumulative[-1]
        linear = next(i for i, c in enumerate(cumulative) if c > x)
        assert idx == linear


def test_weighted_index_skips_zero_weights():
    rng = Rng(17)
    cumulative = [0.0, 1.0, 1.0, 3.0]
    seen = {rng.weighted_index(cumulative) for _ in range(500)}
    assert 0 not in seen
    assert 2 not in seen


def test_derive_seed_is_blake2b_of_seed_and_label():
    h = hashlib.blake2b(digest_size=8)
    h.update((42).to_bytes(8, "little"))
    h.update(b"entities")
    assert derive_seed(42, "entities") == int.from_bytes(h.digest(), "little")


def test_derive_seed_separates_labels_and_seeds():
    assert derive_seed(42, "a") != derive_seed(42, "b")
    assert derive_seed(1, "a") != derive_seed(2, "a")


def test_child_streams_independent_of_draw_order():
    parent = Rng(42)
    early = parent.child("x")
    parent.next_u64()
    late = Rng(42).child("x")
    assert [early.next_u64() for _ in range(10)] == [late.next_u64() for _ in range(10)]


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=M64), st.integers(min_value=1, max_value=1000))
def test_randint_within_bounds(seed, hi):
    rng = Rng(seed)
    for _ in range(20):
        assert 0 <= rng.randint(0, hi) <= hi
