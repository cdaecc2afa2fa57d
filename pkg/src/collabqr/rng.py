"""Deterministic random number generation, portable across platforms and Python versions.

The generator is splitmix64; seeds for subcomponents are derived from a root
seed plus a string label so independent streams never alias.
"""

from __future__ import annotations

import hashlib

_MASK = (1 << 64) - 1


def derive_seed(seed: int, label: str) -> int:
    """Derive a child seed from (seed, label) via blake2b. Stable everywhere."""
    h = hashlib.blake2b(digest_size=8)
    h.update(seed.to_bytes(8, "little", signed=False))
    h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


class Rng:
    """splitmix64 stream with convenience samplers.

    Only integer state arithmetic is used for stream advancement, so sequences
    are bit-identical across platforms.
    """

    def __init__(self, seed: int):
        self._seed = seed & _MASK
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        if hi < lo:
            raise ValueError("empty range")
        span = hi - lo + 1
        # Rejection sampling to avoid modulo bias.
        limit = (_MASK + 1) - ((_MASK + 1) % span)
        while True:
            v = self.next_u64()
            if v < limit:
                return lo + v % span

    def choice(self, seq):
        if not seq:
            raise ValueError("empty sequence")
        return seq[self.randint(0, len(seq) - 1)]

    def shuffle(self, seq: list) -> None:
        """Fisher-Yates in place."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint(0, i)
            seq[i], seq[j] = seq[j], seq[i]

    def sample(self, seq, k: int) -> list:
        """k distinct elements, order randomized. Requires k <= len(seq)."""
        if k > len(seq):
            raise ValueError("sample larger than population")
        pool = list(seq)
        self.shuffle(pool)
        return pool[:k]

    def weighted_index(self, cumulative: list[float]) -> int:
        """Index sampled from a cumulative weight table (last entry = total mass)."""
        total = cumulative[-1]
        x = self.random() * total
        lo, hi = 0, len(cumulative) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if cumulative[mid] <= x:
                lo = mid + 1
            else:
                hi = mid
        return lo

    def child(self, label: str) -> "Rng":
        """Independent stream derived from the construction seed, not current state."""
        return Rng(derive_seed(self._seed, label))
