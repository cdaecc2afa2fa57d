"""First-stage retrieval: deterministic lexical embeddings, exact top-k cosine.

The encoder hashes character trigrams and word unigrams into a fixed-width
signed vector. It is a stand-in for a learned encoder behind the same
interface: anything with an encode(text) -> unit vector method works.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from collabqr.model import RewriteCandidate
from collabqr.text import normalize

DEFAULT_DIM = 256
DEFAULT_ENCODER_SEED = 101

# Cosines this close to zero are summation noise between effectively
# orthogonal vectors; snapping them to zero keeps the tie-break, not float
# residue, in charge of ordering unrelated entries.
ZERO_SIMILARITY_EPSILON = 1e-12


@dataclass(frozen=True)
class RetrievalHit:
    candidate: RewriteCandidate
    similarity: float


class LexicalEncoder:
    """Signed feature hashing over char trigrams and word unigrams."""

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = DEFAULT_ENCODER_SEED):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=False)

    def _slot(self, feature: str) -> tuple[int, float]:
        h = int.from_bytes(
            hashlib.blake2b(feature.encode("utf-8"), digest_size=8, key=self._key).digest(),
            "little",
        )
        return h % self.dim, 1.0 if (h >> 63) & 1 else -1.0

    def encode(self, utterance: str) -> np.ndarray:
        text = normalize(utterance)
        if not text:
            raise ValueError("cannot encode an empty utterance")
        counts: Counter[str] = Counter()
        for i in range(len(text) - 2):
            counts["3:" + text[i : i + 3]] += 1
        for word in text.split():
            counts["w:" + word] += 1
        vec = np.zeros(self.dim, dtype=np.float64)
        for feature, count in counts.items():
            idx, sign = self._slot(feature)
            vec[idx] += sign * count
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # Signed collisions cancelled everything; park it in a fixed bucket.
            vec[0] = 1.0
            return vec
        return vec / norm


class EmbeddingCache:
    """Utterance -> embedding memo; cleared between user batches to bound memory."""

    def __init__(self, encoder: LexicalEncoder):
        self.encoder = encoder
        self._store: dict[str, np.ndarray] = {}

    def get(self, utterance: str) -> np.ndarray:
        got = self._store.get(utterance)
        if got is None:
            got = self.encoder.encode(utterance)
            self._store[utterance] = got
        return got

    def clear(self) -> None:
        self._store.clear()

    def __len__(self) -> int:
        return len(self._store)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b)) / (na * nb)


def _hit_order_key(entry: RewriteCandidate):
    return (
        -entry.signals.impression,
        entry.utterance,
        entry.hop,
        entry.source_entity_id,
        entry.source_user_id,
    )


class IndexRetriever:
    """Retrieval over a fixed entry list with entry vectors precomputed."""

    def __init__(self, entries: Sequence[RewriteCandidate], cache: EmbeddingCache):
        self.entries = tuple(entries)
        self._cache = cache
        if self.entries:
            rows = np.stack([cache.get(e.utterance) for e in self.entries])
            # Entry vectors are unit-norm by construction; re-normalize anyway
            # so a scaled cache row cannot skew the ranking.
            norms = np.linalg.norm(rows, axis=1)
            norms[norms == 0.0] = 1.0
            self._matrix = rows / norms[:, None]
        else:
            self._matrix = None

    def retrieve(self, query: str, k: int) -> list[RetrievalHit]:
        if k < 1:
            raise ValueError("k must be >= 1")
        if self._matrix is None:
            return []
        q = self._cache.encoder.encode(query)
        qnorm = float(np.linalg.norm(q))
        if qnorm == 0.0:
            return []
        sims = self._matrix @ (q / qnorm)
        sims[np.abs(sims) < ZERO_SIMILARITY_EPSILON] = 0.0
        entries = self.entries
        order = sorted(range(len(entries)), key=lambda i: (-sims[i],) + _hit_order_key(entries[i]))
        return [RetrievalHit(candidate=entries[i], similarity=float(sims[i])) for i in order[:k]]


def retrieve(
    query: str,
    entries: Sequence[RewriteCandidate],
    k: int,
    encoder: LexicalEncoder | None = None,
) -> list[RetrievalHit]:
    """Exact top-k by cosine; ties broken by impression, text, then provenance."""
    if encoder is None:
        encoder = LexicalEncoder()
    return IndexRetriever(entries, EmbeddingCache(encoder)).retrieve(query, k)
