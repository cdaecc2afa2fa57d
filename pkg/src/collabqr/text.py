"""Text utilities shared across the pipeline: normalization, edit distance, token-set similarity."""

from __future__ import annotations


def normalize(text: str) -> str:
    """Lowercase, collapse internal whitespace, strip. No stemming."""
    return " ".join(text.lower().split())


def tokens(text: str) -> list[str]:
    return normalize(text).split()


def token_set(text: str) -> frozenset[str]:
    return frozenset(tokens(text))


def levenshtein(a: str, b: str) -> int:
    """Classic character edit distance (insert/delete/substitute, unit costs)."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost))
        prev = cur
    return prev[len(b)]


def normalized_edit_distance(a: str, b: str) -> float:
    """Levenshtein divided by the longer length; 0.0 when both strings are empty."""
    longer = max(len(a), len(b))
    if longer == 0:
        return 0.0
    return levenshtein(a, b) / longer


def token_jaccard_similarity(a: str, b: str) -> float:
    """Token-set Jaccard similarity of two strings after normalization; 0.0 when both empty."""
    sa, sb = token_set(a), token_set(b)
    union = sa | sb
    if not union:
        return 0.0
    return len(sa & sb) / len(union)


def token_jaccard_distance(a: str, b: str) -> float:
    return 1.0 - token_jaccard_similarity(a, b)


def set_jaccard_distance(sa: frozenset | set, sb: frozenset | set) -> float:
    """1 - |A∩B| / |A∪B| over arbitrary sets; 0.0 when both empty."""
    union = len(sa | sb)
    if union == 0:
        return 0.0
    return 1.0 - len(sa & sb) / union
