"""Second-stage ranking: features, logistic scoring, training, trigger decision.

Every feature has a presence flag companion; absent statistics score as zero
with the flag off rather than being imputed. The scorer is a plain logistic
model so scores are reproducible to the last bit and the feature families'
effect is measurable by masking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from collabqr.graph import FIG
from collabqr.model import RewriteCandidate
from collabqr.retrieval import RetrievalHit
from collabqr.text import normalize, token_jaccard_similarity

FEATURE_NAMES = (
    "global_impression",
    "global_defect_rate",
    "user_impression",
    "user_defect_rate",
    "affinity_impression",
    "affinity_entity_impression",
    "hop",
    "unique_path_count",
    "path_impression_sum",
    "degree_difference",
    "neighborhood_jaccard_distance",
    "l1_similarity",
    "query_entity_impression",
    "query_entity_defect_rate",
    "entity_name_similarity",
    "barge_in_rate",
    "termination_rate",
)

N_FEATURES = len(FEATURE_NAMES)
DEFAULT_TRIGGER_THRESHOLD = 0.8

# Masks select which named features a scorer may use (presence flags follow).
SIMILARITY_ONLY_FEATURES = frozenset({"l1_similarity"})
FULL_FEATURES = frozenset(FEATURE_NAMES)


@dataclass
class FeatureVector:
    values: np.ndarray
    presence: np.ndarray

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.values, self.presence])

    def get(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])

    def is_present(self, name: str) -> bool:
        return bool(self.presence[FEATURE_NAMES.index(name)])


@dataclass
class WeightVector:
    weights: np.ndarray  # length 2 * N_FEATURES: values then presence flags
    bias: float
    loss_trace: list = field(default_factory=list, compare=False)

    def named(self) -> dict[str, float]:
        out = {"bias": self.bias}
        for i, name in enumerate(FEATURE_NAMES):
            out[name] = float(self.weights[i])
            out["has_" + name] = float(self.weights[N_FEATURES + i])
        return out


@dataclass
class RewriteDecision:
    triggered: bool
    rewrite: str | None
    candidate: RewriteCandidate | None
    score: float
    threshold: float


class QueryEntityMatcher:
    """Find the graph entity whose name occurs in the query, longest name wins."""

    def __init__(self, graph: FIG):
        self._by_first_token: dict[str, list[tuple[tuple[str, ...], str, str]]] = {}
        for entity_id in graph.entity_ids:
            name = normalize(graph.entities[entity_id].name)
            toks = tuple(name.split())
            if not toks:
                continue
            self._by_first_token.setdefault(toks[0], []).append((toks, name, entity_id))

    def match(self, query: str) -> str | None:
        toks = normalize(query).split()
        best: tuple[int, str, str] | None = None  # (-len, name, entity_id)
        for i, tok in enumerate(toks):
            for name_toks, name, entity_id in self._by_first_token.get(tok, ()):
                if tuple(toks[i : i + len(name_toks)]) != name_toks:
                    continue
                key = (-len(name_toks), name, entity_id)
                if best is None or key < best:
                    best = key
        return best[2] if best else None


def user_utterance_stats(graph: FIG, user_id: str) -> dict[str, tuple[int, float]]:
    """(impression, defect_rate) of each utterance on the user's own edges."""
    sums: dict[str, tuple[int, float]] = {}
    for edge in graph.edges_of_user(user_id):
        for q in edge.queries:
            imp, weighted = sums.get(q.utterance, (0, 0.0))
            sums[q.utterance] = (
                imp + q.signals.impression,
                weighted + q.signals.defect_rate * q.signals.impression,
            )
    return {utt: (imp, weighted / imp) for utt, (imp, weighted) in sums.items()}


def extract_features(
    graph: FIG,
    query: str,
    hit: RetrievalHit,
    user_id: str,
    user_stats: dict[str, tuple[int, float]] | None = None,
    query_entity: str | None = None,
    query_entity_resolved: bool = False,
) -> FeatureVector:
    """Global, user, affinity, and guardrail features for one retrieved hit.

    Pass query_entity (with query_entity_resolved=True) when the caller has
    already matched the query against entity names, to avoid rescanning.
    """
    c = hit.candidate
    values = np.zeros(N_FEATURES, dtype=np.float64)
    presence = np.zeros(N_FEATURES, dtype=np.float64)

    def put(name: str, value: float) -> None:
        i = FEATURE_NAMES.index(name)
        values[i] = value
        presence[i] = 1.0

    global_stats = graph.utterance_stats(c.utterance)
    if global_stats is not None:
        put("global_impression", global_stats[0])
        put("global_defect_rate", global_stats[1])
    if user_stats is None:
        user_stats = user_utterance_stats(graph, user_id)
    mine = user_stats.get(c.utterance)
    if mine is not None:
        put("user_impression", mine[0])
        put("user_defect_rate", mine[1])
    put("hop", c.hop)
    if c.hop >= 2:
        a = c.affinity_stats
        put("affinity_impression", a.affinity_impression)
        put("unique_path_count", a.unique_path_count)
        put("path_impression_sum", a.path_impression_sum)
        put("degree_difference", a.degree_difference)
        put("neighborhood_jaccard_distance", a.neighborhood_jaccard_distance)
        source_edge = graph.edge(c.source_user_id, c.source_entity_id)
        if source_edge is not None:
            put("affinity_entity_impression", source_edge.signals.impression)
    put("l1_similarity", hit.similarity)
    if not query_entity_resolved:
        query_entity = QueryEntityMatcher(graph).match(query)
    if query_entity is not None:
        imp, defect = graph.entity_stats(query_entity)
        put("query_entity_impression", imp)
        put("query_entity_defect_rate", defect)
        candidate_name = graph.entities[c.source_entity_id].name if c.source_entity_id in graph.entities else ""
        query_name = graph.entities[query_entity].name
        put("entity_name_similarity", token_jaccard_similarity(query_name, candidate_name))
    put("barge_in_rate", c.signals.barge_in_rate)
    put("termination_rate", c.signals.termination_rate)
    return FeatureVector(values=values, presence=presence)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def score(features: FeatureVector, weights: WeightVector) -> float:
    x = features.to_array()
    if x.shape[0] != weights.weights.shape[0]:
        raise ValueError("feature/weight dimension mismatch")
    return _sigmoid(float(np.dot(weights.weights, x)) + weights.bias)


def mask_array(feature_names: frozenset[str]) -> np.ndarray:
    """Column mask over values and their presence flags for the named features."""
    mask = np.zeros(2 * N_FEATURES, dtype=np.float64)
    for i, name in enumerate(FEATURE_NAMES):
        if name in feature_names:
            mask[i] = 1.0
            mask[N_FEATURES + i] = 1.0
    return mask


def train_scorer(
    examples: list[tuple[FeatureVector, bool]],
    learning_rate: float = 0.1,
    epochs: int = 400,
    l2: float = 1e-4,
    feature_names: frozenset[str] = FULL_FEATURES,
) -> WeightVector:
    """Deterministic full-batch logistic regression.

    Rows are put in a canonical order first, so any permutation of the same
    example multiset yields bit-identical weights. Features are standardized
    internally and the scaling is folded back, so scoring stays a plain
    logistic over raw features.
    """
    if not examples:
        raise ValueError("no training examples")
    labels = [1.0 if y else 0.0 for _, y in examples]
    if len(set(labels)) < 2:
        raise ValueError("training needs both a positive and a negative example")
    X = np.stack([f.to_array() for f, _ in examples])
    y = np.array(labels, dtype=np.float64)
    order = sorted(range(len(examples)), key=lambda i: (y[i], X[i].tobytes()))
    X = X[order]
    y = y[order]
    mask = mask_array(feature_names)
    mu = X.mean(axis=0)
    sigma = X.std(axis=0)
    sigma[sigma == 0.0] = 1.0
    Xs = ((X - mu) / sigma) * mask
    n = X.shape[0]
    w = np.zeros(2 * N_FEATURES, dtype=np.float64)
    b = 0.0
    trace = []
    for _ in range(epochs):
        z = Xs @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        eps = 1e-12
        loss = float(-np.mean(y * np.log(p + eps) + (1.0 - y) * np.log(1.0 - p + eps)) + l2 * np.dot(w, w))
        trace.append(loss)
        grad_w = Xs.T @ (p - y) / n + 2.0 * l2 * w
        grad_b = float(np.mean(p - y))
        w = w - learning_rate * grad_w
        b = b - learning_rate * grad_b
    raw_w = (w / sigma) * mask
    raw_b = b - float(np.dot(w / sigma, mu * mask))
    return WeightVector(weights=raw_w, bias=raw_b, loss_trace=trace)


def default_weights() -> WeightVector:
    """Sign-constrained fallback used before any training has happened."""
    named = {
        "l1_similarity": 8.0,
        "entity_name_similarity": 1.0,
        "global_impression": 0.001,
        "global_defect_rate": -1.0,
        "user_impression": 0.002,
        "user_defect_rate": -1.0,
        "affinity_impression": 0.0005,
        "affinity_entity_impression": 0.0005,
        "hop": -0.05,
        "unique_path_count": 0.01,
        "path_impression_sum": 0.0001,
        "degree_difference": 0.0,
        "neighborhood_jaccard_distance": -0.2,
        "query_entity_impression": 0.0,
        "query_entity_defect_rate": -0.5,
        "barge_in_rate": -0.5,
        "termination_rate": -0.5,
    }
    weights = np.zeros(2 * N_FEATURES, dtype=np.float64)
    for i, name in enumerate(FEATURE_NAMES):
        weights[i] = named[name]
    weights[N_FEATURES + FEATURE_NAMES.index("user_impression")] = 0.3
    return WeightVector(weights=weights, bias=-4.5)


def decide(
    hits: list[RetrievalHit],
    features_per_hit: list[FeatureVector],
    weights: WeightVector,
    threshold: float,
    query: str | None = None,
) -> RewriteDecision:
    """Score hits, pick the best, trigger at or above the threshold.

    Hits whose output text equals the query itself are skipped: rewriting a
    query to itself is a no-op and would always pass a history-based guardrail.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold {threshold} outside (0, 1)")
    if len(hits) != len(features_per_hit):
        raise ValueError("hits and features differ in length")
    normalized_query = normalize(query) if query is not None else None
    best: tuple[float, float, str] | None = None
    best_hit: RetrievalHit | None = None
    for hit, features in zip(hits, features_per_hit):
        output = normalize(hit.candidate.rewrite_output)
        if normalized_query is not None and output == normalized_query:
            continue
        s = score(features, weights)
        key = (-s, -hit.similarity, hit.candidate.utterance)
        if best is None or key < best:
            best = key
            best_hit = hit
    if best_hit is None:
        return RewriteDecision(triggered=False, rewrite=None, candidate=None, score=0.0, threshold=threshold)
    final = -best[0]
    triggered = final >= threshold
    return RewriteDecision(
        triggered=triggered,
        rewrite=best_hit.candidate.rewrite_output if triggered else None,
        candidate=best_hit.candidate if triggered else None,
        score=final,
        threshold=threshold,
    )


def save_weights(path, weights: WeightVector) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"bias\t{weights.bias!r}\n")
        named = weights.named()
        for name in FEATURE_NAMES:
            fh.write(f"{name}\t{named[name]!r}\n")
        for name in FEATURE_NAMES:
            fh.write(f"has_{name}\t{named['has_' + name]!r}\n")


def load_weights(path) -> WeightVector:
    table: dict[str, float] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            name, value = line.split("\t")
            table[name] = float(value)
    weights = np.zeros(2 * N_FEATURES, dtype=np.float64)
    for i, name in enumerate(FEATURE_NAMES):
        weights[i] = table[name]
        weights[N_FEATURES + i] = table["has_" + name]
    return WeightVector(weights=weights, bias=table["bias"])
