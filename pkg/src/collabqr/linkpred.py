"""Predict user-entity links to widen traversal, plus the file interchange
for external predictors and the fine-tune data export.

The built-in predictor scores a non-adjacent entity by how often the user's
entities co-occur with it across other users. An external model can play the
same role through request/response files; predicted names are grounded back
to graph nodes by exact normalized-name match, then token-overlap fallback.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from collabqr.graph import FIG, RECORD_DEFECT_CUTOFF, build_user_history_index
from collabqr.model import AffinityStats, RewriteCandidate, UserHistoryIndex
from collabqr.records import Domain, LogRecord, ParseReject, is_class_a
from collabqr.text import normalize, token_set

DEFAULT_PREDICTIONS_PER_USER = 5
DEFAULT_GROUNDING_JACCARD = 0.5
DEFAULT_PREDICTED_DOMAINS = (Domain.MUSIC, Domain.VIDEO)
DEFAULT_HISTORY_WEEKS = 26
DEFAULT_LABEL_WEEKS = 4
DEFAULT_PROMPT_HISTORY_LIMIT = 50

WEEK_SECONDS = 7 * 24 * 3600

INSTRUCTION_VIDEO = "Recommend 10 other movies based on the user's watching history."
INSTRUCTION_MUSIC = "Recommend ten other songs based on the user's listening history."
INPUT_PREFIX_VIDEO = "The user watched movies "
INPUT_PREFIX_MUSIC = "The user listened to songs "


@dataclass(frozen=True)
class PredictedLink:
    user_id: str
    entity_id: str
    source: str  # "cooccurrence" or "external"
    rank: int


@dataclass(frozen=True)
class FinetuneExample:
    instruction: str
    input: str
    label: str


def _predictable_entities(graph: FIG, domains: tuple[Domain, ...]) -> list[str]:
    return [
        e
        for e in graph.entity_ids
        if graph.entities[e].is_content and graph.entities[e].domain in domains
    ]


def cooccurrence_predict(
    graph: FIG,
    user_id: str,
    k: int = DEFAULT_PREDICTIONS_PER_USER,
    domains: tuple[Domain, ...] = DEFAULT_PREDICTED_DOMAINS,
) -> list[PredictedLink]:
    """Top-k non-adjacent content entities by co-interaction count."""
    if k < 1:
        raise ValueError("k must be >= 1")
    own = graph.user_neighborhood(user_id)
    peer_weight: Counter[str] = Counter()
    for entity_id in sorted(own):
        peer_weight.update(graph.entity_user_ids(entity_id))
    peer_weight.pop(user_id, None)
    scores: Counter[str] = Counter()
    for peer_id, weight in peer_weight.items():
        for entity_id in graph.user_entity_ids(peer_id):
            scores[entity_id] += weight
    allowed = set(_predictable_entities(graph, domains))
    ranked = sorted(
        ((score, e) for e, score in scores.items() if e in allowed and e not in own and score > 0),
        key=lambda pair: (-pair[0], pair[1]),
    )
    return [
        PredictedLink(user_id=user_id, entity_id=e, source="cooccurrence", rank=i + 1)
        for i, (_, e) in enumerate(ranked[:k])
    ]


def batch_cooccurrence_predict(
    graph: FIG,
    k: int = DEFAULT_PREDICTIONS_PER_USER,
    domains: tuple[Domain, ...] = DEFAULT_PREDICTED_DOMAINS,
) -> dict[str, list[PredictedLink]]:
    """Vectorized equivalent of cooccurrence_predict for every user at once.

    Counts stay below 2**24 so float32 accumulation is exact.
    """
    users = graph.user_ids
    entities = graph.entity_ids
    if not users or not entities:
        return {}
    entity_pos = {e: i for i, e in enumerate(entities)}
    adjacency = np.zeros((len(users), len(entities)), dtype=np.float32)
    for row, user_id in enumerate(users):
        for e in graph.user_entity_ids(user_id):
            adjacency[row, entity_pos[e]] = 1.0
    cooc = adjacency.T @ adjacency
    scores = adjacency @ cooc
    allowed = np.zeros(len(entities), dtype=bool)
    for e in _predictable_entities(graph, domains):
        allowed[entity_pos[e]] = True
    out: dict[str, list[PredictedLink]] = {}
    for row, user_id in enumerate(users):
        mask = allowed & (adjacency[row] == 0.0) & (scores[row] > 0.0)
        pairs = sorted(
            ((int(scores[row, col]), entities[col]) for col in np.nonzero(mask)[0]),
            key=lambda pair: (-pair[0], pair[1]),
        )
        out[user_id] = [
            PredictedLink(user_id=user_id, entity_id=e, source="cooccurrence", rank=i + 1)
            for i, (_, e) in enumerate(pairs[:k])
        ]
    return out


class EntityGrounder:
    """Match predicted entity names to graph nodes within one domain."""

    def __init__(self, graph: FIG, domain: Domain, min_jaccard: float = DEFAULT_GROUNDING_JACCARD):
        self.min_jaccard = min_jaccard
        self._exact: dict[str, str] = {}
        self._token_sets: dict[str, frozenset[str]] = {}
        self._by_token: dict[str, list[str]] = {}
        for entity_id in graph.entity_ids:
            node = graph.entities[entity_id]
            if node.domain != domain:
                continue
            name = normalize(node.name)
            if name not in self._exact or entity_id < self._exact[name]:
                self._exact[name] = entity_id
            toks = token_set(name)
            self._token_sets[entity_id] = toks
            for tok in toks:
                self._by_token.setdefault(tok, []).append(entity_id)

    def ground(self, name: str) -> str | None:
        wanted = normalize(name)
        exact = self._exact.get(wanted)
        if exact is not None:
            return exact
        toks = token_set(wanted)
        if not toks:
            return None
        candidates = set()
        for tok in toks:
            candidates.update(self._by_token.get(tok, ()))
        best: tuple[float, str] | None = None
        for entity_id in sorted(candidates):
            theirs = self._token_sets[entity_id]
            union = toks | theirs
            similarity = len(toks & theirs) / len(union)
            if similarity < self.min_jaccard:
                continue
            if best is None or similarity > best[0]:
                best = (similarity, entity_id)
        return best[1] if best else None


def ground_entities(
    graph: FIG, names: list[str], domain: Domain, min_jaccard: float = DEFAULT_GROUNDING_JACCARD
) -> list[tuple[str, str | None]]:
    grounder = EntityGrounder(graph, domain, min_jaccard)
    return [(name, grounder.ground(name)) for name in names]


def pair_affinity_stats(graph: FIG, user_id: str, peer_id: str) -> AffinityStats:
    """The same pair statistics traversal computes, for an arbitrary pair."""
    own_content = graph.user_content_entities(user_id)
    shared = own_content & graph.user_content_entities(peer_id)
    path_impressions = 0
    for entity_id in shared:
        path_impressions += graph.edge(user_id, entity_id).signals.impression
        path_impressions += graph.edge(peer_id, entity_id).signals.impression
    own_all = graph.user_neighborhood(user_id)
    peer_all = graph.user_neighborhood(peer_id)
    union = own_all | peer_all
    jaccard = 0.0 if not union else 1.0 - len(own_all & peer_all) / len(union)
    return AffinityStats(
        unique_path_count=len(shared),
        path_impression_sum=path_impressions,
        degree_difference=abs(len(own_all) - len(peer_all)),
        neighborhood_jaccard_distance=jaccard,
    )


def augment_and_collect(
    graph: FIG,
    user_id: str,
    links: list[PredictedLink],
    history_cap: int | None = None,
    history: UserHistoryIndex | None = None,
) -> list[RewriteCandidate]:
    """Harvest peers' queries on predicted entities, two hops out.

    The predicted edge stands in for a real interaction, so every user of the
    predicted entity acts as a peer for it regardless of the shared-content
    rule. Merge the result with traversal candidates before ranking.
    """
    if history is None:
        history = build_user_history_index(graph, user_id, history_cap)
    excluded = history.utterances()
    candidates: list[RewriteCandidate] = []
    pair_stats: dict[str, AffinityStats] = {}
    for link in sorted(links, key=lambda l: l.rank):
        if link.user_id != user_id:
            raise ValueError("link does not belong to this user")
        if graph.edge(user_id, link.entity_id) is not None:
            raise ValueError(f"predicted entity {link.entity_id} already adjacent")
        node = graph.entities.get(link.entity_id)
        if node is None:
            continue
        peers = [u for u in graph.entity_user_ids(link.entity_id) if u != user_id]
        affinity_impression = sum(graph.edge(u, link.entity_id).signals.impression for u in peers)
        for peer_id in peers:
            stats = pair_stats.get(peer_id)
            if stats is None:
                stats = pair_affinity_stats(graph, user_id, peer_id)
                pair_stats[peer_id] = stats
            stats_here = stats.with_affinity_impression(affinity_impression)
            for q in graph.edge(peer_id, link.entity_id).queries:
                if q.utterance in excluded:
                    continue
                candidates.append(
                    RewriteCandidate(
                        utterance=q.utterance,
                        rewrite_target=q.rewrite_target,
                        source_user_id=peer_id,
                        source_entity_id=link.entity_id,
                        entity_type=node.entity_type,
                        hop=2,
                        signals=q.signals,
                        affinity_stats=stats_here,
                    )
                )
    return candidates


# -- fine-tune export ----------------------------------------------------------


def _quoted(names: list[str]) -> str:
    return ", ".join(f'"{name}"' for name in names)


def render_finetune_input(domain: Domain, names: list[str]) -> str:
    prefix = INPUT_PREFIX_VIDEO if domain == Domain.VIDEO else INPUT_PREFIX_MUSIC
    return prefix + _quoted(names) + "."


def export_finetune_examples(
    records: list[LogRecord],
    history_weeks: int = DEFAULT_HISTORY_WEEKS,
    label_weeks: int = DEFAULT_LABEL_WEEKS,
) -> list[FinetuneExample]:
    """Per user per domain: history-window entity names in, next-window names out."""
    usable = [r for r in records if r.defect_score <= RECORD_DEFECT_CUTOFF]
    if not usable:
        return []
    t0 = min(r.timestamp for r in usable)
    span = max(r.timestamp for r in usable) - t0
    if span < (history_weeks + label_weeks - 1) * WEEK_SECONDS:
        raise ValueError("records do not span the history plus label windows")
    history_end = t0 + history_weeks * WEEK_SECONDS
    label_end = history_end + label_weeks * WEEK_SECONDS
    # (user, domain) -> name -> first timestamp, separately per window.
    history_names: dict[tuple[str, Domain], dict[str, int]] = {}
    label_names: dict[tuple[str, Domain], dict[str, int]] = {}
    for r in sorted(usable, key=lambda r: (r.timestamp, r.user_id, r.entity_id)):
        if r.domain not in (Domain.MUSIC, Domain.VIDEO) or not is_class_a(r.entity_type):
            continue
        key = (r.user_id, r.domain)
        if t0 <= r.timestamp < history_end:
            history_names.setdefault(key, {}).setdefault(r.entity_name, r.timestamp)
        elif history_end <= r.timestamp < label_end:
            label_names.setdefault(key, {}).setdefault(r.entity_name, r.timestamp)
    examples = []
    for key in sorted(history_names):
        user_id, domain = key
        inputs = list(history_names[key])
        labels = [n for n in label_names.get(key, {}) if n not in history_names[key]]
        if not labels:
            continue
        instruction = INSTRUCTION_VIDEO if domain == Domain.VIDEO else INSTRUCTION_MUSIC
        examples.append(
            FinetuneExample(
                instruction=instruction,
                input=render_finetune_input(domain, inputs),
                label=_quoted(labels),
            )
        )
    return examples


def write_finetune_file(path, examples: list[FinetuneExample]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {"instruction": ex.instruction, "input": ex.input, "label": ex.label},
                    sort_keys=True,
                    separators=(",", ":"),
                )
                + "\n"
            )


# -- prediction interchange ------------------------------------------------------


@dataclass(frozen=True)
class PredictionRequest:
    user_id: str
    domain: Domain
    history_names: tuple[str, ...]


@dataclass
class PredictionsFile:
    by_user: dict[str, list[str]] = field(default_factory=dict)
    lines: list[tuple[str, Domain, list[str]]] = field(default_factory=list)
    rejects: list[ParseReject] = field(default_factory=list)


def make_prediction_requests(
    graph: FIG,
    domains: tuple[Domain, ...] = DEFAULT_PREDICTED_DOMAINS,
    history_limit: int = DEFAULT_PROMPT_HISTORY_LIMIT,
) -> list[PredictionRequest]:
    """One request per (user, domain) with the user's strongest content names."""
    requests = []
    for user_id in graph.user_ids:
        for domain in domains:
            rows = []
            for edge in graph.edges_of_user(user_id):
                node = graph.entity(edge.entity_id)
                if node.domain != domain or not node.is_content:
                    continue
                rows.append((-edge.signals.impression, node.name, edge.entity_id))
            if not rows:
                continue
            rows.sort()
            names = []
            seen = set()
            for _, name, _ in rows:
                if name not in seen:
                    seen.add(name)
                    names.append(name)
            requests.append(PredictionRequest(user_id, domain, tuple(names[:history_limit])))
    return requests


def write_predictions_request(path, requests: list[PredictionRequest]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for req in requests:
            fh.write(
                json.dumps(
                    {
                        "user_id": req.user_id,
                        "domain": req.domain.value,
                        "history": list(req.history_names),
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
                + "\n"
            )


def write_predictions_file(path, lines: list[tuple[str, Domain, list[str]]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for user_id, domain, names in lines:
            fh.write(
                json.dumps(
                    {"user_id": user_id, "domain": domain.value, "predictions": list(names)},
                    sort_keys=True,
                    separators=(",", ":"),
                )
                + "\n"
            )


def read_predictions_file(path) -> PredictionsFile:
    """Parse a predictions response file, tolerating malformed lines."""
    result = PredictionsFile()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for number, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            try:
                obj = json.loads(line)
                user_id = obj["user_id"]
                domain = Domain(obj["domain"])
                names = obj["predictions"]
                if not isinstance(user_id, str) or not isinstance(names, list):
                    raise ValueError("wrong field types")
                if not all(isinstance(n, str) for n in names):
                    raise ValueError("non-string prediction name")
            except (ValueError, KeyError, TypeError) as exc:
                result.rejects.append(ParseReject(line_number=number, reason=str(exc)))
                continue
            result.lines.append((user_id, domain, list(names)))
            result.by_user.setdefault(user_id, []).extend(names)
    return result


def links_from_predictions(
    graph: FIG,
    predictions: PredictionsFile,
    min_jaccard: float = DEFAULT_GROUNDING_JACCARD,
    k: int = DEFAULT_PREDICTIONS_PER_USER,
) -> dict[str, list[PredictedLink]]:
    """Ground predicted names, keeping the first k new entities per user and domain."""
    grounders = {}
    grounded: dict[str, dict[Domain, list[str]]] = {}
    for user_id, domain, names in predictions.lines:
        grounder = grounders.get(domain)
        if grounder is None:
            grounder = EntityGrounder(graph, domain, min_jaccard)
            grounders[domain] = grounder
        buckets = grounded.setdefault(user_id, {})
        bucket = buckets.setdefault(domain, [])
        for name in names:
            entity_id = grounder.ground(name)
            if entity_id is None or any(entity_id in b for b in buckets.values()):
                continue
            if graph.edge(user_id, entity_id) is not None:
                continue
            bucket.append(entity_id)
    out: dict[str, list[PredictedLink]] = {}
    for user_id, buckets in sorted(grounded.items()):
        entities: list[str] = []
        for domain in sorted(buckets, key=lambda d: d.value):
            entities.extend(buckets[domain][:k])
        if entities:
            out[user_id] = [
                PredictedLink(user_id=user_id, entity_id=e, source="external", rank=i + 1)
                for i, e in enumerate(entities)
            ]
    return out
