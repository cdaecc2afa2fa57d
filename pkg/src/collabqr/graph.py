"""The user-entity feedback interaction graph: construction, lookups, persistence.

Edges aggregate raw log records per (user, entity): each distinct
(utterance, rewrite_target) pair becomes one QueryRecord whose rates are
averages over its contributing records. Edges whose aggregate defect rate
reaches the defect threshold are dropped at construction time, so the graph
only contains interactions users were happy with.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from collabqr.model import AffinityStats, FeedbackSignals, QueryRecord, RewriteCandidate, UserHistoryIndex
from collabqr.records import Domain, EntityType, LogRecord, is_class_a
from collabqr.text import normalize

FORMAT_NAME = "fig"
FORMAT_VERSION = 1

DEFAULT_DEFECT_THRESHOLD = 0.5
DEFAULT_HISTORY_CAP = 100

# A single record counts as defective when its score exceeds this cutoff.
RECORD_DEFECT_CUTOFF = 0.5


@dataclass(frozen=True)
class EntityNode:
    entity_id: str
    name: str
    entity_type: EntityType
    domain: Domain

    @property
    def is_content(self) -> bool:
        return is_class_a(self.entity_type)


@dataclass(frozen=True)
class InteractionEdge:
    user_id: str
    entity_id: str
    queries: tuple[QueryRecord, ...]
    signals: FeedbackSignals

    def validate(self) -> None:
        if not self.queries:
            raise ValueError("edge without queries")
        if self.signals.impression != sum(q.signals.impression for q in self.queries):
            raise ValueError("edge impression does not equal sum of query impressions")
        for q in self.queries:
            q.validate()
        self.signals.validate()


class FIG:
    """Immutable bipartite graph with adjacency indexed from both sides."""

    def __init__(self, entities: dict[str, EntityNode], edges: list[InteractionEdge]):
        self.entities: dict[str, EntityNode] = dict(sorted(entities.items()))
        self._by_user: dict[str, dict[str, InteractionEdge]] = {}
        self._by_entity: dict[str, dict[str, InteractionEdge]] = {}
        for edge in sorted(edges, key=lambda e: (e.user_id, e.entity_id)):
            if edge.entity_id not in self.entities:
                raise ValueError(f"edge references unknown entity {edge.entity_id}")
            self._by_user.setdefault(edge.user_id, {})[edge.entity_id] = edge
            self._by_entity.setdefault(edge.entity_id, {})[edge.user_id] = edge
        self.user_ids: tuple[str, ...] = tuple(sorted(self._by_user))
        self.entity_ids: tuple[str, ...] = tuple(sorted(self.entities))
        self._neighborhoods: dict[str, frozenset[str]] = {}
        self._content_sets: dict[str, frozenset[str]] = {}
        self._utterance_stats: dict[str, tuple[int, float]] | None = None
        self._entity_stats: dict[str, tuple[int, float]] = {}

    # -- lookups ------------------------------------------------------------

    def has_user(self, user_id: str) -> bool:
        return user_id in self._by_user

    def entity(self, entity_id: str) -> EntityNode:
        return self.entities[entity_id]

    def edge(self, user_id: str, entity_id: str) -> InteractionEdge | None:
        return self._by_user.get(user_id, {}).get(entity_id)

    def edges_of_user(self, user_id: str) -> list[InteractionEdge]:
        return [self._by_user[user_id][e] for e in sorted(self._by_user.get(user_id, {}))]

    def user_entity_ids(self, user_id: str) -> tuple[str, ...]:
        return tuple(sorted(self._by_user.get(user_id, {})))

    def entity_user_ids(self, entity_id: str) -> tuple[str, ...]:
        return tuple(sorted(self._by_entity.get(entity_id, {})))

    def all_edges(self) -> list[InteractionEdge]:
        return [self._by_user[u][e] for u in self.user_ids for e in sorted(self._by_user[u])]

    def n_edges(self) -> int:
        return sum(len(adj) for adj in self._by_user.values())

    # -- derived structure, memoized (safe: graph is immutable) --------------

    def user_neighborhood(self, user_id: str) -> frozenset[str]:
        got = self._neighborhoods.get(user_id)
        if got is None:
            got = frozenset(self._by_user.get(user_id, {}))
            self._neighborhoods[user_id] = got
        return got

    def user_content_entities(self, user_id: str) -> frozenset[str]:
        got = self._content_sets.get(user_id)
        if got is None:
            got = frozenset(e for e in self._by_user.get(user_id, {}) if self.entities[e].is_content)
            self._content_sets[user_id] = got
        return got

    def user_degree(self, user_id: str) -> int:
        return len(self._by_user.get(user_id, {}))

    def utterance_stats(self, utterance: str) -> tuple[int, float] | None:
        """Graph-wide (impression, defect_rate) of a normalized utterance."""
        if self._utterance_stats is None:
            sums: dict[str, tuple[int, list[float]]] = {}
            for edge in self.all_edges():
                for q in edge.queries:
                    imp, parts = sums.setdefault(q.utterance, (0, []))
                    sums[q.utterance] = (imp + q.signals.impression, parts)
                    parts.append(q.signals.defect_rate * q.signals.impression)
            self._utterance_stats = {
                utt: (imp, math.fsum(parts) / imp) for utt, (imp, parts) in sums.items()
            }
        return self._utterance_stats.get(utterance)

    def entity_stats(self, entity_id: str) -> tuple[int, float]:
        """(impression, defect_rate) aggregated over every edge of the entity."""
        got = self._entity_stats.get(entity_id)
        if got is None:
            edges = [self._by_entity[entity_id][u] for u in sorted(self._by_entity.get(entity_id, {}))]
            imp = sum(e.signals.impression for e in edges)
            if imp == 0:
                got = (0, 0.0)
            else:
                got = (imp, math.fsum(e.signals.defect_rate * e.signals.impression for e in edges) / imp)
            self._entity_stats[entity_id] = got
        return got

    # -- equality (used by the persistence round-trip contract) --------------

    def __eq__(self, other) -> bool:
        if not isinstance(other, FIG):
            return NotImplemented
        return self.entities == other.entities and self._by_user == other._by_user

    def __ne__(self, other) -> bool:
        eq = self.__eq__(other)
        return eq if eq is NotImplemented else not eq


def _norm_target(utterance: str, rewrite_target: str | None) -> str | None:
    if rewrite_target is None:
        return None
    target = normalize(rewrite_target)
    if not target or target == utterance:
        return None
    return target


def build_graph(records: list[LogRecord], defect_threshold: float = DEFAULT_DEFECT_THRESHOLD) -> FIG:
    """Aggregate records into edges, dropping edges at or above the defect threshold.

    Aggregation is order-insensitive: the same record multiset yields an
    identical graph regardless of input order.
    """
    if not 0.0 < defect_threshold <= 1.0:
        raise ValueError(f"defect_threshold {defect_threshold} outside (0, 1]")
    entity_meta: dict[str, tuple[str, str, str]] = {}
    # (user, entity) -> (utterance, target) -> [count, defect scores, barge count, term count]
    buckets: dict[tuple[str, str], dict[tuple[str, str | None], list]] = {}
    for record in records:
        utterance = normalize(record.utterance)
        if not utterance:
            continue
        meta = (normalize(record.entity_name), record.entity_type.value, record.domain.value)
        prior = entity_meta.get(record.entity_id)
        if prior is None or meta < prior:
            entity_meta[record.entity_id] = meta
        key = (utterance, _norm_target(utterance, record.rewrite_target))
        per_edge = buckets.setdefault((record.user_id, record.entity_id), {})
        bucket = per_edge.setdefault(key, [0, [], 0, 0])
        bucket[0] += 1
        bucket[1].append(record.defect_score)
        bucket[2] += 1 if record.barged_in else 0
        bucket[3] += 1 if record.terminated else 0

    entities = {
        eid: EntityNode(eid, name, EntityType(etype), Domain(domain))
        for eid, (name, etype, domain) in entity_meta.items()
    }
    edges: list[InteractionEdge] = []
    kept_entities: set[str] = set()
    for (user_id, entity_id), per_edge in sorted(buckets.items()):
        queries = []
        for (utterance, target), (count, scores, barge, term) in sorted(
            per_edge.items(), key=lambda kv: (kv[0][0], kv[0][1] or "")
        ):
            queries.append(
                QueryRecord(
                    utterance=utterance,
                    rewrite_target=target,
                    signals=FeedbackSignals(
                        impression=count,
                        defect_rate=math.fsum(scores) / count,
                        barge_in_rate=barge / count,
                        termination_rate=term / count,
                    ),
                )
            )
        impression = sum(q.signals.impression for q in queries)
        all_scores = [s for bucket in per_edge.values() for s in bucket[1]]
        defect_rate = math.fsum(all_scores) / impression
        if defect_rate >= defect_threshold:
            continue
        barge = sum(bucket[2] for bucket in per_edge.values())
        term = sum(bucket[3] for bucket in per_edge.values())
        edges.append(
            InteractionEdge(
                user_id=user_id,
                entity_id=entity_id,
                queries=tuple(queries),
                signals=FeedbackSignals(
                    impression=impression,
                    defect_rate=defect_rate,
                    barge_in_rate=barge / impression,
                    termination_rate=term / impression,
                ),
            )
        )
        kept_entities.add(entity_id)
    return FIG({eid: node for eid, node in entities.items() if eid in kept_entities}, edges)


def edge_lookup(graph: FIG, user_id: str, entity_id: str) -> InteractionEdge | None:
    return graph.edge(user_id, entity_id)


def build_user_history_index(
    graph: FIG, user_id: str, history_cap: int | None = DEFAULT_HISTORY_CAP
) -> UserHistoryIndex:
    """Rank the user's own queries by (impression desc, defect asc, text) and cap."""
    entries: list[RewriteCandidate] = []
    for edge in graph.edges_of_user(user_id):
        node = graph.entity(edge.entity_id)
        for q in edge.queries:
            entries.append(
                RewriteCandidate(
                    utterance=q.utterance,
                    rewrite_target=q.rewrite_target,
                    source_user_id=user_id,
                    source_entity_id=edge.entity_id,
                    entity_type=node.entity_type,
                    hop=1,
                    signals=q.signals,
                    affinity_stats=AffinityStats(),
                )
            )
    entries.sort(
        key=lambda c: (
            -c.signals.impression,
            c.signals.defect_rate,
            c.utterance,
            c.source_entity_id,
            c.rewrite_target or "",
        )
    )
    if history_cap is not None:
        entries = entries[:history_cap]
    return UserHistoryIndex(user_id=user_id, entries=entries)


# -- persistence -------------------------------------------------------------


def save_graph(graph: FIG, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        header = {"format": FORMAT_NAME, "version": FORMAT_VERSION}
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for eid in graph.entity_ids:
            node = graph.entities[eid]
            fh.write(
                json.dumps(
                    {
                        "kind": "entity",
                        "id": node.entity_id,
                        "name": node.name,
                        "type": node.entity_type.value,
                        "domain": node.domain.value,
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
                + "\n"
            )
        for edge in graph.all_edges():
            s = edge.signals
            fh.write(
                json.dumps(
                    {
                        "kind": "edge",
                        "user": edge.user_id,
                        "entity": edge.entity_id,
                        "signals": [s.impression, s.defect_rate, s.barge_in_rate, s.termination_rate],
                        "queries": [
                            [
                                q.utterance,
                                q.rewrite_target,
                                q.signals.impression,
                                q.signals.defect_rate,
                                q.signals.barge_in_rate,
                                q.signals.termination_rate,
                            ]
                            for q in edge.queries
                        ],
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
                + "\n"
            )


def load_graph(path) -> FIG:
    entities: dict[str, EntityNode] = {}
    edges: list[InteractionEdge] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != FORMAT_NAME or header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported graph file header {header}")
        for line in fh:
            obj = json.loads(line)
            if obj["kind"] == "entity":
                entities[obj["id"]] = EntityNode(
                    obj["id"], obj["name"], EntityType(obj["type"]), Domain(obj["domain"])
                )
            elif obj["kind"] == "edge":
                queries = tuple(
                    QueryRecord(
                        utterance=q[0],
                        rewrite_target=q[1],
                        signals=FeedbackSignals(q[2], q[3], q[4], q[5]),
                    )
                    for q in obj["queries"]
                )
                s = obj["signals"]
                edges.append(
                    InteractionEdge(
                        user_id=obj["user"],
                        entity_id=obj["entity"],
                        queries=queries,
                        signals=FeedbackSignals(s[0], s[1], s[2], s[3]),
                    )
                )
            else:
                raise ValueError(f"unknown record kind {obj['kind']!r}")
    return FIG(entities, edges)
