"""Constrained traversal: harvest rewrite candidates from similar users.

Peers are users connected to the target user through shared content entities
(songs, albums, videos, ...). A peer qualifies for content harvesting when the
pair shares at least three distinct content entities; qualified peers
contribute their queries on content entities the user has not touched, three
hops out. Every peer, qualified or not, contributes queries on category
entities (genres, apps, ...) but only on ones the user also interacts with,
two hops out, so category candidates never introduce new entities.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

from collabqr.graph import DEFAULT_HISTORY_CAP, FIG, build_user_history_index
from collabqr.model import AffinityStats, CollaborativeIndex, RewriteCandidate, UserHistoryIndex
from collabqr.text import set_jaccard_distance

INDEX_FORMAT_NAME = "collab-index"
INDEX_FORMAT_VERSION = 1

DEFAULT_COLLABORATIVE_CAP = 500
PREDICTED_COLLABORATIVE_CAP = 200
MIN_SHARED_CONTENT = 3

INDEX_COLUMNS = (
    "user_id",
    "utterance",
    "rewrite_target",
    "hop",
    "entity_id",
    "source_user_id",
    "impression",
    "defect_rate",
    "barge_in_rate",
    "termination_rate",
    "affinity_impression",
    "unique_path_count",
    "path_impression_sum",
    "degree_difference",
    "neighborhood_jaccard_distance",
)


@dataclass(frozen=True)
class PeerAffinity:
    """A peer reached through shared content entities, with pair statistics."""

    peer_id: str
    stats: AffinityStats
    shared_content: frozenset[str]
    content_qualified: bool


def qualified_peers(graph: FIG, user_id: str, min_shared: int = MIN_SHARED_CONTENT) -> list[PeerAffinity]:
    """All peers sharing at least one content entity, flagged by the 3-path rule."""
    own_content = graph.user_content_entities(user_id)
    own_all = graph.user_neighborhood(user_id)
    own_degree = len(own_all)
    counts: Counter[str] = Counter()
    for entity_id in sorted(own_content):
        counts.update(graph.entity_user_ids(entity_id))
    counts.pop(user_id, None)
    peers = []
    for peer_id in sorted(counts):
        shared = own_content & graph.user_content_entities(peer_id)
        path_impressions = 0
        for entity_id in shared:
            path_impressions += graph.edge(user_id, entity_id).signals.impression
            path_impressions += graph.edge(peer_id, entity_id).signals.impression
        peer_all = graph.user_neighborhood(peer_id)
        stats = AffinityStats(
            unique_path_count=len(shared),
            path_impression_sum=path_impressions,
            degree_difference=abs(own_degree - len(peer_all)),
            neighborhood_jaccard_distance=set_jaccard_distance(own_all, peer_all),
        )
        peers.append(PeerAffinity(peer_id, stats, frozenset(shared), len(shared) >= min_shared))
    return peers


def collect_candidates(
    graph: FIG,
    user_id: str,
    history_cap: int | None = DEFAULT_HISTORY_CAP,
    history: UserHistoryIndex | None = None,
    peers: list[PeerAffinity] | None = None,
    min_shared: int = MIN_SHARED_CONTENT,
) -> list[RewriteCandidate]:
    """Collect hop-3 content candidates and hop-2 shared-category candidates.

    Candidates whose utterance already sits in the user's history index are
    excluded, so the collaborative index only ever adds new material.
    """
    if history is None:
        history = build_user_history_index(graph, user_id, history_cap)
    excluded = history.utterances()
    if peers is None:
        peers = qualified_peers(graph, user_id, min_shared=min_shared)
    own_all = graph.user_neighborhood(user_id)
    peer_id_set = {p.peer_id for p in peers}
    affinity_impressions: dict[str, int] = {}

    def affinity_impression(entity_id: str) -> int:
        got = affinity_impressions.get(entity_id)
        if got is None:
            got = 0
            for adjacent in graph.entity_user_ids(entity_id):
                if adjacent in peer_id_set:
                    got += graph.edge(adjacent, entity_id).signals.impression
            affinity_impressions[entity_id] = got
        return got

    candidates: list[RewriteCandidate] = []
    for peer in peers:
        for edge in graph.edges_of_user(peer.peer_id):
            node = graph.entity(edge.entity_id)
            if node.is_content:
                if not peer.content_qualified or edge.entity_id in own_all:
                    continue
                hop = 3
            else:
                if edge.entity_id not in own_all:
                    continue
                hop = 2
            stats = peer.stats.with_affinity_impression(affinity_impression(edge.entity_id))
            for q in edge.queries:
                if q.utterance in excluded:
                    continue
                candidates.append(
                    RewriteCandidate(
                        utterance=q.utterance,
                        rewrite_target=q.rewrite_target,
                        source_user_id=peer.peer_id,
                        source_entity_id=edge.entity_id,
                        entity_type=node.entity_type,
                        hop=hop,
                        signals=q.signals,
                        affinity_stats=stats,
                    )
                )
    return candidates


def _dedup_key(c: RewriteCandidate):
    return (
        -c.affinity_stats.affinity_impression,
        c.hop,
        c.signals.defect_rate,
        -c.signals.impression,
        c.source_entity_id,
        c.source_user_id,
        c.rewrite_target or "",
    )


def _rank_key(c: RewriteCandidate):
    return (
        c.hop,
        -c.affinity_stats.affinity_impression,
        c.signals.defect_rate,
        -c.signals.impression,
        c.utterance,
        c.source_entity_id,
        c.source_user_id,
    )


def rank_and_cap(candidates: list[RewriteCandidate], cap: int, user_id: str = "") -> CollaborativeIndex:
    """Deduplicate by utterance (best affinity impression wins), rank, truncate."""
    if cap < 1:
        raise ValueError(f"cap {cap} must be >= 1")
    best: dict[str, RewriteCandidate] = {}
    for c in candidates:
        prior = best.get(c.utterance)
        if prior is None or _dedup_key(c) < _dedup_key(prior):
            best[c.utterance] = c
    entries = sorted(best.values(), key=_rank_key)
    return CollaborativeIndex(user_id=user_id, entries=entries[:cap], cap=cap)


def affinity_distances(graph: FIG, user_id: str, max_hops: int = 5) -> tuple[dict[str, int], dict[str, int]]:
    """Unconstrained alternating BFS; hop distances to users and entities."""
    user_dist: dict[str, int] = {user_id: 0}
    entity_dist: dict[str, int] = {}
    current_users = [user_id]
    current_entities: list[str] = []
    for depth in range(1, max_hops + 1):
        if depth % 2 == 1:
            frontier: list[str] = []
            for u in current_users:
                for e in graph.user_entity_ids(u):
                    if e not in entity_dist:
                        entity_dist[e] = depth
                        frontier.append(e)
            current_entities = frontier
        else:
            frontier = []
            for e in current_entities:
                for u in graph.entity_user_ids(e):
                    if u not in user_dist:
                        user_dist[u] = depth
                        frontier.append(u)
            current_users = frontier
    return user_dist, entity_dist


def n_hop_affinity_entities(graph: FIG, user_id: str, n: int) -> set[str]:
    """Entities reachable within n hops, no traversal constraints. Analysis only."""
    if n < 1:
        raise ValueError("n must be >= 1")
    _, entity_dist = affinity_distances(graph, user_id, max_hops=n)
    return set(entity_dist)


# -- persistence -------------------------------------------------------------


def save_indexes(path, indexes: dict[str, CollaborativeIndex], meta: dict) -> None:
    """Write all users' collaborative indexes as one TSV with a manifest line."""
    header = {"format": INDEX_FORMAT_NAME, "version": INDEX_FORMAT_VERSION}
    header.update(meta)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        fh.write("\t".join(INDEX_COLUMNS) + "\n")
        for user_id in sorted(indexes):
            for c in indexes[user_id].entries:
                s = c.signals
                a = c.affinity_stats
                fh.write(
                    "\t".join(
                        (
                            user_id,
                            c.utterance,
                            c.rewrite_target or "",
                            str(c.hop),
                            c.source_entity_id,
                            c.source_user_id,
                            str(s.impression),
                            repr(s.defect_rate),
                            repr(s.barge_in_rate),
                            repr(s.termination_rate),
                            str(a.affinity_impression),
                            str(a.unique_path_count),
                            str(a.path_impression_sum),
                            str(a.degree_difference),
                            repr(a.neighborhood_jaccard_distance),
                        )
                    )
                    + "\n"
                )


def load_indexes(path, graph: FIG) -> tuple[dict[str, CollaborativeIndex], dict]:
    """Read indexes back; entity types are restored from the graph."""
    from collabqr.model import FeedbackSignals

    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != INDEX_FORMAT_NAME or header.get("version") != INDEX_FORMAT_VERSION:
            raise ValueError(f"unsupported index file header {header}")
        columns = fh.readline().rstrip("\n").split("\t")
        if tuple(columns) != INDEX_COLUMNS:
            raise ValueError("unexpected index columns")
        cap = int(header["cap"])
        indexes: dict[str, CollaborativeIndex] = {}
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) != len(INDEX_COLUMNS):
                raise ValueError(f"bad index row with {len(parts)} columns")
            (
                user_id,
                utterance,
                target,
                hop,
                entity_id,
                source_user_id,
                impression,
                defect,
                barge,
                term,
                aff_imp,
                paths,
                path_imp,
                degree_diff,
                jaccard,
            ) = parts
            candidate = RewriteCandidate(
                utterance=utterance,
                rewrite_target=target or None,
                source_user_id=source_user_id,
                source_entity_id=entity_id,
                entity_type=graph.entity(entity_id).entity_type,
                hop=int(hop),
                signals=FeedbackSignals(int(impression), float(defect), float(barge), float(term)),
                affinity_stats=AffinityStats(
                    unique_path_count=int(paths),
                    path_impression_sum=int(path_imp),
                    degree_difference=int(degree_diff),
                    neighborhood_jaccard_distance=float(jaccard),
                    affinity_impression=int(aff_imp),
                ),
            )
            indexes.setdefault(user_id, CollaborativeIndex(user_id=user_id, cap=cap)).entries.append(candidate)
    return indexes, header
