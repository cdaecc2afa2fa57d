"""Core value types shared by the graph, traversal, and ranking layers."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from collabqr.records import EntityType, is_class_a


@dataclass(frozen=True)
class FeedbackSignals:
    """Aggregate outcome statistics for a query or an edge."""

    impression: int
    defect_rate: float
    barge_in_rate: float
    termination_rate: float

    def validate(self) -> None:
        if self.impression < 1:
            raise ValueError("impression must be >= 1 on stored signals")
        for name in ("defect_rate", "barge_in_rate", "termination_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} {value} outside [0, 1]")


@dataclass(frozen=True)
class QueryRecord:
    """One distinct (utterance, rewrite_target) pair on an edge, with its signals."""

    utterance: str
    rewrite_target: str | None
    signals: FeedbackSignals

    def validate(self) -> None:
        if not self.utterance:
            raise ValueError("empty utterance")
        if self.rewrite_target is not None and self.rewrite_target == self.utterance:
            raise ValueError("rewrite_target equals utterance")
        self.signals.validate()


@dataclass(frozen=True)
class AffinityStats:
    """Similarity statistics for the (user, peer) pair a candidate came through.

    unique_path_count: distinct content entities shared by the pair.
    path_impression_sum: total impressions along those shared-entity paths
        (both edges of each path).
    degree_difference: absolute difference in entity-neighborhood size.
    neighborhood_jaccard_distance: 1 - Jaccard similarity of the two full
        entity neighborhoods.
    affinity_impression: impressions on the candidate's entity accumulated
        over all peers inside the user's constrained affinity.
    """

    unique_path_count: int = 0
    path_impression_sum: int = 0
    degree_difference: int = 0
    neighborhood_jaccard_distance: float = 0.0
    affinity_impression: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.neighborhood_jaccard_distance <= 1.0:
            raise ValueError("jaccard distance outside [0, 1]")
        for name in ("unique_path_count", "path_impression_sum", "degree_difference", "affinity_impression"):
            if getattr(self, name) < 0:
                raise ValueError(f"negative {name}")

    def with_affinity_impression(self, value: int) -> "AffinityStats":
        return replace(self, affinity_impression=value)


@dataclass(frozen=True)
class RewriteCandidate:
    """A historical query eligible to serve as a rewrite, with provenance."""

    utterance: str
    rewrite_target: str | None
    source_user_id: str
    source_entity_id: str
    entity_type: EntityType
    hop: int
    signals: FeedbackSignals
    affinity_stats: AffinityStats

    def validate(self) -> None:
        if self.hop not in (1, 2, 3):
            raise ValueError(f"hop {self.hop} outside {{1,2,3}}")
        if not is_class_a(self.entity_type) and self.hop > 2:
            raise ValueError("category-entity candidates must stay within 2 hops")
        self.signals.validate()
        self.affinity_stats.validate()

    @property
    def rewrite_output(self) -> str:
        """What the system would say if this candidate wins."""
        return self.rewrite_target if self.rewrite_target is not None else self.utterance


@dataclass
class UserHistoryIndex:
    """The user's own successful queries, ranked and capped."""

    user_id: str
    entries: list[RewriteCandidate] = field(default_factory=list)

    def utterances(self) -> set[str]:
        return {entry.utterance for entry in self.entries}

    def utterances_and_targets(self) -> set[str]:
        out = set()
        for entry in self.entries:
            out.add(entry.utterance)
            if entry.rewrite_target is not None:
                out.add(entry.rewrite_target)
        return out


@dataclass
class CollaborativeIndex:
    """Rewrite candidates harvested from similar users, ranked and capped."""

    user_id: str
    entries: list[RewriteCandidate] = field(default_factory=list)
    cap: int = 500


@dataclass
class PersonalizedIndex:
    """History entries followed by collaborative entries; the retrieval universe."""

    user_id: str
    entries: list[RewriteCandidate] = field(default_factory=list)

    @staticmethod
    def combine(history: UserHistoryIndex, collaborative: CollaborativeIndex | None) -> "PersonalizedIndex":
        entries = list(history.entries)
        if collaborative is not None:
            entries.extend(collaborative.entries)
        return PersonalizedIndex(user_id=history.user_id, entries=entries)
