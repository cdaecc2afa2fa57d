"""Evaluation harness: weak-labeled test sets, metrics, and coverage tables.

Opportunity pairs are mined from raw logs (a defective turn followed by a
successful rephrase), split by whether the label already exists in the user's
own history, and scored against any rewrite function. Coverage tables measure
how much of the unseen eval traffic the graph neighborhood and the built
indexes can reach, per hop and per index cap.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from collabqr.graph import FIG, RECORD_DEFECT_CUTOFF
from collabqr.model import CollaborativeIndex, UserHistoryIndex
from collabqr.ranking import RewriteDecision
from collabqr.records import Domain, LogRecord
from collabqr.rng import Rng
from collabqr.text import normalize, normalized_edit_distance

DEFAULT_MAX_GAP_SECONDS = 90
DEFAULT_EDIT_THRESHOLD = 0.5
DEFAULT_GUARDRAIL_SIZE = 200
DEFAULT_GUARDRAIL_SEED = 7
DEFAULT_MAX_HOP = 5
MAX_SUPPORTED_HOP = 5
DEFAULT_CAPS = (100, 200, 500)

RewriteFn = Callable[[str, str], RewriteDecision]


# -- test-set construction ----------------------------------------------------


@dataclass(frozen=True)
class OpportunityPair:
    """A defective turn and the successful rephrase that followed it."""

    user_id: str
    session_id: str
    defective_utterance: str
    rewrite_label: str
    label_entity_id: str
    label_domain: Domain
    timestamp: int
    seen: bool | None = None


@dataclass(frozen=True)
class GuardrailCase:
    """A historically successful query that must not be rewritten."""

    user_id: str
    utterance: str


def mine_opportunity_pairs(
    records: Iterable[LogRecord],
    max_gap_seconds: int = DEFAULT_MAX_GAP_SECONDS,
    edit_threshold: float = DEFAULT_EDIT_THRESHOLD,
) -> list[OpportunityPair]:
    """Consecutive same-session (defective, successful) turns, close in time
    and in edit distance. The successful utterance becomes the label."""
    ordered = sorted(
        records,
        key=lambda r: (r.user_id, r.session_id, r.timestamp, r.utterance, r.entity_id),
    )
    pairs: list[OpportunityPair] = []
    for first, second in zip(ordered, ordered[1:]):
        if first.user_id != second.user_id or first.session_id != second.session_id:
            continue
        if not (first.defect_score > RECORD_DEFECT_CUTOFF):
            continue
        if second.defect_score > RECORD_DEFECT_CUTOFF:
            continue
        if second.timestamp - first.timestamp > max_gap_seconds:
            continue
        query = normalize(first.utterance)
        label = normalize(second.utterance)
        if query == label:
            continue
        if normalized_edit_distance(query, label) > edit_threshold:
            continue
        pairs.append(
            OpportunityPair(
                user_id=first.user_id,
                session_id=first.session_id,
                defective_utterance=query,
                rewrite_label=label,
                label_entity_id=second.entity_id,
                label_domain=second.domain,
                timestamp=first.timestamp,
            )
        )
    return pairs


def split_seen_unseen(
    pairs: Sequence[OpportunityPair],
    histories: Mapping[str, UserHistoryIndex],
) -> tuple[list[OpportunityPair], list[OpportunityPair]]:
    """Seen iff the label is among the user's own history utterances/targets."""
    seen: list[OpportunityPair] = []
    unseen: list[OpportunityPair] = []
    known: dict[str, set[str]] = {}
    for pair in pairs:
        texts = known.get(pair.user_id)
        if texts is None:
            history = histories.get(pair.user_id)
            texts = history.utterances_and_targets() if history is not None else set()
            known[pair.user_id] = texts
        if normalize(pair.rewrite_label) in texts:
            seen.append(dataclasses.replace(pair, seen=True))
        else:
            unseen.append(dataclasses.replace(pair, seen=False))
    return seen, unseen


def build_guardrail_set(
    records: Iterable[LogRecord],
    size: int = DEFAULT_GUARDRAIL_SIZE,
    seed: int = DEFAULT_GUARDRAIL_SEED,
) -> list[GuardrailCase]:
    """Deterministic sample of distinct successful (user, utterance) queries."""
    universe = sorted(
        {
            (r.user_id, normalize(r.utterance))
            for r in records
            if r.defect_score <= RECORD_DEFECT_CUTOFF
        }
    )
    if size < len(universe):
        rng = Rng(seed)
        universe = sorted(rng.sample(universe, size))
    return [GuardrailCase(user_id=u, utterance=q) for u, q in universe]


def assert_temporal_hygiene(pairs: Sequence[OpportunityPair], history_end: int) -> None:
    """Every evaluation pair must start at or after the history window's end."""
    for pair in pairs:
        if pair.timestamp < history_end:
            raise ValueError(
                f"evaluation pair at {pair.timestamp} precedes history end {history_end}"
            )


# -- metrics -------------------------------------------------------------------


@dataclass(frozen=True)
class SetMetrics:
    name: str
    total: int
    triggered: int
    correct: int

    @property
    def precision_at_1(self) -> float | None:
        if self.triggered == 0:
            return None
        return self.correct / self.triggered

    @property
    def trigger_rate(self) -> float:
        return self.triggered / self.total if self.total else 0.0


@dataclass(frozen=True)
class MetricsReport:
    sets: tuple[SetMetrics, ...]
    guardrail_total: int
    guardrail_triggered: int

    @property
    def false_trigger_rate(self) -> float:
        return self.guardrail_triggered / self.guardrail_total if self.guardrail_total else 0.0

    def set_named(self, name: str) -> SetMetrics:
        for s in self.sets:
            if s.name == name:
                return s
        raise KeyError(name)


def candidate_matches_label(candidate, pair: OpportunityPair) -> bool:
    """Entity identity is the intent proxy; fall back to text equality when
    either side has no entity attached."""
    if candidate.source_entity_id and pair.label_entity_id:
        return candidate.source_entity_id == pair.label_entity_id
    output = candidate.rewrite_target or candidate.utterance
    return normalize(output) == normalize(pair.rewrite_label)


def _rewrite_is_correct(decision: RewriteDecision, pair: OpportunityPair) -> bool:
    candidate_entity = decision.candidate.source_entity_id if decision.candidate else ""
    if candidate_entity and pair.label_entity_id:
        return candidate_entity == pair.label_entity_id
    rewrite = decision.rewrite or ""
    return normalize(rewrite) == normalize(pair.rewrite_label)


def evaluate(
    rewrite_fn: RewriteFn,
    opportunity_sets: Mapping[str, Sequence[OpportunityPair]],
    guardrail_cases: Sequence[GuardrailCase] = (),
) -> MetricsReport:
    """Run every case through the rewrite function and tally the metric suite."""
    sets: list[SetMetrics] = []
    for name in opportunity_sets:
        pairs = opportunity_sets[name]
        triggered = 0
        correct = 0
        for pair in pairs:
            decision = rewrite_fn(pair.user_id, pair.defective_utterance)
            if decision.triggered:
                triggered += 1
                if _rewrite_is_correct(decision, pair):
                    correct += 1
        sets.append(
            SetMetrics(name=name, total=len(pairs), triggered=triggered, correct=correct)
        )
    guardrail_triggered = 0
    for case in guardrail_cases:
        decision = rewrite_fn(case.user_id, case.utterance)
        if decision.triggered:
            guardrail_triggered += 1
    return MetricsReport(
        sets=tuple(sets),
        guardrail_total=len(guardrail_cases),
        guardrail_triggered=guardrail_triggered,
    )


# -- coverage -----------------------------------------------------------------


@dataclass(frozen=True)
class CoverageCase:
    """One unseen interaction whose label we try to reach through the graph."""

    user_id: str
    utterance: str
    entity_id: str
    domain: Domain
    defective: bool


def cases_from_pairs(pairs: Sequence[OpportunityPair]) -> list[CoverageCase]:
    return [
        CoverageCase(
            user_id=p.user_id,
            utterance=normalize(p.rewrite_label),
            entity_id=p.label_entity_id,
            domain=p.label_domain,
            defective=True,
        )
        for p in pairs
    ]


def cases_from_records(
    records: Iterable[LogRecord],
    histories: Mapping[str, UserHistoryIndex],
) -> list[CoverageCase]:
    """Distinct eval-week interactions not present in the user's own history."""
    known: dict[str, set[str]] = {}
    out = set()
    for r in records:
        texts = known.get(r.user_id)
        if texts is None:
            history = histories.get(r.user_id)
            texts = history.utterances_and_targets() if history is not None else set()
            known[r.user_id] = texts
        utterance = normalize(r.utterance)
        if utterance in texts:
            continue
        out.add(
            CoverageCase(
                user_id=r.user_id,
                utterance=utterance,
                entity_id=r.entity_id,
                domain=r.domain,
                defective=r.defect_score > RECORD_DEFECT_CUTOFF,
            )
        )
    return sorted(out, key=lambda c: (c.user_id, c.utterance, c.entity_id, c.defective))


class DistanceMaps:
    """Hop distances from each source user to all users and entities.

    Batched over source users with boolean matrix products: entities sit at
    odd distances, users at even ones, exactly as the alternating traversal
    walks the bipartite graph. Distances beyond max_hop read as unreachable.
    """

    def __init__(self, graph: FIG, source_users: Sequence[str], max_hop: int = DEFAULT_MAX_HOP):
        if not 1 <= max_hop <= MAX_SUPPORTED_HOP:
            raise ValueError(f"max_hop must be in 1..{MAX_SUPPORTED_HOP}")
        self.max_hop = max_hop
        self._sources = {u: i for i, u in enumerate(sorted(set(source_users)))}
        self._users = {u: i for i, u in enumerate(graph.user_ids)}
        self._entities = {e: i for i, e in enumerate(graph.entity_ids)}
        n_src = len(self._sources)
        n_users = len(self._users)
        n_entities = len(self._entities)
        self._entity_dist = np.zeros((n_src, n_entities), dtype=np.int8)
        self._user_dist = np.full((n_src, n_users), -1, dtype=np.int8)
        if n_src == 0 or n_users == 0 or n_entities == 0:
            self._edges_by_utterance = {}
            return
        adjacency = np.zeros((n_users, n_entities), dtype=np.float32)
        for edge in graph.all_edges():
            adjacency[self._users[edge.user_id], self._entities[edge.entity_id]] = 1.0
        src_rows = np.zeros((n_src, n_users), dtype=np.float32)
        for user_id, i in self._sources.items():
            j = self._users.get(user_id)
            if j is not None:
                src_rows[i, j] = 1.0
                self._user_dist[i, j] = 0
        reached_e = np.zeros((n_src, n_entities), dtype=bool)
        reached_u = src_rows > 0
        frontier_u = src_rows
        for hop in range(1, max_hop + 1):
            if hop % 2 == 1:
                hit = (frontier_u @ adjacency) > 0
                fresh = hit & ~reached_e
                self._entity_dist[fresh] = hop
                reached_e |= fresh
                frontier_e = fresh.astype(np.float32)
            else:
                hit = (frontier_e @ adjacency.T) > 0
                fresh = hit & ~reached_u
                self._user_dist[fresh] = hop
                reached_u |= fresh
                frontier_u = fresh.astype(np.float32)
        self._edges_by_utterance: dict[str, list[tuple[int, int]]] = {}
        for edge in graph.all_edges():
            key = (self._users[edge.user_id], self._entities[edge.entity_id])
            for q in edge.queries:
                self._edges_by_utterance.setdefault(q.utterance, []).append(key)

    def entity_distance(self, user_id: str, entity_id: str) -> int | None:
        i = self._sources.get(user_id)
        j = self._entities.get(entity_id)
        if i is None or j is None:
            return None
        d = int(self._entity_dist[i, j])
        return d if d > 0 else None

    def user_distance(self, user_id: str, other_user_id: str) -> int | None:
        i = self._sources.get(user_id)
        j = self._users.get(other_user_id)
        if i is None or j is None:
            return None
        d = int(self._user_dist[i, j])
        return d if d >= 0 else None

    def query_hop(self, user_id: str, utterance: str) -> int | None:
        """Smallest hop at which an edge carrying the utterance is traversed."""
        i = self._sources.get(user_id)
        if i is None:
            return None
        best: int | None = None
        for uj, ej in self._edges_by_utterance.get(utterance, ()):
            du = int(self._user_dist[i, uj])
            de = int(self._entity_dist[i, ej])
            if du < 0 or de <= 0:
                continue
            hop = max(du, de)
            if best is None or hop < best:
                best = hop
        return best


@dataclass(frozen=True)
class HopCoverage:
    hop: int
    total: int
    entity_covered: int
    query_covered: int
    defective_total: int
    defective_entity_covered: int
    defective_query_covered: int

    @property
    def entity_fraction(self) -> float:
        return self.entity_covered / self.total if self.total else 0.0

    @property
    def query_fraction(self) -> float:
        return self.query_covered / self.total if self.total else 0.0

    @property
    def defective_entity_fraction(self) -> float:
        return self.defective_entity_covered / self.defective_total if self.defective_total else 0.0

    @property
    def defective_query_fraction(self) -> float:
        return self.defective_query_covered / self.defective_total if self.defective_total else 0.0


@dataclass(frozen=True)
class DomainCoverage:
    domain: str
    total: int
    covered: int

    @property
    def fraction(self) -> float:
        return self.covered / self.total if self.total else 0.0


@dataclass(frozen=True)
class CapCoverage:
    cap: int
    overall: DomainCoverage
    by_domain: tuple[DomainCoverage, ...]


@dataclass(frozen=True)
class CoverageReport:
    total_cases: int
    defective_cases: int
    hops: tuple[HopCoverage, ...]
    caps: tuple[CapCoverage, ...]


def coverage_report(
    graph: FIG,
    indexes: Mapping[str, CollaborativeIndex],
    cases: Sequence[CoverageCase],
    max_hop: int = DEFAULT_MAX_HOP,
    caps: Sequence[int] = DEFAULT_CAPS,
) -> CoverageReport:
    """Hop-reachability and capped-index coverage over unseen cases.

    A case is entity-covered at hop n when its entity sits within n hops of
    the user; query-covered when some edge carrying the exact label utterance
    is traversed within n hops. Cap coverage asks whether the user's
    collaborative index can output the label within its first `cap` entries.
    """
    if any(c < 1 for c in caps):
        raise ValueError("caps must be positive")
    maps = DistanceMaps(graph, [c.user_id for c in cases], max_hop=max_hop)
    entity_hops: list[int | None] = []
    query_hops: list[int | None] = []
    for case in cases:
        entity_hops.append(maps.entity_distance(case.user_id, case.entity_id))
        query_hops.append(maps.query_hop(case.user_id, case.utterance))
    hops_out = []
    for hop in range(1, max_hop + 1):
        total = len(cases)
        entity_covered = sum(1 for d in entity_hops if d is not None and d <= hop)
        query_covered = sum(1 for d in query_hops if d is not None and d <= hop)
        d_total = d_entity = d_query = 0
        for case, ed, qd in zip(cases, entity_hops, query_hops):
            if not case.defective:
                continue
            d_total += 1
            if ed is not None and ed <= hop:
                d_entity += 1
            if qd is not None and qd <= hop:
                d_query += 1
        hops_out.append(
            HopCoverage(
                hop=hop,
                total=total,
                entity_covered=entity_covered,
                query_covered=query_covered,
                defective_total=d_total,
                defective_entity_covered=d_entity,
                defective_query_covered=d_query,
            )
        )
    # Rank of the first index entry able to output each case's label.
    first_rank: dict[str, dict[str, int]] = {}
    for user_id, index in indexes.items():
        ranks: dict[str, int] = {}
        for i, entry in enumerate(index.entries):
            output = normalize(entry.rewrite_output)
            if output not in ranks:
                ranks[output] = i
        first_rank[user_id] = ranks
    caps_out = []
    domains = tuple(d.value for d in Domain)
    for cap in caps:
        totals = {d: 0 for d in domains}
        covered = {d: 0 for d in domains}
        for case in cases:
            d = case.domain.value
            totals[d] += 1
            rank = first_rank.get(case.user_id, {}).get(case.utterance)
            if rank is not None and rank < cap:
                covered[d] += 1
        caps_out.append(
            CapCoverage(
                cap=cap,
                overall=DomainCoverage(
                    domain="all", total=len(cases), covered=sum(covered.values())
                ),
                by_domain=tuple(
                    DomainCoverage(domain=d, total=totals[d], covered=covered[d])
                    for d in domains
                ),
            )
        )
    return CoverageReport(
        total_cases=len(cases),
        defective_cases=sum(1 for c in cases if c.defective),
        hops=tuple(hops_out),
        caps=tuple(caps_out),
    )


# -- rendering ----------------------------------------------------------------


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"


def render_metrics_text(report: MetricsReport) -> str:
    rows = [("set", "total", "triggered", "correct", "p@1", "trigger_rate")]
    for s in report.sets:
        rows.append(
            (
                s.name,
                str(s.total),
                str(s.triggered),
                str(s.correct),
                _fmt(s.precision_at_1),
                _fmt(s.trigger_rate),
            )
        )
    rows.append(
        (
            "guardrail",
            str(report.guardrail_total),
            str(report.guardrail_triggered),
            "-",
            "-",
            _fmt(report.false_trigger_rate),
        )
    )
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines) + "\n"


def render_coverage_text(report: CoverageReport) -> str:
    lines = [f"cases: {report.total_cases} (defective: {report.defective_cases})", ""]
    rows = [("hop", "entity", "query", "defective_entity", "defective_query")]
    for h in report.hops:
        rows.append(
            (
                str(h.hop),
                _fmt(h.entity_fraction),
                _fmt(h.query_fraction),
                _fmt(h.defective_entity_fraction),
                _fmt(h.defective_query_fraction),
            )
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines += ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.append("")
    rows = [("cap", "domain", "covered", "total", "fraction")]
    for cap in report.caps:
        for d in (cap.overall,) + cap.by_domain:
            rows.append(
                (str(cap.cap), d.domain, str(d.covered), str(d.total), _fmt(d.fraction))
            )
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines += ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines) + "\n"


def metrics_to_jsonl(report: MetricsReport) -> str:
    lines = []
    for s in report.sets:
        lines.append(
            json.dumps(
                {
                    "record": "metrics",
                    "set": s.name,
                    "total": s.total,
                    "triggered": s.triggered,
                    "correct": s.correct,
                    "precision_at_1": s.precision_at_1,
                    "trigger_rate": s.trigger_rate,
                },
                sort_keys=True,
                separators=(",", ":"),
            )
        )
    lines.append(
        json.dumps(
            {
                "record": "guardrail",
                "total": report.guardrail_total,
                "triggered": report.guardrail_triggered,
                "false_trigger_rate": report.false_trigger_rate,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
    )
    return "\n".join(lines) + "\n"


def coverage_to_jsonl(report: CoverageReport) -> str:
    lines = [
        json.dumps(
            {
                "record": "cases",
                "total": report.total_cases,
                "defective": report.defective_cases,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
    ]
    for h in report.hops:
        lines.append(
            json.dumps(
                {
                    "record": "hop_coverage",
                    "hop": h.hop,
                    "total": h.total,
                    "entity_covered": h.entity_covered,
                    "query_covered": h.query_covered,
                    "entity_fraction": h.entity_fraction,
                    "query_fraction": h.query_fraction,
                    "defective_total": h.defective_total,
                    "defective_entity_covered": h.defective_entity_covered,
                    "defective_query_covered": h.defective_query_covered,
                    "defective_entity_fraction": h.defective_entity_fraction,
                    "defective_query_fraction": h.defective_query_fraction,
                },
                sort_keys=True,
                separators=(",", ":"),
            )
        )
    for cap in report.caps:
        for d in (cap.overall,) + cap.by_domain:
            lines.append(
                json.dumps(
                    {
                        "record": "cap_coverage",
                        "cap": cap.cap,
                        "domain": d.domain,
                        "covered": d.covered,
                        "total": d.total,
                        "fraction": d.fraction,
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
            )
    return "\n".join(lines) + "\n"
