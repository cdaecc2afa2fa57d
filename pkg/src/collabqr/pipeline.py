"""Stage wiring: artifacts in, artifacts out, plus the serving path.

Each stage reads the artifacts named in the configuration, writes its own,
and returns a small result summary. Stages are pure functions of their
inputs, so rerunning one with the same inputs reproduces the same bytes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

from collabqr.affinity import collect_candidates, load_indexes, rank_and_cap, save_indexes
from collabqr.config import PipelineConfig
from collabqr.evalharness import (
    DEFAULT_CAPS,
    CoverageReport,
    MetricsReport,
    build_guardrail_set,
    cases_from_records,
    coverage_report,
    coverage_to_jsonl,
    candidate_matches_label,
    evaluate,
    metrics_to_jsonl,
    mine_opportunity_pairs,
    render_coverage_text,
    render_metrics_text,
    split_seen_unseen,
)
from collabqr.graph import build_graph, build_user_history_index, load_graph, save_graph
from collabqr.linkpred import (
    augment_and_collect,
    batch_cooccurrence_predict,
    export_finetune_examples,
    links_from_predictions,
    make_prediction_requests,
    read_predictions_file,
    write_finetune_file,
    write_predictions_file,
    write_predictions_request,
)
from collabqr.model import CollaborativeIndex, PersonalizedIndex
from collabqr.ranking import (
    FeatureVector,
    QueryEntityMatcher,
    RewriteDecision,
    WeightVector,
    decide,
    default_weights,
    extract_features,
    load_weights,
    user_utterance_stats,
)
from collabqr.records import Domain, LogRecord, parse_log_file, write_log_file
from collabqr.retrieval import EmbeddingCache, IndexRetriever, LexicalEncoder, RetrievalHit
from collabqr.synth import (
    generate_logs_with_audit,
    generate_world,
    split_history_eval,
    world_manifest,
)


class MissingArtifactError(FileNotFoundError):
    """An input artifact is absent; the message names the stage to run."""


@dataclass(frozen=True)
class StageResult:
    name: str
    outputs: tuple[str, ...]
    details: dict


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(
            f"missing artifact {path}; run `collabqr {producer}` first"
        )
    return path


def _load_records(config: PipelineConfig) -> list[LogRecord]:
    path = _require(config.logs_file, "synth")
    result = parse_log_file(path)
    if result.rejects:
        first = result.rejects[0]
        raise ValueError(
            f"{len(result.rejects)} malformed log lines in {path};"
            f" first at line {first.line_number}: {first.reason}"
        )
    return result.records


def _split_windows(config: PipelineConfig, records: list[LogRecord]):
    return split_history_eval(records, config.world.eval_start_timestamp)


def _load_graph(config: PipelineConfig):
    return load_graph(_require(config.graph_file, "build-graph"))


def _uncapped_histories(graph, user_ids):
    return {u: build_user_history_index(graph, u, history_cap=None) for u in user_ids}


# -- stages ----------------------------------------------------------------------


def stage_synth(config: PipelineConfig) -> StageResult:
    world = generate_world(config.world)
    records, audit = generate_logs_with_audit(world)
    config.logs_file.parent.mkdir(parents=True, exist_ok=True)
    write_log_file(config.logs_file, records)
    config.manifest_file.parent.mkdir(parents=True, exist_ok=True)
    config.manifest_file.write_text(world_manifest(world), encoding="utf-8")
    return StageResult(
        name="synth",
        outputs=(str(config.logs_file), str(config.manifest_file)),
        details={
            "records": len(records),
            "history_records": audit.n_history_records,
            "eval_records": audit.n_eval_records,
            "planted_pairs": len(audit.planted_pairs),
        },
    )


def stage_build_graph(config: PipelineConfig) -> StageResult:
    records = _load_records(config)
    history, future = _split_windows(config, records)
    graph = build_graph(history, defect_threshold=config.defect_threshold)
    config.graph_file.parent.mkdir(parents=True, exist_ok=True)
    save_graph(graph, config.graph_file)
    return StageResult(
        name="build-graph",
        outputs=(str(config.graph_file),),
        details={
            "history_records": len(history),
            "eval_records": len(future),
            "users": len(graph.user_ids),
            "entities": len(graph.entity_ids),
            "edges": graph.n_edges(),
        },
    )


def stage_predict_links(config: PipelineConfig, export_requests: bool = False) -> StageResult:
    graph = _load_graph(config)
    if export_requests:
        requests = make_prediction_requests(graph)
        config.requests_file.parent.mkdir(parents=True, exist_ok=True)
        write_predictions_request(config.requests_file, requests)
        return StageResult(
            name="predict-links",
            outputs=(str(config.requests_file),),
            details={"requests": len(requests)},
        )
    links_by_user = batch_cooccurrence_predict(graph, k=config.predictions_per_user)
    lines: list[tuple[str, Domain, list[str]]] = []
    for user_id in sorted(links_by_user):
        by_domain: dict[Domain, list[str]] = {}
        for link in links_by_user[user_id]:
            node = graph.entities[link.entity_id]
            by_domain.setdefault(node.domain, []).append(node.name)
        for domain in sorted(by_domain, key=lambda d: d.value):
            lines.append((user_id, domain, by_domain[domain]))
    config.predictions_file.parent.mkdir(parents=True, exist_ok=True)
    write_predictions_file(config.predictions_file, lines)
    return StageResult(
        name="predict-links",
        outputs=(str(config.predictions_file),),
        details={
            "users_with_predictions": len([u for u, ls in links_by_user.items() if ls]),
            "lines": len(lines),
        },
    )


def build_indexes(
    config: PipelineConfig,
    graph,
    cap: int | None = None,
    predictions_path: Path | None = None,
) -> tuple[dict[str, CollaborativeIndex], dict]:
    """Rank one collaborative index per user; optionally merge predicted links."""
    cap = config.collaborative_cap if cap is None else cap
    links_by_user = {}
    if predictions_path is not None:
        predictions = read_predictions_file(_require(predictions_path, "predict-links"))
        links_by_user = links_from_predictions(
            graph,
            predictions,
            min_jaccard=config.grounding_jaccard,
            k=config.predictions_per_user,
        )
    indexes: dict[str, CollaborativeIndex] = {}
    for user_id in graph.user_ids:
        history = build_user_history_index(graph, user_id, config.history_cap)
        candidates = collect_candidates(
            graph, user_id, history_cap=config.history_cap, history=history
        )
        links = links_by_user.get(user_id)
        if links:
            candidates = candidates + augment_and_collect(
                graph, user_id, links, history=history
            )
        indexes[user_id] = rank_and_cap(candidates, cap, user_id=user_id)
    meta = {
        "cap": cap,
        "source": "traversal" if predictions_path is None else "traversal+predictions",
    }
    return indexes, meta


def stage_build_index(
    config: PipelineConfig,
    with_predictions: bool = False,
    cap: int | None = None,
) -> StageResult:
    graph = _load_graph(config)
    predictions_path = config.predictions_file if with_predictions else None
    indexes, meta = build_indexes(config, graph, cap=cap, predictions_path=predictions_path)
    config.index_file.parent.mkdir(parents=True, exist_ok=True)
    save_indexes(config.index_file, indexes, meta)
    return StageResult(
        name="build-index",
        outputs=(str(config.index_file),),
        details={
            "users": len(indexes),
            "entries": sum(len(ix.entries) for ix in indexes.values()),
            **meta,
        },
    )


def stage_export_finetune(config: PipelineConfig) -> StageResult:
    records = _load_records(config)
    history, _ = _split_windows(config, records)
    examples = export_finetune_examples(
        history,
        history_weeks=config.finetune_history_weeks,
        label_weeks=config.finetune_label_weeks,
    )
    config.finetune_file.parent.mkdir(parents=True, exist_ok=True)
    write_finetune_file(config.finetune_file, examples)
    return StageResult(
        name="export-finetune",
        outputs=(str(config.finetune_file),),
        details={"examples": len(examples)},
    )


def stage_evaluate_metrics(config: PipelineConfig) -> tuple[StageResult, MetricsReport, str]:
    system = load_system(config)
    records = _load_records(config)
    _, future = _split_windows(config, records)
    pairs = mine_opportunity_pairs(future)
    eval_users = sorted({r.user_id for r in future})
    histories = _uncapped_histories(system.graph, eval_users)
    seen, unseen = split_seen_unseen(pairs, histories)
    guardrail = build_guardrail_set(
        future, size=config.guardrail_size, seed=config.guardrail_seed
    )
    report = evaluate(
        system.rewrite, {"seen": seen, "unseen": unseen}, guardrail_cases=guardrail
    )
    config.metrics_report_file.parent.mkdir(parents=True, exist_ok=True)
    config.metrics_report_file.write_text(metrics_to_jsonl(report), encoding="utf-8")
    return (
        StageResult(
            name="evaluate",
            outputs=(str(config.metrics_report_file),),
            details={
                "pairs": len(pairs),
                "seen": len(seen),
                "unseen": len(unseen),
                "guardrail": len(guardrail),
            },
        ),
        report,
        render_metrics_text(report),
    )


def stage_evaluate_coverage(config: PipelineConfig) -> tuple[StageResult, CoverageReport, str]:
    graph = _load_graph(config)
    indexes, _ = load_indexes(_require(config.index_file, "build-index"), graph)
    records = _load_records(config)
    _, future = _split_windows(config, records)
    eval_users = sorted({r.user_id for r in future})
    histories = _uncapped_histories(graph, eval_users)
    cases = cases_from_records(future, histories)
    report = coverage_report(
        graph, indexes, cases, max_hop=config.max_hop, caps=DEFAULT_CAPS
    )
    config.coverage_report_file.parent.mkdir(parents=True, exist_ok=True)
    config.coverage_report_file.write_text(coverage_to_jsonl(report), encoding="utf-8")
    return (
        StageResult(
            name="evaluate",
            outputs=(str(config.coverage_report_file),),
            details={"cases": len(cases)},
        ),
        report,
        render_coverage_text(report),
    )


# -- serving ---------------------------------------------------------------------


class RewriteSystem:
    """Immutable artifacts behind a single-query rewrite entry point.

    Per-user retrievers and utterance stats are built lazily; a lock makes
    that safe under the concurrent requests a server will throw at it.
    """

    def __init__(
        self,
        graph,
        indexes: dict[str, CollaborativeIndex],
        weights: WeightVector,
        trigger_threshold: float,
        retrieval_k: int = 10,
        encoder_dim: int = 256,
        encoder_seed: int = 101,
        history_cap: int | None = 100,
    ):
        self.graph = graph
        self.indexes = indexes
        self.weights = weights
        self.trigger_threshold = trigger_threshold
        self.retrieval_k = retrieval_k
        self.history_cap = history_cap
        self._encoder = LexicalEncoder(dim=encoder_dim, seed=encoder_seed)
        self._cache = EmbeddingCache(self._encoder)
        self._matcher = QueryEntityMatcher(graph)
        self._retrievers: dict[str, IndexRetriever] = {}
        self._user_stats: dict[str, dict] = {}
        self._lock = threading.RLock()

    def _retriever(self, user_id: str) -> IndexRetriever:
        got = self._retrievers.get(user_id)
        if got is None:
            history = build_user_history_index(self.graph, user_id, self.history_cap)
            personalized = PersonalizedIndex.combine(history, self.indexes.get(user_id))
            got = IndexRetriever(personalized.entries, self._cache)
            self._retrievers[user_id] = got
        return got

    def _stats(self, user_id: str) -> dict:
        got = self._user_stats.get(user_id)
        if got is None:
            got = user_utterance_stats(self.graph, user_id)
            self._user_stats[user_id] = got
        return got

    def analyze(self, user_id: str, query: str) -> list[tuple[RetrievalHit, FeatureVector]]:
        """Retrieve candidates and their feature vectors without deciding."""
        if not user_id:
            raise ValueError("empty user_id")
        with self._lock:
            hits = self._retriever(user_id).retrieve(query, self.retrieval_k)
            stats = self._stats(user_id)
            query_entity = self._matcher.match(query)
            return [
                (
                    hit,
                    extract_features(
                        self.graph,
                        query,
                        hit,
                        user_id,
                        user_stats=stats,
                        query_entity=query_entity,
                        query_entity_resolved=True,
                    ),
                )
                for hit in hits
            ]

    def rewrite(self, user_id: str, query: str) -> RewriteDecision:
        analyzed = self.analyze(user_id, query)
        return decide(
            [hit for hit, _ in analyzed],
            [fv for _, fv in analyzed],
            self.weights,
            self.trigger_threshold,
            query=query,
        )


def load_system(config: PipelineConfig) -> RewriteSystem:
    graph = _load_graph(config)
    indexes, _ = load_indexes(_require(config.index_file, "build-index"), graph)
    if config.weights_file.exists():
        weights = load_weights(config.weights_file)
    else:
        weights = default_weights()
    return RewriteSystem(
        graph,
        indexes,
        weights,
        trigger_threshold=config.trigger_threshold,
        retrieval_k=config.retrieval_k,
        encoder_dim=config.encoder_dim,
        encoder_seed=config.encoder_seed,
        history_cap=config.history_cap,
    )


def build_training_examples(system, pairs, guardrail_cases) -> list[tuple[FeatureVector, bool]]:
    """Weak-labeled scorer examples from the system's own retrieval.

    A hit for an opportunity pair is positive exactly when the rewrite it
    would emit reproduces the observed rephrase text; guardrail utterances
    label every hit negative. Identity hits are skipped in both paths
    because the decision stage suppresses them anyway.
    """
    from collabqr.text import normalize

    examples: list[tuple[FeatureVector, bool]] = []
    for pair in pairs:
        query_text = normalize(pair.defective_utterance)
        label_text = normalize(pair.rewrite_label)
        for hit, fv in system.analyze(pair.user_id, pair.defective_utterance):
            c = hit.candidate
            output = normalize(c.rewrite_target or c.utterance)
            if output == query_text:
                continue
            examples.append((fv, output == label_text))
    for case in guardrail_cases:
        query_text = normalize(case.utterance)
        for hit, fv in system.analyze(case.user_id, case.utterance):
            c = hit.candidate
            if normalize(c.rewrite_target or c.utterance) == query_text:
                continue
            examples.append((fv, False))
    return examples
