"""Tests for pipeline stages, artifact flow, and the rewrite system."""

import json

import pytest

from collabqr.config import PipelineConfig, load_config
from collabqr.evalharness import mine_opportunity_pairs
from collabqr.graph import load_graph
from collabqr.pipeline import (
    MissingArtifactError,
    RewriteSystem,
    build_indexes,
    load_system,
    stage_build_graph,
    stage_build_index,
    stage_evaluate_coverage,
    stage_evaluate_metrics,
    stage_export_finetune,
    stage_predict_links,
    stage_synth,
)
from collabqr.ranking import RewriteDecision
from collabqr.records import parse_log_file
from collabqr.synth import split_history_eval
from collabqr.text import normalize

TINY_ENV = {
    "COLLABQR_WORLD_SEED": "11",
    "COLLABQR_WORLD_NUM_USERS": "80",
    "COLLABQR_WORLD_NUM_SONGS": "80",
    "COLLABQR_WORLD_NUM_ARTISTS": "30",
    "COLLABQR_WORLD_NUM_VIDEOS": "50",
    "COLLABQR_WORLD_NUM_GENRES": "12",
    "COLLABQR_WORLD_NUM_APPS": "6",
    "COLLABQR_WORLD_NUM_DEVICES": "6",
    "COLLABQR_WORLD_NUM_CLUSTERS": "8",
    "COLLABQR_WORLD_WEEKS_HISTORY": "8",
    "COLLABQR_WORLD_WEEKS_EVAL": "1",
    "COLLABQR_FINETUNE_HISTORY_WEEKS": "5",
    "COLLABQR_FINETUNE_LABEL_WEEKS": "2",
    "COLLABQR_GUARDRAIL_SIZE": "40",
}


def tiny_config(workdir) -> PipelineConfig:
    env = dict(TINY_ENV)
    env["COLLABQR_WORKDIR"] = str(workdir)
    return load_config(None, env=env)


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    """All stages run once against one artifact directory."""
    workdir = tmp_path_factory.mktemp("artifacts")
    config = tiny_config(workdir)
    results = {
        "synth": stage_synth(config),
        "build-graph": stage_build_graph(config),
        "predict-links": stage_predict_links(config),
        "build-index": stage_build_index(config, with_predictions=True),
        "export-finetune": stage_export_finetune(config),
    }
    return config, results


def test_synth_writes_logs_and_manifest(built):
    config, results = built
    assert config.logs_file.exists()
    assert config.manifest_file.exists()
    details = results["synth"].details
    assert details["records"] == details["history_records"] + details["eval_records"]
    assert details["planted_pairs"] > 0
    assert "synthetic world" in config.manifest_file.read_text(encoding="utf-8")


def test_build_graph_uses_history_window_only(built):
    config, results = built
    graph = load_graph(config.graph_file)
    parsed = parse_log_file(config.logs_file)
    history, future = split_history_eval(
        parsed.records, config.world.eval_start_timestamp
    )
    assert results["build-graph"].details["history_records"] == len(history)
    assert results["build-graph"].details["eval_records"] == len(future)
    eval_only_sessions = {r.session_id for r in future}
    for edge in graph.all_edges():
        for q in edge.queries:
            assert q.utterance  # graph is non-trivial
    assert len(graph.user_ids) > 0
    assert eval_only_sessions  # the split actually held something back


def test_predictions_file_round_trips_into_links(built):
    config, _ = built
    from collabqr.linkpred import links_from_predictions, read_predictions_file

    graph = load_graph(config.graph_file)
    predictions = read_predictions_file(config.predictions_file)
    assert predictions.rejects == []
    links = links_from_predictions(graph, predictions)
    assert links
    for user_id, user_links in links.items():
        for link in user_links:
            assert graph.edge(user_id, link.entity_id) is None


def test_index_entries_respect_cap_and_meta(built):
    config, results = built
    from collabqr.affinity import load_indexes

    graph = load_graph(config.graph_file)
    indexes, meta = load_indexes(config.index_file, graph)
    assert meta["source"] == "traversal+predictions"
    assert meta["cap"] == config.collaborative_cap
    assert all(len(ix.entries) <= config.collaborative_cap for ix in indexes.values())
    assert results["build-index"].details["users"] == len(indexes)


def test_smaller_cap_is_prefix_of_larger(built):
    config, _ = built
    graph = load_graph(config.graph_file)
    small, _ = build_indexes(config, graph, cap=25)
    large, _ = build_indexes(config, graph, cap=100)
    for user_id in graph.user_ids:
        a = small[user_id].entries
        b = large[user_id].entries
        assert a == b[: len(a)]


def test_finetune_examples_written(built):
    config, results = built
    lines = config.finetune_file.read_text(encoding="utf-8").splitlines()
    assert len(lines) == results["export-finetune"].details["examples"]
    assert lines
    row = json.loads(lines[0])
    assert set(row) == {"instruction", "input", "label"}


def test_rerun_is_byte_identical(built, tmp_path):
    config, _ = built
    other = tiny_config(tmp_path / "again")
    stage_synth(other)
    stage_build_graph(other)
    stage_predict_links(other)
    stage_build_index(other, with_predictions=True)
    for name in ("logs_file", "graph_file", "predictions_file", "index_file"):
        first = getattr(config, name).read_bytes()
        second = getattr(other, name).read_bytes()
        assert first == second, name


def test_missing_artifact_diagnostics(tmp_path):
    config = tiny_config(tmp_path / "empty")
    with pytest.raises(MissingArtifactError, match="collabqr synth"):
        stage_build_graph(config)
    with pytest.raises(MissingArtifactError, match="collabqr build-graph"):
        stage_build_index(config)
    with pytest.raises(MissingArtifactError, match="collabqr build-graph"):
        stage_predict_links(config)


def test_evaluate_requires_index(built, tmp_path):
    config, _ = built
    partial = tiny_config(tmp_path / "partial")
    stage_synth(partial)
    stage_build_graph(partial)
    with pytest.raises(MissingArtifactError, match="collabqr build-index"):
        stage_evaluate_metrics(partial)
    with pytest.raises(MissingArtifactError, match="collabqr build-index"):
        stage_evaluate_coverage(partial)


def test_evaluate_metrics_stage(built):
    config, _ = built
    result, report, text = stage_evaluate_metrics(config)
    assert config.metrics_report_file.exists()
    assert result.details["pairs"] == result.details["seen"] + result.details["unseen"]
    assert result.details["guardrail"] <= config.guardrail_size
    assert report.set_named("seen").total == result.details["seen"]
    assert "trigger_rate" in text
    lines = config.metrics_report_file.read_text(encoding="utf-8").splitlines()
    assert all(json.loads(line) for line in lines)


def test_evaluate_coverage_stage(built):
    config, _ = built
    result, report, text = stage_evaluate_coverage(config)
    assert config.coverage_report_file.exists()
    assert result.details["cases"] == report.total_cases
    assert report.hops[0].hop == 1
    assert report.hops[0].query_fraction == 0.0
    by_hop = {h.hop: h.query_fraction for h in report.hops}
    assert by_hop[3] > by_hop[1]
    assert "hop" in text and "cap" in text


# -- rewrite system ---------------------------------------------------------------


@pytest.fixture(scope="module")
def system(built):
    config, _ = built
    return load_system(config)


@pytest.fixture(scope="module")
def eval_pairs(built):
    config, _ = built
    parsed = parse_log_file(config.logs_file)
    _, future = split_history_eval(parsed.records, config.world.eval_start_timestamp)
    return mine_opportunity_pairs(future)


def test_rewrite_returns_decision(system, eval_pairs):
    assert eval_pairs
    pair = eval_pairs[0]
    decision = system.rewrite(pair.user_id, pair.defective_utterance)
    assert isinstance(decision, RewriteDecision)
    assert 0.0 <= decision.score <= 1.0
    if decision.triggered:
        assert decision.rewrite
        assert normalize(decision.rewrite) != normalize(pair.defective_utterance)


def test_rewrite_finds_planted_labels(system, eval_pairs):
    # Correctness is judged at the entity level: junk sessions rewrite to the
    # clean phrasing their own session observed, which recovers the planted
    # entity even when the surface string differs from the mined label.
    hits = 0
    triggered = 0
    for pair in eval_pairs[:25]:
        decision = system.rewrite(pair.user_id, pair.defective_utterance)
        if decision.triggered:
            triggered += 1
            if decision.candidate.source_entity_id == pair.label_entity_id:
                hits += 1
    assert triggered > 0
    assert hits / triggered >= 0.5


def test_rewrite_never_echoes_query(system, eval_pairs):
    for pair in eval_pairs[:25]:
        decision = system.rewrite(pair.user_id, pair.defective_utterance)
        if decision.triggered:
            assert normalize(decision.rewrite) != normalize(pair.defective_utterance)


def test_unknown_user_never_triggers(system):
    decision = system.rewrite("nobody-here", "play something nice")
    assert decision.triggered is False
    assert decision.rewrite is None
    assert decision.score == 0.0


def test_empty_user_rejected(system):
    with pytest.raises(ValueError):
        system.rewrite("", "play something")


def test_rewrite_is_deterministic(system, eval_pairs):
    pair = eval_pairs[0]
    a = system.rewrite(pair.user_id, pair.defective_utterance)
    b = system.rewrite(pair.user_id, pair.defective_utterance)
    assert (a.triggered, a.rewrite, a.score) == (b.triggered, b.rewrite, b.score)


def test_system_loads_default_weights_when_file_absent(built):
    config, _ = built
    assert not config.weights_file.exists()
    system = load_system(config)
    assert isinstance(system, RewriteSystem)
    assert system.trigger_threshold == config.trigger_threshold


def test_concurrent_rewrites_agree(system, eval_pairs):
    import threading

    pair = eval_pairs[0]
    baseline = system.rewrite(pair.user_id, pair.defective_utterance)
    results = []
    lock = threading.Lock()

    def worker():
        decision = system.rewrite(pair.user_id, pair.defective_utterance)
        with lock:
            results.append((decision.triggered, decision.rewrite, decision.score))

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == [(baseline.triggered, baseline.rewrite, baseline.score)] * 8
