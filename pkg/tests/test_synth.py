"""Tests for the synthetic world and log generator."""

import math
import tempfile
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collabqr.evalharness import (
    DistanceMaps,
    cases_from_records,
    mine_opportunity_pairs,
)
from collabqr.graph import build_graph, build_user_history_index
from collabqr.records import (
    EntityType,
    is_class_a,
    parse_log_file,
    write_log_file,
)
from collabqr.rng import Rng
from collabqr.synth import (
    WEEK_SECONDS,
    PlantedPair,
    SyntheticWorld,
    WorldConfig,
    asr_corrupt,
    generate_logs,
    generate_logs_with_audit,
    generate_world,
    split_history_eval,
    world_manifest,
)
from collabqr.text import normalize, normalized_edit_distance

SMALL = WorldConfig(
    seed=11,
    num_users=120,
    num_songs=120,
    num_artists=40,
    num_videos=80,
    num_genres=16,
    num_apps=8,
    num_devices=8,
    num_clusters=8,
    weeks_history=10,
    weeks_eval=1,
)


@pytest.fixture(scope="module")
def small_world():
    return generate_world(SMALL)


@pytest.fixture(scope="module")
def small_logs(small_world):
    return generate_logs_with_audit(small_world)


# -- config validation ----------------------------------------------------------


def test_default_config_valid():
    WorldConfig().validate()


@pytest.mark.parametrize(
    "kwargs",
    [
        {"defect_probability": -0.1},
        {"rephrase_probability": 1.5},
        {"num_users": 0},
        {"num_clusters": 0},
        {"weeks_history": 0},
        {"zipf_exponent": 0.0},
        {"interactions_per_week_min": 5, "interactions_per_week_max": 4},
        {"category_mass": 0.5, "buddy_mass": 0.3, "global_mass": 0.3},
        {"num_clusters": 3, "buddy_mass": 0.05},
    ],
)
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        WorldConfig(**kwargs).validate()


def test_single_cluster_needs_no_buddy():
    config = WorldConfig(
        num_users=10, num_clusters=1, buddy_mass=0.0,
        num_songs=20, num_artists=5, num_videos=10,
        num_genres=2, num_apps=2, num_devices=2,
        weeks_history=2,
    )
    world = generate_world(config)
    assert world.buddy_cluster(0) == 0
    records = generate_logs(world)
    assert records


# -- world structure -------------------------------------------------------------


def test_world_is_deterministic(small_world):
    again = generate_world(SMALL)
    assert again == small_world


def test_world_changes_with_seed(small_world):
    other = generate_world(WorldConfig(**{**SMALL.__dict__, "seed": 12}))
    assert [e.name for e in other.entities] != [e.name for e in small_world.entities]


def test_entity_counts_and_ids(small_world):
    assert len(small_world.entities) == 120 + 40 + 80 + 16 + 8 + 8
    assert [e.entity_id for e in small_world.entities] == [
        f"e{i:04d}" for i in range(len(small_world.entities))
    ]
    by_type = {}
    for e in small_world.entities:
        by_type[e.entity_type] = by_type.get(e.entity_type, 0) + 1
    assert by_type[EntityType.SONG] == 120
    assert by_type[EntityType.ARTIST] == 40
    assert by_type[EntityType.VIDEO] == 80
    assert by_type[EntityType.GENRE] == 16
    assert by_type[EntityType.APP] == 8
    assert by_type[EntityType.DEVICE_NAME] == 8


def test_entity_names_unique_and_normalized(small_world):
    names = [e.name for e in small_world.entities]
    assert len(set(names)) == len(names)
    assert all(normalize(n) == n for n in names)


def test_clusters_partition_users(small_world):
    assert len(small_world.users) == 120
    clusters = {u.cluster for u in small_world.users}
    assert clusters == set(range(8))


def test_content_pools_partition_content(small_world):
    seen = set()
    for pool in small_world.cluster_content_pools:
        assert pool
        assert not (set(pool) & seen)
        seen.update(pool)
        for idx in pool:
            assert is_class_a(small_world.entities[idx].entity_type)
    content = {
        i for i, e in enumerate(small_world.entities) if is_class_a(e.entity_type)
    }
    assert seen == content


def test_category_pools_shared_within_buddy_pair(small_world):
    for c in range(0, 8, 2):
        assert small_world.cluster_category_pools[c] == small_world.cluster_category_pools[c + 1]
    groups = {small_world.cluster_category_pools[c] for c in range(8)}
    assert len(groups) == 4
    all_cats = set()
    for g in groups:
        assert not (set(g) & all_cats)
        all_cats.update(g)


def test_extension_twins_extend_base_names(small_world):
    assert small_world.extension_pairs
    for base_idx, twin_idx in small_world.extension_pairs:
        base = small_world.entities[base_idx]
        twin = small_world.entities[twin_idx]
        assert twin.name.startswith(base.name + " ")
        assert twin.entity_type == base.entity_type
        assert twin.entity_id != base.entity_id


def test_popularity_weights_follow_power_law(small_world):
    ranked = sorted(small_world.popularity, reverse=True)
    expected = [(r + 1) ** -SMALL.zipf_exponent for r in range(len(ranked))]
    assert ranked == pytest.approx(expected)


def test_sampled_popularity_slope_matches_exponent():
    config = WorldConfig(
        seed=5, num_users=2, num_clusters=2,
        num_songs=120, num_artists=1, num_videos=1,
        num_genres=1, num_apps=1, num_devices=1,
        weeks_history=1, zipf_exponent=1.0,
    )
    world = generate_world(config)
    rng = Rng(99)
    counts = {}
    for _ in range(10_000):
        idx = world.sample_content_entity(rng)
        counts[idx] = counts.get(idx, 0) + 1
    freqs = sorted(counts.values(), reverse=True)[:20]
    xs = [math.log(r + 1) for r in range(len(freqs))]
    ys = [math.log(f) for f in freqs]
    n = len(xs)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    slope = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys)) / sum(
        (x - mean_x) ** 2 for x in xs
    )
    assert abs(slope - (-config.zipf_exponent)) <= 0.15


def test_same_cluster_preferences_identical(small_world):
    a = small_world.preference_weights(3)
    b = small_world.preference_weights(3)
    assert a == b
    total = sum(a.values())
    assert total == pytest.approx(1.0)


def test_cluster_share_of_preference_mass(small_world):
    # Same cluster: full overlap. Different non-buddy clusters: only the
    # small global component can overlap, far below the one-half bar.
    for c, d in [(0, 2), (1, 4), (3, 6)]:
        p = small_world.preference_weights(c)
        q = small_world.preference_weights(d)
        overlap = sum(min(p[e], q[e]) for e in set(p) & set(q))
        assert overlap < 0.5
    p = small_world.preference_weights(0)
    overlap_self = sum(min(v, v) for v in p.values())
    assert overlap_self >= 0.5


def test_buddy_clusters_overlap_through_categories(small_world):
    p = small_world.preference_weights(0)
    q = small_world.preference_weights(1)
    overlap = sum(min(p[e], q[e]) for e in set(p) & set(q))
    assert overlap > SMALL.global_mass
    cats = set(small_world.cluster_category_pools[0])
    assert cats & set(p) and cats & set(q)


def test_interaction_samples_stay_in_cluster_support(small_world):
    rng = Rng(4)
    support = set(small_world.preference_weights(2))
    for _ in range(500):
        assert small_world.sample_interaction_entity(2, rng) in support


# -- corruption ------------------------------------------------------------------


def test_corrupt_is_deterministic():
    for seed in range(10):
        a = asr_corrupt("play the golden anthem", seed)
        b = asr_corrupt("play the golden anthem", seed)
        assert a == b


def test_corrupt_depends_on_seed():
    outputs = {asr_corrupt("play songs by vera moreau", seed) for seed in range(20)}
    assert len(outputs) > 1


def test_corrupt_never_identity_and_close():
    texts = [
        "play luna",
        "play the song silver river",
        "watch hidden canyon",
        "turn on the kitchen lamp",
        "play some velvet jazz music",
        "a",
        "ab",
        "play play play",
    ]
    for text in texts:
        for seed in range(25):
            out = asr_corrupt(text, seed)
            base = normalize(text)
            assert out != base
            assert normalize(out) == out
            assert normalized_edit_distance(base, out) <= 0.5


def test_corrupt_single_char_falls_back_to_append():
    out = asr_corrupt("a", 0)
    assert out == "ah"
    assert normalized_edit_distance("a", out) == 0.5


def test_corrupt_rejects_empty():
    with pytest.raises(ValueError):
        asr_corrupt("   ", 1)


def test_corrupt_mixes_edit_depths():
    base = "golden anthem river"
    depths = set()
    for seed in range(60):
        out = asr_corrupt(base, seed)
        assert len(out) == len(base)
        changed = sum(a != b for a, b in zip(base, out))
        depths.add(changed)
    assert 1 in depths
    assert 2 in depths
    assert depths <= {1, 2}
    # Different seeds spread the damage around instead of repeating one typo.
    assert len({asr_corrupt(base, seed) for seed in range(60)}) > 20


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=8),
        min_size=1,
        max_size=6,
    ).map(" ".join),
    st.integers(min_value=0, max_value=2**31 - 1),
)
def test_corrupt_properties(text, seed):
    out = asr_corrupt(text, seed)
    assert out == asr_corrupt(text, seed)
    assert out != normalize(text)
    assert normalized_edit_distance(normalize(text), out) <= 0.5


# -- logs ------------------------------------------------------------------------


def test_logs_are_deterministic(small_world, small_logs):
    records, audit = small_logs
    records2, audit2 = generate_logs_with_audit(small_world)
    assert records2 == records
    assert audit2 == audit
    assert generate_logs(small_world) == records


def test_log_records_validate(small_logs):
    records, _ = small_logs
    assert records
    for r in records:
        r.validate()


def test_defect_scores_avoid_cutoff_band(small_logs):
    records, _ = small_logs
    assert any(r.defect_score > 0.5 for r in records)
    assert any(r.defect_score <= 0.5 for r in records)
    assert all(r.defect_score <= 0.45 or r.defect_score >= 0.55 for r in records)


def test_session_timestamps_strictly_increase(small_logs):
    records, _ = small_logs
    by_session = {}
    for r in records:
        by_session.setdefault((r.user_id, r.session_id), []).append(r.timestamp)
    for stamps in by_session.values():
        ordered = sorted(stamps)
        assert all(a < b for a, b in zip(ordered, ordered[1:]))


def test_history_and_eval_windows(small_logs):
    records, audit = small_logs
    history, future = split_history_eval(records, audit.eval_start_timestamp)
    assert len(history) == audit.n_history_records
    assert len(future) == audit.n_eval_records
    assert history and future
    assert max(r.timestamp for r in history) < audit.eval_start_timestamp
    week_span = (SMALL.weeks_history + SMALL.weeks_eval) * WEEK_SECONDS
    assert max(r.timestamp for r in records) < SMALL.start_timestamp + week_span


def test_defect_free_world_mines_nothing():
    config = WorldConfig(**{**SMALL.__dict__, "defect_probability": 0.0})
    world = generate_world(config)
    records, audit = generate_logs_with_audit(world)
    assert all(r.defect_score <= 0.5 for r in records)
    assert audit.planted_pairs == ()
    assert mine_opportunity_pairs(records) == []


def test_every_planted_pair_is_mined_exactly(small_logs):
    records, audit = small_logs
    assert audit.planted_pairs
    mined = mine_opportunity_pairs(records)
    mined_keys = {
        (p.user_id, p.session_id, p.defective_utterance, p.rewrite_label, p.timestamp)
        for p in mined
    }
    planted_keys = {
        (
            p.user_id,
            p.session_id,
            p.corrupted_utterance,
            p.clean_utterance,
            p.defective_timestamp,
        )
        for p in audit.planted_pairs
    }
    assert mined_keys == planted_keys
    assert len(mined) == len(audit.planted_pairs)


def test_planted_pairs_respect_mining_filters(small_logs):
    _, audit = small_logs
    for p in audit.planted_pairs:
        gap = p.rephrase_timestamp - p.defective_timestamp
        assert 10 <= gap <= 40
        assert p.corrupted_utterance != p.clean_utterance
        assert (
            normalized_edit_distance(p.corrupted_utterance, p.clean_utterance) <= 0.5
        )


def test_planted_pair_label_matches_a_template(small_world, small_logs):
    _, audit = small_logs
    by_id = {e.entity_id: e for e in small_world.entities}
    sample = audit.planted_pairs[: 30]
    for p in sample:
        entity = by_id[p.entity_id]
        assert entity.name in p.clean_utterance


def test_eval_week_mixes_seen_and_novel(small_logs):
    records, audit = small_logs
    history, future = split_history_eval(records, audit.eval_start_timestamp)
    seen_entities = {}
    for r in history:
        seen_entities.setdefault(r.user_id, set()).add(r.entity_id)
    novel = 0
    repeats = 0
    for r in future:
        if r.entity_id in seen_entities.get(r.user_id, set()):
            repeats += 1
        else:
            novel += 1
    assert novel > 0
    assert repeats > 0


def test_some_novel_eval_entity_lives_with_cluster_peer(small_world, small_logs):
    records, audit = small_logs
    history, future = split_history_eval(records, audit.eval_start_timestamp)
    cluster_of = {u.user_id: u.cluster for u in small_world.users}
    own = {}
    cluster_union = {}
    for r in history:
        own.setdefault(r.user_id, set()).add(r.entity_id)
        cluster_union.setdefault(cluster_of[r.user_id], set()).add(r.entity_id)
    found = False
    for r in future:
        if r.entity_id in own.get(r.user_id, set()):
            continue
        peers = cluster_union.get(cluster_of[r.user_id], set())
        if r.entity_id in peers:
            found = True
            break
    assert found


def test_unseen_eval_labels_reachable_within_three_hops(small_logs):
    records, audit = small_logs
    history, future = split_history_eval(records, audit.eval_start_timestamp)
    graph = build_graph(history)
    users = sorted({r.user_id for r in future})
    histories = {
        u: build_user_history_index(graph, u, history_cap=None) for u in users
    }
    cases = cases_from_records(future, histories)
    assert cases
    maps = DistanceMaps(graph, users, max_hop=3)
    covered = sum(
        1
        for c in cases
        if (d := maps.entity_distance(c.user_id, c.entity_id)) is not None and d <= 3
    )
    assert covered / len(cases) >= 0.10


def test_round_trip_through_log_files(small_logs):
    records, _ = small_logs
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "logs.tsv"
        write_log_file(path, records)
        result = parse_log_file(path)
    assert result.rejects == []
    assert result.records == records


def test_manifest_mentions_the_headline_counts(small_world):
    text = world_manifest(small_world)
    assert text == world_manifest(small_world)
    assert text.startswith("synthetic world\n")
    assert "config.seed = 11" in text
    assert f"entities = {len(small_world.entities)}" in text
    assert "users = 120" in text
    assert "cluster_sizes = " in text


def test_planted_pair_fields(small_logs):
    _, audit = small_logs
    eval_flags = {p.in_eval_window for p in audit.planted_pairs}
    assert eval_flags == {True, False}
    p = audit.planted_pairs[0]
    assert isinstance(p, PlantedPair)
    assert p.user_id.startswith("u")
    assert p.entity_id.startswith("e")


def test_world_type(small_world):
    assert isinstance(small_world, SyntheticWorld)
