"""Seeded synthetic worlds and interaction logs.

Users live in preference clusters over disjoint content pools, so
collaborative signal exists by construction: cluster mates share most of
their preference mass. Cluster pairs ("buddies") share category entities and
leak a small amount of content mass across the pair, creating entities that
are invisible to constrained traversal but discoverable through co-occurrence.
Defective turns are injected as ASR-shaped corruptions, optionally followed by
the clean rephrase in the same session, which plants recoverable opportunity
pairs at known positions.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field, fields

from collabqr.records import Domain, EntityType, LogRecord
from collabqr.rng import Rng, derive_seed
from collabqr.text import normalize, normalized_edit_distance

WEEK_SECONDS = 7 * 24 * 3600
MAX_CORRUPTION_DISTANCE = 0.5

_ADJECTIVES = (
    "amber", "ancient", "bitter", "blue", "bright", "broken", "calm", "crimson",
    "crystal", "dusty", "electric", "emerald", "fading", "frozen", "gentle",
    "golden", "green", "heavy", "hidden", "hollow", "iron", "little", "lonely",
    "lost", "lucky", "midnight", "neon", "northern", "pale", "paper", "purple",
    "quiet", "rapid", "red", "rising", "royal", "rusty", "silent", "silver",
    "slow", "solar", "stormy", "sweet", "velvet", "wild", "winter",
)
_NOUNS = (
    "anthem", "arrow", "bridge", "canyon", "castle", "circle", "city", "cloud",
    "comet", "crown", "dancer", "delta", "desert", "diamond", "dream", "echo",
    "ember", "engine", "falcon", "feather", "fire", "flower", "forest",
    "garden", "ghost", "glacier", "harbor", "heart", "horizon", "island",
    "lantern", "meadow", "mirror", "moon", "mountain", "ocean", "orchid",
    "phoenix", "rain", "raven", "river", "shadow", "sparrow", "station",
    "thunder", "tiger", "valley", "wave", "willow", "wolf",
)
_FIRST_NAMES = (
    "alba", "anya", "boris", "bruno", "carmen", "clara", "dante", "dmitri",
    "elena", "felix", "greta", "hugo", "iris", "jonas", "kira", "laszlo",
    "maren", "nico", "odessa", "pavel", "quinn", "rosa", "stefan", "tilda",
    "ugo", "vera", "wanda", "xenia", "yuri", "zelda",
)
_LAST_NAMES = (
    "abbott", "arnold", "baxter", "becker", "calloway", "castillo", "drummond",
    "duval", "ellington", "fontaine", "garland", "holloway", "ivanov",
    "jensen", "kowalski", "lindgren", "moreau", "novak", "okafor", "petrov",
    "quintero", "rossi", "sorensen", "tanaka", "ueda", "vance", "weber",
    "xiong", "yamada", "zhang",
)
_GENRE_STYLES = ("rock", "jazz", "pop", "folk", "techno", "blues", "soul", "metal")
_APP_SUFFIXES = ("player", "cast", "stream", "theater")
_ROOMS = ("kitchen", "bedroom", "office", "hallway", "garage", "porch", "attic", "studio")
_FIXTURES = ("lamp", "light", "speaker", "fan", "plug", "thermostat")
_EXTENSIONS = ("live", "ii", "remix", "deluxe", "duo", "reprise")

TEMPLATES: dict[EntityType, tuple[str, ...]] = {
    EntityType.SONG: ("play {name}", "play the song {name}", "put on {name}"),
    EntityType.ARTIST: ("play songs by {name}", "play music by {name}", "play the artist {name}"),
    EntityType.VIDEO: ("watch {name}", "play {name}", "stream {name}"),
    EntityType.GENRE: ("play some {name}", "play {name} music"),
    EntityType.APP: ("open {name}", "launch {name}"),
    EntityType.DEVICE_NAME: ("turn on the {name}", "turn off the {name}", "dim the {name}"),
}


@dataclass(frozen=True)
class WorldConfig:
    seed: int = 42
    num_users: int = 1000
    num_songs: int = 900
    num_artists: int = 260
    num_videos: int = 700
    num_genres: int = 48
    num_apps: int = 24
    num_devices: int = 40
    num_clusters: int = 16
    weeks_history: int = 26
    weeks_eval: int = 1
    interactions_per_week_min: int = 2
    interactions_per_week_max: int = 6
    defect_probability: float = 0.08
    repeat_defect_scale: float = 0.15
    carrier_corruption_share: float = 0.2
    rephrase_probability: float = 0.8
    novel_entity_probability: float = 0.3
    category_mass: float = 0.15
    buddy_mass: float = 0.02
    global_mass: float = 0.03
    name_extension_probability: float = 0.35
    zipf_exponent: float = 1.1
    start_timestamp: int = 1_600_000_000

    def validate(self) -> None:
        for name in (
            "defect_probability", "repeat_defect_scale", "carrier_corruption_share",
            "rephrase_probability", "novel_entity_probability", "category_mass",
            "buddy_mass", "global_mass", "name_extension_probability",
        ):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        for name in (
            "num_users", "num_songs", "num_artists", "num_videos", "num_genres",
            "num_apps", "num_devices", "num_clusters", "weeks_history", "weeks_eval",
            "interactions_per_week_min", "interactions_per_week_max",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.interactions_per_week_max < self.interactions_per_week_min:
            raise ValueError("interactions_per_week_max below the minimum")
        if self.zipf_exponent <= 0:
            raise ValueError("zipf_exponent must be > 0")
        if self.category_mass + self.buddy_mass + self.global_mass >= 1.0:
            raise ValueError("category, buddy, and global masses must sum below 1")
        if self.buddy_mass > 0 and self.num_clusters % 2 != 0:
            raise ValueError("buddy_mass needs an even number of clusters")

    @property
    def weeks_total(self) -> int:
        return self.weeks_history + self.weeks_eval

    @property
    def eval_start_timestamp(self) -> int:
        return self.start_timestamp + self.weeks_history * WEEK_SECONDS


@dataclass(frozen=True)
class SyntheticEntity:
    entity_id: str
    name: str
    entity_type: EntityType
    domain: Domain


@dataclass(frozen=True)
class SyntheticUser:
    user_id: str
    cluster: int


@dataclass(frozen=True)
class _Distribution:
    """Sampling table: entity indexes with cumulative weights."""

    indexes: tuple[int, ...]
    cumulative: tuple[float, ...]

    def sample(self, rng: Rng) -> int:
        total = self.cumulative[-1]
        x = rng.random() * total
        return self.indexes[bisect.bisect_right(self.cumulative, x)]


def _make_distribution(indexes: list[int], weights: list[float]) -> _Distribution:
    cumulative = []
    running = 0.0
    for w in weights:
        running += w
        cumulative.append(running)
    return _Distribution(indexes=tuple(indexes), cumulative=tuple(cumulative))


@dataclass
class SyntheticWorld:
    config: WorldConfig
    entities: tuple[SyntheticEntity, ...]
    users: tuple[SyntheticUser, ...]
    cluster_content_pools: tuple[tuple[int, ...], ...]
    cluster_category_pools: tuple[tuple[int, ...], ...]
    popularity: tuple[float, ...]
    extension_pairs: tuple[tuple[int, int], ...]
    defect_scales: tuple[float, ...] = ()
    _global_content: _Distribution = field(repr=False, default=None)
    _cluster_mixes: tuple = field(repr=False, default=None)

    def buddy_cluster(self, cluster: int) -> int:
        if self.config.num_clusters % 2 == 0:
            return cluster ^ 1
        return cluster

    def sample_content_entity(self, rng: Rng) -> int:
        """One draw from the global popularity distribution over content."""
        return self._global_content.sample(rng)

    def preference_weights(self, cluster: int) -> dict[int, float]:
        """Analytic per-entity probability of one interaction draw."""
        mix = self._cluster_mixes[cluster]
        out: dict[int, float] = {}
        for mass, dist in mix:
            total = dist.cumulative[-1]
            prev = 0.0
            for idx, cum in zip(dist.indexes, dist.cumulative):
                out[idx] = out.get(idx, 0.0) + mass * (cum - prev) / total
                prev = cum
        return out

    def sample_interaction_entity(self, cluster: int, rng: Rng) -> int:
        roll = rng.random()
        edge = 0.0
        mix = self._cluster_mixes[cluster]
        for mass, dist in mix[:-1]:
            edge += mass
            if roll < edge:
                return dist.sample(rng)
        return mix[-1][1].sample(rng)


def _unique_name(make, rng: Rng, used: set[str]) -> str:
    for _ in range(64):
        name = make(rng)
        if name not in used:
            used.add(name)
            return name
    i = 2
    base = make(rng)
    while f"{base} {i}" in used:
        i += 1
    name = f"{base} {i}"
    used.add(name)
    return name


def generate_world(config: WorldConfig) -> SyntheticWorld:
    config.validate()
    rng = Rng(derive_seed(config.seed, "world"))
    used: set[str] = set()
    entities: list[SyntheticEntity] = []
    extension_pairs: list[tuple[int, int]] = []

    def adj_noun(r: Rng) -> str:
        return f"{r.choice(_ADJECTIVES)} {r.choice(_NOUNS)}"

    def person(r: Rng) -> str:
        return f"{r.choice(_FIRST_NAMES)} {r.choice(_LAST_NAMES)}"

    def genre(r: Rng) -> str:
        return f"{r.choice(_ADJECTIVES)} {r.choice(_GENRE_STYLES)}"

    def app(r: Rng) -> str:
        return f"{r.choice(_NOUNS)} {r.choice(_APP_SUFFIXES)}"

    def device(r: Rng) -> str:
        return f"{r.choice(_ROOMS)} {r.choice(_FIXTURES)}"

    def add_block(count, make, entity_type, domain, extendable):
        start = len(entities)
        for i in range(count):
            idx = len(entities)
            same_type = [e for e in range(start, idx)]
            if (
                extendable
                and same_type
                and rng.random() < config.name_extension_probability
            ):
                base_idx = rng.choice(same_type)
                name = f"{entities[base_idx].name} {rng.choice(_EXTENSIONS)}"
                if name in used:
                    name = _unique_name(make, rng, used)
                else:
                    used.add(name)
                    extension_pairs.append((base_idx, idx))
            else:
                name = _unique_name(make, rng, used)
            entities.append(
                SyntheticEntity(
                    entity_id=f"e{idx:04d}",
                    name=name,
                    entity_type=entity_type,
                    domain=domain,
                )
            )

    add_block(config.num_songs, adj_noun, EntityType.SONG, Domain.MUSIC, True)
    add_block(config.num_artists, person, EntityType.ARTIST, Domain.MUSIC, True)
    add_block(config.num_videos, adj_noun, EntityType.VIDEO, Domain.VIDEO, True)
    add_block(config.num_genres, genre, EntityType.GENRE, Domain.MUSIC, False)
    add_block(config.num_apps, app, EntityType.APP, Domain.VIDEO, False)
    add_block(config.num_devices, device, EntityType.DEVICE_NAME, Domain.OTHER, False)

    n = len(entities)
    ranks = list(range(n))
    rng.shuffle(ranks)
    popularity = [0.0] * n
    for idx, rank in enumerate(ranks):
        popularity[idx] = (rank + 1) ** -config.zipf_exponent

    # Misrecognition risk is uneven: most names transcribe cleanly, a
    # minority are chronically hard, and name twins confuse the recognizer
    # from either side.
    scale_rng = Rng(derive_seed(config.seed, "defect-scales"))
    defect_scales = [0.0] * n
    for idx in range(n):
        roll = scale_rng.random()
        defect_scales[idx] = 0.25 if roll < 0.6 else (1.0 if roll < 0.9 else 3.0)
    for base_idx, ext_idx in extension_pairs:
        defect_scales[base_idx] = max(defect_scales[base_idx], 2.0)
        defect_scales[ext_idx] = max(defect_scales[ext_idx], 2.0)

    users = tuple(
        SyntheticUser(user_id=f"u{i:04d}", cluster=i % config.num_clusters)
        for i in range(config.num_users)
    )

    content_types = (EntityType.SONG, EntityType.ARTIST, EntityType.VIDEO)
    content = [i for i, e in enumerate(entities) if e.entity_type in content_types]
    categories = [i for i, e in enumerate(entities) if e.entity_type not in content_types]
    shuffled_content = list(content)
    rng.shuffle(shuffled_content)
    content_pools: list[list[int]] = [[] for _ in range(config.num_clusters)]
    pool_of: dict[int, int] = {}
    for i, idx in enumerate(shuffled_content):
        content_pools[i % config.num_clusters].append(idx)
        pool_of[idx] = i % config.num_clusters
    # A title and its extended cut share an audience, so keep name twins
    # in one cluster pool.
    for base_idx, ext_idx in extension_pairs:
        b, e = pool_of.get(base_idx), pool_of.get(ext_idx)
        if b is None or e is None or b == e:
            continue
        content_pools[e].remove(ext_idx)
        content_pools[b].append(ext_idx)
        pool_of[ext_idx] = b
    shuffled_categories = list(categories)
    rng.shuffle(shuffled_categories)
    n_pairs = max(1, config.num_clusters // 2)
    category_groups: list[list[int]] = [[] for _ in range(n_pairs)]
    for i, idx in enumerate(shuffled_categories):
        category_groups[i % n_pairs].append(idx)
    category_pools = [category_groups[min(c // 2, n_pairs - 1)] for c in range(config.num_clusters)]

    def pool_distribution(pool: list[int]) -> _Distribution:
        ordered = sorted(pool, key=lambda i: (-popularity[i], i))
        weights = [(r + 1) ** -config.zipf_exponent for r in range(len(ordered))]
        return _make_distribution(ordered, weights)

    global_content = pool_distribution(content)
    world = SyntheticWorld(
        config=config,
        entities=tuple(entities),
        users=users,
        cluster_content_pools=tuple(tuple(sorted(p)) for p in content_pools),
        cluster_category_pools=tuple(tuple(sorted(p)) for p in category_pools),
        popularity=tuple(popularity),
        extension_pairs=tuple(extension_pairs),
        defect_scales=tuple(defect_scales),
    )
    mixes = []
    for c in range(config.num_clusters):
        own_mass = 1.0 - config.category_mass - config.buddy_mass - config.global_mass
        buddy = world.buddy_cluster(c)
        mixes.append(
            (
                (config.category_mass, pool_distribution(category_pools[c])),
                (config.buddy_mass, pool_distribution(content_pools[buddy])),
                (config.global_mass, global_content),
                (own_mass, pool_distribution(content_pools[c])),
            )
        )
    world._global_content = global_content
    world._cluster_mixes = tuple(mixes)
    return world


# -- corruption ----------------------------------------------------------------

# Several plausible mishearings per letter; the draw varies per incident so
# two speakers rarely produce the same mangled spelling.
_SUBSTITUTIONS = {
    "a": "eou", "e": "iau", "i": "eya", "o": "uae", "u": "oie",
    "b": "pdv", "p": "btf", "c": "ksg", "k": "cgq", "d": "tbg", "t": "dpk",
    "g": "jkd", "j": "gzy", "s": "zfx", "z": "sjc", "m": "nwb", "n": "mlr",
    "f": "vps", "v": "fwb", "l": "rnt", "r": "lwn", "w": "vmu", "y": "ijl",
    "h": "knm", "q": "kgc", "x": "zsk",
}


def _substitute_char(word: str, rng: Rng) -> str | None:
    positions = list(range(len(word)))
    rng.shuffle(positions)
    for pos in positions:
        options = _SUBSTITUTIONS.get(word[pos])
        if options is None:
            continue
        repl = options[rng.randint(0, len(options) - 1)]
        if repl != word[pos]:
            return word[:pos] + repl + word[pos + 1 :]
    return None


def _one_edit(text: str, rng: Rng) -> str | None:
    # A single-character confusion inside one word: a near-miss transcription
    # mangles the name but keeps its shape, and it never reproduces the
    # original spelling intact.
    words = text.split()
    i = rng.randint(0, len(words) - 1)
    replaced = _substitute_char(words[i], rng)
    if replaced is None:
        return None
    return " ".join(words[:i] + [replaced] + words[i + 1 :])


def asr_corrupt(utterance: str, seed: int) -> str:
    """Deterministic ASR-shaped corruption: one edit usually, two sometimes,
    never the identity, and close enough for the weak-label edit filter."""
    text = normalize(utterance)
    if not text:
        raise ValueError("cannot corrupt an empty utterance")
    rng = Rng(derive_seed(seed, "asr:" + text))
    out = text
    for _ in range(1 if rng.random() < 0.75 else 2):
        candidate = _one_edit(out, rng)
        if (
            candidate
            and candidate != text
            and normalized_edit_distance(text, candidate) <= MAX_CORRUPTION_DISTANCE
        ):
            out = candidate
    if out == text:
        candidate = _substitute_char(text, rng)
        if (
            candidate
            and candidate != text
            and normalized_edit_distance(text, candidate) <= MAX_CORRUPTION_DISTANCE
        ):
            return candidate
        return text + "h"
    return out


# -- log generation ------------------------------------------------------------


@dataclass(frozen=True)
class PlantedPair:
    """Ground truth for one injected defective turn plus rephrase."""

    user_id: str
    session_id: str
    corrupted_utterance: str
    clean_utterance: str
    entity_id: str
    defective_timestamp: int
    rephrase_timestamp: int
    in_eval_window: bool


@dataclass(frozen=True)
class SynthAudit:
    planted_pairs: tuple[PlantedPair, ...]
    eval_start_timestamp: int
    n_history_records: int
    n_eval_records: int


def _pick_eval_entity(world: SyntheticWorld, cluster: int, seen: set[int], rng: Rng) -> int:
    config = world.config
    if rng.random() < config.novel_entity_probability:
        roll = rng.random()
        if roll < 0.35:
            pools = [world.cluster_content_pools[cluster]]
        elif roll < 0.80:
            pools = [world.cluster_content_pools[world.buddy_cluster(cluster)]]
        else:
            pools = [tuple(range(len(world.entities)))]
        for pool in pools:
            fresh = [i for i in pool if i not in seen]
            if fresh:
                weights = [world.popularity[i] for i in fresh]
                return _make_distribution(fresh, weights).sample(rng)
    return world.sample_interaction_entity(cluster, rng)


def generate_logs_with_audit(world: SyntheticWorld) -> tuple[list[LogRecord], SynthAudit]:
    config = world.config
    records: list[LogRecord] = []
    planted: list[PlantedPair] = []
    n_history = 0
    n_eval = 0
    for user in world.users:
        rng = Rng(derive_seed(config.seed, "logs:" + user.user_id))
        seen: set[int] = set()
        for week in range(config.weeks_total):
            in_eval = week >= config.weeks_history
            session_id = f"{user.user_id}-w{week:02d}"
            cursor = (
                config.start_timestamp
                + week * WEEK_SECONDS
                + rng.randint(0, 5 * 24 * 3600)
            )
            n_turns = rng.randint(
                config.interactions_per_week_min, config.interactions_per_week_max
            )
            for _ in range(n_turns):
                cursor += 120 + rng.randint(0, 600)
                if in_eval:
                    idx = _pick_eval_entity(world, user.cluster, seen, rng)
                else:
                    idx = world.sample_interaction_entity(user.cluster, rng)
                # Misrecognitions cluster on unfamiliar names: a first
                # interaction defects at the entity's full rate, repeats at
                # a fraction.
                defect_p = min(0.9, config.defect_probability * world.defect_scales[idx])
                if idx in seen:
                    defect_p *= config.repeat_defect_scale
                seen.add(idx)
                entity = world.entities[idx]
                template = rng.choice(TEMPLATES[entity.entity_type])
                utterance = template.format(name=entity.name)
                defective = rng.random() < defect_p
                barged = rng.random() < 0.05
                terminated = rng.random() < 0.03

                def emit(text, ts, score, target=None):
                    nonlocal n_history, n_eval
                    records.append(
                        LogRecord(
                            user_id=user.user_id,
                            timestamp=ts,
                            session_id=session_id,
                            utterance=text,
                            entity_id=entity.entity_id,
                            entity_name=entity.name,
                            entity_type=entity.entity_type,
                            domain=entity.domain,
                            defect_score=score,
                            barged_in=barged,
                            terminated=terminated,
                            rewrite_target=target,
                        )
                    )
                    if in_eval:
                        n_eval += 1
                    else:
                        n_history += 1

                if defective:
                    # The recognizer usually trips on the open-vocabulary name,
                    # so the damage lands inside the name span and the result
                    # no longer matches any catalog entry. A minority of
                    # misrecognitions hit the carrier phrase instead, leaving
                    # the name intact and resolvable.
                    if rng.random() < config.carrier_corruption_share:
                        words = template.format(name="\x00").split()
                        spots = [i for i, w in enumerate(words) if w != "\x00"]
                        i = spots[rng.randint(0, len(spots) - 1)]
                        repl = _substitute_char(words[i], rng)
                        words[i] = repl if repl is not None else words[i] + "h"
                        corrupted = " ".join(
                            entity.name if w == "\x00" else w for w in words
                        )
                    else:
                        bad_name = asr_corrupt(
                            entity.name, seed=rng.randint(0, 2**31 - 1)
                        )
                        corrupted = template.format(name=bad_name)
                    rephrased = rng.random() < config.rephrase_probability
                    # Session-level linking attributes the followup phrasing to
                    # the misrecognized turn, the way offline mining would.
                    emit(
                        corrupted,
                        cursor,
                        0.7 + rng.random() * 0.3,
                        target=normalize(utterance) if rephrased else None,
                    )
                    if rephrased:
                        rephrase_ts = cursor + 10 + rng.randint(0, 30)
                        emit(utterance, rephrase_ts, rng.random() * 0.25)
                        planted.append(
                            PlantedPair(
                                user_id=user.user_id,
                                session_id=session_id,
                                corrupted_utterance=corrupted,
                                clean_utterance=normalize(utterance),
                                entity_id=entity.entity_id,
                                defective_timestamp=cursor,
                                rephrase_timestamp=rephrase_ts,
                                in_eval_window=in_eval,
                            )
                        )
                        cursor = rephrase_ts
                else:
                    emit(utterance, cursor, rng.random() * 0.25)
    records.sort(key=lambda r: (r.timestamp, r.user_id, r.session_id, r.entity_id, r.utterance))
    audit = SynthAudit(
        planted_pairs=tuple(planted),
        eval_start_timestamp=config.eval_start_timestamp,
        n_history_records=n_history,
        n_eval_records=n_eval,
    )
    return records, audit


def generate_logs(world: SyntheticWorld) -> list[LogRecord]:
    records, _ = generate_logs_with_audit(world)
    return records


def split_history_eval(
    records: list[LogRecord], eval_start: int
) -> tuple[list[LogRecord], list[LogRecord]]:
    history = [r for r in records if r.timestamp < eval_start]
    future = [r for r in records if r.timestamp >= eval_start]
    return history, future


def world_manifest(world: SyntheticWorld) -> str:
    """Plain-text summary: config echo plus the headline counts."""
    config = world.config
    lines = ["synthetic world"]
    for f in fields(WorldConfig):
        lines.append(f"config.{f.name} = {getattr(config, f.name)!r}")
    lines.append(f"entities = {len(world.entities)}")
    lines.append(f"users = {len(world.users)}")
    lines.append(f"clusters = {config.num_clusters}")
    lines.append(f"name_extension_twins = {len(world.extension_pairs)}")
    sizes = [0] * config.num_clusters
    for user in world.users:
        sizes[user.cluster] += 1
    lines.append("cluster_sizes = " + ",".join(str(s) for s in sizes))
    return "\n".join(lines) + "\n"
