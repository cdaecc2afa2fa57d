"""Interaction log records: the row type every pipeline stage consumes, plus TSV I/O.

Log files are UTF-8 TSV with exactly twelve columns per line and no header:

    user_id  timestamp  session_id  utterance  entity_id  entity_name
    entity_type  domain  defect_score  barged_in  terminated  rewrite_target

timestamp is integer epoch seconds, defect_score a float in [0, 1], barged_in
and terminated are 0/1 flags, rewrite_target is empty when absent. Lines that
fail validation are reported with their 1-based line number instead of
aborting the parse.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import Enum


class Domain(str, Enum):
    MUSIC = "music"
    VIDEO = "video"
    OTHER = "other"


class EntityType(str, Enum):
    SONG = "song"
    ALBUM = "album"
    ARTIST = "artist"
    BOOK = "book"
    VIDEO = "video"
    SHOPPING_ITEM = "shopping_item"
    GENRE = "genre"
    APP = "app"
    CITY = "city"
    STATE = "state"
    DEVICE_NAME = "device_name"
    ROUTINE_NAME = "routine_name"
    CONTACT_NAME = "contact_name"


# Content entities: specific consumable items. Traversal paths run through these.
CLASS_A_TYPES = frozenset(
    {
        EntityType.SONG,
        EntityType.ALBUM,
        EntityType.ARTIST,
        EntityType.BOOK,
        EntityType.VIDEO,
        EntityType.SHOPPING_ITEM,
    }
)

# Category entities: broad descriptors. Shared-affinity queries only, never path anchors.
CLASS_B_TYPES = frozenset(
    {
        EntityType.GENRE,
        EntityType.APP,
        EntityType.CITY,
        EntityType.STATE,
        EntityType.DEVICE_NAME,
        EntityType.ROUTINE_NAME,
        EntityType.CONTACT_NAME,
    }
)


def is_class_a(entity_type: EntityType) -> bool:
    return entity_type in CLASS_A_TYPES


def is_class_b(entity_type: EntityType) -> bool:
    return entity_type in CLASS_B_TYPES


N_COLUMNS = 12


@dataclass(frozen=True)
class LogRecord:
    """One spoken interaction resolved to an entity, with outcome signals."""

    user_id: str
    timestamp: int
    session_id: str
    utterance: str
    entity_id: str
    entity_name: str
    entity_type: EntityType
    domain: Domain
    defect_score: float
    barged_in: bool
    terminated: bool
    rewrite_target: str | None = None

    def validate(self) -> None:
        if not self.user_id:
            raise ValueError("empty user_id")
        if not self.session_id:
            raise ValueError("empty session_id")
        if not self.utterance.strip():
            raise ValueError("empty utterance")
        if not self.entity_id:
            raise ValueError("empty entity_id")
        if not self.entity_name.strip():
            raise ValueError("empty entity_name")
        if not 0.0 <= self.defect_score <= 1.0:
            raise ValueError(f"defect_score {self.defect_score} outside [0, 1]")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")
        if self.rewrite_target is not None and not self.rewrite_target.strip():
            raise ValueError("rewrite_target present but blank")
        for text in (self.user_id, self.session_id, self.utterance, self.entity_id, self.entity_name):
            if "\t" in text or "\n" in text:
                raise ValueError("tab or newline inside field")
        if self.rewrite_target is not None and ("\t" in self.rewrite_target or "\n" in self.rewrite_target):
            raise ValueError("tab or newline inside rewrite_target")


@dataclass(frozen=True)
class ParseReject:
    """A line that failed parsing, with its 1-based line number."""

    line_number: int
    reason: str


@dataclass
class ParseResult:
    records: list[LogRecord] = field(default_factory=list)
    rejects: list[ParseReject] = field(default_factory=list)


def _parse_line(line: str) -> LogRecord:
    parts = line.split("\t")
    if len(parts) != N_COLUMNS:
        raise ValueError(f"expected {N_COLUMNS} columns, got {len(parts)}")
    (
        user_id,
        ts_raw,
        session_id,
        utterance,
        entity_id,
        entity_name,
        type_raw,
        domain_raw,
        defect_raw,
        barge_raw,
        term_raw,
        rewrite_raw,
    ) = parts
    try:
        timestamp = int(ts_raw)
    except ValueError:
        raise ValueError(f"bad timestamp {ts_raw!r}") from None
    try:
        entity_type = EntityType(type_raw)
    except ValueError:
        raise ValueError(f"unknown entity_type {type_raw!r}") from None
    try:
        domain = Domain(domain_raw)
    except ValueError:
        raise ValueError(f"unknown domain {domain_raw!r}") from None
    try:
        defect_score = float(defect_raw)
    except ValueError:
        raise ValueError(f"bad defect_score {defect_raw!r}") from None
    if barge_raw not in ("0", "1"):
        raise ValueError(f"bad barged_in flag {barge_raw!r}")
    if term_raw not in ("0", "1"):
        raise ValueError(f"bad terminated flag {term_raw!r}")
    record = LogRecord(
        user_id=user_id,
        timestamp=timestamp,
        session_id=session_id,
        utterance=utterance,
        entity_id=entity_id,
        entity_name=entity_name,
        entity_type=entity_type,
        domain=domain,
        defect_score=defect_score,
        barged_in=barge_raw == "1",
        terminated=term_raw == "1",
        rewrite_target=rewrite_raw if rewrite_raw else None,
    )
    record.validate()
    return record


def parse_log_lines(lines) -> ParseResult:
    result = ParseResult()
    for number, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line:
            continue
        try:
            result.records.append(_parse_line(line))
        except ValueError as exc:
            result.rejects.append(ParseReject(line_number=number, reason=str(exc)))
    return result


def parse_log_file(path) -> ParseResult:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_log_lines(fh)


def format_record(record: LogRecord) -> str:
    return "\t".join(
        (
            record.user_id,
            str(record.timestamp),
            record.session_id,
            record.utterance,
            record.entity_id,
            record.entity_name,
            record.entity_type.value,
            record.domain.value,
            repr(record.defect_score),
            "1" if record.barged_in else "0",
            "1" if record.terminated else "0",
            record.rewrite_target or "",
        )
    )


def write_log_file(path, records) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_log_stream(fh, records)


def write_log_stream(fh: io.TextIOBase, records) -> None:
    for record in records:
        record.validate()
        fh.write(format_record(record))
        fh.write("\n")
