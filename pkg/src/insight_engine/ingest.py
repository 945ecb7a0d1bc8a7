"""Source ingestion and schema profiling.

Reads CSV or NDJSON sources into normalized string records, profiles every
field (raw type, semantic role, null/distinct counts, extrema, top
values), and emits :class:`~.contracts.TopicMetadata`. Profiling is
incremental: the batch profile of a record set equals the streaming
profile after the same records arrive in any chunking, which the
orchestrator relies on for continuous sources.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import Counter
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional

from .contracts import (
    FieldProfile,
    IdSource,
    SourceInfo,
    TopicMetadata,
    utc_now_text,
)

logger = logging.getLogger(__name__)

NULL_TOKENS = frozenset({"", "null", "NULL", "N/A"})

TRUE_TOKENS = frozenset({"true", "yes", "1"})
FALSE_TOKENS = frozenset({"false", "no", "0"})
BOOLEAN_TOKENS = TRUE_TOKENS | FALSE_TOKENS

# Temporal patterns tried in order; names follow the date-format convention
# the SQL rendering uses (M=month, d=day, H=hour in strftime terms).
# kind distinguishes date-bearing formats from time-of-day-only ones.
TEMPORAL_PATTERNS = (
    ("MM/dd/yyyy", "%m/%d/%Y", "date"),
    ("yyyy-MM-dd", "%Y-%m-%d", "date"),
    ("yyyy-MM-dd'T'HH:mm:ss", "%Y-%m-%dT%H:%M:%S", "datetime"),
    ("yyyy-MM-dd'T'HH:mm:ss.SSSSSS", "%Y-%m-%dT%H:%M:%S.%f", "datetime"),
    ("yyyy-MM-dd HH:mm:ss", "%Y-%m-%d %H:%M:%S", "datetime"),
    ("MM/dd/yyyy HH:mm", "%m/%d/%Y %H:%M", "datetime"),
    ("yyyy/MM/dd", "%Y/%m/%d", "date"),
    ("HH:mm:ss", "%H:%M:%S", "time"),
    ("HH:mm", "%H:%M", "time"),
)

_PATTERN_BY_NAME = {name: (fmt, kind) for name, fmt, kind in TEMPORAL_PATTERNS}

TEMPORAL_MATCH_THRESHOLD = 0.95
IDENTIFIER_DISTINCT_RATIO = 0.95
DISTINCT_EXACT_CAP = 10000
KMV_SIZE = 256
TOP_VALUES_LIMIT = 10
DEFAULT_SAMPLE_CAP = 100


class IngestError(Exception):
    pass


def temporal_format_kind(format_name: str) -> Optional[str]:
    entry = _PATTERN_BY_NAME.get(format_name)
    return entry[1] if entry else None


def parse_temporal(value: str, format_name: str) -> Optional[datetime]:
    """Parse a raw value under a named pattern, None when it does not fit."""
    entry = _PATTERN_BY_NAME.get(format_name)
    if entry is None:
        return None
    try:
        return datetime.strptime(value, entry[0])
    except (ValueError, TypeError):
        return None


def normalize_value(value: Any) -> Optional[str]:
    """Normalize one cell to canonical string-or-None form.

    Null tokens map to None. JSON scalars are canonicalized to strings:
    booleans to "true"/"false", integral floats to their integer text.
    """
    if value is None:
        return None
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if value.is_integer():
            return str(int(value))
        return repr(value)
    if isinstance(value, int):
        return str(value)
    text = str(value)
    if text in NULL_TOKENS:
        return None
    return text


def normalize_record(raw: dict) -> dict[str, Optional[str]]:
    return {key: normalize_value(value) for key, value in raw.items()}


def read_csv_records(path: str) -> tuple[list[str], list[dict]]:
    """Read a CSV file into (field order, normalized records).

    Ragged rows and empty headers are hard errors: silently padding them
    would corrupt every downstream count.
    """
    with open(path, "r", encoding="utf-8-sig", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: file is empty, expected a header row")
        if not header or all(h.strip() == "" for h in header):
            raise IngestError(f"{path}: header row has no column names")
        records = []
        for index, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(
                    f"{path}: row {index} has {len(row)} values, header has {len(header)}"
                )
            records.append({key: normalize_value(cell) for key, cell in zip(header, row)})
    return list(header), records


def read_ndjson_records(path: str) -> tuple[list[str], list[dict]]:
    """Read newline-delimited JSON objects, preserving first-seen key order."""
    field_order: dict[str, None] = {}
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for index, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}: line {index} is not valid JSON: {exc}")
            if not isinstance(obj, dict):
                raise IngestError(f"{path}: line {index} is not a JSON object")
            for key in obj:
                field_order.setdefault(key)
            records.append(normalize_record(obj))
    if not field_order:
        raise IngestError(f"{path}: no records with fields found")
    # Records may omit keys; fill with None so every record is rectangular.
    keys = list(field_order)
    records = [{k: r.get(k) for k in keys} for r in records]
    return keys, records


# ---------------------------------------------------------------------------
# Incremental per-field profiling state
# ---------------------------------------------------------------------------


def _kmv_hash(value: str) -> int:
    return int.from_bytes(hashlib.blake2b(value.encode("utf-8"), digest_size=8).digest(), "big")


class IncrementalFieldState:
    """Streaming profile accumulator for one field.

    Designed so that folding records one at a time, in any batch split,
    produces exactly the same FieldProfile as a one-shot pass. Distinct
    counting is exact up to a cap, then switches to a k-minimum-values
    sketch and marks the estimate inexact.
    """

    def __init__(self, name: str):
        self.name = name
        self.total = 0
        self.non_null = 0
        self.int_like = 0
        self.float_like = 0
        self.boolean_like = 0
        self.values = Counter()  # exact distinct values up to the cap
        self.values_overflow = False
        self.kmv: set[int] = set()
        self.pattern_hits = {nm: 0 for nm, _, _ in TEMPORAL_PATTERNS}
        # Per-pattern extrema as (parsed datetime, raw text); raw breaks ties.
        self.temporal_min: dict[str, tuple] = {}
        self.temporal_max: dict[str, tuple] = {}
        self.numeric_min = None  # int | float, compared exactly
        self.numeric_max = None
        self.lexical_min: Optional[str] = None
        self.lexical_max: Optional[str] = None

    def update(self, value: Optional[str]) -> None:
        self.total += 1
        if value is None:
            return
        self.non_null += 1

        if not self.values_overflow:
            self.values[value] += 1
            if len(self.values) > DISTINCT_EXACT_CAP:
                self.values_overflow = True
                for seen in self.values:
                    self._kmv_add(seen)
        else:
            self._kmv_add(value)

        numeric = _as_number(value)
        if numeric is not None:
            if isinstance(numeric, int):
                self.int_like += 1
            else:
                self.float_like += 1
            if self.numeric_min is None or numeric < self.numeric_min:
                self.numeric_min = numeric
            if self.numeric_max is None or numeric > self.numeric_max:
                self.numeric_max = numeric

        if value.lower() in BOOLEAN_TOKENS:
            self.boolean_like += 1

        for pattern_name, fmt, _kind in TEMPORAL_PATTERNS:
            try:
                parsed = datetime.strptime(value, fmt)
            except ValueError:
                continue
            self.pattern_hits[pattern_name] += 1
            key = (parsed, value)
            current_min = self.temporal_min.get(pattern_name)
            if current_min is None or key < current_min:
                self.temporal_min[pattern_name] = key
            current_max = self.temporal_max.get(pattern_name)
            if current_max is None or key > current_max:
                self.temporal_max[pattern_name] = key

        if self.lexical_min is None or value < self.lexical_min:
            self.lexical_min = value
        if self.lexical_max is None or value > self.lexical_max:
            self.lexical_max = value

    def _kmv_add(self, value: str) -> None:
        h = _kmv_hash(value)
        if len(self.kmv) < KMV_SIZE:
            self.kmv.add(h)
        elif h < max(self.kmv):
            self.kmv.discard(max(self.kmv))
            self.kmv.add(h)

    @property
    def null_count(self) -> int:
        return self.total - self.non_null

    def distinct_estimate(self) -> tuple[int, bool]:
        if not self.values_overflow:
            return len(self.values), True
        if len(self.kmv) < KMV_SIZE:
            estimate = len(self.kmv)
        else:
            kth = max(self.kmv)
            estimate = int((KMV_SIZE - 1) * (2**64) / kth) if kth else KMV_SIZE
        # The estimator can overshoot; distinct values never exceed non-null rows.
        return max(DISTINCT_EXACT_CAP, min(estimate, self.non_null)), False

    def best_temporal_format(self) -> Optional[str]:
        if self.non_null == 0:
            return None
        threshold = TEMPORAL_MATCH_THRESHOLD * self.non_null
        for pattern_name, _, _ in TEMPORAL_PATTERNS:
            if self.pattern_hits[pattern_name] >= threshold:
                return pattern_name
        return None

    def raw_type(self) -> str:
        if self.non_null == 0:
            return "string"
        if self.boolean_like == self.non_null:
            return "boolean"
        if self.int_like == self.non_null:
            return "integer"
        if self.int_like + self.float_like == self.non_null and self.float_like > 0:
            return "float"
        return "string"

    def role(self, record_count: int) -> tuple[str, Optional[str]]:
        """Semantic role plus temporal format, following the rule ladder."""
        fmt = self.best_temporal_format()
        if fmt is not None and self.non_null > 0:
            return "temporal", fmt
        raw = self.raw_type()
        if raw in ("integer", "float"):
            return "numerical", None
        if raw == "boolean":
            return "categorical", None
        distinct, exact = self.distinct_estimate()
        if self.non_null > 0 and distinct / self.non_null > IDENTIFIER_DISTINCT_RATIO:
            return "identifier", None
        if distinct <= max(50, int(0.05 * record_count)):
            return "categorical", None
        return "textual", None

    def top_values(self) -> tuple:
        if self.values_overflow:
            return ()
        ranked = sorted(self.values.items(), key=lambda vc: (-vc[1], vc[0]))
        return tuple(ranked[:TOP_VALUES_LIMIT])

    def extrema(self, role: str, fmt: Optional[str]) -> tuple[Any, Any]:
        if self.non_null == 0:
            return None, None
        if role == "temporal" and fmt in self.temporal_min:
            return self.temporal_min[fmt][1], self.temporal_max[fmt][1]
        if role == "numerical":
            lo, hi = self.numeric_min, self.numeric_max
            if self.raw_type() == "float":
                return float(lo), float(hi)
            return lo, hi
        return self.lexical_min, self.lexical_max

    def snapshot(self, record_count: int) -> FieldProfile:
        role, fmt = self.role(record_count)
        distinct, exact = self.distinct_estimate()
        min_value, max_value = self.extrema(role, fmt)
        return FieldProfile(
            name=self.name,
            raw_type=self.raw_type(),
            role=role,
            null_count=self.null_count,
            distinct_count=distinct,
            distinct_exact=exact,
            min_value=min_value,
            max_value=max_value,
            top_values=self.top_values(),
            temporal_format=fmt,
        )


def _as_number(text: str):
    """Parse a numeric literal, or None. Booleans spelled 0/1 count as ints."""
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        return None
    # Reject inf/nan spellings; they are strings for profiling purposes.
    if value != value or value in (float("inf"), float("-inf")):
        return None
    return value


class TopicProfiler:
    """Accumulates records for one topic and emits metadata snapshots."""

    def __init__(self, name: str, sample_cap: int = DEFAULT_SAMPLE_CAP):
        self.name = name
        self.sample_cap = sample_cap
        self.record_count = 0
        self.states: dict[str, IncrementalFieldState] = {}
        self.field_order: list[str] = []
        self.samples: list[dict] = []

    def observe(self, record: dict) -> list[str]:
        """Fold one normalized record; returns names of newly seen fields."""
        new_fields = []
        for key in record:
            if key not in self.states:
                state = IncrementalFieldState(key)
                # Backfill nulls so new-column counts line up with the total.
                state.total = self.record_count
                self.states[key] = state
                self.field_order.append(key)
                if self.record_count:
                    new_fields.append(key)
        self.record_count += 1
        for key, state in self.states.items():
            state.update(record.get(key))
        if len(self.samples) < self.sample_cap:
            self.samples.append(dict(record))
        return new_fields

    def observe_all(self, records: Iterable[dict]) -> None:
        for record in records:
            self.observe(record)

    def snapshot(self, topic_id: str, source: SourceInfo, created_at: Optional[str] = None) -> TopicMetadata:
        fields = tuple(
            self.states[name].snapshot(self.record_count) for name in self.field_order
        )
        known = set(self.field_order)
        samples = tuple(
            {k: v for k, v in record.items() if k in known} for record in self.samples
        )
        return TopicMetadata(
            id=topic_id,
            name=self.name,
            created_at=created_at or utc_now_text(),
            record_count=self.record_count,
            fields=fields,
            sample_records=samples,
            source=source,
        )


def profile_records(
    name: str,
    records: list[dict],
    topic_id: str,
    source: SourceInfo,
    sample_cap: int = DEFAULT_SAMPLE_CAP,
    created_at: Optional[str] = None,
) -> TopicMetadata:
    """One-shot profile of a record list (identical to streaming snapshots)."""
    profiler = TopicProfiler(name, sample_cap=sample_cap)
    profiler.observe_all(records)
    return profiler.snapshot(topic_id, source, created_at=created_at)


def load_source(path: str) -> tuple[str, list[str], list[dict], SourceInfo]:
    """Load a file source; returns (topic name, field order, records, source)."""
    p = Path(path)
    if not p.exists():
        raise IngestError(f"source file not found: {path}")
    suffix = p.suffix.lower()
    if suffix in (".csv", ".tsv"):
        header, records = read_csv_records(path)
        fmt = "csv"
        kind = "csv_file"
    elif suffix in (".ndjson", ".jsonl", ".json"):
        header, records = read_ndjson_records(path)
        fmt = "ndjson"
        kind = "ndjson_file"
    else:
        raise IngestError(f"unsupported source extension {suffix!r} for {path}")
    name = p.stem
    return name, header, records, SourceInfo(kind=kind, location=str(p), format=fmt)


def ingest_file(
    path: str,
    id_source: IdSource,
    topic_name: Optional[str] = None,
    sample_cap: int = DEFAULT_SAMPLE_CAP,
) -> tuple[TopicMetadata, list[dict]]:
    """Profile a file source into TopicMetadata plus its normalized records."""
    name, _header, records, source = load_source(path)
    if topic_name:
        name = topic_name
    topic_id = id_source.next_text("topic")
    meta = profile_records(name, records, topic_id, source, sample_cap=sample_cap)
    logger.info("profiled %s: %d records, %d fields", name, meta.record_count, len(meta.fields))
    return meta, records
