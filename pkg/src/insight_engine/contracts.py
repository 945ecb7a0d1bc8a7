"""Typed artifact contracts exchanged between the engine's agents.

Every value flowing through the pipeline is one of the contract types in
this module: topic metadata, hypotheses, analytic plans, generated
artifacts, validation reports, visualization specs, and deploy manifests.
Values are immutable after construction, carry artifact ids of the form
``<prefix>_<YYYYMMDD_HHMMSS>_<dddddd>``, serialize to canonical JSON
(sorted keys, two-space indent), and expose their outbound references via
:func:`lineage_refs` so the store can verify referential integrity.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field, fields as dc_fields
from datetime import datetime, timezone
from typing import Any, Callable, Iterable, Optional

ID_PREFIXES = (
    "topic",
    "hyp",
    "plan",
    "artifact_py",
    "artifact_sql",
    "validation",
    "viz",
    "deploy",
)

ID_PATTERN = re.compile(r"^[a-z_]+_\d{8}_\d{6}_\d{6}$")

HYPOTHESIS_CATEGORIES = (
    "descriptive",
    "exploratory",
    "inferential",
    "predictive",
    "causal",
    "mechanistic",
)
NON_EXECUTABLE_CATEGORIES = ("causal", "mechanistic")
HYPOTHESIS_STATUSES = ("pending", "approved", "rejected", "auto")

FIELD_RAW_TYPES = ("string", "integer", "float", "boolean")
FIELD_ROLES = ("numerical", "categorical", "temporal", "textual", "identifier")

ARTIFACT_TYPES = ("executable_plan", "sql_text")
# Legacy artifact_type spellings accepted on read for fixture compatibility.
ARTIFACT_TYPE_ALIASES = {"python_code": "executable_plan", "flink_sql": "sql_text"}

VALIDATION_STATUSES = ("validated", "warning", "rejected")
CHECK_STATES = ("passed", "failed", "skipped")
CHECK_NAMES = ("syntax_check", "import_check", "schema_check", "runtime_check")
ISSUE_SEVERITIES = ("error", "warning", "info")

CHART_TYPES = ("bar", "line", "pie", "table")
GENERATED_FILE_TYPES = ("plan", "sql", "data", "spec", "report", "asset")

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%S.%f"

_SLUG_PATTERN = re.compile(r"^[a-z0-9][a-z0-9-]*$")


class ContractError(ValueError):
    """Raised when an artifact payload cannot be parsed or is malformed."""


class InvariantViolation(ContractError):
    """Raised when serialization is refused because an invariant fails."""


def utc_now_text() -> str:
    """Current UTC time in the canonical timestamp format."""
    return datetime.now(timezone.utc).strftime(TIMESTAMP_FORMAT)


def parse_timestamp(text: str) -> datetime:
    try:
        return datetime.strptime(text, TIMESTAMP_FORMAT)
    except ValueError:
        # Tolerate second-precision timestamps on read.
        return datetime.strptime(text, "%Y-%m-%dT%H:%M:%S")


# ---------------------------------------------------------------------------
# Artifact ids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArtifactId:
    """Structured artifact identifier: prefix, compact UTC stamp, counter."""

    prefix: str
    timestamp: str  # YYYYMMDD_HHMMSS
    disambiguator: int

    def render(self) -> str:
        return f"{self.prefix}_{self.timestamp}_{self.disambiguator:06d}"

    def __str__(self) -> str:  # pragma: no cover - convenience
        return self.render()

    @staticmethod
    def parse(text: str) -> "ArtifactId":
        if not ID_PATTERN.match(text):
            raise ContractError(f"malformed artifact id: {text!r}")
        parts = text.split("_")
        prefix = "_".join(parts[:-3])
        date_part, time_part, disamb = parts[-3], parts[-2], parts[-1]
        if prefix not in ID_PREFIXES:
            raise ContractError(f"unknown id prefix: {prefix!r}")
        return ArtifactId(prefix, f"{date_part}_{time_part}", int(disamb))


def render_id(prefix: str, clock: datetime, counter: int) -> ArtifactId:
    """Build an ArtifactId from a prefix, a UTC instant, and a counter."""
    if prefix not in ID_PREFIXES:
        raise ContractError(f"unknown id prefix: {prefix!r}")
    if not 0 <= counter <= 999999:
        raise ContractError("id counter must fit in six digits")
    stamp = clock.strftime("%Y%m%d_%H%M%S")
    return ArtifactId(prefix, stamp, counter)


def id_prefix_of(artifact_id: str) -> str:
    return ArtifactId.parse(artifact_id).prefix


class IdSource:
    """Thread-safe id generator, monotone within one engine run.

    The timestamp component never decreases; the counter is the microsecond
    component of the clock, bumped past the previous value on collision.
    """

    def __init__(self, clock: Optional[Callable[[], datetime]] = None):
        self._clock = clock or (lambda: datetime.now(timezone.utc))
        self._lock = threading.Lock()
        self._last_stamp = ""
        self._last_counter = -1

    def next(self, prefix: str) -> ArtifactId:
        with self._lock:
            now = self._clock()
            stamp = now.strftime("%Y%m%d_%H%M%S")
            counter = now.microsecond
            if stamp < self._last_stamp:
                stamp = self._last_stamp
            if stamp == self._last_stamp and counter <= self._last_counter:
                counter = self._last_counter + 1
                if counter > 999999:
                    # Roll into the next second to keep the counter at six digits.
                    bumped = datetime.strptime(stamp, "%Y%m%d_%H%M%S")
                    stamp = datetime.fromtimestamp(
                        bumped.timestamp() + 1, tz=timezone.utc
                    ).strftime("%Y%m%d_%H%M%S")
                    counter = 0
            self._last_stamp = stamp
            self._last_counter = counter
            return ArtifactId(prefix, stamp, counter)

    def next_text(self, prefix: str) -> str:
        return self.next(prefix).render()


# ---------------------------------------------------------------------------
# Plan IR
# ---------------------------------------------------------------------------

PLAN_OPERATOR_KINDS = (
    "filter",
    "derive_temporal",
    "derive_bucket",
    "group_aggregate",
    "window",
    "sort",
    "limit",
    "summary_scalar",
)

FILTER_PREDICATES = ("is_not_null", "equals", "in_set", "compare")
TEMPORAL_PARTS = ("year", "month", "day_of_week", "season", "is_weekend")
AGGREGATE_FNS = ("count", "sum", "avg", "min", "max", "distinct_count", "ratio_true")
SCALAR_FNS = AGGREGATE_FNS + ("slope", "contrast")
COMPARE_OPS = ("eq", "ne", "lt", "le", "gt", "ge")


@dataclass(frozen=True)
class FilterOp:
    field: str
    predicate: str  # one of FILTER_PREDICATES
    value: Any = None
    values: tuple = ()
    op: Optional[str] = None  # compare operator

    kind = "filter"


@dataclass(frozen=True)
class DeriveTemporalOp:
    source_field: str
    part: str  # one of TEMPORAL_PARTS
    target_field: str

    kind = "derive_temporal"


@dataclass(frozen=True)
class DeriveBucketOp:
    source_field: str
    buckets: tuple  # of (label, low, high); bounds inclusive-low, exclusive-high
    target_field: str

    kind = "derive_bucket"


@dataclass(frozen=True)
class AggregateSpec:
    fn: str
    output_column: str
    source_field: Optional[str] = None


@dataclass(frozen=True)
class GroupAggregateOp:
    result_name: str
    group_keys: tuple  # field names
    aggregations: tuple  # of AggregateSpec

    kind = "group_aggregate"


@dataclass(frozen=True)
class WindowOp:
    time_field: str
    tumbling_seconds: int

    kind = "window"


@dataclass(frozen=True)
class SortOp:
    result_name: str
    column: str
    direction: str = "asc"

    kind = "sort"


@dataclass(frozen=True)
class LimitOp:
    result_name: str
    n: int

    kind = "limit"


@dataclass(frozen=True)
class SummaryScalarOp:
    result_name: str
    key: str
    fn: str
    source: Optional[str] = None  # field name or "<result_name>.<column>"

    kind = "summary_scalar"


PlanOperator = Any  # union of the operator dataclasses above


@dataclass(frozen=True)
class PlanIR:
    """Closed, declarative operator pipeline compiled from a hypothesis."""

    operators: tuple
    temporal_format: Optional[str] = None

    def group_results(self) -> list[GroupAggregateOp]:
        return [op for op in self.operators if isinstance(op, GroupAggregateOp)]

    def scalar_results(self) -> list[SummaryScalarOp]:
        return [op for op in self.operators if isinstance(op, SummaryScalarOp)]

    def window(self) -> Optional[WindowOp]:
        for op in self.operators:
            if isinstance(op, WindowOp):
                return op
        return None

    def referenced_fields(self) -> list[str]:
        """Source-table fields the pipeline reads, in first-use order."""
        seen: dict[str, None] = {}
        derived: set[str] = set()
        for op in self.operators:
            if isinstance(op, FilterOp):
                if op.field not in derived:
                    seen.setdefault(op.field)
            elif isinstance(op, (DeriveTemporalOp, DeriveBucketOp)):
                if op.source_field not in derived:
                    seen.setdefault(op.source_field)
                derived.add(op.target_field)
            elif isinstance(op, GroupAggregateOp):
                for key in op.group_keys:
                    if key not in derived:
                        seen.setdefault(key)
                for agg in op.aggregations:
                    if agg.source_field and agg.source_field not in derived:
                        seen.setdefault(agg.source_field)
            elif isinstance(op, WindowOp):
                if op.time_field not in derived:
                    seen.setdefault(op.time_field)
            elif isinstance(op, SummaryScalarOp):
                if op.source and "." not in op.source and op.source not in derived:
                    seen.setdefault(op.source)
        return list(seen)

    def dependency_names(self) -> list[str]:
        """Operator and aggregate names used, for the artifact manifest."""
        names: dict[str, None] = {}
        for op in self.operators:
            names.setdefault(op.kind)
            if isinstance(op, GroupAggregateOp):
                for agg in op.aggregations:
                    names.setdefault(agg.fn)
            elif isinstance(op, SummaryScalarOp):
                names.setdefault(op.fn)
        return list(names)

    def to_dict(self) -> dict:
        return {
            "operators": [_operator_to_dict(op) for op in self.operators],
            "temporal_format": self.temporal_format,
        }

    @staticmethod
    def from_dict(data: dict) -> "PlanIR":
        if not isinstance(data, dict) or "operators" not in data:
            raise ContractError("plan IR payload must carry an operator list")
        ops = tuple(_operator_from_dict(o) for o in data["operators"])
        return PlanIR(operators=ops, temporal_format=data.get("temporal_format"))

    def validate(self) -> list[str]:
        problems = []
        windows = [op for op in self.operators if isinstance(op, WindowOp)]
        if len(windows) > 1:
            problems.append("at most one window operator per plan")
        group_names = [op.result_name for op in self.group_results()]
        if len(group_names) != len(set(group_names)):
            problems.append("group_aggregate result names must be unique")
        result_names = set(group_names)
        for op in self.operators:
            if isinstance(op, (SortOp, LimitOp)) and op.result_name not in result_names:
                problems.append(
                    f"{op.kind} references unknown result set {op.result_name!r}"
                )
            if isinstance(op, FilterOp):
                if op.predicate not in FILTER_PREDICATES:
                    problems.append(f"unknown filter predicate {op.predicate!r}")
                if op.predicate == "compare" and op.op not in COMPARE_OPS:
                    problems.append(f"unknown compare operator {op.op!r}")
            if isinstance(op, DeriveTemporalOp) and op.part not in TEMPORAL_PARTS:
                problems.append(f"unknown temporal part {op.part!r}")
            if isinstance(op, GroupAggregateOp):
                for agg in op.aggregations:
                    if agg.fn not in AGGREGATE_FNS:
                        problems.append(f"unknown aggregate fn {agg.fn!r}")
            if isinstance(op, SummaryScalarOp) and op.fn not in SCALAR_FNS:
                problems.append(f"unknown scalar fn {op.fn!r}")
            if isinstance(op, WindowOp) and op.tumbling_seconds <= 0:
                problems.append("window size must be positive")
        return problems

    def result_schema_names(self) -> list[str]:
        """Names of the result sets this pipeline emits, in emission order."""
        names: dict[str, None] = {}
        for op in self.operators:
            if isinstance(op, GroupAggregateOp):
                names.setdefault(op.result_name)
            elif isinstance(op, SummaryScalarOp):
                names.setdefault(op.result_name)
        return list(names)


_OPERATOR_CLASSES = {
    "filter": FilterOp,
    "derive_temporal": DeriveTemporalOp,
    "derive_bucket": DeriveBucketOp,
    "group_aggregate": GroupAggregateOp,
    "window": WindowOp,
    "sort": SortOp,
    "limit": LimitOp,
    "summary_scalar": SummaryScalarOp,
}


def _operator_to_dict(op: PlanOperator) -> dict:
    out: dict[str, Any] = {"op": op.kind}
    if isinstance(op, FilterOp):
        out.update(field=op.field, predicate=op.predicate)
        if op.value is not None:
            out["value"] = op.value
        if op.values:
            out["values"] = list(op.values)
        if op.op:
            out["cmp"] = op.op
    elif isinstance(op, DeriveTemporalOp):
        out.update(source_field=op.source_field, part=op.part, target_field=op.target_field)
    elif isinstance(op, DeriveBucketOp):
        out.update(
            source_field=op.source_field,
            buckets=[list(b) for b in op.buckets],
            target_field=op.target_field,
        )
    elif isinstance(op, GroupAggregateOp):
        out.update(
            result_name=op.result_name,
            group_keys=list(op.group_keys),
            aggregations=[
                {"fn": a.fn, "source_field": a.source_field, "output_column": a.output_column}
                for a in op.aggregations
            ],
        )
    elif isinstance(op, WindowOp):
        out.update(time_field=op.time_field, tumbling_seconds=op.tumbling_seconds)
    elif isinstance(op, SortOp):
        out.update(result_name=op.result_name, column=op.column, direction=op.direction)
    elif isinstance(op, LimitOp):
        out.update(result_name=op.result_name, n=op.n)
    elif isinstance(op, SummaryScalarOp):
        out.update(result_name=op.result_name, key=op.key, fn=op.fn, source=op.source)
    else:  # pragma: no cover - closed set
        raise ContractError(f"unknown operator {op!r}")
    return out


def _operator_from_dict(data: dict) -> PlanOperator:
    if not isinstance(data, dict):
        raise ContractError("operator node must be an object")
    kind = data.get("op")
    if kind not in _OPERATOR_CLASSES:
        raise ContractError(f"unknown operator kind {kind!r} (closed operator set)")
    if kind == "filter":
        return FilterOp(
            field=data["field"],
            predicate=data["predicate"],
            value=data.get("value"),
            values=tuple(data.get("values", ())),
            op=data.get("cmp"),
        )
    if kind == "derive_temporal":
        return DeriveTemporalOp(data["source_field"], data["part"], data["target_field"])
    if kind == "derive_bucket":
        return DeriveBucketOp(
            data["source_field"],
            tuple((b[0], b[1], b[2]) for b in data["buckets"]),
            data["target_field"],
        )
    if kind == "group_aggregate":
        return GroupAggregateOp(
            data["result_name"],
            tuple(data["group_keys"]),
            tuple(
                AggregateSpec(a["fn"], a["output_column"], a.get("source_field"))
                for a in data["aggregations"]
            ),
        )
    if kind == "window":
        return WindowOp(data["time_field"], int(data["tumbling_seconds"]))
    if kind == "sort":
        return SortOp(data["result_name"], data["column"], data.get("direction", "asc"))
    if kind == "limit":
        return LimitOp(data["result_name"], int(data["n"]))
    return SummaryScalarOp(data["result_name"], data["key"], data["fn"], data.get("source"))


# ---------------------------------------------------------------------------
# Contract types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldProfile:
    name: str
    raw_type: str
    role: str
    null_count: int
    distinct_count: int
    distinct_exact: bool = True
    min_value: Any = None
    max_value: Any = None
    top_values: tuple = ()  # of (value, count), count desc then value asc
    temporal_format: Optional[str] = None

    def validate(self) -> list[str]:
        problems = []
        if self.raw_type not in FIELD_RAW_TYPES:
            problems.append(f"field {self.name!r}: unknown raw_type {self.raw_type!r}")
        if self.role not in FIELD_ROLES:
            problems.append(f"field {self.name!r}: unknown role {self.role!r}")
        if self.null_count < 0 or self.distinct_count < 0:
            problems.append(f"field {self.name!r}: counts must be non-negative")
        if self.role == "temporal" and not self.temporal_format:
            problems.append(
                f"field {self.name!r}: temporal role requires temporal_format"
            )
        if len(self.top_values) > 10:
            problems.append(f"field {self.name!r}: top_values capped at 10")
        ordered = sorted(self.top_values, key=lambda vc: (-vc[1], str(vc[0])))
        if list(self.top_values) != ordered:
            problems.append(
                f"field {self.name!r}: top_values must sort by count desc, value asc"
            )
        return problems

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "raw_type": self.raw_type,
            "role": self.role,
            "null_count": self.null_count,
            "distinct_count": self.distinct_count,
            "distinct_exact": self.distinct_exact,
            "min_value": self.min_value,
            "max_value": self.max_value,
            "top_values": [[v, c] for v, c in self.top_values],
            "temporal_format": self.temporal_format,
        }

    @staticmethod
    def from_dict(data: dict) -> "FieldProfile":
        return FieldProfile(
            name=data["name"],
            raw_type=data["raw_type"],
            role=data["role"],
            null_count=int(data["null_count"]),
            distinct_count=int(data["distinct_count"]),
            distinct_exact=bool(data.get("distinct_exact", True)),
            min_value=data.get("min_value"),
            max_value=data.get("max_value"),
            top_values=tuple((v, int(c)) for v, c in data.get("top_values", ())),
            temporal_format=data.get("temporal_format"),
        )


@dataclass(frozen=True)
class SourceInfo:
    kind: str  # csv_file | ndjson_file | inline_records | replay_stream
    location: str
    format: str = ""  # free-form tag, e.g. "csv" / "ndjson"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "location": self.location, "format": self.format}

    @staticmethod
    def from_dict(data: dict) -> "SourceInfo":
        return SourceInfo(data["kind"], data["location"], data.get("format", ""))


@dataclass(frozen=True)
class TopicMetadata:
    id: str
    name: str
    created_at: str
    record_count: int
    fields: tuple  # of FieldProfile
    sample_records: tuple  # of dict[str, str | None]
    source: SourceInfo
    annotations: str = ""

    def field_map(self) -> dict[str, FieldProfile]:
        return {f.name: f for f in self.fields}

    def validate(self) -> list[str]:
        problems = []
        if self.record_count < 0:
            problems.append("record_count must be non-negative")
        if self.record_count < len(self.sample_records):
            problems.append("record_count must be >= number of sample records")
        names = [f.name for f in self.fields]
        if len(names) != len(set(names)):
            problems.append("field names must be unique")
        known = set(names)
        for record in self.sample_records:
            extra = set(record) - known
            if extra:
                problems.append(
                    f"sample record key(s) {sorted(extra)} missing from fields"
                )
                break
        for f in self.fields:
            problems.extend(f.validate())
            if f.distinct_count > self.record_count:
                problems.append(
                    f"field {f.name!r}: distinct_count must be <= record_count"
                )
        return problems

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "created_at": self.created_at,
            "record_count": self.record_count,
            "fields": [f.to_dict() for f in self.fields],
            "sample_records": [dict(r) for r in self.sample_records],
            "source": self.source.to_dict(),
            "annotations": self.annotations,
        }

    @staticmethod
    def from_dict(data: dict) -> "TopicMetadata":
        return TopicMetadata(
            id=data["id"],
            name=data["name"],
            created_at=data["created_at"],
            record_count=int(data["record_count"]),
            fields=tuple(FieldProfile.from_dict(f) for f in data["fields"]),
            sample_records=tuple(dict(r) for r in data.get("sample_records", ())),
            source=SourceInfo.from_dict(data["source"]),
            annotations=data.get("annotations", ""),
        )


@dataclass(frozen=True)
class Hypothesis:
    id: str
    created_at: str
    source_topic_id: str
    category: str
    question: str
    rationale: str
    expected_insight: str
    priority: int
    required_fields: tuple = ()
    executable: bool = True
    status: str = "pending"

    def validate(self) -> list[str]:
        problems = []
        if self.category not in HYPOTHESIS_CATEGORIES:
            problems.append(f"unknown hypothesis category {self.category!r}")
        if not 1 <= self.priority <= 10:
            problems.append("priority must be within [1, 10]")
        if self.category in NON_EXECUTABLE_CATEGORIES and self.executable:
            problems.append(
                f"{self.category} hypotheses are not executable (executable must be false)"
            )
        if self.status not in HYPOTHESIS_STATUSES:
            problems.append(f"unknown hypothesis status {self.status!r}")
        return problems

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "created_at": self.created_at,
            "source_topic_id": self.source_topic_id,
            "category": self.category,
            "question": self.question,
            "rationale": self.rationale,
            "expected_insight": self.expected_insight,
            "priority": self.priority,
            "required_fields": list(self.required_fields),
            "executable": self.executable,
            "status": self.status,
        }

    @staticmethod
    def from_dict(data: dict) -> "Hypothesis":
        category = data["category"]
        executable = data.get("executable")
        if executable is None:
            executable = category not in NON_EXECUTABLE_CATEGORIES
        return Hypothesis(
            id=data["id"],
            created_at=data["created_at"],
            source_topic_id=data["source_topic_id"],
            category=category,
            question=data["question"],
            rationale=data.get("rationale", ""),
            expected_insight=data.get("expected_insight", ""),
            priority=int(data["priority"]),
            required_fields=tuple(data.get("required_fields", ())),
            executable=bool(executable),
            status=data.get("status", "pending"),
        )


@dataclass(frozen=True)
class ResultShape:
    """Shape descriptor for one named result set a plan emits."""

    kind: str  # "table" | "scalar_summary"
    columns: tuple = ()  # table column names, in order
    keys: tuple = ()  # scalar summary keys
    title: str = ""  # display hint for dashboards

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "table":
            out["columns"] = list(self.columns)
        else:
            out["keys"] = list(self.keys)
        if self.title:
            out["title"] = self.title
        return out

    @staticmethod
    def from_dict(data: dict) -> "ResultShape":
        return ResultShape(
            kind=data["kind"],
            columns=tuple(data.get("columns", ())),
            keys=tuple(data.get("keys", ())),
            title=data.get("title", ""),
        )


@dataclass(frozen=True)
class AnalyticPlan:
    id: str
    hypothesis_id: str
    approach: str
    steps: tuple  # human-readable step strings
    pipeline: PlanIR
    output_schema: dict  # result name -> ResultShape
    assumptions: tuple = ()
    created_at: str = ""

    def validate(self) -> list[str]:
        problems = self.pipeline.validate()
        if not self.output_schema:
            problems.append("output_schema must not be empty")
        emitted = self.pipeline.result_schema_names()
        declared = list(self.output_schema)
        if sorted(emitted) != sorted(declared):
            problems.append(
                "output_schema must name exactly the result sets the pipeline emits "
                f"(declared {sorted(declared)}, emitted {sorted(emitted)})"
            )
        for shape in self.output_schema.values():
            if shape.kind not in ("table", "scalar_summary"):
                problems.append(f"unknown output shape kind {shape.kind!r}")
        return problems

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "hypothesis_id": self.hypothesis_id,
            "approach": self.approach,
            "steps": list(self.steps),
            "pipeline": self.pipeline.to_dict(),
            "output_schema": {k: v.to_dict() for k, v in self.output_schema.items()},
            "assumptions": list(self.assumptions),
            "created_at": self.created_at,
        }

    @staticmethod
    def from_dict(data: dict) -> "AnalyticPlan":
        return AnalyticPlan(
            id=data["id"],
            hypothesis_id=data["hypothesis_id"],
            approach=data["approach"],
            steps=tuple(data["steps"]),
            pipeline=PlanIR.from_dict(data["pipeline"]),
            output_schema={
                k: ResultShape.from_dict(v) for k, v in data["output_schema"].items()
            },
            assumptions=tuple(data.get("assumptions", ())),
            created_at=data.get("created_at", ""),
        )


@dataclass(frozen=True)
class Generation:
    mode: str = "deterministic"  # deterministic | external
    attempt: int = 0

    def to_dict(self) -> dict:
        return {"mode": self.mode, "attempt": self.attempt}

    @staticmethod
    def from_dict(data: dict) -> "Generation":
        return Generation(data.get("mode", "deterministic"), int(data.get("attempt", 0)))


@dataclass(frozen=True)
class GeneratedArtifact:
    id: str
    hypothesis_id: str
    analytic_plan_id: str
    artifact_type: str  # executable_plan | sql_text
    language: str  # "plan-ir" | "sql"
    content: str
    dependencies: tuple = ()
    generation: Generation = field(default_factory=Generation)
    created_at: str = ""

    def validate(self) -> list[str]:
        problems = []
        if self.artifact_type not in ARTIFACT_TYPES:
            problems.append(f"unknown artifact_type {self.artifact_type!r}")
        prefix = id_prefix_of(self.id) if ID_PATTERN.match(self.id) else ""
        expected = "artifact_py" if self.artifact_type == "executable_plan" else "artifact_sql"
        if prefix and prefix != expected:
            problems.append(
                f"artifact id prefix {prefix!r} does not match artifact_type "
                f"{self.artifact_type!r}"
            )
        if not self.content:
            problems.append("artifact content must not be empty")
        if self.generation.mode not in ("deterministic", "external"):
            problems.append(f"unknown generation mode {self.generation.mode!r}")
        if self.generation.attempt < 0:
            problems.append("generation attempt must be non-negative")
        return problems

    def plan_ir(self) -> PlanIR:
        if self.artifact_type != "executable_plan":
            raise ContractError("only executable_plan artifacts carry plan IR content")
        return PlanIR.from_dict(json.loads(self.content))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "hypothesis_id": self.hypothesis_id,
            "analytic_plan_id": self.analytic_plan_id,
            "artifact_type": self.artifact_type,
            "language": self.language,
            "content": self.content,
            "dependencies": list(self.dependencies),
            "generation": self.generation.to_dict(),
            "created_at": self.created_at,
        }

    @staticmethod
    def from_dict(data: dict) -> "GeneratedArtifact":
        artifact_type = data["artifact_type"]
        artifact_type = ARTIFACT_TYPE_ALIASES.get(artifact_type, artifact_type)
        return GeneratedArtifact(
            id=data["id"],
            hypothesis_id=data["hypothesis_id"],
            analytic_plan_id=data["analytic_plan_id"],
            artifact_type=artifact_type,
            language=data.get("language", "plan-ir" if artifact_type == "executable_plan" else "sql"),
            content=data.get("content", ""),
            dependencies=tuple(data.get("dependencies", ())),
            generation=Generation.from_dict(data.get("generation", {})),
            created_at=data.get("created_at", ""),
        )


@dataclass(frozen=True)
class Issue:
    severity: str  # error | warning | info
    code: str
    message: str
    location: Optional[str] = None

    def to_dict(self) -> dict:
        out = {"severity": self.severity, "code": self.code, "message": self.message}
        if self.location is not None:
            out["location"] = self.location
        return out

    @staticmethod
    def from_dict(data: dict) -> "Issue":
        return Issue(data["severity"], data["code"], data["message"], data.get("location"))


@dataclass(frozen=True)
class ValidationReport:
    id: str
    artifact_id: str
    status: str  # validated | warning | rejected
    syntax_check: str = "skipped"
    import_check: str = "skipped"
    schema_check: str = "skipped"
    runtime_check: str = "skipped"
    issues: tuple = ()  # of Issue
    feedback: str = ""
    created_at: str = ""

    def checks(self) -> dict[str, str]:
        return {
            "syntax_check": self.syntax_check,
            "import_check": self.import_check,
            "schema_check": self.schema_check,
            "runtime_check": self.runtime_check,
        }

    def validate(self) -> list[str]:
        problems = []
        if self.status not in VALIDATION_STATUSES:
            problems.append(f"unknown validation status {self.status!r}")
        for name, state in self.checks().items():
            if state not in CHECK_STATES:
                problems.append(f"{name} must be one of {CHECK_STATES}")
        for issue in self.issues:
            if issue.severity not in ISSUE_SEVERITIES:
                problems.append(f"unknown issue severity {issue.severity!r}")
        has_error = any(i.severity == "error" for i in self.issues)
        failed = [n for n, s in self.checks().items() if s == "failed"]
        if (self.status == "rejected") != has_error or bool(failed) != has_error:
            problems.append(
                "status=rejected, error issues, and failed checks must all coincide"
            )
        if self.status == "validated" and (
            has_error or failed or any(i.severity == "warning" for i in self.issues)
        ):
            problems.append("validated reports must carry no errors, warnings, or failed checks")
        for name in failed:
            short = name.split("_")[0]
            if not any(
                i.severity == "error" and i.code.startswith(short + ".") for i in self.issues
            ):
                problems.append(
                    f"failed check {name} requires an error issue whose code names it"
                )
        return problems

    def to_dict(self, compat_skipped_as_false: bool = False) -> dict:
        def encode(state: str):
            if state == "passed":
                return True
            if state == "failed":
                return False
            return False if compat_skipped_as_false else "skipped"

        return {
            "id": self.id,
            "artifact_id": self.artifact_id,
            "status": self.status,
            "syntax_check": encode(self.syntax_check),
            "import_check": encode(self.import_check),
            "schema_check": encode(self.schema_check),
            "runtime_check": encode(self.runtime_check),
            "issues": [i.to_dict() for i in self.issues],
            "feedback": self.feedback,
            "created_at": self.created_at,
        }

    @staticmethod
    def from_dict(data: dict) -> "ValidationReport":
        issues = tuple(Issue.from_dict(i) for i in data.get("issues", ()))

        def decode(name: str):
            raw = data.get(name, "skipped")
            if raw is True:
                return "passed"
            if raw == "skipped" or raw is None:
                return "skipped"
            if raw is False:
                # Legacy payloads encode both failed and skipped as false; a
                # genuine failure always carries an error issue naming the check.
                short = name.split("_")[0]
                named = any(
                    i.severity == "error" and i.code.startswith(short + ".")
                    for i in issues
                )
                return "failed" if named else "skipped"
            if raw in CHECK_STATES:
                return raw
            raise ContractError(f"cannot decode check state {raw!r} for {name}")

        return ValidationReport(
            id=data["id"],
            artifact_id=data["artifact_id"],
            status=str(data["status"]).lower(),
            syntax_check=decode("syntax_check"),
            import_check=decode("import_check"),
            schema_check=decode("schema_check"),
            runtime_check=decode("runtime_check"),
            issues=issues,
            feedback=data.get("feedback", ""),
            created_at=data.get("created_at", ""),
        )


@dataclass(frozen=True)
class KpiCard:
    id: str
    title: str
    value_field: str  # artifacts.<artifact_id>.<result>.<key>

    def to_dict(self) -> dict:
        return {"id": self.id, "title": self.title, "value_field": self.value_field}

    @staticmethod
    def from_dict(data: dict) -> "KpiCard":
        return KpiCard(data["id"], data["title"], data["value_field"])


@dataclass(frozen=True)
class ChartSpec:
    id: str
    title: str
    chart_type: str  # bar | line | pie | table
    data_source: str  # artifacts.<artifact_id>.<result>
    x_field: str
    y_field: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "chart_type": self.chart_type,
            "data_source": self.data_source,
            "x_field": self.x_field,
            "y_field": self.y_field,
        }

    @staticmethod
    def from_dict(data: dict) -> "ChartSpec":
        return ChartSpec(
            data["id"],
            data["title"],
            data["chart_type"],
            data["data_source"],
            data.get("x_field", ""),
            data.get("y_field", ""),
        )


@dataclass(frozen=True)
class LayoutSection:
    hypothesis_id: str
    title: str
    element_ids: tuple  # kpi and chart ids, kpis first

    def to_dict(self) -> dict:
        return {
            "hypothesis_id": self.hypothesis_id,
            "title": self.title,
            "element_ids": list(self.element_ids),
        }

    @staticmethod
    def from_dict(data: dict) -> "LayoutSection":
        return LayoutSection(data["hypothesis_id"], data["title"], tuple(data["element_ids"]))


def split_data_path(path: str) -> tuple[str, ...]:
    """Split a dotted dashboard data path into its segments.

    Paths look like ``artifacts.<artifact_id>.<result>[.<key>]``; artifact
    ids never contain dots, so a plain split is unambiguous.
    """
    parts = tuple(path.split("."))
    if len(parts) < 3 or parts[0] != "artifacts":
        raise ContractError(f"malformed data path {path!r}")
    return parts


@dataclass(frozen=True)
class Dashboard:
    kpi_cards: tuple = ()  # of KpiCard
    charts: tuple = ()  # of ChartSpec
    layout: tuple = ()  # of LayoutSection

    def to_dict(self) -> dict:
        return {
            "kpi_cards": [k.to_dict() for k in self.kpi_cards],
            "charts": [c.to_dict() for c in self.charts],
            "layout": [s.to_dict() for s in self.layout],
        }

    @staticmethod
    def from_dict(data: dict) -> "Dashboard":
        return Dashboard(
            kpi_cards=tuple(KpiCard.from_dict(k) for k in data.get("kpi_cards", ())),
            charts=tuple(ChartSpec.from_dict(c) for c in data.get("charts", ())),
            layout=tuple(LayoutSection.from_dict(s) for s in data.get("layout", ())),
        )


@dataclass(frozen=True)
class VisualizationSpec:
    id: str
    hypothesis_ids: tuple
    artifact_ids: tuple
    dashboard: Dashboard
    rules_version: str = "shape-rules/1"
    created_at: str = ""

    def validate(self) -> list[str]:
        problems = []
        ids = [k.id for k in self.dashboard.kpi_cards] + [
            c.id for c in self.dashboard.charts
        ]
        if len(ids) != len(set(ids)):
            problems.append("chart and KPI ids must be unique within the spec")
        for chart in self.dashboard.charts:
            if chart.chart_type not in CHART_TYPES:
                problems.append(f"unknown chart_type {chart.chart_type!r}")
        known = set(self.artifact_ids)
        paths = [k.value_field for k in self.dashboard.kpi_cards] + [
            c.data_source for c in self.dashboard.charts
        ]
        for path in paths:
            try:
                parts = split_data_path(path)
            except ContractError as exc:
                problems.append(str(exc))
                continue
            if parts[1] not in known:
                problems.append(
                    f"data path {path!r} references artifact outside artifact_ids"
                )
        return problems

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "hypothesis_ids": list(self.hypothesis_ids),
            "artifact_ids": list(self.artifact_ids),
            "dashboard": self.dashboard.to_dict(),
            "rules_version": self.rules_version,
            "created_at": self.created_at,
        }

    @staticmethod
    def from_dict(data: dict) -> "VisualizationSpec":
        return VisualizationSpec(
            id=data["id"],
            hypothesis_ids=tuple(data["hypothesis_ids"]),
            artifact_ids=tuple(data["artifact_ids"]),
            dashboard=Dashboard.from_dict(data["dashboard"]),
            rules_version=data.get("rules_version", "shape-rules/1"),
            created_at=data.get("created_at", ""),
        )


@dataclass(frozen=True)
class GeneratedFile:
    path: str
    type: str  # plan | sql | data | spec | report | asset
    description: str

    def to_dict(self) -> dict:
        return {"path": self.path, "type": self.type, "description": self.description}

    @staticmethod
    def from_dict(data: dict) -> "GeneratedFile":
        return GeneratedFile(data["path"], data["type"], data.get("description", ""))


@dataclass(frozen=True)
class DeployManifest:
    id: str
    source_topic_id: str
    hypothesis_ids: tuple
    artifact_ids: tuple
    validation_ids: tuple
    visualization_spec_id: str
    app_name: str
    generated_files: tuple = ()  # of GeneratedFile
    config: dict = field(default_factory=dict)
    created_at: str = ""

    def validate(self) -> list[str]:
        problems = []
        if not _SLUG_PATTERN.match(self.app_name):
            problems.append(f"app_name must be a slug, got {self.app_name!r}")
        for gf in self.generated_files:
            if gf.type not in GENERATED_FILE_TYPES:
                problems.append(f"unknown generated file type {gf.type!r}")
        return problems

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source_topic_id": self.source_topic_id,
            "hypothesis_ids": list(self.hypothesis_ids),
            "artifact_ids": list(self.artifact_ids),
            "validation_ids": list(self.validation_ids),
            "visualization_spec_id": self.visualization_spec_id,
            "app_name": self.app_name,
            "generated_files": [g.to_dict() for g in self.generated_files],
            "config": dict(self.config),
            "created_at": self.created_at,
        }

    @staticmethod
    def from_dict(data: dict) -> "DeployManifest":
        return DeployManifest(
            id=data["id"],
            source_topic_id=data["source_topic_id"],
            hypothesis_ids=tuple(data["hypothesis_ids"]),
            artifact_ids=tuple(data["artifact_ids"]),
            validation_ids=tuple(data.get("validation_ids", ())),
            visualization_spec_id=data["visualization_spec_id"],
            app_name=data["app_name"],
            generated_files=tuple(
                GeneratedFile.from_dict(g) for g in data.get("generated_files", ())
            ),
            config=dict(data.get("config", {})),
            created_at=data.get("created_at", ""),
        )


Artifact = Any  # union of the contract types above

_TYPE_BY_PREFIX = {
    "topic": TopicMetadata,
    "hyp": Hypothesis,
    "plan": AnalyticPlan,
    "artifact_py": GeneratedArtifact,
    "artifact_sql": GeneratedArtifact,
    "validation": ValidationReport,
    "viz": VisualizationSpec,
    "deploy": DeployManifest,
}

ARTIFACT_TYPE_TAGS = {
    TopicMetadata: "topic_metadata",
    Hypothesis: "hypothesis",
    AnalyticPlan: "analytic_plan",
    GeneratedArtifact: "generated_artifact",
    ValidationReport: "validation_report",
    VisualizationSpec: "visualization_spec",
    DeployManifest: "deploy_manifest",
}


def artifact_type_tag(artifact: Artifact) -> str:
    return ARTIFACT_TYPE_TAGS[type(artifact)]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def canonical_json(payload: dict) -> str:
    """Render a payload dict in the engine's canonical text form."""
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def serialize_artifact(artifact: Artifact, compat_skipped_as_false: bool = False) -> str:
    """Serialize any contract value, refusing invariant violations."""
    problems = artifact.validate()
    if problems:
        raise InvariantViolation(
            f"refusing to serialize {type(artifact).__name__}: " + "; ".join(problems)
        )
    if isinstance(artifact, ValidationReport):
        payload = artifact.to_dict(compat_skipped_as_false=compat_skipped_as_false)
    else:
        payload = artifact.to_dict()
    return canonical_json(payload)


def deserialize_artifact(text_or_dict: Any) -> Artifact:
    """Parse an artifact from canonical JSON text or an already-parsed dict.

    The concrete type is inferred from the id prefix.
    """
    if isinstance(text_or_dict, (str, bytes)):
        try:
            data = json.loads(text_or_dict)
        except json.JSONDecodeError as exc:
            raise ContractError(f"artifact payload is not valid JSON: {exc}") from exc
    else:
        data = text_or_dict
    if not isinstance(data, dict) or "id" not in data:
        raise ContractError("artifact payload must be an object with an id")
    prefix = id_prefix_of(data["id"])
    cls = _TYPE_BY_PREFIX[prefix]
    return cls.from_dict(data)


# ---------------------------------------------------------------------------
# Lineage
# ---------------------------------------------------------------------------


def lineage_refs(artifact: Artifact) -> list[tuple[str, str]]:
    """All outbound artifact references, with role labels.

    TopicMetadata is the lineage root and returns no references.
    """
    if isinstance(artifact, TopicMetadata):
        return []
    if isinstance(artifact, Hypothesis):
        return [("source_topic", artifact.source_topic_id)]
    if isinstance(artifact, AnalyticPlan):
        return [("hypothesis", artifact.hypothesis_id)]
    if isinstance(artifact, GeneratedArtifact):
        return [
            ("hypothesis", artifact.hypothesis_id),
            ("plan", artifact.analytic_plan_id),
        ]
    if isinstance(artifact, ValidationReport):
        return [("artifact", artifact.artifact_id)]
    if isinstance(artifact, VisualizationSpec):
        return [("hypothesis", h) for h in artifact.hypothesis_ids] + [
            ("artifact", a) for a in artifact.artifact_ids
        ]
    if isinstance(artifact, DeployManifest):
        refs = [("source_topic", artifact.source_topic_id)]
        refs += [("hypothesis", h) for h in artifact.hypothesis_ids]
        refs += [("artifact", a) for a in artifact.artifact_ids]
        refs += [("validation", v) for v in artifact.validation_ids]
        refs.append(("viz", artifact.visualization_spec_id))
        return refs
    raise ContractError(f"not a contract type: {type(artifact).__name__}")
