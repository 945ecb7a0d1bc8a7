"""Plan execution over record batches and windowed streams.

Evaluates PlanIR pipelines and produces the standardized result envelope:
named result sets that are either tables (columns + rows) or scalar
summary maps. The semantics deliberately mirror the SQL rendering of the
same plan so the two routes stay equivalent: unparseable temporal values
derive to NULL (season falls through to 'Fall' exactly like the CASE's
ELSE branch), NULL group keys are kept, and aggregates skip NULLs.

Batch mode ignores Window operators (a global computation over the
batch). Stream mode assigns records to tumbling windows by event time,
drops late arrivals behind the watermark with a counted issue, and emits
one envelope per closed window; count/sum results merge across windows
to the batch result, which is the property tests rely on.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Iterable, Optional

from .contracts import (
    AnalyticPlan,
    DeriveBucketOp,
    DeriveTemporalOp,
    FilterOp,
    GroupAggregateOp,
    LimitOp,
    PlanIR,
    SortOp,
    SummaryScalarOp,
    TIMESTAMP_FORMAT,
    WindowOp,
    utc_now_text,
)
from .ingest import parse_temporal

# Token sets for ratio_true, matching the rendered SQL's CASE ... IN lists.
# Values outside both sets are skipped by both execution routes.
RATIO_TRUE_TOKENS = ("true", "True", "TRUE", "yes", "Yes", "YES", "1")
RATIO_FALSE_TOKENS = ("false", "False", "FALSE", "no", "No", "NO", "0")

DEFAULT_TIMEOUT_SECONDS = 5.0
DEFAULT_MAX_ROW_TOUCHES = 100_000


class ExecutionError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class ResultEnvelope:
    artifact_id: str
    produced_at: str
    results: dict  # result name -> table dict or scalar map
    window: Optional[tuple] = None  # (start, end) timestamps for stream mode
    issues: tuple = ()  # of dicts {severity, code, message}

    def to_dict(self) -> dict:
        out = {
            "artifact_id": self.artifact_id,
            "produced_at": self.produced_at,
            "results": self.results,
        }
        if self.window is not None:
            out["window"] = [self.window[0], self.window[1]]
        if self.issues:
            out["issues"] = [dict(i) for i in self.issues]
        return out


# ---------------------------------------------------------------------------
# Temporal derivation (kept in lockstep with the SQL CASE/EXTRACT rendering)
# ---------------------------------------------------------------------------


def season_of_month(month: Optional[int]) -> str:
    """Month to season. None falls through to 'Fall' like the CASE's ELSE."""
    if month in (12, 1, 2):
        return "Winter"
    if month in (3, 4, 5):
        return "Spring"
    if month in (6, 7, 8):
        return "Summer"
    return "Fall"


def weekend_label(day_of_week: Optional[int]) -> Optional[str]:
    if day_of_week is None:
        return None
    return "Weekend" if day_of_week in (5, 6) else "Weekday"


def derive_temporal_value(raw: Optional[str], part: str, temporal_format: str) -> Any:
    parsed = parse_temporal(raw, temporal_format) if raw is not None else None
    if part == "year":
        return parsed.year if parsed else None
    if part == "month":
        return parsed.month if parsed else None
    if part == "day_of_week":
        return parsed.weekday() if parsed else None
    if part == "season":
        return season_of_month(parsed.month if parsed else None)
    if part == "is_weekend":
        return weekend_label(parsed.weekday() if parsed else None)
    raise ExecutionError("bad_plan", f"unknown temporal part {part!r}")


def _as_number(value: Any) -> Optional[Any]:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return value
    if not isinstance(value, str):
        return None
    try:
        return int(value)
    except ValueError:
        pass
    try:
        parsed = float(value)
    except ValueError:
        return None
    if parsed != parsed or parsed in (float("inf"), float("-inf")):
        return None
    return parsed


def _sort_key(value: Any):
    # NULL first, then numbers numerically, then strings lexically.
    if value is None:
        return (0, 0.0, "")
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (1, float(value), "")
    return (2, 0.0, str(value))


class _DescKey:
    __slots__ = ("key",)

    def __init__(self, key):
        self.key = key

    def __lt__(self, other):
        return other.key < self.key

    def __eq__(self, other):
        return other.key == self.key


# ---------------------------------------------------------------------------
# Batch execution
# ---------------------------------------------------------------------------


class _Limits:
    def __init__(self, timeout: Optional[float] = None, max_rows: Optional[int] = None):
        self.deadline = time.monotonic() + timeout if timeout else None
        self.max_rows = max_rows
        self.touches = 0

    def spend(self, count: int) -> None:
        self.touches += count
        if self.max_rows is not None and self.touches > self.max_rows:
            raise ExecutionError(
                "resource_limit", f"row-touch budget {self.max_rows} exceeded"
            )
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise ExecutionError("resource_limit", "execution timed out")


def _fetch(record: dict, field_name: str) -> Any:
    if field_name not in record:
        raise ExecutionError(
            "missing_column", f"column {field_name!r} missing from records"
        )
    return record[field_name]


def _apply_filter(op: FilterOp, rows: list[dict]) -> list[dict]:
    def keep(record: dict) -> bool:
        value = _fetch(record, op.field)
        if op.predicate == "is_not_null":
            return value is not None and value != ""
        if op.predicate == "equals":
            return _filter_compare("eq", value, op.value)
        if op.predicate == "in_set":
            return any(_filter_compare("eq", value, item) for item in op.values)
        if op.predicate == "compare":
            return _filter_compare(op.op, value, op.value)
        raise ExecutionError("bad_plan", f"unknown predicate {op.predicate!r}")

    return [r for r in rows if keep(r)]


def _filter_compare(op: Optional[str], left: Any, right: Any) -> bool:
    if left is None or right is None:
        return False
    if isinstance(right, (int, float)) and not isinstance(right, bool):
        left_num = _as_number(left)
        if left_num is None:
            return op == "ne"
        left, right = left_num, right
    else:
        left, right = str(left), str(right)
    if op == "eq":
        return left == right
    if op == "ne":
        return left != right
    if op == "lt":
        return left < right
    if op == "le":
        return left <= right
    if op == "gt":
        return left > right
    if op == "ge":
        return left >= right
    raise ExecutionError("bad_plan", f"unknown compare op {op!r}")


def _aggregate(fn: str, source_values: list, row_count: int, issues: list, context: str):
    if fn == "count":
        return row_count
    values = [v for v in source_values if v is not None]
    if fn == "distinct_count":
        return len(set(values))
    if fn == "ratio_true":
        mapped = []
        for v in values:
            if v in RATIO_TRUE_TOKENS:
                mapped.append(1.0)
            elif v in RATIO_FALSE_TOKENS:
                mapped.append(0.0)
        if not mapped:
            issues.append(
                {
                    "severity": "info",
                    "code": "ratio.empty_group",
                    "message": f"no boolean-coded values in {context}; ratio omitted",
                }
            )
            return None
        return sum(mapped) / len(mapped)
    numbers = [n for n in (_as_number(v) for v in values) if n is not None]
    if not numbers:
        return None
    if fn == "sum":
        return sum(numbers)
    if fn == "avg":
        return sum(numbers) / len(numbers)
    if fn == "min":
        return min(numbers)
    if fn == "max":
        return max(numbers)
    raise ExecutionError("bad_plan", f"unknown aggregate fn {fn!r}")


def _apply_group(op: GroupAggregateOp, rows: list[dict], issues: list) -> dict:
    groups: dict[tuple, list[dict]] = {}
    for record in rows:
        key = tuple(_fetch(record, k) for k in op.group_keys)
        groups.setdefault(key, []).append(record)
    ordered_keys = sorted(groups, key=lambda key: tuple(_sort_key(v) for v in key))
    columns = list(op.group_keys) + [agg.output_column for agg in op.aggregations]
    out_rows = []
    for key in ordered_keys:
        members = groups[key]
        cells = list(key)
        for agg in op.aggregations:
            source_values = (
                [_fetch(r, agg.source_field) for r in members] if agg.source_field else []
            )
            cells.append(
                _aggregate(
                    agg.fn,
                    source_values,
                    len(members),
                    issues,
                    context=f"{op.result_name} group {key!r}",
                )
            )
        out_rows.append(cells)
    return {"columns": columns, "rows": out_rows}


def _scalar_from_table(op: SummaryScalarOp, table: dict, issues: list) -> Any:
    result_name, column = op.source.split(".", 1)
    if column not in table["columns"]:
        raise ExecutionError(
            "missing_column", f"column {column!r} not in result {result_name!r}"
        )
    index = table["columns"].index(column)
    values = [row[index] for row in table["rows"]]
    if op.fn == "slope":
        # Least-squares slope over row index; rows with a NULL first key are
        # excluded since they have no position on the axis.
        pairs = [
            row for row in table["rows"] if row[0] is not None and row[index] is not None
        ]
        ys = [_as_number(row[index]) for row in pairs]
        ys = [y for y in ys if y is not None]
        if len(ys) < 2:
            return None
        xs = list(range(len(ys)))
        try:
            return statistics.linear_regression(xs, ys).slope
        except statistics.StatisticsError:
            return None
    if op.fn == "contrast":
        numbers = [n for n in (_as_number(v) for v in values) if n is not None]
        if not numbers:
            return None
        return max(numbers) - min(numbers)
    return _aggregate(op.fn, values, len(values), issues, context=op.result_name)


def execute_batch(
    plan: PlanIR,
    records: Iterable[dict],
    artifact_id: str = "",
    timeout: Optional[float] = None,
    max_rows: Optional[int] = None,
) -> ResultEnvelope:
    """Evaluate the pipeline over a record batch."""
    limits = _Limits(timeout, max_rows)
    rows = [dict(r) for r in records]
    limits.spend(len(rows))
    issues: list = []
    results: dict[str, Any] = {}

    for op in plan.operators:
        limits.spend(len(rows))
        if isinstance(op, FilterOp):
            rows = _apply_filter(op, rows)
        elif isinstance(op, DeriveTemporalOp):
            if not plan.temporal_format:
                raise ExecutionError("bad_plan", "derive_temporal requires a temporal format")
            for record in rows:
                raw = _fetch(record, op.source_field)
                record[op.target_field] = derive_temporal_value(
                    raw, op.part, plan.temporal_format
                )
        elif isinstance(op, DeriveBucketOp):
            for record in rows:
                number = _as_number(_fetch(record, op.source_field))
                label = None
                if number is not None:
                    for bucket_label, low, high in op.buckets:
                        if low <= number < high:
                            label = bucket_label
                            break
                record[op.target_field] = label
        elif isinstance(op, GroupAggregateOp):
            results[op.result_name] = _apply_group(op, rows, issues)
        elif isinstance(op, WindowOp):
            pass  # batch mode: the whole batch is the window
        elif isinstance(op, SortOp):
            table = results.get(op.result_name)
            if table is None or op.column not in table["columns"]:
                raise ExecutionError(
                    "missing_column",
                    f"sort target {op.result_name}.{op.column} not available",
                )
            index = table["columns"].index(op.column)
            if op.direction == "desc":
                table["rows"].sort(key=lambda row: _DescKey(_sort_key(row[index])))
            else:
                table["rows"].sort(key=lambda row: _sort_key(row[index]))
        elif isinstance(op, LimitOp):
            table = results.get(op.result_name)
            if table is None:
                raise ExecutionError(
                    "missing_column", f"limit target {op.result_name} not available"
                )
            table["rows"] = table["rows"][: op.n]
        elif isinstance(op, SummaryScalarOp):
            scalars = results.setdefault(op.result_name, {})
            if not isinstance(scalars, dict) or "columns" in scalars:
                raise ExecutionError(
                    "bad_plan", f"result {op.result_name!r} is both table and scalars"
                )
            if op.source and "." in op.source:
                referenced = op.source.split(".", 1)[0]
                if referenced not in results:
                    raise ExecutionError(
                        "missing_column", f"result {referenced!r} not available"
                    )
                scalars[op.key] = _scalar_from_table(op, results[referenced], issues)
            elif op.source:
                values = [_fetch(r, op.source) for r in rows]
                scalars[op.key] = _aggregate(
                    op.fn, values, len(rows), issues, context=op.result_name
                )
            else:
                scalars[op.key] = _aggregate(
                    op.fn, [], len(rows), issues, context=op.result_name
                )
        else:
            raise ExecutionError("bad_plan", f"unknown operator {op!r}")

    return ResultEnvelope(
        artifact_id=artifact_id,
        produced_at=utc_now_text(),
        results=results,
        issues=tuple(issues),
    )


def execute_sample(
    plan: PlanIR,
    sample_records: Iterable[dict],
    artifact_id: str = "",
    timeout: float = DEFAULT_TIMEOUT_SECONDS,
    max_rows: int = DEFAULT_MAX_ROW_TOUCHES,
) -> ResultEnvelope:
    """Batch execution under resource limits, for runtime validation."""
    return execute_batch(
        plan, sample_records, artifact_id, timeout=timeout, max_rows=max_rows
    )


# ---------------------------------------------------------------------------
# Stream execution
# ---------------------------------------------------------------------------


def _epoch(dt: datetime) -> float:
    return dt.replace(tzinfo=timezone.utc).timestamp()


def _window_plan(plan: PlanIR) -> PlanIR:
    """The per-window pipeline: everything except the Window node."""
    return PlanIR(
        operators=tuple(op for op in plan.operators if not isinstance(op, WindowOp)),
        temporal_format=plan.temporal_format,
    )


def execute_stream(
    plan: PlanIR,
    records: Iterable[dict],
    artifact_id: str = "",
    window_seconds: Optional[int] = None,
) -> list[ResultEnvelope]:
    """Tumbling-window execution over an ordered record stream.

    Record event time comes from the plan's Window node (time_field parsed
    with the plan's temporal format). Records whose event time precedes
    the watermark (max time seen) are late and dropped, counted in the
    final envelope's issues; records without a parseable event time are
    likewise dropped and counted.
    """
    window_op = plan.window()
    if window_op is None and window_seconds is None:
        raise ExecutionError("bad_plan", "stream execution requires a window")
    size = window_seconds or window_op.tumbling_seconds
    if size <= 0:
        raise ExecutionError("bad_plan", "window size must be positive")
    time_field = window_op.time_field if window_op else None
    if time_field is None:
        raise ExecutionError("bad_plan", "stream execution requires a time field")
    if not plan.temporal_format:
        raise ExecutionError("bad_plan", "stream execution requires a temporal format")

    per_window = _window_plan(plan)
    open_windows: dict[int, list[dict]] = {}
    watermark: Optional[float] = None
    late_count = 0
    unparseable_count = 0
    envelopes: list[ResultEnvelope] = []

    def close_window(index: int) -> None:
        window_records = open_windows.pop(index)
        envelope = execute_batch(per_window, window_records, artifact_id)
        start = datetime.fromtimestamp(index * size, tz=timezone.utc)
        end = datetime.fromtimestamp((index + 1) * size, tz=timezone.utc)
        envelope.window = (
            start.strftime(TIMESTAMP_FORMAT),
            end.strftime(TIMESTAMP_FORMAT),
        )
        envelopes.append(envelope)

    for record in records:
        raw = _fetch(record, time_field)
        parsed = parse_temporal(raw, plan.temporal_format) if raw is not None else None
        if parsed is None:
            unparseable_count += 1
            continue
        t = _epoch(parsed)
        if watermark is not None and t < watermark:
            late_count += 1
            continue
        watermark = t if watermark is None else max(watermark, t)
        open_windows.setdefault(int(t // size), []).append(record)
        # Close every window that the watermark has moved past.
        for index in sorted(open_windows):
            if (index + 1) * size <= watermark:
                close_window(index)

    for index in sorted(open_windows):
        close_window(index)

    issues = []
    if late_count:
        issues.append(
            {
                "severity": "info",
                "code": "stream.late_records",
                "message": f"{late_count} late record(s) dropped behind the watermark",
            }
        )
    if unparseable_count:
        issues.append(
            {
                "severity": "info",
                "code": "stream.unparseable_time",
                "message": f"{unparseable_count} record(s) had no parseable event time",
            }
        )
    if issues and envelopes:
        last = envelopes[-1]
        last.issues = tuple(list(last.issues) + issues)
    elif issues:
        envelopes.append(
            ResultEnvelope(
                artifact_id=artifact_id,
                produced_at=utc_now_text(),
                results={},
                issues=tuple(issues),
            )
        )
    return envelopes


def check_output_schema(plan: AnalyticPlan, envelope: ResultEnvelope) -> list[str]:
    """Mismatches between an envelope and its plan's declared output schema."""
    problems = []
    declared = set(plan.output_schema)
    actual = set(envelope.results)
    if declared != actual:
        problems.append(
            f"result names {sorted(actual)} do not match declared {sorted(declared)}"
        )
    for name, shape in plan.output_schema.items():
        if name not in envelope.results:
            continue
        result = envelope.results[name]
        if shape.kind == "table":
            if not isinstance(result, dict) or "columns" not in result:
                problems.append(f"result {name!r} is not a table")
            elif list(result["columns"]) != list(shape.columns):
                problems.append(
                    f"result {name!r} columns {result['columns']} != declared {list(shape.columns)}"
                )
            else:
                for row in result["rows"]:
                    if len(row) != len(shape.columns):
                        problems.append(f"result {name!r} has a ragged row")
                        break
        else:
            if not isinstance(result, dict) or "columns" in result:
                problems.append(f"result {name!r} is not a scalar summary")
            elif sorted(result) != sorted(shape.keys):
                problems.append(
                    f"result {name!r} keys {sorted(result)} != declared {sorted(shape.keys)}"
                )
    return problems
