"""Compilation of hypotheses into analytic plans and dual artifacts.

Each executable hypothesis category maps to a deterministic recipe that
builds a PlanIR pipeline, human-readable steps, and an output schema from
the hypothesis's required fields and the topic's field profiles. A plan
is then emitted twice: as an executable plan artifact (the IR itself) and
as SQL text in the engine's dialect subset, one statement per result set.
Operators with no SQL rendering (slope, contrast) are omitted from the
SQL artifact with a note and recorded in its dependency list.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

from .contracts import (
    AggregateSpec,
    AnalyticPlan,
    DeriveBucketOp,
    DeriveTemporalOp,
    FilterOp,
    GeneratedArtifact,
    Generation,
    GroupAggregateOp,
    Hypothesis,
    IdSource,
    LimitOp,
    PlanIR,
    ResultShape,
    SortOp,
    SummaryScalarOp,
    TopicMetadata,
    WindowOp,
    canonical_json,
    utc_now_text,
)
from .executor import RATIO_FALSE_TOKENS, RATIO_TRUE_TOKENS
from .ingest import temporal_format_kind
from .sqldialect import quote_identifier, string_literal, table_name_for_topic

RETRY_BUDGET = 2

SQL_UNRENDERABLE_FNS = ("slope", "contrast")

ANOMALY_BUCKET_COUNT = 5
CATEGORY_ROW_LIMIT = 15
PAIR_ROW_LIMIT = 20
TREND_WINDOW_SECONDS = 30 * 86400


class CompileError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def humanize(name: str) -> str:
    return name.replace("_", " ").title()


# ---------------------------------------------------------------------------
# Recipe selection
# ---------------------------------------------------------------------------


def _role_shape(hypothesis: Hypothesis, metadata: TopicMetadata) -> list[str]:
    """Roles of the hypothesis's required fields, booleans kept distinct."""
    field_map = metadata.field_map()
    shape = []
    for name in hypothesis.required_fields:
        profile = field_map.get(name)
        if profile is None:
            raise CompileError("unknown_field", f"field {name!r} not in topic metadata")
        if profile.role == "categorical" and profile.raw_type == "boolean":
            shape.append("boolean")
        else:
            shape.append(profile.role)
    return shape


def match_recipe(hypothesis: Hypothesis, metadata: TopicMetadata) -> Optional[str]:
    shape = _role_shape(hypothesis, metadata)
    category = hypothesis.category
    if category == "descriptive":
        if shape == ["temporal"]:
            return "temporal_distribution"
        if shape == ["categorical"]:
            return "category_counts"
        if shape == ["categorical", "categorical"]:
            return "category_pair"
        if shape == ["boolean"]:
            return "boolean_share"
        if shape == ["numerical"]:
            return "numeric_summary"
    elif category == "exploratory":
        if shape and shape[0] == "boolean" and len(shape) > 1:
            return "boolean_ratio_by_group"
        if shape == ["numerical"]:
            return "numeric_anomaly"
    elif category == "inferential":
        if (
            shape
            and shape[0] == "boolean"
            and len(shape) > 1
            and all(s == "categorical" for s in shape[1:])
        ):
            return "association_contrast"
    elif category == "predictive":
        if shape == ["temporal"]:
            return "trend_slope"
    return None


def _temporal_format_for(field_name: str, metadata: TopicMetadata) -> str:
    profile = metadata.field_map()[field_name]
    if not profile.temporal_format:
        raise CompileError(
            "missing_temporal_format", f"field {field_name!r} has no temporal format"
        )
    if temporal_format_kind(profile.temporal_format) not in ("date", "datetime"):
        raise CompileError(
            "missing_temporal_format",
            f"field {field_name!r} is time-of-day only; no date parts to derive",
        )
    return profile.temporal_format


# ---------------------------------------------------------------------------
# Recipes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Recipe:
    approach: str
    steps: tuple
    pipeline: PlanIR
    output_schema: dict
    assumptions: tuple


def _recipe_temporal_distribution(h: Hypothesis, m: TopicMetadata) -> _Recipe:
    date_field = h.required_fields[0]
    fmt = _temporal_format_for(date_field, m)
    count_agg = (AggregateSpec("count", "event_count"),)
    pipeline = PlanIR(
        operators=(
            FilterOp(field=date_field, predicate="is_not_null"),
            DeriveTemporalOp(date_field, "year", "year"),
            DeriveTemporalOp(date_field, "month", "month"),
            DeriveTemporalOp(date_field, "day_of_week", "day_of_week"),
            DeriveTemporalOp(date_field, "season", "season"),
            DeriveTemporalOp(date_field, "is_weekend", "is_weekend"),
            GroupAggregateOp("yearly_distribution", ("year",), count_agg),
            GroupAggregateOp("monthly_distribution", ("month",), count_agg),
            GroupAggregateOp("day_of_week_distribution", ("day_of_week",), count_agg),
            GroupAggregateOp("seasonal_distribution", ("season",), count_agg),
            GroupAggregateOp("weekday_weekend_comparison", ("is_weekend",), count_agg),
            SummaryScalarOp("summary", "total_events_analyzed", "count"),
        ),
        temporal_format=fmt,
    )
    schema = {
        "summary": ResultShape("scalar_summary", keys=("total_events_analyzed",)),
        "yearly_distribution": ResultShape(
            "table", columns=("year", "event_count"), title="Yearly Event Distribution"
        ),
        "monthly_distribution": ResultShape(
            "table", columns=("month", "event_count"), title="Monthly Event Distribution"
        ),
        "day_of_week_distribution": ResultShape(
            "table",
            columns=("day_of_week", "event_count"),
            title="Day of Week Event Distribution",
        ),
        "seasonal_distribution": ResultShape(
            "table", columns=("season", "event_count"), title="Seasonal Event Distribution"
        ),
        "weekday_weekend_comparison": ResultShape(
            "table",
            columns=("is_weekend", "event_count"),
            title="Weekday vs Weekend Events",
        ),
    }
    return _Recipe(
        approach=(
            f"Parse the {date_field} field from each record to extract year, "
            "month, and day of week. Aggregate event counts by these temporal "
            "dimensions to reveal distribution patterns."
        ),
        steps=(
            "Load and validate data",
            "Parse date strings into datetime objects",
            "Extract year, month, and day_of_week",
            "Aggregate event counts by temporal dimensions",
            "Compute seasonal distribution",
            "Calculate weekday versus weekend statistics",
            "Return structured results",
        ),
        pipeline=pipeline,
        output_schema=schema,
        assumptions=(
            f"Values of {date_field} parse under the {fmt} pattern; "
            "records with empty dates are excluded, and non-empty values "
            "that fail to parse group under a missing key.",
            "Day-of-week numbering is 0=Monday through 6=Sunday; "
            "weekend means Saturday or Sunday.",
        ),
    )


def _recipe_category_counts(h: Hypothesis, m: TopicMetadata) -> _Recipe:
    field = h.required_fields[0]
    result = f"{field}_distribution"
    pipeline = PlanIR(
        operators=(
            GroupAggregateOp(result, (field,), (AggregateSpec("count", "record_count"),)),
            SortOp(result, "record_count", "desc"),
            LimitOp(result, CATEGORY_ROW_LIMIT),
            SummaryScalarOp("summary", "total_records", "count"),
            SummaryScalarOp("summary", f"distinct_{field}_values", "distinct_count", field),
        )
    )
    schema = {
        result: ResultShape(
            "table",
            columns=(field, "record_count"),
            title=f"{humanize(field)} Distribution",
        ),
        "summary": ResultShape(
            "scalar_summary", keys=("total_records", f"distinct_{field}_values")
        ),
    }
    return _Recipe(
        approach=(
            f"Count records per {field} value, rank the values by frequency, "
            f"and keep the top {CATEGORY_ROW_LIMIT} to show where the data "
            "concentrates."
        ),
        steps=(
            "Load and validate data",
            f"Group records by {field}",
            "Count records per group and rank by frequency",
            "Return structured results",
        ),
        pipeline=pipeline,
        output_schema=schema,
        assumptions=(f"Missing {field} values form their own group.",),
    )


def _recipe_category_pair(h: Hypothesis, m: TopicMetadata) -> _Recipe:
    a, b = h.required_fields[0], h.required_fields[1]
    result = f"{a}_by_{b}"
    pipeline = PlanIR(
        operators=(
            GroupAggregateOp(result, (a, b), (AggregateSpec("count", "record_count"),)),
            SortOp(result, "record_count", "desc"),
            LimitOp(result, PAIR_ROW_LIMIT),
            SummaryScalarOp("summary", "total_records", "count"),
        )
    )
    schema = {
        result: ResultShape(
            "table",
            columns=(a, b, "record_count"),
            title=f"{humanize(a)} by {humanize(b)}",
        ),
        "summary": ResultShape("scalar_summary", keys=("total_records",)),
    }
    return _Recipe(
        approach=(
            f"Cross-tabulate {a} against {b} and rank the combinations by "
            "record count to expose how the two classifications interact."
        ),
        steps=(
            "Load and validate data",
            f"Group records by the ({a}, {b}) pair",
            "Count records per combination and rank by frequency",
            "Return structured results",
        ),
        pipeline=pipeline,
        output_schema=schema,
        assumptions=(f"Missing {a} or {b} values form their own groups.",),
    )


def _recipe_boolean_share(h: Hypothesis, m: TopicMetadata) -> _Recipe:
    field = h.required_fields[0]
    result = f"{field}_share"
    pipeline = PlanIR(
        operators=(
            GroupAggregateOp(result, (field,), (AggregateSpec("count", "record_count"),)),
            SummaryScalarOp("summary", f"{field}_true_ratio", "ratio_true", field),
        )
    )
    schema = {
        result: ResultShape(
            "table",
            columns=(field, "record_count"),
            title=f"{humanize(field)} Share",
        ),
        "summary": ResultShape("scalar_summary", keys=(f"{field}_true_ratio",)),
    }
    return _Recipe(
        approach=(
            f"Split records by the {field} flag and compute the share of "
            "true values to show how balanced the flag is."
        ),
        steps=(
            "Load and validate data",
            f"Group records by {field}",
            "Count records per flag value and compute the true ratio",
            "Return structured results",
        ),
        pipeline=pipeline,
        output_schema=schema,
        assumptions=(
            f"Values of {field} are boolean-coded; anything else is ignored "
            "by the ratio.",
        ),
    )


def _recipe_numeric_summary(h: Hypothesis, m: TopicMetadata) -> _Recipe:
    field = h.required_fields[0]
    pipeline = PlanIR(
        operators=(
            SummaryScalarOp("summary", "records_counted", "count"),
            SummaryScalarOp("summary", f"{field}_min", "min", field),
            SummaryScalarOp("summary", f"{field}_max", "max", field),
            SummaryScalarOp("summary", f"{field}_avg", "avg", field),
            SummaryScalarOp("summary", f"{field}_sum", "sum", field),
        )
    )
    schema = {
        "summary": ResultShape(
            "scalar_summary",
            keys=(
                "records_counted",
                f"{field}_min",
                f"{field}_max",
                f"{field}_avg",
                f"{field}_sum",
            ),
        )
    }
    return _Recipe(
        approach=(
            f"Compute the count, extremes, mean, and total of {field} to "
            "anchor its overall level and spread."
        ),
        steps=(
            "Load and validate data",
            f"Scan {field} values, skipping nulls",
            "Compute count, min, max, mean, and sum",
            "Return structured results",
        ),
        pipeline=pipeline,
        output_schema=schema,
        assumptions=(f"Null {field} values are excluded from the statistics.",),
    )


def _bucket_bounds(profile) -> tuple:
    lo = profile.min_value
    hi = profile.max_value
    if lo is None or hi is None:
        lo, hi = 0, 1
    lo = float(lo)
    hi = float(hi)
    if hi <= lo:
        hi = lo + 1.0
    width = (hi - lo) / ANOMALY_BUCKET_COUNT
    buckets = []
    for i in range(ANOMALY_BUCKET_COUNT):
        low = lo + i * width
        high = lo + (i + 1) * width
        if i == ANOMALY_BUCKET_COUNT - 1:
            high = hi + 1.0  # close the top so the max lands in a bucket
        buckets.append((f"[{low:g}, {high:g})", low, high))
    return tuple(buckets)


def _recipe_numeric_anomaly(h: Hypothesis, m: TopicMetadata) -> _Recipe:
    field = h.required_fields[0]
    profile = m.field_map()[field]
    bucket_col = f"{field}_bucket"
    result = f"{field}_buckets"
    pipeline = PlanIR(
        operators=(
            DeriveBucketOp(field, _bucket_bounds(profile), bucket_col),
            GroupAggregateOp(
                result, (bucket_col,), (AggregateSpec("count", "record_count"),)
            ),
            SummaryScalarOp("summary", f"{field}_avg", "avg", field),
        )
    )
    schema = {
        result: ResultShape(
            "table",
            columns=(bucket_col, "record_count"),
            title=f"{humanize(field)} Value Ranges",
        ),
        "summary": ResultShape("scalar_summary", keys=(f"{field}_avg",)),
    }
    return _Recipe(
        approach=(
            f"Bucket {field} into {ANOMALY_BUCKET_COUNT} equal-width ranges "
            "and count records per range to expose concentration and outliers."
        ),
        steps=(
            "Load and validate data",
            f"Assign each record's {field} value to a range bucket",
            "Count records per bucket",
            "Return structured results",
        ),
        pipeline=pipeline,
        output_schema=schema,
        assumptions=(
            f"Bucket bounds come from the profiled {field} range; values "
            "outside it or non-numeric group under a missing bucket.",
        ),
    )


def _grouped_ratio_ops(
    target: str, groupers: list[str], m: TopicMetadata, result_prefix: str, rate_name: str
) -> tuple[list, dict, list[str]]:
    """Shared construction for ratio-by-group and association recipes."""
    field_map = m.field_map()
    operators: list = []
    schema: dict = {}
    assumptions: list[str] = []
    date_groupers = [
        g
        for g in groupers
        if field_map[g].role == "temporal"
    ]
    for g in date_groupers:
        fmt = _temporal_format_for(g, m)
        operators.append(FilterOp(field=g, predicate="is_not_null"))
        operators.append(DeriveTemporalOp(g, "month", "month"))
        assumptions.append(
            f"Records with empty {g} are excluded; month is derived with the "
            f"{fmt} pattern."
        )
    for g in groupers:
        if field_map[g].role == "temporal":
            key = "month"
            result = f"{result_prefix}_month"
        else:
            key = g
            result = f"{result_prefix}_{g}"
        operators.append(
            GroupAggregateOp(
                result,
                (key,),
                (
                    AggregateSpec("count", "record_count"),
                    AggregateSpec("ratio_true", rate_name, target),
                ),
            )
        )
        schema[result] = ResultShape(
            "table",
            columns=(key, "record_count", rate_name),
            title=f"{humanize(target)} Rate by {humanize(key)}",
        )
    return operators, schema, assumptions


def _recipe_boolean_ratio_by_group(h: Hypothesis, m: TopicMetadata) -> _Recipe:
    target = h.required_fields[0]
    groupers = list(h.required_fields[1:])
    rate_name = f"{target}_ratio"
    operators, schema, assumptions = _grouped_ratio_ops(
        target, groupers, m, "ratio_by", rate_name
    )
    temporal_fmt = None
    field_map = m.field_map()
    for g in groupers:
        if field_map[g].role == "temporal":
            temporal_fmt = _temporal_format_for(g, m)
    operators.append(
        SummaryScalarOp("summary", f"{target}_overall_ratio", "ratio_true", target)
    )
    schema["summary"] = ResultShape(
        "scalar_summary", keys=(f"{target}_overall_ratio",)
    )
    pipeline = PlanIR(operators=tuple(operators), temporal_format=temporal_fmt)
    grouper_text = ", ".join(groupers)
    return _Recipe(
        approach=(
            f"Compute the share of {target} records overall and within each "
            f"of {grouper_text} to see where the flag concentrates."
        ),
        steps=(
            "Load and validate data",
            f"Map {target} values onto true/false",
            f"Group records by each of: {grouper_text}",
            "Compute record counts and true ratios per group",
            "Return structured results",
        ),
        pipeline=pipeline,
        output_schema=schema,
        assumptions=tuple(
            assumptions
            + [f"Values of {target} are boolean-coded; others are skipped by ratios."]
        ),
    )


def _recipe_association_contrast(h: Hypothesis, m: TopicMetadata) -> _Recipe:
    target = h.required_fields[0]
    features = list(h.required_fields[1:])
    rate_name = f"{target}_rate"
    operators, schema, assumptions = _grouped_ratio_ops(
        target, features, m, "rate_by", rate_name
    )
    summary_keys = []
    for f in features:
        key = f"{target}_rate_spread_across_{f}"
        operators.append(
            SummaryScalarOp("summary", key, "contrast", f"rate_by_{f}.{rate_name}")
        )
        summary_keys.append(key)
    schema["summary"] = ResultShape("scalar_summary", keys=tuple(summary_keys))
    pipeline = PlanIR(operators=tuple(operators))
    feature_text = ", ".join(features)
    return _Recipe(
        approach=(
            f"Compute the {target} rate within each group of {feature_text}, "
            "then report the spread (max minus min rate) per feature as an "
            "association signal."
        ),
        steps=(
            "Load and validate data",
            f"Map {target} values onto true/false",
            f"Group records by each of: {feature_text}",
            f"Compute the {target} rate per group",
            "Report the rate spread across groups per feature",
            "Return structured results",
        ),
        pipeline=pipeline,
        output_schema=schema,
        assumptions=tuple(
            assumptions
            + [
                "Rate spread is a descriptive association signal, not a "
                "significance test.",
            ]
        ),
    )


def _recipe_trend_slope(h: Hypothesis, m: TopicMetadata) -> _Recipe:
    date_field = h.required_fields[0]
    fmt = _temporal_format_for(date_field, m)
    pipeline = PlanIR(
        operators=(
            FilterOp(field=date_field, predicate="is_not_null"),
            WindowOp(date_field, TREND_WINDOW_SECONDS),
            DeriveTemporalOp(date_field, "year", "year"),
            GroupAggregateOp(
                "yearly_counts", ("year",), (AggregateSpec("count", "event_count"),)
            ),
            SummaryScalarOp(
                "summary", "yearly_trend_slope", "slope", "yearly_counts.event_count"
            ),
        ),
        temporal_format=fmt,
    )
    schema = {
        "yearly_counts": ResultShape(
            "table", columns=("year", "event_count"), title="Records per Year"
        ),
        "summary": ResultShape("scalar_summary", keys=("yearly_trend_slope",)),
    }
    return _Recipe(
        approach=(
            f"Count records per year of {date_field} and fit a least-squares "
            "slope over the year sequence to judge the direction of the trend."
        ),
        steps=(
            "Load and validate data",
            "Parse date strings into datetime objects",
            "Count records per year",
            "Fit a least-squares slope over the yearly counts",
            "Return structured results",
        ),
        pipeline=pipeline,
        output_schema=schema,
        assumptions=(
            f"Records with empty {date_field} are excluded.",
            "The slope is computed over the ordered year sequence, one step "
            "per year present in the data.",
        ),
    )


def _recipe_record_count_summary(h: Hypothesis, m: TopicMetadata) -> _Recipe:
    pipeline = PlanIR(
        operators=(SummaryScalarOp("summary", "record_count", "count"),)
    )
    return _Recipe(
        approach="Count the records relevant to the hypothesis as a minimal, "
        "always-renderable fallback computation.",
        steps=(
            "Load and validate data",
            "Count records",
            "Return structured results",
        ),
        pipeline=pipeline,
        output_schema={
            "summary": ResultShape("scalar_summary", keys=("record_count",))
        },
        assumptions=("Fallback plan after regeneration; richer analytics were "
                     "rejected by validation.",),
    )


_RECIPES = {
    "temporal_distribution": _recipe_temporal_distribution,
    "category_counts": _recipe_category_counts,
    "category_pair": _recipe_category_pair,
    "boolean_share": _recipe_boolean_share,
    "numeric_summary": _recipe_numeric_summary,
    "numeric_anomaly": _recipe_numeric_anomaly,
    "boolean_ratio_by_group": _recipe_boolean_ratio_by_group,
    "association_contrast": _recipe_association_contrast,
    "trend_slope": _recipe_trend_slope,
    "record_count_summary": _recipe_record_count_summary,
}


def compile_plan(
    hypothesis: Hypothesis,
    metadata: TopicMetadata,
    id_source: IdSource,
    recipe_name: Optional[str] = None,
) -> AnalyticPlan:
    """Build the analytic plan for an executable hypothesis."""
    if not hypothesis.executable:
        raise CompileError(
            "non_executable_category",
            f"{hypothesis.category} hypotheses are not executable",
        )
    recipe_name = recipe_name or match_recipe(hypothesis, metadata)
    if recipe_name is None or recipe_name not in _RECIPES:
        raise CompileError(
            "no_matching_recipe",
            f"no recipe for category {hypothesis.category!r} over fields "
            f"{list(hypothesis.required_fields)}",
        )
    recipe = _RECIPES[recipe_name](hypothesis, metadata)
    plan = AnalyticPlan(
        id=id_source.next_text("plan"),
        hypothesis_id=hypothesis.id,
        approach=recipe.approach,
        steps=recipe.steps,
        pipeline=recipe.pipeline,
        output_schema=recipe.output_schema,
        assumptions=recipe.assumptions,
        created_at=utc_now_text(),
    )
    problems = plan.validate()
    if problems:
        raise CompileError("invalid_plan", "; ".join(problems))
    return plan


# ---------------------------------------------------------------------------
# SQL rendering
# ---------------------------------------------------------------------------


def _to_date_expr(field: str, fmt: str) -> str:
    return f"TO_DATE({quote_identifier(field)}, {string_literal(fmt)})"


def _derived_sql(op, temporal_format: str) -> tuple[str, str]:
    """(SQL expression, alias) for a derived field."""
    if isinstance(op, DeriveTemporalOp):
        date_expr = _to_date_expr(op.source_field, temporal_format)
        if op.part == "year":
            return f"EXTRACT(YEAR FROM {date_expr})", "event_year"
        if op.part == "month":
            return f"EXTRACT(MONTH FROM {date_expr})", "event_month"
        if op.part == "day_of_week":
            return f"EXTRACT(DOW FROM {date_expr})", "day_of_week"
        if op.part == "season":
            month = f"EXTRACT(MONTH FROM {date_expr})"
            return (
                "CASE\n"
                f"        WHEN {month} IN (12, 1, 2) THEN 'Winter'\n"
                f"        WHEN {month} IN (3, 4, 5) THEN 'Spring'\n"
                f"        WHEN {month} IN (6, 7, 8) THEN 'Summer'\n"
                "        ELSE 'Fall'\n"
                "    END"
            ), "season"
        if op.part == "is_weekend":
            dow = f"EXTRACT(DOW FROM {date_expr})"
            return (
                "CASE\n"
                f"        WHEN {dow} IN (5, 6) THEN 'Weekend'\n"
                f"        WHEN {dow} IN (0, 1, 2, 3, 4) THEN 'Weekday'\n"
                "    END"
            ), "is_weekend"
    if isinstance(op, DeriveBucketOp):
        source = quote_identifier(op.source_field)
        branches = []
        for label, low, high in op.buckets:
            branches.append(
                f"        WHEN {source} >= {low:g} AND {source} < {high:g} "
                f"THEN {string_literal(label)}"
            )
        body = "\n".join(branches)
        return f"CASE\n{body}\n    END", op.target_field
    raise CompileError("unrenderable", f"no SQL rendering for {op!r}")


def _ratio_case(field: str) -> str:
    true_list = ", ".join(string_literal(t) for t in RATIO_TRUE_TOKENS)
    false_list = ", ".join(string_literal(t) for t in RATIO_FALSE_TOKENS)
    name = quote_identifier(field)
    return (
        "CASE "
        f"WHEN {name} IN ({true_list}) THEN 1.0 "
        f"WHEN {name} IN ({false_list}) THEN 0.0 "
        "END"
    )


def _aggregate_sql(agg: AggregateSpec) -> str:
    if agg.fn == "count":
        return f"COUNT(*) AS {agg.output_column}"
    name = quote_identifier(agg.source_field)
    if agg.fn == "distinct_count":
        return f"COUNT(DISTINCT {name}) AS {agg.output_column}"
    if agg.fn == "ratio_true":
        return f"AVG({_ratio_case(agg.source_field)}) AS {agg.output_column}"
    return f"{agg.fn.upper()}({name}) AS {agg.output_column}"


def render_sql(plan: AnalyticPlan, topic_name: str) -> tuple[str, list[str]]:
    """Render the plan to SQL text; returns (script, unrendered notes).

    One statement per GroupAggregate result set plus one per scalar result
    set, each preceded by a `-- result: <name>` marker. Filters become a
    shared WHERE clause; derived fields are inlined expressions with the
    aliases the statements group by.
    """
    pipeline = plan.pipeline
    table = quote_identifier(table_name_for_topic(topic_name))
    notes: list[str] = []

    where_parts: list[str] = []
    derived: dict[str, tuple[str, str]] = {}  # target -> (expr, alias)
    sorts: dict[str, SortOp] = {}
    limits: dict[str, LimitOp] = {}
    for op in pipeline.operators:
        if isinstance(op, FilterOp):
            name = quote_identifier(op.field)
            if op.predicate == "is_not_null":
                where_parts.append(f"{name} IS NOT NULL AND {name} <> ''")
            elif op.predicate == "equals":
                where_parts.append(f"{name} = {_literal_sql(op.value)}")
            elif op.predicate == "in_set":
                items = ", ".join(_literal_sql(v) for v in op.values)
                where_parts.append(f"{name} IN ({items})")
            elif op.predicate == "compare":
                symbol = {"eq": "=", "ne": "<>", "lt": "<", "le": "<=", "gt": ">", "ge": ">="}[
                    op.op
                ]
                where_parts.append(f"{name} {symbol} {_literal_sql(op.value)}")
        elif isinstance(op, (DeriveTemporalOp, DeriveBucketOp)):
            derived[op.target_field] = _derived_sql(op, pipeline.temporal_format or "")
        elif isinstance(op, SortOp):
            sorts[op.result_name] = op
        elif isinstance(op, LimitOp):
            limits[op.result_name] = op
        elif isinstance(op, WindowOp):
            notes.append("window: stream-only operator, not rendered in SQL")

    where_clause = f"\nWHERE {' AND '.join(where_parts)}" if where_parts else ""

    def key_select(key: str) -> tuple[str, str]:
        """(select item, group-by reference) for one group key."""
        if key in derived:
            expr, alias = derived[key]
            return f"{expr}\n        AS {alias}", alias
        return quote_identifier(key), quote_identifier(key)

    statements: list[str] = []

    for op in pipeline.operators:
        if isinstance(op, GroupAggregateOp):
            select_items = []
            group_refs = []
            for key in op.group_keys:
                item, ref = key_select(key)
                select_items.append(item)
                group_refs.append(ref)
            for agg in op.aggregations:
                select_items.append(_aggregate_sql(agg))
            body = ",\n    ".join(select_items)
            statement = (
                f"-- result: {op.result_name}\n"
                f"SELECT\n    {body}\nFROM {table}"
                f"{where_clause}\nGROUP BY {', '.join(group_refs)}"
            )
            sort = sorts.get(op.result_name)
            if sort is not None:
                direction = "DESC" if sort.direction == "desc" else "ASC"
                order = f"\nORDER BY {sort.column} {direction}"
                # Deterministic output: break ties on the first group key.
                first_ref = group_refs[0]
                if sort.column not in op.group_keys:
                    order += f", {first_ref} ASC"
                statement += order
            limit = limits.get(op.result_name)
            if limit is not None:
                statement += f"\nLIMIT {limit.n}"
            statements.append(statement + ";")

    # Scalar result sets: one statement each, aggregating the whole table.
    scalar_sets: dict[str, list[SummaryScalarOp]] = {}
    for op in pipeline.scalar_results():
        scalar_sets.setdefault(op.result_name, []).append(op)
    for result_name, ops in scalar_sets.items():
        items = []
        for op in ops:
            if op.fn in SQL_UNRENDERABLE_FNS or (op.source and "." in op.source):
                notes.append(f"{result_name}.{op.key} ({op.fn}): not renderable in SQL")
                continue
            if op.fn == "count" and not op.source:
                items.append(f"COUNT(*) AS {op.key}")
            else:
                items.append(
                    _aggregate_sql(AggregateSpec(op.fn, op.key, op.source))
                )
        if not items:
            continue
        body = ",\n    ".join(items)
        statements.append(
            f"-- result: {result_name}\nSELECT\n    {body}\nFROM {table}{where_clause};"
        )

    script = "\n\n".join(statements)
    if notes:
        note_lines = "\n".join(f"-- note: {n}" for n in notes)
        script = f"{script}\n\n{note_lines}" if script else note_lines
    return script + "\n", notes


def _literal_sql(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, float)):
        return f"{value:g}" if isinstance(value, float) else str(value)
    return string_literal(str(value))


# ---------------------------------------------------------------------------
# Dual artifact emission
# ---------------------------------------------------------------------------


def emit_dual_artifacts(
    plan: AnalyticPlan,
    metadata: TopicMetadata,
    id_source: IdSource,
    mode: str = "deterministic",
    attempt: int = 0,
) -> tuple[GeneratedArtifact, GeneratedArtifact]:
    """The executable-plan artifact and its SQL rendering, as a pair."""
    deps = plan.pipeline.dependency_names()
    executable = GeneratedArtifact(
        id=id_source.next_text("artifact_py"),
        hypothesis_id=plan.hypothesis_id,
        analytic_plan_id=plan.id,
        artifact_type="executable_plan",
        language="plan-ir",
        content=canonical_json(plan.pipeline.to_dict()),
        dependencies=tuple(deps),
        generation=Generation(mode=mode, attempt=attempt),
        created_at=utc_now_text(),
    )
    script, _notes = render_sql(plan, metadata.name)
    sql_deps = [d for d in deps if d not in SQL_UNRENDERABLE_FNS]
    for fn_dep in ("extract", "to_date", "case"):
        if any(
            isinstance(op, (DeriveTemporalOp, DeriveBucketOp))
            for op in plan.pipeline.operators
        ) and fn_dep not in sql_deps:
            if fn_dep == "case" or any(
                isinstance(op, DeriveTemporalOp) for op in plan.pipeline.operators
            ):
                sql_deps.append(fn_dep)
    if any(
        isinstance(op, GroupAggregateOp)
        and any(a.fn == "ratio_true" for a in op.aggregations)
        for op in plan.pipeline.operators
    ) or any(op.fn == "ratio_true" for op in plan.pipeline.scalar_results()):
        if "case" not in sql_deps:
            sql_deps.append("case")
    sql = GeneratedArtifact(
        id=id_source.next_text("artifact_sql"),
        hypothesis_id=plan.hypothesis_id,
        analytic_plan_id=plan.id,
        artifact_type="sql_text",
        language="sql",
        content=script,
        dependencies=tuple(sql_deps),
        generation=Generation(mode=mode, attempt=attempt),
        created_at=utc_now_text(),
    )
    return executable, sql


# ---------------------------------------------------------------------------
# Regeneration
# ---------------------------------------------------------------------------

_UNKNOWN_FIELD = re.compile(r"unknown field ['\"]?([A-Za-z0-9_]+)['\"]?")


def regenerate(
    hypothesis: Hypothesis,
    metadata: TopicMetadata,
    feedback_codes: list[str],
    feedback_text: str,
    id_source: IdSource,
) -> Optional[AnalyticPlan]:
    """Feedback-specific repair; None when the feedback is unrepairable."""
    if any(code.startswith("schema.unknown_field") for code in feedback_codes):
        match = _UNKNOWN_FIELD.search(feedback_text)
        if match:
            bad = match.group(1)
            remaining = tuple(f for f in hypothesis.required_fields if f != bad)
            known = {f.name for f in metadata.fields}
            remaining = tuple(f for f in remaining if f in known)
            if remaining:
                repaired = Hypothesis(
                    id=hypothesis.id,
                    created_at=hypothesis.created_at,
                    source_topic_id=hypothesis.source_topic_id,
                    category=hypothesis.category,
                    question=hypothesis.question,
                    rationale=hypothesis.rationale,
                    expected_insight=hypothesis.expected_insight,
                    priority=hypothesis.priority,
                    required_fields=remaining,
                    executable=hypothesis.executable,
                    status=hypothesis.status,
                )
                try:
                    return compile_plan(repaired, metadata, id_source)
                except CompileError:
                    pass
        # Fall through to the fallback recipe below.
    if any(
        code.startswith(("import.disallowed", "syntax.", "schema."))
        for code in feedback_codes
    ):
        try:
            return compile_plan(
                hypothesis, metadata, id_source, recipe_name="record_count_summary"
            )
        except CompileError:
            return None
    return None
