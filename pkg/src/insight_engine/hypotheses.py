"""Hypothesis generation from topic metadata.

A deterministic template engine: each template declares a trigger over
field roles, question/rationale/insight text patterns, a base priority,
and the compiler recipe that can realize it. Templates fire once per
matching field combination, are scored, deduplicated, and ranked. An
optional external generator (HTTP port) can contribute candidates, which
are parsed against the same contract and dropped unless they are fully
grounded in the topic's fields.
"""

from __future__ import annotations

import json
import logging
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Optional

from .contracts import (
    HYPOTHESIS_CATEGORIES,
    Hypothesis,
    IdSource,
    NON_EXECUTABLE_CATEGORIES,
    TopicMetadata,
    utc_now_text,
)
from .ingest import temporal_format_kind

logger = logging.getLogger(__name__)

TRIGGER_KINDS = (
    "each_temporal_date",
    "each_categorical",
    "categorical_pair",
    "each_boolean",
    "boolean_with_groupers",
    "boolean_target_features",
    "each_numerical",
    "temporal_trend",
    "causal_any",
    "mechanistic_any",
)

PAIR_FIELD_CAP = 5  # lowest-cardinality categoricals considered for pairs
GROUPER_CAP = 3

SIZE_BONUS_THRESHOLD = 10_000
NULL_RATIO_BONUS_LIMIT = 0.05


@dataclass(frozen=True)
class HypothesisTemplate:
    template_id: str
    category: str
    trigger: str  # one of TRIGGER_KINDS
    question: str
    rationale: str
    insight: str
    base_priority: int
    plan_recipe: Optional[str] = None

    def validate(self) -> list[str]:
        problems = []
        if self.category not in HYPOTHESIS_CATEGORIES:
            problems.append(f"{self.template_id}: unknown category {self.category!r}")
        if self.trigger not in TRIGGER_KINDS:
            problems.append(f"{self.template_id}: unknown trigger {self.trigger!r}")
        if not 1 <= self.base_priority <= 10:
            problems.append(f"{self.template_id}: base_priority outside [1, 10]")
        if self.category in NON_EXECUTABLE_CATEGORIES:
            if self.plan_recipe is not None:
                problems.append(
                    f"{self.template_id}: {self.category} templates take no recipe"
                )
        elif not self.plan_recipe:
            problems.append(f"{self.template_id}: executable template needs a recipe")
        return problems


@dataclass(frozen=True)
class GeneratorConfig:
    max_hypotheses: int = 24
    min_priority: int = 1


def built_in_templates() -> tuple:
    return (
        HypothesisTemplate(
            template_id="temporal_distribution",
            category="descriptive",
            trigger="each_temporal_date",
            question=(
                "What is the temporal distribution of {topic} events across "
                "years, months, and days of the week, and are there clear "
                "seasonal patterns in event scheduling?"
            ),
            rationale=(
                "With {count} events spanning the observed period, understanding "
                "when events are concentrated reveals how programming resources "
                "are allocated across seasons."
            ),
            insight=(
                "Strong seasonality with peaks in warmer months and more events "
                "on weekends than on weekdays."
            ),
            base_priority=8,
            plan_recipe="temporal_distribution",
        ),
        HypothesisTemplate(
            template_id="top_categories",
            category="descriptive",
            trigger="each_categorical",
            question=(
                "What are the most common {field} values in {topic}, and how "
                "large is the gap between the leaders and the rest?"
            ),
            rationale=(
                "The {field} field has a small set of recurring values across "
                "{count} records, so a ranked distribution is informative."
            ),
            insight="A few dominant {field} values account for most records.",
            base_priority=7,
            plan_recipe="category_counts",
        ),
        HypothesisTemplate(
            template_id="category_pair",
            category="descriptive",
            trigger="categorical_pair",
            question=(
                "How are {field} values distributed across {partner} in {topic}?"
            ),
            rationale=(
                "Cross-tabulating {field} with {partner} shows whether the two "
                "classifications move together or independently."
            ),
            insight="Some {field} values concentrate in particular {partner} groups.",
            base_priority=6,
            plan_recipe="category_pair",
        ),
        HypothesisTemplate(
            template_id="boolean_share",
            category="descriptive",
            trigger="each_boolean",
            question="What share of {topic} records are flagged {field}?",
            rationale=(
                "The {field} flag partitions all {count} records into two "
                "groups whose relative size is a basic property of the data."
            ),
            insight="The {field} split is unbalanced rather than 50/50.",
            base_priority=5,
            plan_recipe="boolean_share",
        ),
        HypothesisTemplate(
            template_id="boolean_ratio_by_group",
            category="exploratory",
            trigger="boolean_with_groupers",
            question=(
                "What proportion of {topic} records are {field}, and how does "
                "this ratio vary by {groupers}?"
            ),
            rationale=(
                "If the {field} share differs across {groupers}, the flag is "
                "not assigned uniformly and the heavy groups are worth a look."
            ),
            insight="The {field} ratio varies noticeably across {groupers}.",
            base_priority=7,
            plan_recipe="boolean_ratio_by_group",
        ),
        HypothesisTemplate(
            template_id="numeric_summary",
            category="descriptive",
            trigger="each_numerical",
            question=(
                "What are the overall level and spread of {field} in {topic}?"
            ),
            rationale=(
                "Summary statistics of {field} over {count} records anchor any "
                "further comparison or anomaly hunt."
            ),
            insight="The {field} distribution has a clear central mass.",
            base_priority=5,
            plan_recipe="numeric_summary",
        ),
        HypothesisTemplate(
            template_id="numeric_anomaly",
            category="exploratory",
            trigger="each_numerical",
            question=(
                "Are {field} values in {topic} concentrated in a few ranges, "
                "with outlying records at the extremes?"
            ),
            rationale=(
                "Bucketing {field} exposes heavy ranges and thin tails that a "
                "single average would hide."
            ),
            insight="A small number of {field} ranges hold most records.",
            base_priority=5,
            plan_recipe="numeric_anomaly",
        ),
        HypothesisTemplate(
            template_id="inferential_association",
            category="inferential",
            trigger="boolean_target_features",
            question=(
                "Is there a relationship between a record being marked "
                "{field} and characteristics such as {groupers}?"
            ),
            rationale=(
                "If the {field} rate differs strongly across {groupers}, the "
                "flag is associated with those characteristics."
            ),
            insight="The {field} rate is far from uniform across {groupers}.",
            base_priority=6,
            plan_recipe="association_contrast",
        ),
        HypothesisTemplate(
            template_id="trend_over_time",
            category="predictive",
            trigger="temporal_trend",
            question=(
                "Is the volume of {topic} records trending up or down over "
                "time, judged by counts per {field} period?"
            ),
            rationale=(
                "A sustained slope in period counts indicates growth or decline "
                "that short-term variation would mask."
            ),
            insight="Period counts show a consistent directional trend.",
            base_priority=6,
            plan_recipe="trend_slope",
        ),
        HypothesisTemplate(
            template_id="causal_effect_conjecture",
            category="causal",
            trigger="causal_any",
            question=(
                "Does {field} causally influence {partner} in {topic}, rather "
                "than merely co-occurring with it?"
            ),
            rationale=(
                "Observed association between {field} and {partner} could "
                "reflect confounding; causal identification needs design "
                "beyond this dataset."
            ),
            insight=(
                "A causal link, if present, would require controlled or "
                "quasi-experimental evidence to establish."
            ),
            base_priority=3,
        ),
        HypothesisTemplate(
            template_id="mechanistic_process_conjecture",
            category="mechanistic",
            trigger="mechanistic_any",
            question=(
                "What underlying scheduling or generation process produces the "
                "observed {field} pattern in {topic}?"
            ),
            rationale=(
                "Field statistics describe outcomes, not the process; a "
                "mechanistic account needs domain knowledge outside the data."
            ),
            insight=(
                "A process-level model would explain the pattern, but cannot "
                "be computed from this dataset alone."
            ),
            base_priority=2,
        ),
    )


def load_templates(path: str) -> tuple:
    """Load a template pack from JSON (list of template objects)."""
    with open(path, "r", encoding="utf-8") as handle:
        raw = json.load(handle)
    templates = tuple(
        HypothesisTemplate(
            template_id=t["template_id"],
            category=t["category"],
            trigger=t["trigger"],
            question=t["question"],
            rationale=t["rationale"],
            insight=t["insight"],
            base_priority=int(t["base_priority"]),
            plan_recipe=t.get("plan_recipe"),
        )
        for t in raw
    )
    problems = [p for t in templates for p in t.validate()]
    if problems:
        raise ValueError("invalid template pack: " + "; ".join(problems))
    return templates


# ---------------------------------------------------------------------------
# Trigger matching
# ---------------------------------------------------------------------------


def _is_boolean(profile) -> bool:
    return profile.role == "categorical" and profile.raw_type == "boolean"


def _plain_categoricals(metadata: TopicMetadata) -> list:
    """Non-boolean categoricals, lowest cardinality first."""
    fields = [
        f
        for f in metadata.fields
        if f.role == "categorical" and f.raw_type != "boolean"
    ]
    return sorted(fields, key=lambda f: (f.distinct_count, f.name))


def _boolean_fields(metadata: TopicMetadata) -> list:
    return [f for f in metadata.fields if _is_boolean(f)]


def _date_fields(metadata: TopicMetadata) -> list:
    return [
        f
        for f in metadata.fields
        if f.role == "temporal"
        and temporal_format_kind(f.temporal_format) in ("date", "datetime")
    ]


def _numerical_fields(metadata: TopicMetadata) -> list:
    return [f for f in metadata.fields if f.role == "numerical"]


def _combos(trigger: str, metadata: TopicMetadata) -> list[dict]:
    """Field combinations a trigger fires on, as slot dicts.

    Slot dict keys: field (primary), partner, groupers (list), trigger_fields
    (all fields the priority bonus inspects, equal to required_fields).
    """
    cats = _plain_categoricals(metadata)
    booleans = _boolean_fields(metadata)
    dates = _date_fields(metadata)
    numerics = _numerical_fields(metadata)
    combos = []

    if trigger == "each_temporal_date" or trigger == "temporal_trend":
        for f in dates:
            combos.append({"field": f.name, "trigger_fields": [f.name]})
    elif trigger == "each_categorical":
        for f in cats[:PAIR_FIELD_CAP]:
            combos.append({"field": f.name, "trigger_fields": [f.name]})
    elif trigger == "categorical_pair":
        pool = cats[:PAIR_FIELD_CAP]
        for i in range(len(pool)):
            for j in range(i + 1, len(pool)):
                combos.append(
                    {
                        "field": pool[i].name,
                        "partner": pool[j].name,
                        "trigger_fields": [pool[i].name, pool[j].name],
                    }
                )
    elif trigger == "each_boolean":
        for f in booleans:
            combos.append({"field": f.name, "trigger_fields": [f.name]})
    elif trigger in ("boolean_with_groupers", "boolean_target_features"):
        groupers = [f.name for f in cats[:GROUPER_CAP]]
        if trigger == "boolean_with_groupers" and dates:
            # Time-of-year becomes a grouper when a date field exists.
            groupers = groupers + [dates[0].name]
        if not groupers:
            return []
        for f in booleans:
            combos.append(
                {
                    "field": f.name,
                    "groupers": groupers,
                    "trigger_fields": [f.name] + groupers,
                }
            )
    elif trigger == "each_numerical":
        for f in numerics:
            combos.append({"field": f.name, "trigger_fields": [f.name]})
    elif trigger == "causal_any":
        outcomes = booleans + numerics
        if cats and outcomes:
            combos.append(
                {
                    "field": cats[0].name,
                    "partner": outcomes[0].name,
                    "trigger_fields": [cats[0].name, outcomes[0].name],
                }
            )
    elif trigger == "mechanistic_any":
        pool = dates or numerics
        if pool:
            combos.append({"field": pool[0].name, "trigger_fields": [pool[0].name]})
    return combos


def score_priority(
    template: HypothesisTemplate, metadata: TopicMetadata, trigger_fields: list[str]
) -> int:
    field_map = metadata.field_map()
    priority = template.base_priority
    profiles = [field_map[name] for name in trigger_fields]
    if metadata.record_count > 0 and all(
        p.null_count / metadata.record_count < NULL_RATIO_BONUS_LIMIT for p in profiles
    ):
        priority += 1
    if metadata.record_count >= SIZE_BONUS_THRESHOLD:
        priority += 1
    if any(not p.distinct_exact for p in profiles):
        priority -= 2
    return max(1, min(10, priority))


def _fill(pattern: str, slots: dict) -> str:
    groupers = slots.get("groupers") or []
    return pattern.format(
        topic=slots["topic"],
        count=f"{slots['count']:,}",
        field=slots.get("field", ""),
        partner=slots.get("partner", ""),
        groupers=", ".join(groupers),
    )


def dedup_key(hypothesis: Hypothesis) -> tuple:
    return (hypothesis.category, tuple(sorted(hypothesis.required_fields)))


def generate(
    metadata: TopicMetadata,
    id_source: IdSource,
    config: GeneratorConfig = GeneratorConfig(),
    templates: Optional[tuple] = None,
) -> list[Hypothesis]:
    """Deterministic hypothesis set for a topic, ranked and capped."""
    templates = templates if templates is not None else built_in_templates()
    candidates: list[tuple] = []  # (sort key, template, combo, priority)
    for template in templates:
        for combo in _combos(template.trigger, metadata):
            priority = score_priority(template, metadata, combo["trigger_fields"])
            if priority < config.min_priority:
                continue
            sort_key = (
                -priority,
                template.template_id,
                tuple(combo["trigger_fields"]),
            )
            candidates.append((sort_key, template, combo, priority))
    candidates.sort(key=lambda c: c[0])

    hypotheses: list[Hypothesis] = []
    seen: set[tuple] = set()
    for _key, template, combo, priority in candidates:
        if len(hypotheses) >= config.max_hypotheses:
            break
        slots = dict(combo)
        slots["topic"] = metadata.name
        slots["count"] = metadata.record_count
        executable = template.category not in NON_EXECUTABLE_CATEGORIES
        hypothesis = Hypothesis(
            id=id_source.next_text("hyp"),
            created_at=utc_now_text(),
            source_topic_id=metadata.id,
            category=template.category,
            question=_fill(template.question, slots),
            rationale=_fill(template.rationale, slots),
            expected_insight=_fill(template.insight, slots),
            priority=priority,
            required_fields=tuple(combo["trigger_fields"]),
            executable=executable,
            status="pending",
        )
        key = dedup_key(hypothesis)
        if key in seen:
            continue
        seen.add(key)
        hypotheses.append(hypothesis)
    return hypotheses


# ---------------------------------------------------------------------------
# External generator port
# ---------------------------------------------------------------------------


def external_generate(
    metadata: TopicMetadata,
    endpoint: str,
    id_source: IdSource,
    timeout: float = 10.0,
) -> tuple[list[Hypothesis], list[str]]:
    """Fetch candidates from an HTTP generator; returns (kept, warnings).

    The backend receives the serialized TopicMetadata and must answer with
    a JSON list of hypothesis candidates. Candidates that fail the
    contract or reference fields outside the topic are dropped with a
    warning; ids are always re-issued locally.
    """
    warnings: list[str] = []
    body = json.dumps(metadata.to_dict()).encode("utf-8")
    request = urllib.request.Request(
        endpoint, data=body, headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(request, timeout=timeout) as response:
            raw = json.loads(response.read().decode("utf-8"))
    except (urllib.error.URLError, OSError, ValueError) as exc:
        warnings.append(f"external generator unreachable: {exc}")
        return [], warnings
    if not isinstance(raw, list):
        warnings.append("external generator response is not a list")
        return [], warnings

    known_fields = {f.name for f in metadata.fields}
    kept: list[Hypothesis] = []
    for index, item in enumerate(raw):
        if not isinstance(item, dict):
            warnings.append(f"candidate {index}: not an object, dropped")
            continue
        category = item.get("category")
        question = item.get("question")
        required = item.get("required_fields", [])
        if category not in HYPOTHESIS_CATEGORIES or not question:
            warnings.append(f"candidate {index}: missing category/question, dropped")
            continue
        unknown = [f for f in required if f not in known_fields]
        if unknown:
            warnings.append(
                f"candidate {index}: references unknown field(s) {unknown}, dropped"
            )
            continue
        try:
            priority = max(1, min(10, int(item.get("priority", 5))))
        except (TypeError, ValueError):
            priority = 5
        hypothesis = Hypothesis(
            id=id_source.next_text("hyp"),
            created_at=utc_now_text(),
            source_topic_id=metadata.id,
            category=category,
            question=str(question),
            rationale=str(item.get("rationale", "")),
            expected_insight=str(item.get("expected_insight", "")),
            priority=priority,
            required_fields=tuple(str(f) for f in required),
            executable=category not in NON_EXECUTABLE_CATEGORIES,
            status="pending",
        )
        problems = hypothesis.validate()
        if problems:
            warnings.append(f"candidate {index}: {'; '.join(problems)}, dropped")
            continue
        kept.append(hypothesis)
    return kept, warnings


def merge_external(
    deterministic: list[Hypothesis], external: list[Hypothesis], cap: int
) -> list[Hypothesis]:
    """External candidates appended after deterministic ones, deduplicated."""
    seen = {dedup_key(h) for h in deterministic}
    merged = list(deterministic)
    for hypothesis in external:
        key = dedup_key(hypothesis)
        if key in seen or len(merged) >= cap:
            continue
        seen.add(key)
        merged.append(hypothesis)
    return merged
