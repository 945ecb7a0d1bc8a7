"""Embedded replayable event bus.

Topics are append-only logs on disk, one file per topic under
``store/log/``, with dense offsets starting at zero. Each line is
``<byte length><TAB><json>`` so a reader can detect and drop a
half-written tail after a crash instead of silently replaying a corrupt
event. Consumer groups keep durable cursors and advance them only on
explicit commit; delivery is at-least-once, so consumers must be
idempotent. There is a total order per topic and no ordering promise
across topics.
"""

from __future__ import annotations

import json
import os
import threading
import time
from pathlib import Path
from typing import Any, Optional

from .contracts import (
    Artifact,
    artifact_type_tag,
    deserialize_artifact,
    lineage_refs as contract_lineage_refs,
    serialize_artifact,
    utc_now_text,
)

# Standard topic names. Data batches ride on data.<topic_id> and execution
# results on results.<artifact_id>.
TOPIC_METADATA = "metadata"
TOPIC_HYPOTHESES = "hypotheses"
TOPIC_PLANS = "plans"
TOPIC_ARTIFACTS = "artifacts"
TOPIC_VALIDATIONS = "validations"
TOPIC_VISUALIZATIONS = "visualizations"
TOPIC_DEPLOYMENTS = "deployments"
TOPIC_CONTROL = "control"

STANDARD_TOPICS = (
    TOPIC_METADATA,
    TOPIC_HYPOTHESES,
    TOPIC_PLANS,
    TOPIC_ARTIFACTS,
    TOPIC_VALIDATIONS,
    TOPIC_VISUALIZATIONS,
    TOPIC_DEPLOYMENTS,
    TOPIC_CONTROL,
)

CONTRACT_TYPE_TAGS = (
    "topic_metadata",
    "hypothesis",
    "analytic_plan",
    "generated_artifact",
    "validation_report",
    "visualization_spec",
    "deploy_manifest",
)

ENVELOPE_TYPES = CONTRACT_TYPE_TAGS + ("data", "control")


def data_topic(topic_id: str) -> str:
    return f"data.{topic_id}"


def results_topic(artifact_id: str) -> str:
    return f"results.{artifact_id}"


class BusError(Exception):
    pass


class EventEnvelope:
    """One logged event, addressed by (topic, offset), immutable."""

    __slots__ = ("topic", "offset", "artifact_type", "timestamp", "payload", "lineage_refs")

    def __init__(
        self,
        topic: str,
        offset: int,
        artifact_type: str,
        timestamp: str,
        payload: Any,
        lineage_refs: tuple = (),
    ):
        self.topic = topic
        self.offset = offset
        self.artifact_type = artifact_type
        self.timestamp = timestamp
        self.payload = payload
        self.lineage_refs = lineage_refs

    def to_dict(self) -> dict:
        return {
            "topic": self.topic,
            "offset": self.offset,
            "artifact_type": self.artifact_type,
            "timestamp": self.timestamp,
            "payload": self.payload,
            "lineage_refs": [list(ref) for ref in self.lineage_refs],
        }

    def artifact(self) -> Artifact:
        if self.artifact_type not in CONTRACT_TYPE_TAGS:
            raise BusError(
                f"envelope type {self.artifact_type!r} does not carry an artifact"
            )
        return deserialize_artifact(self.payload)


def _encode_line(record: dict) -> bytes:
    body = json.dumps(record, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return str(len(body)).encode("ascii") + b"\t" + body + b"\n"


class EventBus:
    """Durable topic logs plus in-process subscription.

    fsync_policy: "always" flushes to disk per publish (survives process
    kill), "never" leaves flushing to the OS (fast, fine for tests).
    """

    def __init__(self, root: str, fsync_policy: str = "never", auto_create_topics: bool = True):
        if fsync_policy not in ("always", "never"):
            raise BusError(f"unknown fsync policy {fsync_policy!r}")
        self.log_dir = Path(root) / "store" / "log"
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.cursor_dir = Path(root) / "store" / "cursors"
        self.cursor_dir.mkdir(parents=True, exist_ok=True)
        self.fsync_policy = fsync_policy
        self.auto_create_topics = auto_create_topics
        self._lock = threading.RLock()
        self._changed = threading.Condition(self._lock)
        self._events: dict[str, list[EventEnvelope]] = {}
        self._groups: set[str] = set()
        self._load_existing()

    # -- persistence ------------------------------------------------------

    def _topic_path(self, topic: str) -> Path:
        safe = topic.replace("/", "_")
        return self.log_dir / f"{safe}.ndjson"

    def _load_existing(self) -> None:
        for path in sorted(self.log_dir.glob("*.ndjson")):
            topic = path.stem
            self._events[topic] = list(self._read_log(path, topic))
        for path in self.cursor_dir.glob("*.json"):
            self._groups.add(path.stem)

    def _read_log(self, path: Path, topic: str):
        data = path.read_bytes()
        position = 0
        offset = 0
        while position < len(data):
            tab = data.find(b"\t", position)
            if tab < 0:
                break  # truncated length prefix
            try:
                length = int(data[position:tab])
            except ValueError:
                break  # corrupt prefix; drop the tail
            start = tab + 1
            end = start + length
            if end + 1 > len(data) or data[end : end + 1] != b"\n":
                break  # truncated body
            try:
                record = json.loads(data[start:end].decode("utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError):
                break
            yield EventEnvelope(
                topic=topic,
                offset=offset,
                artifact_type=record["artifact_type"],
                timestamp=record["timestamp"],
                payload=record["payload"],
                lineage_refs=tuple((r[0], r[1]) for r in record.get("lineage_refs", ())),
            )
            offset += 1
            position = end + 1

    # -- publishing -------------------------------------------------------

    def create_topic(self, topic: str) -> None:
        with self._lock:
            self._events.setdefault(topic, [])

    def publish(
        self,
        topic: str,
        artifact_type: str,
        payload: Any,
        lineage_refs: tuple = (),
        timestamp: Optional[str] = None,
    ) -> EventEnvelope:
        """Append an event durably; returns the stored envelope."""
        if artifact_type not in ENVELOPE_TYPES:
            raise BusError(f"unknown envelope type {artifact_type!r}")
        if artifact_type in CONTRACT_TYPE_TAGS:
            # Refuse to log artifact events whose payload breaks the contract.
            artifact = deserialize_artifact(payload)
            serialize_artifact(artifact)
            expected = artifact_type_tag(artifact)
            if expected != artifact_type:
                raise BusError(
                    f"envelope type {artifact_type!r} does not match payload type {expected!r}"
                )
            if not lineage_refs:
                lineage_refs = tuple(contract_lineage_refs(artifact))
        with self._lock:
            if topic not in self._events and not self.auto_create_topics:
                raise BusError(f"no such topic: {topic}")
            events = self._events.setdefault(topic, [])
            envelope = EventEnvelope(
                topic=topic,
                offset=len(events),
                artifact_type=artifact_type,
                timestamp=timestamp or utc_now_text(),
                payload=payload,
                lineage_refs=tuple(lineage_refs),
            )
            line = _encode_line(
                {
                    "artifact_type": envelope.artifact_type,
                    "timestamp": envelope.timestamp,
                    "payload": envelope.payload,
                    "lineage_refs": [list(ref) for ref in envelope.lineage_refs],
                }
            )
            with open(self._topic_path(topic), "ab") as handle:
                handle.write(line)
                if self.fsync_policy == "always":
                    handle.flush()
                    os.fsync(handle.fileno())
            events.append(envelope)
            self._changed.notify_all()
            return envelope

    def publish_artifact(self, topic: str, artifact: Artifact, timestamp: Optional[str] = None) -> EventEnvelope:
        text = serialize_artifact(artifact)
        return self.publish(
            topic,
            artifact_type_tag(artifact),
            json.loads(text),
            lineage_refs=tuple(contract_lineage_refs(artifact)),
            timestamp=timestamp,
        )

    def publish_control(self, kind: str, payload: dict, timestamp: Optional[str] = None) -> EventEnvelope:
        body = {"kind": kind}
        body.update(payload)
        return self.publish(TOPIC_CONTROL, "control", body, timestamp=timestamp)

    # -- reading ----------------------------------------------------------

    def topics(self) -> list[str]:
        with self._lock:
            return sorted(self._events)

    def length(self, topic: str) -> int:
        with self._lock:
            return len(self._events.get(topic, ()))

    def read(self, topic: str, from_offset: int = 0, limit: Optional[int] = None) -> list[EventEnvelope]:
        with self._lock:
            if from_offset < 0:
                raise BusError("offset must be non-negative")
            chunk = self._events.get(topic, [])[from_offset:]
            if limit is not None:
                chunk = chunk[:limit]
            return list(chunk)

    def replay(self, topic: str, from_offset: int = 0) -> list[EventEnvelope]:
        """The exact historical sequence from an offset; errors past the end."""
        with self._lock:
            if topic not in self._events:
                raise BusError(f"no such topic: {topic}")
            events = self._events[topic]
            if from_offset > len(events):
                raise BusError(
                    f"replay offset {from_offset} beyond end of {topic} "
                    f"(length {len(events)})"
                )
            return list(events[from_offset:])

    def wait_for_events(self, topic: str, from_offset: int, timeout: float) -> list[EventEnvelope]:
        """Block until the topic grows past from_offset, or the timeout."""
        deadline = time.monotonic() + timeout
        with self._lock:
            while True:
                events = self._events.get(topic, [])
                if len(events) > from_offset:
                    return list(events[from_offset:])
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return []
                self._changed.wait(remaining)

    # -- consumer groups --------------------------------------------------

    def register_group(self, group: str) -> None:
        with self._lock:
            if group not in self._groups:
                self._groups.add(group)
                path = self._cursor_path(group)
                if not path.exists():
                    path.write_text("{}")

    def _cursor_path(self, group: str) -> Path:
        return self.cursor_dir / f"{group}.json"

    def _load_cursors(self, group: str) -> dict[str, int]:
        path = self._cursor_path(group)
        if not path.exists():
            return {}
        try:
            return {k: int(v) for k, v in json.loads(path.read_text()).items()}
        except (json.JSONDecodeError, ValueError):
            return {}

    def cursor(self, group: str, topic: str) -> int:
        """Next offset the group will consume from the topic."""
        with self._lock:
            self._require_group(group)
            return self._load_cursors(group).get(topic, 0)

    def _require_group(self, group: str) -> None:
        if group not in self._groups:
            raise BusError(f"unknown consumer group: {group}")

    def commit(self, group: str, topic: str, offset: int) -> None:
        """Mark the event at `offset` consumed; the cursor moves past it."""
        with self._lock:
            self._require_group(group)
            if offset >= len(self._events.get(topic, ())):
                raise BusError(
                    f"cannot commit offset {offset} on {topic}: not yet published"
                )
            cursors = self._load_cursors(group)
            cursors[topic] = max(cursors.get(topic, 0), offset + 1)
            path = self._cursor_path(group)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(cursors, sort_keys=True))
            os.replace(tmp, path)

    def poll(self, group: str, topic: str, max_events: Optional[int] = None) -> list[EventEnvelope]:
        """Uncommitted events for the group, oldest first. Commit after
        processing; an uncommitted event is redelivered on the next poll."""
        with self._lock:
            self._require_group(group)
            return self.read(topic, self._load_cursors(group).get(topic, 0), max_events)
