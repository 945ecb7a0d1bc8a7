"""File-backed artifact store.

Artifacts live under ``<root>/store/<prefix>/<id>.json`` in canonical
JSON. The store is the system of record; the event bus only carries
references plus small payload copies. Writes are atomic (temp file then
rename) so a crash never leaves a half-written artifact behind.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Iterator, Optional

from .contracts import (
    Artifact,
    ArtifactId,
    ContractError,
    ID_PREFIXES,
    deserialize_artifact,
    lineage_refs,
    serialize_artifact,
)

STORE_ENV_VAR = "INSIGHT_STORE"


class StoreError(Exception):
    pass


class ArtifactStore:
    def __init__(self, root: Optional[str] = None):
        if root is None:
            root = os.environ.get(STORE_ENV_VAR, ".insight")
        self.root = Path(root)
        self.store_dir = self.root / "store"
        self.store_dir.mkdir(parents=True, exist_ok=True)

    def _path_for(self, artifact_id: str) -> Path:
        parsed = ArtifactId.parse(artifact_id)
        return self.store_dir / parsed.prefix / f"{artifact_id}.json"

    def put(self, artifact: Artifact) -> str:
        text = serialize_artifact(artifact)
        path = self._path_for(artifact.id)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return artifact.id

    def exists(self, artifact_id: str) -> bool:
        try:
            return self._path_for(artifact_id).exists()
        except ContractError:
            return False

    def get(self, artifact_id: str) -> Artifact:
        path = self._path_for(artifact_id)
        if not path.exists():
            raise StoreError(f"no stored artifact with id {artifact_id}")
        return deserialize_artifact(path.read_text(encoding="utf-8"))

    def get_text(self, artifact_id: str) -> str:
        path = self._path_for(artifact_id)
        if not path.exists():
            raise StoreError(f"no stored artifact with id {artifact_id}")
        return path.read_text(encoding="utf-8")

    def list_ids(self, prefix: Optional[str] = None) -> list[str]:
        prefixes = [prefix] if prefix else list(ID_PREFIXES)
        ids = []
        for p in prefixes:
            folder = self.store_dir / p
            if not folder.is_dir():
                continue
            for entry in folder.iterdir():
                if entry.suffix == ".json":
                    ids.append(entry.stem)
        return sorted(ids)

    def iter_artifacts(self, prefix: Optional[str] = None) -> Iterator[Artifact]:
        for artifact_id in self.list_ids(prefix):
            yield self.get(artifact_id)

    def check_referential_integrity(self) -> list[str]:
        """Return one message per dangling reference across the whole store."""
        problems = []
        for artifact in self.iter_artifacts():
            for role, ref in lineage_refs(artifact):
                if not self.exists(ref):
                    problems.append(
                        f"{artifact.id}: {role} reference {ref} not in store"
                    )
        return problems
