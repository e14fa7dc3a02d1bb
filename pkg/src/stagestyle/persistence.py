"""Checkpoint serialization: versioned JSON with bit-exact vectors.

A trained style is a single JSON document: human-readable metadata plus the
stage vectors as base64-encoded little-endian float32 rows, so round trips are
bit-exact while the file stays inspectable. A sha256 over the canonical
payload guards integrity; files are written atomically (temp file + rename).
Nothing nondeterministic (timestamps, hostnames) goes into the payload, so
identical inputs serialize to identical bytes.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .errors import (
    CheckpointFormatError,
    CheckpointIntegrityError,
    CheckpointVersionError,
    ValidationError,
)
from .stagespace import (
    EMBEDDING_DTYPE,
    MultiStageTokenSet,
    StageEmbeddingTable,
    StageSchedule,
)

FORMAT_VERSION = 1
CHECKPOINT_SUFFIX = ".stylecheckpoint.json"


@dataclass(frozen=True)
class StyleCheckpoint:
    """A trained style: schedule, token names, stage vectors, and provenance."""

    schedule: StageSchedule
    tokens: MultiStageTokenSet
    vectors: np.ndarray = field(repr=False)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=EMBEDDING_DTYPE)
        if vec.ndim != 2 or vec.shape[0] != self.schedule.num_stages:
            raise ValidationError(
                f"vectors must have shape ({self.schedule.num_stages}, dim), got {vec.shape}"
            )
        if self.tokens.num_stages != self.schedule.num_stages:
            raise ValidationError(
                f"token set has {self.tokens.num_stages} stages, schedule {self.schedule.num_stages}"
            )
        if not np.all(np.isfinite(vec)):
            raise ValidationError("checkpoint vectors must be finite")
        object.__setattr__(self, "vectors", vec)

    @property
    def embedding_dim(self) -> int:
        return self.vectors.shape[1]

    def table(self) -> StageEmbeddingTable:
        return StageEmbeddingTable(self.schedule, self.vectors.copy())

    @classmethod
    def from_table(
        cls,
        table: StageEmbeddingTable,
        tokens: MultiStageTokenSet,
        metadata: dict[str, Any] | None = None,
    ) -> "StyleCheckpoint":
        return cls(table.schedule, tokens, table.vectors.copy(), dict(metadata or {}))

    def with_metadata(self, **extra: Any) -> "StyleCheckpoint":
        return replace(self, metadata={**self.metadata, **extra})


def loss_history_digest(losses: list[float]) -> str:
    """Stable digest of a loss trajectory (float32 little-endian stream)."""
    return hashlib.sha256(np.asarray(losses, dtype="<f4").tobytes()).hexdigest()


def _payload(checkpoint: StyleCheckpoint) -> dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "num_stages": checkpoint.schedule.num_stages,
        "num_timesteps": checkpoint.schedule.num_timesteps,
        "base_token": checkpoint.tokens.base_token,
        "stage_tokens": list(checkpoint.tokens.stage_tokens),
        "embedding_dim": checkpoint.embedding_dim,
        "vectors": [
            base64.b64encode(np.ascontiguousarray(row, dtype="<f4").tobytes()).decode("ascii")
            for row in checkpoint.vectors
        ],
        "metadata": checkpoint.metadata,
    }


def _canonical(payload: dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def checkpoint_bytes(checkpoint: StyleCheckpoint) -> bytes:
    """Serialized document bytes (deterministic for identical inputs)."""
    payload = _payload(checkpoint)
    content_hash = hashlib.sha256(_canonical(payload).encode("ascii")).hexdigest()
    doc = {"content_hash": content_hash, **payload}
    return (json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=True) + "\n").encode("ascii")


def save(checkpoint: StyleCheckpoint, path: str | Path) -> None:
    """Write the checkpoint atomically."""
    path = Path(path)
    data = checkpoint_bytes(checkpoint)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path: str | Path) -> StyleCheckpoint:
    """Read and verify a checkpoint; distinct errors for format/version/integrity."""
    path = Path(path)
    raw = path.read_bytes()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: not a valid checkpoint document: {exc}") from exc
    if not isinstance(doc, dict):
        raise CheckpointFormatError(f"{path}: checkpoint document must be a JSON object")

    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version!r} not supported (this build reads {FORMAT_VERSION})"
        )

    required = (
        "content_hash",
        "num_stages",
        "num_timesteps",
        "base_token",
        "stage_tokens",
        "embedding_dim",
        "vectors",
        "metadata",
    )
    missing = [key for key in required if key not in doc]
    if missing:
        raise CheckpointFormatError(f"{path}: missing fields {missing}")

    recorded_hash = doc["content_hash"]
    payload = {key: doc[key] for key in doc if key != "content_hash"}
    actual_hash = hashlib.sha256(_canonical(payload).encode("ascii")).hexdigest()
    if actual_hash != recorded_hash:
        raise CheckpointIntegrityError(
            f"{path}: content hash mismatch (recorded {recorded_hash[:12]}…, actual {actual_hash[:12]}…)"
        )

    try:
        schedule = StageSchedule(int(doc["num_stages"]), int(doc["num_timesteps"]))
        tokens = MultiStageTokenSet(doc["base_token"], tuple(doc["stage_tokens"]))
        dim = int(doc["embedding_dim"])
        rows = []
        for blob in doc["vectors"]:
            row = np.frombuffer(base64.b64decode(blob, validate=True), dtype="<f4")
            if row.size != dim:
                raise CheckpointFormatError(
                    f"{path}: vector row has {row.size} values, expected {dim}"
                )
            rows.append(row.astype(EMBEDDING_DTYPE))
        vectors = np.stack(rows) if rows else np.zeros((0, dim), dtype=EMBEDDING_DTYPE)
        return StyleCheckpoint(schedule, tokens, vectors, dict(doc["metadata"]))
    except CheckpointFormatError:
        raise
    except (ValidationError, ValueError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: malformed checkpoint fields: {exc}") from exc
