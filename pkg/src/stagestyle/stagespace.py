"""Staged textual embedding space.

The denoising timesteps [0, num_timesteps) are split into `num_stages`
contiguous chunks ("stages"); each stage owns one learnable embedding vector
for the style placeholder token. The mapping is

    stage(t) = floor(t * num_stages / num_timesteps)

so chunk sizes differ by at most one, stage index grows with t, and the last
stage covers the highest-noise timesteps (the ones that shape global
structure; early stages govern fine, local detail).

Everything here is plain data plus pure functions; tables are small
(num_stages x embedding_dim) float32 arrays. Treat values as read-only once
constructed — no function in this package mutates its inputs, and mixing or
initialization always returns fresh storage, so instances are safe to share
across threads.
"""

from __future__ import annotations

import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    IncompleteAssignmentError,
    ScheduleMismatchError,
    TimestepRangeError,
    UnknownStyleError,
    ValidationError,
)

EMBEDDING_DTYPE = np.float32

_PLACEHOLDER_RE = re.compile(r"^<[^<>\s]+>$")


@dataclass(frozen=True)
class StageSchedule:
    """Partition of `num_timesteps` denoising timesteps into `num_stages` chunks."""

    num_stages: int
    num_timesteps: int

    def __post_init__(self):
        if not isinstance(self.num_stages, int) or not isinstance(self.num_timesteps, int):
            raise ValidationError("num_stages and num_timesteps must be integers")
        if self.num_timesteps < 1:
            raise ValidationError(f"num_timesteps must be positive, got {self.num_timesteps}")
        if not 1 <= self.num_stages <= self.num_timesteps:
            raise ValidationError(
                f"num_stages must be in [1, num_timesteps={self.num_timesteps}], "
                f"got {self.num_stages}"
            )


def stage_of(schedule: StageSchedule, t: int) -> int:
    """Stage index owning timestep t. Integer arithmetic, so exact."""
    t = int(t)
    if not 0 <= t < schedule.num_timesteps:
        raise TimestepRangeError(
            f"timestep {t} out of range [0, {schedule.num_timesteps})"
        )
    return min((t * schedule.num_stages) // schedule.num_timesteps, schedule.num_stages - 1)


def stage_bounds(schedule: StageSchedule, k: int) -> tuple[int, int]:
    """Half-open timestep interval [lo, hi) covered by stage k."""
    if not 0 <= k < schedule.num_stages:
        raise ValidationError(f"stage {k} out of range [0, {schedule.num_stages})")
    T, T_max = schedule.num_stages, schedule.num_timesteps
    lo = -(-k * T_max // T)  # ceil(k * T_max / T)
    hi = -(-(k + 1) * T_max // T)
    return lo, hi


@dataclass(frozen=True)
class MultiStageTokenSet:
    """The style placeholder token plus its per-stage variants.

    Placeholders use the "<name>" syntax, which cannot collide with ordinary
    vocabulary words (tokenizers in this package never produce angle-bracket
    words from plain text).
    """

    base_token: str
    stage_tokens: tuple[str, ...]

    def __post_init__(self):
        for tok in (self.base_token, *self.stage_tokens):
            if not _PLACEHOLDER_RE.match(tok):
                raise ValidationError(
                    f"placeholder token {tok!r} must look like '<name>' without spaces"
                )
        if len(set(self.stage_tokens)) != len(self.stage_tokens):
            raise ValidationError("stage tokens must be pairwise distinct")
        if self.base_token in self.stage_tokens:
            raise ValidationError("base token must not collide with a stage token")

    @classmethod
    def derive(cls, base_token: str, num_stages: int) -> "MultiStageTokenSet":
        """Auto-derive stage tokens: "<style>" -> "<style_0>" .. "<style_{T-1}>"."""
        if not _PLACEHOLDER_RE.match(base_token):
            raise ValidationError(
                f"base token {base_token!r} must look like '<name>' without spaces"
            )
        stem = base_token[1:-1]
        return cls(base_token, tuple(f"<{stem}_{k}>" for k in range(num_stages)))

    @property
    def num_stages(self) -> int:
        return len(self.stage_tokens)

    def names(self) -> frozenset[str]:
        return frozenset((self.base_token, *self.stage_tokens))

    def stage_index(self, token: str) -> int | None:
        """Stage index of a stage token; None for the base token."""
        if token == self.base_token:
            return None
        try:
            return self.stage_tokens.index(token)
        except ValueError:
            raise UnknownStyleError(f"token {token!r} not in this token set") from None


@dataclass(frozen=True)
class StageEmbeddingTable:
    """Per-stage embedding vectors, shape (num_stages, embedding_dim), float32."""

    schedule: StageSchedule
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=EMBEDDING_DTYPE)
        if vec.ndim != 2:
            raise ValidationError(f"vectors must be 2-D (stages x dim), got shape {vec.shape}")
        if vec.shape[0] != self.schedule.num_stages:
            raise ValidationError(
                f"expected {self.schedule.num_stages} stage vectors, got {vec.shape[0]}"
            )
        if not np.all(np.isfinite(vec)):
            raise ValidationError("stage embedding vectors must be finite")
        object.__setattr__(self, "vectors", vec)

    @property
    def embedding_dim(self) -> int:
        return self.vectors.shape[1]


def init_table(schedule: StageSchedule, seed_embedding: np.ndarray) -> StageEmbeddingTable:
    """Fresh table with every stage set to an independent copy of the seed vector."""
    seed = np.asarray(seed_embedding, dtype=EMBEDDING_DTYPE)
    if seed.ndim != 1:
        raise ValidationError(f"seed embedding must be 1-D, got shape {seed.shape}")
    if not np.all(np.isfinite(seed)):
        raise ValidationError("seed embedding must be finite")
    return StageEmbeddingTable(schedule, np.tile(seed, (schedule.num_stages, 1)))


def embedding_for(table: StageEmbeddingTable, t: int) -> np.ndarray:
    """Copy of the embedding vector owning timestep t."""
    return table.vectors[stage_of(table.schedule, t)].copy()


def replace_stage(table: StageEmbeddingTable, k: int, vector: np.ndarray) -> StageEmbeddingTable:
    """New table with stage k's vector replaced; all other rows bit-unchanged."""
    if not 0 <= k < table.schedule.num_stages:
        raise ValidationError(f"stage {k} out of range [0, {table.schedule.num_stages})")
    vec = np.asarray(vector, dtype=EMBEDDING_DTYPE)
    if vec.shape != (table.embedding_dim,):
        raise DimensionMismatchError(
            f"stage vector must have shape ({table.embedding_dim},), got {vec.shape}"
        )
    vectors = table.vectors.copy()
    vectors[k] = vec
    return StageEmbeddingTable(table.schedule, vectors)


def mix_styles(
    tables: Sequence[tuple[str, StageEmbeddingTable]] | Mapping[str, StageEmbeddingTable],
    assignment: Mapping[int, str],
) -> StageEmbeddingTable:
    """Compose a new table by picking each stage's vector from a named source.

    `assignment` maps every stage index in [0, num_stages) to a source name.
    The result behaves exactly like a single-style table.
    """
    if isinstance(tables, Mapping):
        named = dict(tables)
    else:
        named = dict(tables)
        if len(named) != len(tables):
            raise ValidationError("duplicate style names in tables")
    if not named:
        raise ValidationError("at least one source table is required")

    first = next(iter(named.values()))
    for name, tab in named.items():
        if tab.schedule != first.schedule:
            raise ScheduleMismatchError(
                f"table {name!r} schedule {tab.schedule} != {first.schedule}"
            )
        if tab.embedding_dim != first.embedding_dim:
            raise DimensionMismatchError(
                f"table {name!r} embedding dim {tab.embedding_dim} != {first.embedding_dim}"
            )

    T = first.schedule.num_stages
    missing = [k for k in range(T) if k not in assignment]
    if missing:
        raise IncompleteAssignmentError(f"assignment missing stages {missing} of [0, {T})")
    extra = [k for k in assignment if not 0 <= int(k) < T]
    if extra:
        raise IncompleteAssignmentError(f"assignment names out-of-range stages {extra}")

    vectors = np.empty_like(first.vectors)
    for k in range(T):
        name = assignment[k]
        if name not in named:
            raise UnknownStyleError(f"assignment for stage {k} names unknown style {name!r}")
        vectors[k] = named[name].vectors[k]
    return StageEmbeddingTable(first.schedule, vectors)
