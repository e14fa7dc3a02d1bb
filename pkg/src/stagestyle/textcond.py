"""Text conditioning: tokenization, embedding injection, and a toy encoder.

A conditioning vector c(prompt) is a (sequence length x conditioning_dim)
matrix. Learned stage embeddings are injected at the placeholder position of
the token sequence *before* encoding, so gradients of any downstream loss can
flow back into the injected vector and nothing else.

The toy encoder is deterministic, position-sensitive, and differentiable:

    row_i = tanh((x_i * gain_i) @ W + bias_i)

where x_i is the token embedding at position i (or the injected vector at the
placeholder slot). Each output row depends only on its own input position,
which makes injection locality trivially checkable. Real encoders plug in
behind the same interface; they only need `encode` over token ids plus an
embedding-override map (and the two vjp hooks if they are to be trained
against).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Protocol, runtime_checkable

import numpy as np

from .errors import (
    DimensionMismatchError,
    UnknownPlaceholderError,
    ValidationError,
)
from .stagespace import MultiStageTokenSet, StageEmbeddingTable, embedding_for

PROVENANCE_FULL = "full"
PROVENANCE_STYLE = "style"
PROVENANCE_CONTEXT = "context"
PROVENANCE_NULL = "null"
_PROVENANCES = (PROVENANCE_FULL, PROVENANCE_STYLE, PROVENANCE_CONTEXT, PROVENANCE_NULL)

BOS_ID = 0
EOS_ID = 1
_FIRST_WORD_ID = 2


def _word_id(word: str, vocab_size: int) -> int:
    """Stable FNV-1a hash of a word into [2, vocab_size). Never uses built-in hash()."""
    h = 0xCBF29CE484222325
    for b in word.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return _FIRST_WORD_ID + h % (vocab_size - _FIRST_WORD_ID)


@dataclass(frozen=True)
class TokenSequence:
    """Token ids plus the position of the (at most one) style placeholder."""

    tokens: tuple[int, ...]
    placeholder_slots: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        slots = dict(self.placeholder_slots)
        if len(slots) > 1:
            raise ValidationError(
                f"at most one style placeholder per sequence, got {sorted(slots)}"
            )
        for pos in slots:
            if not 0 <= pos < len(self.tokens):
                raise ValidationError(
                    f"placeholder position {pos} outside sequence of length {len(self.tokens)}"
                )
        object.__setattr__(self, "placeholder_slots", slots)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def placeholder(self) -> tuple[int, str] | None:
        """(position, token name) of the placeholder, or None."""
        for pos, name in self.placeholder_slots.items():
            return pos, name
        return None


@dataclass(frozen=True)
class ConditioningVector:
    """Encoded prompt: (sequence length x conditioning_dim) matrix + provenance."""

    values: np.ndarray = field(repr=False)
    provenance: str = PROVENANCE_FULL

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValidationError(f"conditioning must be 2-D, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("conditioning values must be finite")
        if self.provenance not in _PROVENANCES:
            raise ValidationError(
                f"provenance must be one of {_PROVENANCES}, got {self.provenance!r}"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


@runtime_checkable
class TextEncoder(Protocol):
    """Adapter contract for text encoders.

    Attributes:
        embedding_dim: dimensionality of token embeddings (the injectable space).
        conditioning_dim: per-position width of the encoded output.
        differentiable: whether the vjp hooks are available.

    `encode(seq, overrides)` returns the (len(seq) x conditioning_dim) matrix,
    with `overrides` mapping sequence positions to replacement token
    embeddings. Encoders must be deterministic and read-only after
    construction.
    """

    embedding_dim: int
    conditioning_dim: int
    differentiable: bool

    def tokenize(self, prompt: str, token_set: MultiStageTokenSet | None = None) -> TokenSequence: ...

    def encode(self, seq: TokenSequence, overrides: Mapping[int, np.ndarray] | None = None) -> np.ndarray: ...


class ToyTextEncoder:
    """Seeded random-weight encoder; see module docstring for the forward rule."""

    def __init__(
        self,
        seed: int = 0,
        embedding_dim: int = 16,
        conditioning_dim: int = 16,
        vocab_size: int = 512,
        max_len: int = 64,
    ):
        if vocab_size <= _FIRST_WORD_ID:
            raise ValidationError("vocab_size too small")
        self.embedding_dim = embedding_dim
        self.conditioning_dim = conditioning_dim
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.differentiable = True

        # scales keep pre-activations in tanh's responsive range while a small
        # embedding change still moves the output appreciably
        rng = np.random.default_rng(seed)
        self.vocab_table = rng.normal(0.0, 0.2, size=(vocab_size, embedding_dim))
        self.pos_gain = rng.uniform(0.6, 1.4, size=(max_len, embedding_dim))
        self.mix = rng.normal(0.0, 4.0 / np.sqrt(embedding_dim), size=(embedding_dim, conditioning_dim))
        self.pos_bias = rng.normal(0.0, 0.15, size=(max_len, conditioning_dim))
        for arr in (self.vocab_table, self.pos_gain, self.mix, self.pos_bias):
            arr.setflags(write=False)
        self._null_cache: np.ndarray | None = None

    def token_embedding(self, word: str) -> np.ndarray:
        """Vocabulary embedding of a single word (used to seed stage tables)."""
        return self.vocab_table[_word_id(word.lower(), self.vocab_size)].copy()

    def tokenize(self, prompt: str, token_set: MultiStageTokenSet | None = None) -> TokenSequence:
        """Whitespace tokenization with BOS/EOS markers.

        Words of the form "<name>" are treated as style placeholders and
        recorded by name instead of being hashed into the vocabulary.
        """
        words = prompt.lower().split()
        tokens = [BOS_ID]
        slots: dict[int, str] = {}
        for word in words:
            if word.startswith("<") and word.endswith(">") and len(word) > 2:
                slots[len(tokens)] = word
                tokens.append(EOS_ID)  # id unused; the slot is overridden at encode time
            else:
                tokens.append(_word_id(word, self.vocab_size))
        tokens.append(EOS_ID)
        if len(tokens) > self.max_len:
            raise ValidationError(f"prompt of {len(tokens)} tokens exceeds max_len={self.max_len}")
        if token_set is not None:
            for name in slots.values():
                if name not in token_set.names():
                    raise UnknownPlaceholderError(
                        f"placeholder {name!r} not in token set {sorted(token_set.names())}"
                    )
        return TokenSequence(tuple(tokens), slots)

    def _input_rows(self, seq: TokenSequence, overrides: Mapping[int, np.ndarray] | None) -> np.ndarray:
        rows = self.vocab_table[np.asarray(seq.tokens, dtype=np.intp)].copy()
        # placeholder slots default to a zero embedding unless overridden
        for pos in seq.placeholder_slots:
            rows[pos] = 0.0
        if overrides:
            for pos, vec in overrides.items():
                vec = np.asarray(vec, dtype=np.float64)
                if vec.shape != (self.embedding_dim,):
                    raise DimensionMismatchError(
                        f"override at position {pos} has shape {vec.shape}, "
                        f"expected ({self.embedding_dim},)"
                    )
                if not 0 <= pos < len(seq):
                    raise ValidationError(f"override position {pos} outside sequence")
                rows[pos] = vec
        return rows

    def encode(self, seq: TokenSequence, overrides: Mapping[int, np.ndarray] | None = None) -> np.ndarray:
        """Per-position conditioning matrix, shape (len(seq), conditioning_dim)."""
        n = len(seq)
        if n == 0:
            return np.zeros((0, self.conditioning_dim))
        rows = self._input_rows(seq, overrides)
        pre = (rows * self.pos_gain[:n]) @ self.mix + self.pos_bias[:n]
        return np.tanh(pre)

    def vjp_injected(
        self,
        seq: TokenSequence,
        overrides: Mapping[int, np.ndarray],
        position: int,
        cotangent: np.ndarray,
    ) -> np.ndarray:
        """Gradient of <cotangent, encode(seq, overrides)> w.r.t. the override at `position`."""
        n = len(seq)
        out = self.encode(seq, overrides)
        cot = np.asarray(cotangent, dtype=np.float64)
        if cot.shape != out.shape:
            raise DimensionMismatchError(f"cotangent shape {cot.shape} != output shape {out.shape}")
        d_pre = cot[position] * (1.0 - out[position] ** 2)
        return (self.mix @ d_pre) * self.pos_gain[position]

    def weights_digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.vocab_table, self.pos_gain, self.mix, self.pos_bias):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def encode_with_injection(
    encoder,
    seq: TokenSequence,
    table: StageEmbeddingTable,
    t: int,
    token_set: MultiStageTokenSet | None = None,
    provenance: str = PROVENANCE_FULL,
) -> ConditioningVector:
    """Encode `seq` with the stage-t embedding injected at its placeholder slot.

    Without a placeholder this is a plain encode. The injected value is always
    the vector owning timestep t, regardless of which stage token name appears
    in the prompt (training prompts keep the two consistent by construction).
    """
    if table.embedding_dim != encoder.embedding_dim:
        raise DimensionMismatchError(
            f"table dim {table.embedding_dim} != encoder embedding dim {encoder.embedding_dim}"
        )
    slot = seq.placeholder
    if slot is None:
        return ConditioningVector(encoder.encode(seq), provenance)
    pos, name = slot
    if token_set is not None and name not in token_set.names():
        raise UnknownPlaceholderError(
            f"placeholder {name!r} not in token set {sorted(token_set.names())}"
        )
    injected = embedding_for(table, t).astype(np.float64)
    return ConditioningVector(encoder.encode(seq, {pos: injected}), provenance)


def encode_null(encoder) -> ConditioningVector:
    """Conditioning of the empty prompt (BOS/EOS only); cached per encoder."""
    cached = getattr(encoder, "_null_cache", None)
    if cached is None:
        seq = encoder.tokenize("")
        cached = encoder.encode(seq)
        try:
            encoder._null_cache = cached
        except AttributeError:
            pass
    return ConditioningVector(cached, PROVENANCE_NULL)
