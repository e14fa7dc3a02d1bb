"""Guided sampling: style/context guidance layered on classifier-free guidance.

Four noise predictions enter per step — under the null prompt, the full prompt
(context + style suffix), the style suffix alone, and the context alone — and
combine elementwise as

    eps_hat = eps(null)
            + lambda_n * (eps(full)    - eps(null))
            + lambda_c * (eps(context) - eps(null))
            + lambda_s * (eps(full)    - eps(context))
            + lambda_s * (eps(style)   - eps(null))
            + lambda_c * (eps(full)    - eps(style))

The two paired difference groups balance the style-first and context-first
decompositions of the full prompt; `compose_guidance_v1`/`_v2` expose each
one-sided form for ablations. With lambda_s = lambda_c = 0 the rule is exactly
classifier-free guidance.

The reverse loop is a deterministic DDIM-style update over evenly spaced
timesteps. At each visited timestep the stage embedding owning t is injected
into the full and style conditionings, and only the conditionings that carry a
nonzero-scale term are evaluated (pass economy). Because alpha_bar_0 == 1, a
step evaluated at t = 0 is an exact no-op on the latent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .backend import Backend, LatentCode
from .errors import (
    DimensionMismatchError,
    NumericError,
    ScheduleMismatchError,
    ValidationError,
)
from .persistence import StyleCheckpoint
from .prompts import PromptBundle
from .stagespace import embedding_for, stage_of
from .textcond import (
    ConditioningVector,
    PROVENANCE_CONTEXT,
    PROVENANCE_FULL,
    PROVENANCE_STYLE,
    encode_null,
    encode_with_injection,
)

PASS_NULL = "null"
PASS_FULL = "full"
PASS_STYLE = "style"
PASS_CONTEXT = "context"


@dataclass(frozen=True)
class GuidanceScales:
    """Classifier-free (lambda_n), style (lambda_s), and context (lambda_c) scales."""

    lambda_n: float = 7.5
    lambda_s: float = 0.0
    lambda_c: float = 0.0

    def __post_init__(self):
        for name in ("lambda_n", "lambda_s", "lambda_c"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class GuidanceInputs:
    """The four noise predictions entering the guidance rule (identical shapes)."""

    eps_null: np.ndarray = field(repr=False)
    eps_full: np.ndarray = field(repr=False)
    eps_style: np.ndarray = field(repr=False)
    eps_context: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = np.asarray(self.eps_null).shape
        for name in ("eps_full", "eps_style", "eps_context"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != shape:
                raise DimensionMismatchError(f"{name} shape {arr.shape} != eps_null shape {shape}")


def compose_guidance(inputs: GuidanceInputs, scales: GuidanceScales) -> np.ndarray:
    """Six-term combined guidance (see module docstring)."""
    n, f = np.asarray(inputs.eps_null, dtype=np.float64), np.asarray(inputs.eps_full, dtype=np.float64)
    s, c = np.asarray(inputs.eps_style, dtype=np.float64), np.asarray(inputs.eps_context, dtype=np.float64)
    return (
        n
        + scales.lambda_n * (f - n)
        + scales.lambda_c * (c - n)
        + scales.lambda_s * (f - c)
        + scales.lambda_s * (s - n)
        + scales.lambda_c * (f - s)
    )


def compose_guidance_v1(inputs: GuidanceInputs, lambda_s: float, lambda_c: float) -> np.ndarray:
    """Context-first one-sided form: null -> context -> full."""
    n, f = np.asarray(inputs.eps_null, dtype=np.float64), np.asarray(inputs.eps_full, dtype=np.float64)
    c = np.asarray(inputs.eps_context, dtype=np.float64)
    return n + lambda_c * (c - n) + lambda_s * (f - c)


def compose_guidance_v2(inputs: GuidanceInputs, lambda_s: float, lambda_c: float) -> np.ndarray:
    """Style-first one-sided form: null -> style -> full."""
    n, f = np.asarray(inputs.eps_null, dtype=np.float64), np.asarray(inputs.eps_full, dtype=np.float64)
    s = np.asarray(inputs.eps_style, dtype=np.float64)
    return n + lambda_s * (s - n) + lambda_c * (f - s)


def required_passes(scales: GuidanceScales) -> tuple[str, ...]:
    """Conditionings whose prediction carries at least one nonzero-scale term."""
    passes = [PASS_NULL]
    if scales.lambda_n or scales.lambda_s or scales.lambda_c:
        passes.append(PASS_FULL)
    if scales.lambda_s or scales.lambda_c:
        passes.extend((PASS_STYLE, PASS_CONTEXT))
    return tuple(passes)


@dataclass(frozen=True)
class StepTrace:
    """Record of one evaluated timestep: which stage vector was injected, which passes ran."""

    t: int
    stage: int
    injected: np.ndarray = field(repr=False)
    passes: tuple[str, ...] = ()


@dataclass(frozen=True)
class SampleResult:
    image: np.ndarray = field(repr=False)
    latent: LatentCode = field(repr=False)
    trace: tuple[StepTrace, ...]
    metadata: dict


def spaced_timesteps(num_timesteps: int, num_steps: int) -> list[int]:
    """Evenly spaced descending timesteps from num_timesteps-1 to 0 inclusive."""
    if not 1 <= num_steps <= num_timesteps:
        raise ValidationError(f"num_steps must be in [1, {num_timesteps}], got {num_steps}")
    grid = np.linspace(num_timesteps - 1, 0, num_steps)
    ts = [int(round(x)) for x in grid]
    if len(set(ts)) != len(ts):  # spacing >= 1 makes rounded values distinct
        raise ValidationError("internal: timestep grid collapsed")
    return ts


class _ConditioningCache:
    """Per-stage full/style conditionings plus fixed null/context ones."""

    def __init__(self, backend: Backend, checkpoint: StyleCheckpoint, bundle: PromptBundle):
        self.backend = backend
        self.table = checkpoint.table()
        self.tokens = checkpoint.tokens
        encoder = backend.encoder
        token = self.tokens.base_token
        self.full_seq = encoder.tokenize(bundle.full_prompt(token), self.tokens)
        self.style_seq = encoder.tokenize(bundle.style_prompt(token), self.tokens)
        context_seq = encoder.tokenize(bundle.context_prompt(), self.tokens)
        self.cond_null = encode_null(encoder)
        self.cond_context = ConditioningVector(encoder.encode(context_seq), PROVENANCE_CONTEXT)
        self._by_stage: dict[int, tuple[ConditioningVector, ConditioningVector]] = {}

    def at(self, t: int) -> tuple[ConditioningVector, ConditioningVector, int, np.ndarray]:
        """(full, style) conditionings for timestep t plus stage index and injected vector."""
        k = stage_of(self.table.schedule, t)
        if k not in self._by_stage:
            encoder = self.backend.encoder
            full = encode_with_injection(
                encoder, self.full_seq, self.table, t, self.tokens, PROVENANCE_FULL
            )
            style = encode_with_injection(
                encoder, self.style_seq, self.table, t, self.tokens, PROVENANCE_STYLE
            )
            self._by_stage[k] = (full, style)
        full, style = self._by_stage[k]
        return full, style, k, embedding_for(self.table, t)


def _guided_denoise(
    backend: Backend,
    cache: _ConditioningCache,
    z: np.ndarray,
    eval_ts: Sequence[int],
    scales: GuidanceScales,
    structure: np.ndarray | None,
    collect_trace: bool,
) -> tuple[LatentCode, tuple[StepTrace, ...]]:
    denoiser, _, _, schedule = backend
    passes = required_passes(scales)
    zeros = np.zeros(denoiser.latent_shape)
    trace: list[StepTrace] = []

    for i, t in enumerate(eval_ts):
        latent = LatentCode(z)
        full, style, stage, injected = cache.at(t)
        eps_null = denoiser.predict(latent, t, cache.cond_null, structure)
        eps_full = denoiser.predict(latent, t, full, structure) if PASS_FULL in passes else zeros
        eps_style = denoiser.predict(latent, t, style, structure) if PASS_STYLE in passes else zeros
        eps_context = (
            denoiser.predict(latent, t, cache.cond_context, structure)
            if PASS_CONTEXT in passes
            else zeros
        )
        eps_hat = compose_guidance(
            GuidanceInputs(eps_null, eps_full, eps_style, eps_context), scales
        )

        t_next = eval_ts[i + 1] if i + 1 < len(eval_ts) else 0
        ab_t, ab_next = schedule.alpha_bar(t), schedule.alpha_bar(t_next)
        x0_hat = (z - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
        z = np.sqrt(ab_next) * x0_hat + np.sqrt(1.0 - ab_next) * eps_hat
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite latent after step at t={t} (stage {stage})")
        if collect_trace:
            trace.append(StepTrace(t=t, stage=stage, injected=injected, passes=passes))

    return LatentCode(z), tuple(trace)


def _check_schedule(backend: Backend, checkpoint: StyleCheckpoint) -> None:
    if checkpoint.schedule.num_timesteps != backend.schedule.num_timesteps:
        raise ScheduleMismatchError(
            f"checkpoint trained for {checkpoint.schedule.num_timesteps} timesteps, "
            f"backend has {backend.schedule.num_timesteps}"
        )


def sample(
    backend: Backend,
    checkpoint: StyleCheckpoint,
    bundle: PromptBundle,
    scales: GuidanceScales | None = None,
    num_steps: int = 50,
    seed: int = 0,
    structure: np.ndarray | None = None,
    collect_trace: bool = False,
) -> SampleResult:
    """Deterministic text-to-image sampling with staged style injection.

    The reverse loop starts from seeded standard-normal noise and visits
    `num_steps` evenly spaced timesteps; the decoded image and the final
    latent come back along with an optional per-step trace.
    """
    _check_schedule(backend, checkpoint)
    scales = scales or GuidanceScales()
    cache = _ConditioningCache(backend, checkpoint, bundle)
    eval_ts = spaced_timesteps(backend.schedule.num_timesteps, num_steps)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(backend.denoiser.latent_shape)
    latent, trace = _guided_denoise(backend, cache, z, eval_ts, scales, structure, collect_trace)
    image = backend.codec.decode(latent)
    metadata = {
        "prompt": bundle.full_prompt(checkpoint.tokens.base_token),
        "scales": {"lambda_n": scales.lambda_n, "lambda_s": scales.lambda_s, "lambda_c": scales.lambda_c},
        "num_steps": num_steps,
        "seed": seed,
        "passes_per_step": list(required_passes(scales)),
    }
    return SampleResult(image=image, latent=latent, trace=trace, metadata=metadata)


def denoise_from(
    backend: Backend,
    checkpoint: StyleCheckpoint,
    bundle: PromptBundle,
    z_start: LatentCode,
    t_start: int,
    scales: GuidanceScales | None = None,
    structure: np.ndarray | None = None,
    collect_trace: bool = False,
) -> tuple[LatentCode, tuple[StepTrace, ...]]:
    """Guided denoising from a given noisy latent at timestep t_start down to 0.

    Visits every timestep t_start, t_start-1, ..., 0 (image-to-image pipelines
    start from a partially noised latent, so the full remaining ladder is
    cheap). At t_start = 0 the loop is an exact identity.
    """
    _check_schedule(backend, checkpoint)
    if not 0 <= t_start < backend.schedule.num_timesteps:
        raise ValidationError(
            f"t_start {t_start} out of range [0, {backend.schedule.num_timesteps})"
        )
    scales = scales or GuidanceScales()
    cache = _ConditioningCache(backend, checkpoint, bundle)
    eval_ts = list(range(t_start, -1, -1))
    return _guided_denoise(
        backend, cache, z_start.values.copy(), eval_ts, scales, structure, collect_trace
    )
