"""Staged embedding optimization against a frozen backend.

Each step draws one training image, one timestep t, and fresh noise; builds
the stage-aware context prompt for stage(t); and takes one Adam update on the
single embedding vector owning that stage. Every other stage vector is left
bit-unchanged — the prompt contains only the active stage token, so the loss
gradient w.r.t. all other vectors is identically zero, and the optimizer state
is kept per stage.

All gradients are analytic (denoiser conditioning head -> pooled conditioning
-> encoder placeholder row) and are validated against central finite
differences in the test suite. Backend weights are never touched.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .backend import Backend, LatentCode, add_noise
from .errors import NumericError, ValidationError
from .persistence import StyleCheckpoint, loss_history_digest
from .prompts import CaptionRecord, PromptBundle, build_training_prompt, DEFAULT_SUFFIX_TEMPLATE
from .stagespace import (
    MultiStageTokenSet,
    StageEmbeddingTable,
    StageSchedule,
    init_table,
    replace_stage,
    stage_of,
)
from .textcond import ConditioningVector, PROVENANCE_FULL, TokenSequence

logger = logging.getLogger(__name__)

StepCallback = Callable[[dict], None]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    learning_rate: float = 5e-3
    batch_size: int = 4
    seed: int = 0
    stage_count: int = 6
    timestep_sampling: str = "uniform"
    opening: str = "a painting"
    suffix_template: str = DEFAULT_SUFFIX_TEMPLATE
    base_token: str = "<style>"
    initializer_token: str = "painting"

    def __post_init__(self):
        if self.steps < 0:
            raise ValidationError(f"steps must be >= 0, got {self.steps}")
        if self.learning_rate < 0 or not np.isfinite(self.learning_rate):
            raise ValidationError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.stage_count < 1:
            raise ValidationError(f"stage_count must be >= 1, got {self.stage_count}")
        if self.timestep_sampling != "uniform":
            raise ValidationError(f"unsupported timestep_sampling {self.timestep_sampling!r}")


@dataclass(frozen=True)
class StyleImage:
    image_id: str
    pixels: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class StyleDataset:
    """One or a few style reference images plus their caption records."""

    images: tuple[StyleImage, ...]
    captions: dict[str, CaptionRecord]

    def __post_init__(self):
        if not self.images:
            raise ValidationError("dataset needs at least one style image")
        ids = [img.image_id for img in self.images]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate image ids in dataset: {ids}")
        for image_id in ids:
            if image_id not in self.captions:
                raise ValidationError(f"image {image_id!r} has no caption record")
            if not self.captions[image_id].effective_caption:
                logger.warning(
                    "image %r has an empty context caption; training falls back to the plain prompt",
                    image_id,
                )

    @property
    def image_ids(self) -> tuple[str, ...]:
        return tuple(img.image_id for img in self.images)


class _StageAdam:
    """Adam moments kept per stage row; only the active row advances."""

    def __init__(self, num_stages: int, dim: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros((num_stages, dim))
        self.v = np.zeros((num_stages, dim))
        self.counts = np.zeros(num_stages, dtype=np.int64)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def update(self, k: int, vector: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.counts[k] += 1
        n = self.counts[k]
        self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * grad
        self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * grad**2
        m_hat = self.m[k] / (1 - self.beta1**n)
        v_hat = self.v[k] / (1 - self.beta2**n)
        return vector - lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainState:
    """Mutable per-run state: token set, cached latents/sequences, optimizer."""

    tokens: MultiStageTokenSet
    adam: _StageAdam
    z0: dict[str, LatentCode]
    sequences: dict[tuple[str, int], TokenSequence]
    step: int = 0
    last_step: dict | None = None


def loss_and_grad(
    backend: Backend,
    seq: TokenSequence,
    vector: np.ndarray,
    z0: LatentCode,
    t: int,
    eps_batch: np.ndarray,
    structure: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean loss over a batch of noise draws and its gradient w.r.t. `vector`.

    `vector` is the embedding injected at the sequence's placeholder slot;
    `eps_batch` has shape (batch, *latent_shape). Gradients are exact (chain
    rule through the denoiser conditioning head and the encoder row).
    """
    denoiser, _, encoder, schedule = backend
    slot = seq.placeholder
    if slot is None:
        raise ValidationError("training sequence must contain the stage placeholder")
    pos, _ = slot
    vector = np.asarray(vector, dtype=np.float64)
    overrides = {pos: vector}
    cond = ConditioningVector(encoder.encode(seq, overrides), PROVENANCE_FULL)

    n_elem = float(np.prod(denoiser.latent_shape))
    total_loss = 0.0
    grad = np.zeros_like(vector)
    batch = np.asarray(eps_batch, dtype=np.float64)
    if batch.ndim == 3:
        batch = batch[None]
    for eps in batch:
        z_t = add_noise(schedule, z0, t, eps)
        pred = denoiser.predict(z_t, t, cond, structure)
        residual = pred - eps
        total_loss += float(np.mean(residual**2))
        d_pred = 2.0 * residual / n_elem
        d_cond = denoiser.vjp_cond(z_t, t, cond, d_pred, structure)
        grad += encoder.vjp_injected(seq, overrides, pos, d_cond)
    b = batch.shape[0]
    return total_loss / b, grad / b


def init_train_state(backend: Backend, dataset: StyleDataset, config: TrainConfig) -> TrainState:
    """Precompute latents, prompts, and token sequences for every (image, stage) pair."""
    tokens = MultiStageTokenSet.derive(config.base_token, config.stage_count)
    encoder = backend.encoder
    z0 = {img.image_id: backend.codec.encode(img.pixels) for img in dataset.images}
    sequences: dict[tuple[str, int], TokenSequence] = {}
    for img in dataset.images:
        bundle = PromptBundle(
            opening=config.opening,
            context=dataset.captions[img.image_id].effective_caption,
            style_suffix_template=config.suffix_template,
        )
        for k in range(config.stage_count):
            prompt = build_training_prompt(bundle, tokens, k)
            sequences[(img.image_id, k)] = encoder.tokenize(prompt, tokens)
    adam = _StageAdam(config.stage_count, encoder.embedding_dim)
    return TrainState(tokens=tokens, adam=adam, z0=z0, sequences=sequences)


def train_step(
    state: TrainState,
    backend: Backend,
    table: StageEmbeddingTable,
    dataset: StyleDataset,
    config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[StageEmbeddingTable, float]:
    """One optimization step; returns the updated table and the step loss.

    Only the vector of the stage containing the sampled timestep changes;
    every other row of the returned table is bit-identical to the input.
    """
    schedule = table.schedule
    image = dataset.images[int(rng.integers(len(dataset.images)))]
    t = int(rng.integers(schedule.num_timesteps))
    k = stage_of(schedule, t)
    eps_batch = rng.standard_normal((config.batch_size, *backend.denoiser.latent_shape))

    seq = state.sequences[(image.image_id, k)]
    vector = table.vectors[k].astype(np.float64)
    loss, grad = loss_and_grad(backend, seq, vector, state.z0[image.image_id], t, eps_batch)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NumericError(
            f"non-finite loss/gradient at step={state.step} t={t} stage={k} image={image.image_id!r}"
        )
    updated = state.adam.update(k, vector, grad, config.learning_rate)
    state.last_step = {"step": state.step, "t": t, "stage": k, "image_id": image.image_id, "loss": loss}
    state.step += 1
    return replace_stage(table, k, updated), loss


def train(
    backend: Backend,
    dataset: StyleDataset,
    config: TrainConfig,
    on_step: StepCallback | None = None,
) -> StyleCheckpoint:
    """Optimize a fresh stage table and package it as a checkpoint.

    (seed, config, dataset) fully determine the result; the backend is frozen
    throughout. `on_step` receives one dict per step: step, t, stage, loss.
    """
    schedule = StageSchedule(config.stage_count, backend.schedule.num_timesteps)
    state = init_train_state(backend, dataset, config)
    seed_vec = backend.encoder.token_embedding(config.initializer_token)
    table = init_table(schedule, seed_vec)

    rng = np.random.default_rng(config.seed)
    losses: list[float] = []
    for _ in range(config.steps):
        table, loss = train_step(state, backend, table, dataset, config, rng)
        losses.append(loss)
        if on_step is not None:
            on_step(dict(state.last_step))

    untouched = [k for k in range(config.stage_count) if state.adam.counts[k] == 0]
    if config.steps > 0 and untouched:
        logger.warning(
            "stages %s received no updates in %d steps (stage count %d); "
            "consider more steps",
            untouched,
            config.steps,
            config.stage_count,
        )

    metadata = {
        "config": asdict(config),
        "dataset_ids": list(dataset.image_ids),
        "caption_sources": {i: dataset.captions[i].source for i in dataset.image_ids},
        "captions": {i: dataset.captions[i].effective_caption for i in dataset.image_ids},
        "loss_history": losses,
        "loss_digest": loss_history_digest(losses),
        "stage_update_counts": state.adam.counts.tolist(),
        "backend": {
            "denoiser_digest": _digest_of(backend.denoiser),
            "encoder_digest": _digest_of(backend.encoder),
            "num_timesteps": backend.schedule.num_timesteps,
        },
    }
    return StyleCheckpoint.from_table(table, state.tokens, metadata)


def _digest_of(component) -> str:
    digest = getattr(component, "weights_digest", None)
    return digest() if callable(digest) else "unavailable"


def smoothed_loss_drop(losses: list[float], window: int = 20) -> float:
    """Fractional drop between the first and last moving-average windows."""
    if len(losses) < 2 * window:
        raise ValidationError(f"need at least {2 * window} losses, got {len(losses)}")
    first = float(np.mean(losses[:window]))
    last = float(np.mean(losses[-window:]))
    return (first - last) / first
