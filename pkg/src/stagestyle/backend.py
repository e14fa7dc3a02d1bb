"""Diffusion substrate: noise schedule, latent codec, denoiser, training loss.

The forward process follows the usual variance-preserving mixture

    z_t = sqrt(alpha_bar_t) * z_0 + sqrt(1 - alpha_bar_t) * eps

with alpha_bar_t defined as the cumulative product of (1 - beta_s) for s < t
(exclusive), so alpha_bar_0 == 1 exactly and t = 0 carries no noise at all.
That convention makes the low-strength limits of image-to-image pipelines
exact rather than approximate.

The toy components are small, seeded, and deterministic:

  * codec   — patchwise orthogonal linear transform between 32x32 RGB images
              and a (12, 16, 16) latent; its round trip is exact to float
              rounding (documented tolerance CODEC_ROUNDTRIP_TOL).
  * denoiser — one tanh hidden layer over (latent, timestep features,
              structure features) plus a linear head reading the pooled
              conditioning matrix. The conditioning path is analytically
              differentiable (`vjp_cond`), which is all embedding training
              needs; the trunk weights stay frozen.
  * text encoder — see textcond.ToyTextEncoder.

Real latent-diffusion components plug in behind the same small surfaces:
`encode`/`decode` on the codec and `predict` on the denoiser (latent + t +
conditioning matrix + optional structure features -> predicted noise).
`run_denoiser_conformance` checks the properties this package relies on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import NamedTuple, Protocol, runtime_checkable

import numpy as np

from .errors import (
    DimensionMismatchError,
    NumericError,
    TimestepRangeError,
    ValidationError,
)
from .textcond import ConditioningVector, TextEncoder, ToyTextEncoder

IMAGE_SIZE = 32
LATENT_SHAPE = (12, 16, 16)
STRUCTURE_SHAPE = (16, 16)
CODEC_ROUNDTRIP_TOL = 1e-9  # measured ~1e-15 for the toy codec


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep betas and the derived exclusive cumulative alpha products."""

    betas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValidationError("betas must be a non-empty 1-D sequence")
        if not np.all((betas > 0.0) & (betas < 1.0)):
            raise ValidationError("betas must lie strictly inside (0, 1)")
        alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)[:-1]])
        if not np.all(np.diff(alpha_bars) < 0.0):
            raise ValidationError("alpha_bar must be strictly decreasing")
        betas.setflags(write=False)
        alpha_bars.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @classmethod
    def linear(cls, num_timesteps: int = 50, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, num_timesteps))

    @property
    def num_timesteps(self) -> int:
        return self.betas.size

    def alpha_bar(self, t: int) -> float:
        t = int(t)
        if not 0 <= t < self.num_timesteps:
            raise TimestepRangeError(f"timestep {t} out of range [0, {self.num_timesteps})")
        return float(self.alpha_bars[t])


@dataclass(frozen=True)
class LatentCode:
    """Latent tensor (channels, height, width)."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 3:
            raise ValidationError(f"latent must be 3-D (C, H, W), got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise NumericError("latent contains non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


def add_noise(schedule: NoiseSchedule, z0: LatentCode, t: int, eps: np.ndarray) -> LatentCode:
    """Forward-process sample z_t from clean z0 and standard-normal eps."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z0.shape:
        raise DimensionMismatchError(f"noise shape {eps.shape} != latent shape {z0.shape}")
    ab = schedule.alpha_bar(t)
    return LatentCode(np.sqrt(ab) * z0.values + np.sqrt(1.0 - ab) * eps)


@runtime_checkable
class Denoiser(Protocol):
    """Noise predictor: (z_t, t, conditioning, optional structure features) -> eps_hat."""

    latent_shape: tuple[int, int, int]
    differentiable: bool

    def predict(
        self,
        z_t: LatentCode,
        t: int,
        cond: ConditioningVector,
        structure: np.ndarray | None = None,
    ) -> np.ndarray: ...


@runtime_checkable
class LatentCodec(Protocol):
    """Image <-> latent transform pair."""

    latent_shape: tuple[int, int, int]

    def encode(self, image: np.ndarray) -> LatentCode: ...

    def decode(self, latent: LatentCode) -> np.ndarray: ...


class ToyLatentCodec:
    """Patchwise orthogonal codec between 32x32 RGB images and (12, 16, 16) latents.

    2x2x3 pixel blocks map through a single orthogonal 12x12 matrix, so
    decode(encode(x)) == x up to float rounding. Images are float arrays in
    [0, 1], shape (32, 32, 3); internally they are centered to [-1, 1].
    """

    latent_shape = LATENT_SHAPE

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.normal(size=(12, 12)))
        self._q = q
        self._q.setflags(write=False)

    def encode(self, image: np.ndarray) -> LatentCode:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise ValidationError(
                f"toy codec expects ({IMAGE_SIZE}, {IMAGE_SIZE}, 3) images, got {image.shape}"
            )
        centered = 2.0 * image - 1.0
        # (32, 32, 3) -> (16, 16, 12): each 2x2x3 block becomes one 12-channel cell
        blocks = centered.reshape(16, 2, 16, 2, 3).transpose(0, 2, 1, 3, 4).reshape(16, 16, 12)
        cells = blocks @ self._q.T
        return LatentCode(cells.transpose(2, 0, 1))

    def decode(self, latent: LatentCode) -> np.ndarray:
        if latent.shape != self.latent_shape:
            raise ValidationError(f"latent shape {latent.shape} != {self.latent_shape}")
        cells = latent.values.transpose(1, 2, 0)
        blocks = cells @ self._q
        centered = blocks.reshape(16, 16, 2, 2, 3).transpose(0, 2, 1, 3, 4).reshape(32, 32, 3)
        return np.clip((centered + 1.0) / 2.0, 0.0, 1.0)

    def weights_digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self._q).tobytes()).hexdigest()


def _timestep_features(t: int, num_timesteps: int) -> np.ndarray:
    phase = 2.0 * np.pi * (t + 0.5) / num_timesteps
    freqs = np.array([1.0, 2.0, 4.0, 8.0])
    return np.concatenate([np.sin(freqs * phase), np.cos(freqs * phase)])


class ToyDenoiser:
    """Seeded random-weight noise predictor, differentiable in the conditioning.

    eps_hat = V tanh(W_z z + U_t tau(t) + U_s s + b) + P pool(cond)

    The linear conditioning head keeps embedding optimization well conditioned;
    the tanh trunk supplies the z/t/structure dependence. Pooling over the
    conditioning rows is suffix-weighted (each position carries POOL_DECAY
    times the weight of the one after it), so the style-suffix region of a
    prompt is not drowned out by long contexts. All weights are frozen at
    construction.
    """

    latent_shape = LATENT_SHAPE
    structure_shape = STRUCTURE_SHAPE
    differentiable = True

    POOL_DECAY = 0.8

    def __init__(self, seed: int = 0, conditioning_dim: int = 16, hidden: int = 96, num_timesteps: int = 50):
        self.conditioning_dim = conditioning_dim
        self.num_timesteps = num_timesteps
        n = int(np.prod(self.latent_shape))
        s = int(np.prod(self.structure_shape))
        rng = np.random.default_rng(seed)
        self.w_z = rng.normal(0.0, 1.0 / np.sqrt(n), size=(hidden, n))
        self.u_t = rng.normal(0.0, 0.3, size=(hidden, 8))
        self.u_s = rng.normal(0.0, 0.05, size=(hidden, s))
        self.bias = rng.normal(0.0, 0.2, size=hidden)
        self.v = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(n, hidden))
        self.cond_head = rng.normal(0.0, 2.5, size=(n, conditioning_dim))
        for arr in (self.w_z, self.u_t, self.u_s, self.bias, self.v, self.cond_head):
            arr.setflags(write=False)

    def _pre_activation(self, z_t: LatentCode, t: int, structure: np.ndarray | None) -> np.ndarray:
        if z_t.shape != self.latent_shape:
            raise ValidationError(f"latent shape {z_t.shape} != {self.latent_shape}")
        pre = self.w_z @ z_t.values.ravel() + self.u_t @ _timestep_features(t, self.num_timesteps) + self.bias
        if structure is not None:
            structure = np.asarray(structure, dtype=np.float64)
            if structure.shape != self.structure_shape:
                raise DimensionMismatchError(
                    f"structure features shape {structure.shape} != {self.structure_shape}"
                )
            pre = pre + self.u_s @ structure.ravel()
        return pre

    def _pool_weights(self, rows: int) -> np.ndarray:
        w = self.POOL_DECAY ** np.arange(rows - 1, -1, -1, dtype=np.float64)
        return w / w.sum()

    def _pooled(self, cond: ConditioningVector) -> np.ndarray:
        if cond.values.shape[1] != self.conditioning_dim:
            raise DimensionMismatchError(
                f"conditioning dim {cond.values.shape[1]} != {self.conditioning_dim}"
            )
        if cond.values.shape[0] == 0:
            return np.zeros(self.conditioning_dim)
        return self._pool_weights(cond.values.shape[0]) @ cond.values

    def predict(
        self,
        z_t: LatentCode,
        t: int,
        cond: ConditioningVector,
        structure: np.ndarray | None = None,
    ) -> np.ndarray:
        h = np.tanh(self._pre_activation(z_t, t, structure))
        flat = self.v @ h + self.cond_head @ self._pooled(cond)
        return flat.reshape(self.latent_shape)

    def vjp_cond(
        self,
        z_t: LatentCode,
        t: int,
        cond: ConditioningVector,
        cotangent: np.ndarray,
        structure: np.ndarray | None = None,
    ) -> np.ndarray:
        """Gradient of <cotangent, predict(...)> w.r.t. the conditioning matrix."""
        cot = np.asarray(cotangent, dtype=np.float64)
        if cot.shape != self.latent_shape:
            raise DimensionMismatchError(f"cotangent shape {cot.shape} != {self.latent_shape}")
        d_pooled = self.cond_head.T @ cot.ravel()
        rows = cond.values.shape[0]
        if rows == 0:
            return np.zeros_like(cond.values)
        return np.outer(self._pool_weights(rows), d_pooled)

    def weights_digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.w_z, self.u_t, self.u_s, self.bias, self.v, self.cond_head):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def base_loss(
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    z0: LatentCode,
    t: int,
    eps: np.ndarray,
    cond: ConditioningVector,
    structure: np.ndarray | None = None,
) -> float:
    """Noise-prediction objective: mean squared error between eps and eps_hat."""
    z_t = add_noise(schedule, z0, t, eps)
    pred = denoiser.predict(z_t, t, cond, structure)
    loss = float(np.mean((np.asarray(eps, dtype=np.float64) - pred) ** 2))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss at t={t}")
    return loss


class Backend(NamedTuple):
    """Bundle of the four substrate components (toy or adapter-backed)."""

    denoiser: Denoiser
    codec: LatentCodec
    encoder: TextEncoder
    schedule: NoiseSchedule


def toy_backend(seed: int = 0, num_timesteps: int = 50) -> Backend:
    """Deterministic desk-scale backend; identical seeds give identical weights."""
    root = np.random.SeedSequence(seed)
    denoiser_seed, codec_seed, encoder_seed = (s.generate_state(1)[0] for s in root.spawn(3))
    schedule = NoiseSchedule.linear(num_timesteps)
    return Backend(
        denoiser=ToyDenoiser(int(denoiser_seed), num_timesteps=num_timesteps),
        codec=ToyLatentCodec(int(codec_seed)),
        encoder=ToyTextEncoder(int(encoder_seed)),
        schedule=schedule,
    )


def run_denoiser_conformance(denoiser: Denoiser, schedule: NoiseSchedule, cond: ConditioningVector) -> None:
    """Assert the denoiser properties this package relies on.

    Raises ValidationError on the first violated property. Intended for
    adapter authors wiring a real model behind the Denoiser contract.
    """
    rng = np.random.default_rng(1234)
    z = LatentCode(rng.standard_normal(denoiser.latent_shape))
    for t in (0, schedule.num_timesteps // 2, schedule.num_timesteps - 1):
        a = denoiser.predict(z, t, cond)
        b = denoiser.predict(z, t, cond)
        if a.shape != denoiser.latent_shape:
            raise ValidationError(f"prediction shape {a.shape} != latent shape {denoiser.latent_shape}")
        if not np.array_equal(a, b):
            raise ValidationError(f"denoiser is not deterministic at t={t}")
        if not np.all(np.isfinite(a)):
            raise ValidationError(f"denoiser produced non-finite values at t={t}")
