"""Style transfer: re-noise a content image, denoise it under a trained style.

The content image is encoded to a latent, pushed forward to timestep
t = round_half_up(strength * (num_timesteps - 1)) with seeded noise, and then
denoised back under the style conditioning. Because alpha_bar_0 == 1, a
strength that maps to t = 0 reduces the whole pipeline to the codec round trip
of the content image, exactly.

Structure preservation: an optional spatial condition extracted from the
content image rides along into every denoiser call. The builtin extractor is
an offline stub — a gradient-magnitude pseudo-depth on the latent-resolution
grayscale image — standing in for a real depth/edge/segmentation network
behind the same client interface. Depth is the default modality; edge and
segmentation are accepted but experimental.

Remote extractor adapters follow the same shape on the wire: encoded image
bytes go out, a feature tensor plus its shape comes back; the in-process
StructureExtractor protocol receives the already-decoded array.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from .backend import Backend, LatentCode, add_noise, STRUCTURE_SHAPE
from .errors import UnsupportedModalityError, ValidationError
from .persistence import StyleCheckpoint
from .prompts import PromptBundle
from .sampler import GuidanceScales, StepTrace, denoise_from

logger = logging.getLogger(__name__)

MODALITY_DEPTH = "depth"
MODALITY_EDGE = "edge"
MODALITY_SEGMENTATION = "segmentation"
MODALITY_NONE = "none"
MODALITIES = (MODALITY_DEPTH, MODALITY_EDGE, MODALITY_SEGMENTATION, MODALITY_NONE)
_EXPERIMENTAL = (MODALITY_EDGE, MODALITY_SEGMENTATION)


@dataclass(frozen=True)
class StructureCondition:
    """Spatial features aligned with the latent grid, plus their modality."""

    modality: str
    features: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise UnsupportedModalityError(
                f"modality must be one of {MODALITIES}, got {self.modality!r}"
            )
        feats = np.asarray(self.features, dtype=np.float64)
        if not np.all(np.isfinite(feats)):
            raise ValidationError("structure features must be finite")
        object.__setattr__(self, "features", feats)


@dataclass(frozen=True)
class TransferConfig:
    """Re-noising strength in (0, 1], guidance scales, and the noise seed."""

    strength: float = 0.7
    scales: GuidanceScales = field(default_factory=GuidanceScales)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.strength <= 1.0:
            raise ValidationError(f"strength must be in (0, 1], got {self.strength}")


@runtime_checkable
class StructureExtractor(Protocol):
    """Extractor contract: content image in, latent-aligned feature grid out."""

    def supports(self, modality: str) -> bool: ...

    def extract(self, image: np.ndarray, modality: str) -> np.ndarray: ...


class GradientStructureExtractor:
    """Offline stub: gradient-magnitude pseudo-depth on the downsampled image.

    depth         — gradient magnitude of the 2x2-mean-pooled grayscale image.
    edge          — same field, binarized at its mean (nonzero only near edges).
    segmentation  — grayscale quantized into four intensity bands.
    """

    grid = STRUCTURE_SHAPE

    def supports(self, modality: str) -> bool:
        return modality in (MODALITY_DEPTH, MODALITY_EDGE, MODALITY_SEGMENTATION)

    def _pooled_gray(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValidationError(f"expected (H, W, 3) image, got shape {image.shape}")
        gray = image.mean(axis=2)
        gh, gw = self.grid
        fh, fw = gray.shape[0] // gh, gray.shape[1] // gw
        if fh * gh != gray.shape[0] or fw * gw != gray.shape[1]:
            raise ValidationError(f"image shape {gray.shape} not divisible into {self.grid} grid")
        return gray.reshape(gh, fh, gw, fw).mean(axis=(1, 3))

    def extract(self, image: np.ndarray, modality: str) -> np.ndarray:
        if not self.supports(modality):
            raise UnsupportedModalityError(f"builtin extractor does not support {modality!r}")
        gray = self._pooled_gray(image)
        gy, gx = np.gradient(gray)
        magnitude = np.hypot(gx, gy)
        if modality == MODALITY_DEPTH:
            return magnitude
        if modality == MODALITY_EDGE:
            return (magnitude > magnitude.mean()).astype(np.float64)
        bands = np.floor(np.clip(gray, 0.0, 1.0 - 1e-12) * 4.0)
        return bands / 3.0


def invert_content(
    backend: Backend, content: np.ndarray, strength: float, seed: int
) -> tuple[LatentCode, int]:
    """Encode the content image and re-noise it to the strength's timestep."""
    if not 0.0 < strength <= 1.0:
        raise ValidationError(f"strength must be in (0, 1], got {strength}")
    z0 = backend.codec.encode(content)
    t = int(np.floor(strength * (backend.schedule.num_timesteps - 1) + 0.5))  # round half up
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(z0.shape)
    return add_noise(backend.schedule, z0, t, eps), t


def extract_structure(
    extractor: StructureExtractor | None, content: np.ndarray, modality: str
) -> StructureCondition:
    """Run the configured extractor (builtin stub when None) for one modality."""
    if modality == MODALITY_NONE:
        raise UnsupportedModalityError("modality 'none' has no features to extract")
    if modality not in MODALITIES:
        raise UnsupportedModalityError(f"modality must be one of {MODALITIES}, got {modality!r}")
    extractor = extractor or GradientStructureExtractor()
    if not extractor.supports(modality):
        raise UnsupportedModalityError(f"configured extractor does not support {modality!r}")
    if modality in _EXPERIMENTAL:
        logger.warning("structure modality %r is experimental; depth is the validated default", modality)
    return StructureCondition(modality, extractor.extract(content, modality))


@dataclass(frozen=True)
class TransferResult:
    image: np.ndarray = field(repr=False)
    start_timestep: int = 0
    trace: tuple[StepTrace, ...] = ()
    metadata: dict = field(default_factory=dict)


def transfer(
    backend: Backend,
    checkpoint: StyleCheckpoint,
    content: np.ndarray,
    config: TransferConfig,
    structure: str | StructureCondition | None = MODALITY_NONE,
    bundle: PromptBundle | None = None,
    extractor: StructureExtractor | None = None,
    collect_trace: bool = False,
) -> TransferResult:
    """Full style-transfer pipeline: invert, guided-denoise, decode.

    `structure` may be a modality name (extracted here from the content
    image), a prebuilt StructureCondition, or "none"/None for pure
    inversion-based transfer.
    """
    bundle = bundle or PromptBundle("a painting")
    if isinstance(structure, str):
        condition = None if structure == MODALITY_NONE else extract_structure(extractor, content, structure)
    else:
        condition = structure
    features = condition.features if condition is not None else None

    z_start, t_start = invert_content(backend, content, config.strength, config.seed)
    latent, trace = denoise_from(
        backend,
        checkpoint,
        bundle,
        z_start,
        t_start,
        config.scales,
        structure=features,
        collect_trace=collect_trace,
    )
    image = backend.codec.decode(latent)
    metadata = {
        "strength": config.strength,
        "start_timestep": t_start,
        "seed": config.seed,
        "structure_modality": condition.modality if condition is not None else MODALITY_NONE,
        "scales": {
            "lambda_n": config.scales.lambda_n,
            "lambda_s": config.scales.lambda_s,
            "lambda_c": config.scales.lambda_c,
        },
        "prompt": bundle.full_prompt(checkpoint.tokens.base_token),
    }
    return TransferResult(image=image, start_timestep=t_start, trace=trace, metadata=metadata)
