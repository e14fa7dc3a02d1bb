"""One-shot artistic style personalization for diffusion backends.

Denoising timesteps are partitioned into stages, each owning a learnable
embedding for the style placeholder token; training optimizes only those
vectors against a frozen backend. Sampling layers style/context guidance on
top of classifier-free guidance, styles can be mixed per stage, content images
can be restyled with structural conditioning, and the evaluation metrics
(text/image alignment, patchwise Gram style score) run on pluggable embedding
backends. Everything is exercised end to end on a deterministic toy backend.
"""

from .backend import (
    Backend,
    LatentCode,
    NoiseSchedule,
    add_noise,
    base_loss,
    toy_backend,
)
from .errors import StageStyleError, ValidationError
from .metrics import (
    MetricBackends,
    evaluate_manifest,
    image_score,
    style_score,
    text_score,
)
from .persistence import StyleCheckpoint, load, save
from .prompts import (
    CaptionRecord,
    PromptBundle,
    build_training_prompt,
    fetch_caption,
    refine_caption,
    split_for_guidance,
)
from .sampler import (
    GuidanceInputs,
    GuidanceScales,
    SampleResult,
    compose_guidance,
    compose_guidance_v1,
    compose_guidance_v2,
    sample,
)
from .stagespace import (
    MultiStageTokenSet,
    StageEmbeddingTable,
    StageSchedule,
    embedding_for,
    init_table,
    mix_styles,
    stage_of,
)
from .styletransfer import (
    StructureCondition,
    TransferConfig,
    extract_structure,
    invert_content,
    transfer,
)
from .textcond import ConditioningVector, TokenSequence, encode_null, encode_with_injection
from .trainer import StyleDataset, StyleImage, TrainConfig, train, train_step

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "CaptionRecord",
    "ConditioningVector",
    "GuidanceInputs",
    "GuidanceScales",
    "LatentCode",
    "MetricBackends",
    "MultiStageTokenSet",
    "NoiseSchedule",
    "PromptBundle",
    "SampleResult",
    "StageEmbeddingTable",
    "StageSchedule",
    "StageStyleError",
    "StructureCondition",
    "StyleCheckpoint",
    "StyleDataset",
    "StyleImage",
    "TokenSequence",
    "TrainConfig",
    "TransferConfig",
    "ValidationError",
    "add_noise",
    "base_loss",
    "build_training_prompt",
    "compose_guidance",
    "compose_guidance_v1",
    "compose_guidance_v2",
    "embedding_for",
    "encode_null",
    "encode_with_injection",
    "evaluate_manifest",
    "extract_structure",
    "fetch_caption",
    "image_score",
    "init_table",
    "invert_content",
    "load",
    "mix_styles",
    "refine_caption",
    "sample",
    "save",
    "split_for_guidance",
    "stage_of",
    "style_score",
    "text_score",
    "toy_backend",
    "train",
    "train_step",
    "transfer",
]
