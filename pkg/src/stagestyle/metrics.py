"""Evaluation metrics: text/image alignment scores and a patchwise style score.

Alignment scores are clamped scaled cosines between embedding vectors:

    text_score(I, C)  = max(100 * cos(E_I, E_C), 0)
    image_score(I, S) = max(100 * cos(E_I, E_S), 0)

The style score compares texture statistics patchwise. Five 224x224 patches
are cropped from the four corners and the center of each image; each patch is
pushed through a feature extractor with L layer taps, every layer yields a
Gram matrix (channel covariance), and the score averages the cosine between
all ordered patch pairs over all layers:

    style_score(I, S) = 50 - mean_layers(mean_pairs(cos(gram(P_I), gram(P_S))))

so lower means more similar, with 49 the floor for identical texture. Images
smaller than 224 on either side are a hard error (no silent upscaling).

Embedding and feature backends are pluggable; the toy ones here are seeded
random projections / convolutions so everything runs offline. A real CLIP or
VGG16 adapter only needs `embed_image`/`embed_text` or `num_layers`/`features`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import ValidationError
from .textcond import _word_id

logger = logging.getLogger(__name__)

PATCH_SIZE = 224


@dataclass(frozen=True)
class MetricEmbedding:
    """A single embedding vector from an image/text embedding backend."""

    values: np.ndarray = field(repr=False)
    normalized: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise ValidationError(f"embedding must be 1-D, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("embedding must be finite")
        object.__setattr__(self, "values", vals)


def _vector(x) -> np.ndarray:
    if isinstance(x, MetricEmbedding):
        return x.values
    return np.asarray(x, dtype=np.float64)


def cosine(a, b) -> float:
    """Cosine similarity on raw vectors; zero vectors are an error.

    Clipped into [-1, 1]: rounding can push the quotient a few ulp past the
    mathematical range, which would leak out of the scores' [0, 100] band.
    """
    a, b = _vector(a), _vector(b)
    if a.shape != b.shape:
        raise ValidationError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine undefined for zero vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def text_score(image_embedding, text_embedding) -> float:
    """Clamped scaled cosine between an image embedding and a prompt embedding."""
    return max(100.0 * cosine(image_embedding, text_embedding), 0.0)


def image_score(image_embedding, style_embedding) -> float:
    """Clamped scaled cosine between a generated image and its style reference."""
    return max(100.0 * cosine(image_embedding, style_embedding), 0.0)


def patch_coordinates(width: int, height: int, patch: int = PATCH_SIZE) -> list[tuple[int, int]]:
    """(x, y) offsets of the four corner patches and the center patch."""
    if width < patch or height < patch:
        raise ValidationError(
            f"image {width}x{height} smaller than patch size {patch}; refusing to upscale"
        )
    return [
        (0, 0),
        (width - patch, 0),
        (0, height - patch),
        (width - patch, height - patch),
        ((width - patch) // 2, (height - patch) // 2),
    ]


@dataclass(frozen=True)
class PatchSet:
    """Five patches plus where they came from."""

    patches: tuple[np.ndarray, ...]
    coordinates: tuple[tuple[int, int], ...]
    source_id: str = ""

    def __post_init__(self):
        if len(self.patches) != 5 or len(self.coordinates) != 5:
            raise ValidationError("a patch set holds exactly five patches")


def extract_patches(image: np.ndarray, source_id: str = "") -> PatchSet:
    """Corner + center 224x224 crops of an (H, W, C) or (H, W) image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3:
        raise ValidationError(f"expected (H, W[, C]) image, got shape {image.shape}")
    height, width = image.shape[:2]
    coords = patch_coordinates(width, height)
    patches = tuple(image[y : y + PATCH_SIZE, x : x + PATCH_SIZE] for x, y in coords)
    return PatchSet(patches, tuple(coords), source_id)


@runtime_checkable
class FeatureExtractor(Protocol):
    """L layer taps over an image patch; each tap is a (C, H, W) feature map."""

    num_layers: int

    def features(self, patch: np.ndarray) -> list[np.ndarray]: ...


class ToyConvFeatures:
    """Three seeded random 3x3 convolution + ReLU + 2x2 mean-pool layers.

    Kernels are zero-sum per input channel so flat regions contribute nothing
    and the Gram statistics reflect texture; a fixed positive bias keeps
    activations (and thus Grams) nonzero even for constant images.
    """

    num_layers = 3

    def __init__(self, seed: int = 0, channels: int = 6):
        rng = np.random.default_rng(seed)
        self.kernels = []
        self.biases = []
        c_in = 3
        for _ in range(self.num_layers):
            k = rng.normal(0.0, 3.0 / np.sqrt(9 * c_in), size=(channels, 3, 3, c_in))
            k -= k.mean(axis=(1, 2), keepdims=True)
            b = rng.uniform(0.02, 0.1, size=channels)
            k.setflags(write=False)
            b.setflags(write=False)
            self.kernels.append(k)
            self.biases.append(b)
            c_in = channels

    @staticmethod
    def _conv(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
        # valid 3x3 convolution via sliding windows: (H, W, C) -> (H-2, W-2, C_out)
        windows = np.lib.stride_tricks.sliding_window_view(x, (3, 3), axis=(0, 1))
        return np.einsum("y x c i j, o i j c -> y x o", windows, kernel, optimize=True)

    @staticmethod
    def _pool(x: np.ndarray) -> np.ndarray:
        h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
        x = x[:h, :w]
        return x.reshape(h // 2, 2, w // 2, 2, x.shape[2]).mean(axis=(1, 3))

    def features(self, patch: np.ndarray) -> list[np.ndarray]:
        x = np.asarray(patch, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.shape[2] == 1:
            x = np.repeat(x, 3, axis=2)
        if x.shape[2] != 3:
            raise ValidationError(f"toy extractor expects 1 or 3 channels, got {x.shape[2]}")
        taps = []
        for kernel, bias in zip(self.kernels, self.biases):
            x = self._pool(np.maximum(self._conv(x, kernel) + bias, 0.0))
            taps.append(np.ascontiguousarray(x.transpose(2, 0, 1)))
        return taps


@dataclass(frozen=True)
class GramFeature:
    """Per-layer flattened Gram matrices of one patch."""

    grams: tuple[np.ndarray, ...]

    @property
    def num_layers(self) -> int:
        return len(self.grams)


def gram_matrix(feature_map: np.ndarray) -> np.ndarray:
    """Channel covariance of a (C, H, W) feature map, normalized by its size."""
    feature_map = np.asarray(feature_map, dtype=np.float64)
    if feature_map.ndim != 3:
        raise ValidationError(f"feature map must be (C, H, W), got shape {feature_map.shape}")
    c = feature_map.shape[0]
    flat = feature_map.reshape(c, -1)
    return (flat @ flat.T) / flat.size


def gram_features(extractor: FeatureExtractor, patch: np.ndarray) -> GramFeature:
    return GramFeature(tuple(gram_matrix(tap).ravel() for tap in extractor.features(patch)))


def all_pairs(n: int = 5) -> list[tuple[int, int]]:
    """The default pair set: all ordered patch index pairs (swap-symmetric)."""
    return [(i, j) for i in range(n) for j in range(n)]


def style_score_from_grams(
    grams_a: Sequence[GramFeature],
    grams_b: Sequence[GramFeature],
    pairs: Sequence[tuple[int, int]] | None = None,
) -> float:
    """50 minus the mean Gram cosine over the pair set and layers."""
    if not grams_a or not grams_b:
        raise ValidationError("need at least one patch per side")
    layers = grams_a[0].num_layers
    for g in (*grams_a, *grams_b):
        if g.num_layers != layers:
            raise ValidationError("all patches must carry the same number of layers")
    pairs = list(pairs) if pairs is not None else all_pairs(min(len(grams_a), len(grams_b)))
    total = 0.0
    for layer in range(layers):
        layer_sum = 0.0
        for i, j in pairs:
            layer_sum += cosine(grams_a[i].grams[layer], grams_b[j].grams[layer])
        total += layer_sum / len(pairs)
    return 50.0 - total / layers


def style_score(
    image: np.ndarray,
    style: np.ndarray,
    extractor: FeatureExtractor | None = None,
    pairs: Sequence[tuple[int, int]] | None = None,
) -> float:
    """Patchwise Gram-cosine style distance; lower = closer texture."""
    extractor = extractor or ToyConvFeatures()
    grams_i = [gram_features(extractor, p) for p in extract_patches(image).patches]
    grams_s = [gram_features(extractor, p) for p in extract_patches(style).patches]
    return style_score_from_grams(grams_i, grams_s, pairs)


_ANCHOR_SHARE = 0.35  # shared positive direction so toy cosines live in a
                      # plausible positive band instead of clamping at zero


class ToyImageEmbedder:
    """Seeded random projection of the 8x8 mean-pooled grayscale image."""

    dim = 32

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.projection = rng.normal(0.0, 1.0 / 8.0, size=(self.dim, 64))
        self.projection.setflags(write=False)

    def embed_image(self, image: np.ndarray) -> MetricEmbedding:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim == 3:
            image = image.mean(axis=2)
        if image.ndim != 2:
            raise ValidationError(f"expected (H, W[, C]) image, got shape {image.shape}")
        h, w = image.shape
        if h < 8 or w < 8:
            raise ValidationError(f"image {h}x{w} too small to embed")
        fh, fw = h // 8, w // 8
        pooled = image[: fh * 8, : fw * 8].reshape(8, fh, 8, fw).mean(axis=(1, 3))
        values = self.projection @ (pooled.ravel() - pooled.mean() + 0.05)
        norm = np.linalg.norm(values) or 1.0
        return MetricEmbedding(values / norm + _ANCHOR_SHARE)


class ToyTextEmbedder:
    """Mean of seeded per-word random vectors (hashing-based, order-free)."""

    dim = 32

    def __init__(self, seed: int = 0, vocab_size: int = 2048):
        rng = np.random.default_rng(seed)
        self.vocab = rng.normal(0.0, 1.0, size=(vocab_size, self.dim))
        self.vocab.setflags(write=False)
        self.vocab_size = vocab_size

    def embed_text(self, text: str) -> MetricEmbedding:
        words = text.lower().split()
        if not words:
            raise ValidationError("cannot embed an empty prompt")
        rows = [self.vocab[_word_id(w, self.vocab_size)] for w in words]
        values = np.mean(rows, axis=0)
        norm = np.linalg.norm(values) or 1.0
        return MetricEmbedding(values / norm + _ANCHOR_SHARE)


@dataclass(frozen=True)
class MetricBackends:
    """Everything evaluate_manifest needs, bundled."""

    image_embedder: ToyImageEmbedder
    text_embedder: ToyTextEmbedder
    feature_extractor: FeatureExtractor

    @classmethod
    def toy(cls, seed: int = 0) -> "MetricBackends":
        return cls(ToyImageEmbedder(seed), ToyTextEmbedder(seed), ToyConvFeatures(seed))


@dataclass(frozen=True)
class ManifestRow:
    image_path: str
    prompt: str
    style_path: str


@dataclass(frozen=True)
class RowResult:
    row: ManifestRow
    text: float | None = None
    image: float | None = None
    style: float | None = None
    error: str | None = None


@dataclass(frozen=True)
class ScoreTable:
    rows: tuple[RowResult, ...]

    def means(self) -> dict[str, float]:
        out = {}
        for name in ("text", "image", "style"):
            values = [getattr(r, name) for r in self.rows if r.error is None and getattr(r, name) is not None]
            if values:
                out[name] = float(np.mean(values))
        return out


def read_manifest(path: str | Path) -> list[ManifestRow]:
    """One JSON object per line with fields image_path, prompt, style_path."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            record = json.loads(line)
            rows.append(ManifestRow(record["image_path"], record["prompt"], record["style_path"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad manifest record: {exc}") from exc
    return rows


def _load_image_file(path: str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def evaluate_manifest(
    rows: Sequence[ManifestRow],
    backends: MetricBackends,
    load_image=_load_image_file,
) -> ScoreTable:
    """Score every manifest row; per-row failures are recorded, not fatal."""
    results: list[RowResult] = []
    for row in rows:
        try:
            generated = load_image(row.image_path)
            style_img = load_image(row.style_path)
            e_i = backends.image_embedder.embed_image(generated)
            e_c = backends.text_embedder.embed_text(row.prompt)
            e_s = backends.image_embedder.embed_image(style_img)
            scores = {
                "text": text_score(e_i, e_c),
                "image": image_score(e_i, e_s),
            }
            try:
                scores["style"] = style_score(generated, style_img, backends.feature_extractor)
            except ValidationError as exc:
                results.append(RowResult(row, error=f"style_score: {exc}", **scores))
                continue
            results.append(RowResult(row, **scores))
        except (OSError, ValidationError) as exc:
            logger.warning("manifest row %s failed: %s", row.image_path, exc)
            results.append(RowResult(row, error=str(exc)))
    return ScoreTable(tuple(results))


def format_report(table: ScoreTable) -> str:
    """Human-readable delimited table."""
    lines = ["image\ttext\timage_score\tstyle\terror"]
    for r in table.rows:
        fmt = lambda v: f"{v:.4f}" if v is not None else "-"
        lines.append(
            f"{r.row.image_path}\t{fmt(r.text)}\t{fmt(r.image)}\t{fmt(r.style)}\t{r.error or '-'}"
        )
    means = table.means()
    if means:
        lines.append(
            "MEAN\t"
            + "\t".join(f"{means.get(k):.4f}" if k in means else "-" for k in ("text", "image", "style"))
            + "\t-"
        )
    return "\n".join(lines)


def write_report(table: ScoreTable, path: str | Path) -> None:
    """Machine-readable JSON report."""
    doc = {
        "rows": [
            {
                "image_path": r.row.image_path,
                "prompt": r.row.prompt,
                "style_path": r.row.style_path,
                "text_score": r.text,
                "image_score": r.image,
                "style_score": r.style,
                "error": r.error,
            }
            for r in table.rows
        ],
        "means": table.means(),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
