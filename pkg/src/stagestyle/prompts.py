"""Context-aware prompt construction and caption acquisition.

Training prompts have the shape [opening, context, style suffix], e.g.

    "a painting" + "of a woman in a blue dress" + "in the style of <style_2>"

The context descriptor carries the non-style content of the reference image so
the optimized embeddings absorb style rather than subject matter. Captions for
it come from a pluggable captioner client (an offline fixture stub for tests,
or a small HTTP client), optionally refined by a human; the refinement always
wins but the automatic caption is kept for audit.

`split_for_guidance` is the inverse of prompt construction: it separates a
rendered prompt back into its context part and its style suffix, which is what
the sampler conditions on independently.
"""

from __future__ import annotations

import logging
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Protocol, runtime_checkable

from .errors import (
    CaptionContentError,
    CaptionTransportError,
    PromptStructureError,
    ValidationError,
)
from .stagespace import MultiStageTokenSet

logger = logging.getLogger(__name__)

DEFAULT_SUFFIX_TEMPLATE = "in the style of {style}"

SOURCE_AUTO = "auto"
SOURCE_HUMAN = "human"


def normalize_text(text: str) -> str:
    """Collapse whitespace runs to single spaces and strip the ends."""
    return " ".join(text.split())


@dataclass(frozen=True)
class PromptBundle:
    """Opening text, contextual descriptor, and the style suffix template."""

    opening: str
    context: str = ""
    style_suffix_template: str = DEFAULT_SUFFIX_TEMPLATE

    def __post_init__(self):
        if not normalize_text(self.opening):
            raise ValidationError("opening text must be non-empty")
        if self.style_suffix_template.count("{style}") != 1:
            raise ValidationError(
                "style_suffix_template must contain exactly one '{style}' placeholder"
            )

    def context_prompt(self) -> str:
        """The prompt without its style suffix: '<opening> <context>'."""
        return normalize_text(f"{self.opening} {self.context}")

    def style_prompt(self, style_token: str) -> str:
        """The style suffix alone, rendered with the given placeholder token."""
        return normalize_text(self.style_suffix_template.format(style=style_token))

    def full_prompt(self, style_token: str) -> str:
        return normalize_text(f"{self.context_prompt()} {self.style_prompt(style_token)}")


def build_training_prompt(bundle: PromptBundle, tokens: MultiStageTokenSet, stage: int) -> str:
    """Rendered training prompt for one stage: '<opening> <context> <suffix with stage token>'."""
    if not 0 <= stage < tokens.num_stages:
        raise ValidationError(f"stage {stage} out of range [0, {tokens.num_stages})")
    return bundle.full_prompt(tokens.stage_tokens[stage])


def split_for_guidance(
    prompt: str, suffix_template: str = DEFAULT_SUFFIX_TEMPLATE
) -> tuple[str, str]:
    """Split a rendered prompt into (style_prompt, context_prompt).

    The style prompt is the rendered suffix alone; the context prompt is
    everything before it. Joining the two with one space reproduces the input.
    Raises PromptStructureError if the prompt does not end with the suffix.
    """
    if suffix_template.count("{style}") != 1:
        raise ValidationError("suffix template must contain exactly one '{style}' placeholder")
    pre, post = (normalize_text(part) for part in suffix_template.split("{style}"))
    pattern = (
        r"^(?P<ctx>.*\S)\s+(?P<sfx>"
        + (re.escape(pre) + r"\s+" if pre else "")
        + r"(?P<tok><[^<>\s]+>)"
        + (r"\s+" + re.escape(post) if post else "")
        + r")$"
    )
    match = re.match(pattern, normalize_text(prompt))
    if match is None:
        raise PromptStructureError(
            f"prompt {prompt!r} does not end with the style suffix {suffix_template!r}"
        )
    return match.group("sfx"), match.group("ctx")


@dataclass(frozen=True)
class CaptionRecord:
    """Automatic caption for an image plus an optional human refinement."""

    image_id: str
    auto_caption: str
    refined_caption: str | None = None

    @property
    def source(self) -> str:
        return SOURCE_HUMAN if self.refined_caption is not None else SOURCE_AUTO

    @property
    def effective_caption(self) -> str:
        return self.refined_caption if self.refined_caption is not None else self.auto_caption


def refine_caption(record: CaptionRecord, human_text: str) -> CaptionRecord:
    """Attach a human caption; the automatic one stays retrievable. Last write wins."""
    text = normalize_text(human_text)
    if not text:
        raise ValidationError("human caption text must be non-empty")
    return replace(record, refined_caption=text)


@runtime_checkable
class CaptionerClient(Protocol):
    """Captioner contract: image bytes (+ optional instruction) in, caption out.

    Transport problems raise CaptionTransportError; a reachable captioner
    returning garbage raises CaptionContentError.
    """

    def caption(self, image_bytes: bytes, instruction: str | None = None) -> str: ...


class FixtureCaptioner:
    """Offline stub returning canned captions.

    Keys may be raw image bytes or their sha256 hex digests; both are checked.
    """

    def __init__(self, captions: Mapping[bytes | str, str]):
        self._captions = dict(captions)

    def caption(self, image_bytes: bytes, instruction: str | None = None) -> str:
        import hashlib

        if image_bytes in self._captions:
            return self._captions[image_bytes]
        digest = hashlib.sha256(image_bytes).hexdigest()
        if digest in self._captions:
            return self._captions[digest]
        raise CaptionContentError(f"no fixture caption for image digest {digest[:12]}…")


class HttpCaptioner:
    """Minimal HTTP captioner client: POST the image bytes, read the caption body."""

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def caption(self, image_bytes: bytes, instruction: str | None = None) -> str:
        headers = {"Content-Type": "application/octet-stream"}
        if instruction:
            headers["X-Caption-Instruction"] = instruction
        request = urllib.request.Request(self.endpoint, data=image_bytes, headers=headers)
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                return response.read().decode("utf-8")
        except (urllib.error.URLError, OSError) as exc:
            raise CaptionTransportError(f"captioner endpoint {self.endpoint} unreachable: {exc}") from exc


def fetch_caption(
    client: CaptionerClient,
    image_id: str,
    image_bytes: bytes,
    instruction: str | None = None,
    retries: int = 3,
    retry_wait: float = 0.0,
) -> CaptionRecord:
    """Fetch the automatic caption for an image, retrying transport failures.

    The caption is recorded verbatim; stripping style adjectives is left to
    the human refinement step.
    """
    last: CaptionTransportError | None = None
    for attempt in range(max(1, retries)):
        try:
            text = normalize_text(client.caption(image_bytes, instruction))
            if not text:
                raise CaptionContentError(f"captioner returned an empty caption for {image_id!r}")
            return CaptionRecord(image_id=image_id, auto_caption=text)
        except CaptionTransportError as exc:
            last = exc
            logger.warning("caption attempt %d/%d for %s failed: %s", attempt + 1, retries, image_id, exc)
            if retry_wait and attempt + 1 < retries:
                time.sleep(retry_wait)
    assert last is not None
    raise last


def caption_sidecar_path(image_path: str | Path) -> Path:
    """Sidecar file living next to the image: picture.png -> picture.caption.txt."""
    image_path = Path(image_path)
    return image_path.with_suffix(image_path.suffix + ".caption.txt")


def write_caption_sidecar(path: str | Path, record: CaptionRecord) -> None:
    """One effective-caption line, preceded by comments with the auto caption and source."""
    lines = [
        f"# auto: {record.auto_caption}",
        f"# source: {record.source}",
        record.effective_caption,
        "",
    ]
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def read_caption_sidecar(path: str | Path, image_id: str | None = None) -> CaptionRecord:
    """Inverse of write_caption_sidecar."""
    path = Path(path)
    auto = None
    source = SOURCE_AUTO
    effective = None
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("# auto:"):
            auto = line[len("# auto:"):].strip()
        elif line.startswith("# source:"):
            source = line[len("# source:"):].strip()
        elif line.strip() and not line.startswith("#"):
            effective = line.strip()
    if effective is None:
        raise CaptionContentError(f"caption sidecar {path} has no caption line")
    if auto is None:
        auto = effective
    record = CaptionRecord(image_id=image_id or path.stem, auto_caption=auto)
    if source == SOURCE_HUMAN:
        record = replace(record, refined_caption=effective)
    return record
