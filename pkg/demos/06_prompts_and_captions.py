"""Context-aware prompt construction and the caption acquisition loop.

Training prompts are [opening, context, style suffix]; the context descriptor
(what the style image depicts, not how it looks) comes from a captioner client
and can be refined by a human. The same structure is split back apart at
sampling time so style and context can be guided independently.

Run: python3 demos/06_prompts_and_captions.py
"""

import pathlib

from stagestyle import (
    MultiStageTokenSet,
    PromptBundle,
    build_training_prompt,
    fetch_caption,
    refine_caption,
    split_for_guidance,
)
from stagestyle.prompts import (
    FixtureCaptioner,
    caption_sidecar_path,
    read_caption_sidecar,
    write_caption_sidecar,
)

OUT = pathlib.Path(__file__).parent / "_out"
OUT.mkdir(exist_ok=True)


def main():
    tokens = MultiStageTokenSet.derive("<style>", 6)

    # ------------------------------------------------------------- building
    bundle = PromptBundle("a painting", "of a woman in a blue dress")
    print("stage-aware training prompts:")
    for stage in (0, 2, 5):
        print(f"  stage {stage}: {build_training_prompt(bundle, tokens, stage)}")

    plain = PromptBundle("a painting")
    print(f"  empty context degrades gracefully: {build_training_prompt(plain, tokens, 0)}\n")

    # ------------------------------------------------------------- splitting
    prompt = "A painting of a house in the style of <style_3>"
    style_part, context_part = split_for_guidance(prompt)
    print("splitting an inference prompt for guidance:")
    print(f"  full:    {prompt}")
    print(f"  context: {context_part}")
    print(f"  style:   {style_part}\n")

    # ------------------------------------------------------------- captions
    # offline stub standing in for a real captioner service; the client
    # contract is just bytes -> caption string
    image_bytes = b"pretend-png-bytes-of-the-style-image"
    captioner = FixtureCaptioner({image_bytes: "a woman in a blue dress"})
    record = fetch_caption(captioner, "style.png", image_bytes)
    print("caption flow:")
    print(f"  auto ({record.source}): {record.effective_caption}")

    record = refine_caption(record, "a woman in a blue dress holding a parasol")
    print(f"  refined ({record.source}): {record.effective_caption}")
    print(f"  original kept for audit: {record.auto_caption}")

    sidecar = OUT / caption_sidecar_path("style.png").name
    write_caption_sidecar(sidecar, record)
    reloaded = read_caption_sidecar(sidecar, "style.png")
    print(f"  sidecar round trip ({sidecar.name}): {reloaded.effective_caption!r} [{reloaded.source}]")


if __name__ == "__main__":
    main()
