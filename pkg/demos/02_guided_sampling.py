"""Style and context guidance at sampling time.

The sampler combines four noise predictions (null, full prompt, style suffix,
context) with three scales: lambda_n (classifier-free), lambda_s (style),
lambda_c (context). This script shows the guidance algebra on toy tensors,
the pass economy (which denoiser passes actually run), and a small scale sweep
producing images.

Run: python3 demos/02_guided_sampling.py  (after 01_staged_inversion.py)
"""

import pathlib

import numpy as np

from stagestyle import (
    GuidanceInputs,
    GuidanceScales,
    PromptBundle,
    compose_guidance,
    compose_guidance_v1,
    compose_guidance_v2,
    load,
    sample,
    toy_backend,
)
from stagestyle.cli import save_image
from stagestyle.sampler import required_passes

OUT = pathlib.Path(__file__).parent / "_out"
CHECKPOINT = OUT / "waves.stylecheckpoint.json"


def algebra_walkthrough():
    print("guidance algebra on scalar inputs eps(null)=0, eps(full)=1, eps(style)=0.8, eps(context)=0.5:")
    inputs = GuidanceInputs(np.array([0.0]), np.array([1.0]), np.array([0.8]), np.array([0.5]))
    combined = compose_guidance(inputs, GuidanceScales(lambda_n=1, lambda_s=2, lambda_c=1))
    print(f"  combined six-term form (ln=1, ls=2, lc=1): {combined[0]:.3f}")
    print(f"  context-first one-sided form:             {compose_guidance_v1(inputs, 2, 1)[0]:.3f}")
    print(f"  style-first one-sided form:               {compose_guidance_v2(inputs, 2, 1)[0]:.3f}")

    # with ls = lc = 0 the rule collapses to plain classifier-free guidance
    cfg_only = compose_guidance(inputs, GuidanceScales(lambda_n=1, lambda_s=0, lambda_c=0))
    print(f"  ls=lc=0 recovers eps(full): {cfg_only[0]:.3f}\n")

    print("pass economy (denoiser evaluations per step):")
    for scales in (GuidanceScales(7.5, 0, 0), GuidanceScales(7.5, 1, 0.5), GuidanceScales(0, 0, 0)):
        passes = required_passes(scales)
        print(f"  ln={scales.lambda_n} ls={scales.lambda_s} lc={scales.lambda_c} -> {len(passes)} passes {passes}")
    print()


def scale_sweep():
    backend = toy_backend(seed=0)
    checkpoint = load(CHECKPOINT)
    bundle = PromptBundle("a painting", "of a quiet harbor")
    print(f'sampling "{bundle.full_prompt(checkpoint.tokens.base_token)}"')

    for name, scales in [
        ("cfg_only", GuidanceScales(7.5, 0.0, 0.0)),
        ("style_heavy", GuidanceScales(7.5, 2.0, 0.5)),
        ("context_heavy", GuidanceScales(7.5, 0.5, 2.0)),
    ]:
        result = sample(backend, checkpoint, bundle, scales, num_steps=50, seed=7, collect_trace=True)
        path = OUT / f"sample_{name}.png"
        save_image(result.image, path)
        stages_visited = sorted({step.stage for step in result.trace})
        print(f"  {name:14s} -> {path.name}  (stages visited: {stages_visited})")


def main():
    algebra_walkthrough()
    if not CHECKPOINT.exists():
        raise SystemExit("run demos/01_staged_inversion.py first to create the checkpoint")
    scale_sweep()


if __name__ == "__main__":
    main()
