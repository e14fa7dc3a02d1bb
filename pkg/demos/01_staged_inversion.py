"""Staged embedding inversion on the toy backend, end to end.

Denoising timesteps are split into six stages, each owning one embedding
vector for the style placeholder. Training draws (image, timestep, noise),
builds the context-aware prompt for the sampled stage, and nudges only that
stage's vector. This script trains one style, prints the loss trajectory, and
saves a reusable checkpoint.

Run: python3 demos/01_staged_inversion.py
"""

import pathlib

import numpy as np

from stagestyle import (
    PromptBundle,
    StageSchedule,
    StyleDataset,
    StyleImage,
    TrainConfig,
    save,
    stage_of,
    toy_backend,
    train,
)
from stagestyle.prompts import CaptionRecord
from stagestyle.trainer import smoothed_loss_drop

OUT = pathlib.Path(__file__).parent / "_out"
OUT.mkdir(exist_ok=True)


def make_style_image(size=32):
    x, y = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size))
    return np.stack(
        [0.5 + 0.4 * np.sin(8 * x), 0.5 + 0.4 * np.cos(6 * y), 0.5 + 0.3 * np.sin(5 * (x + y))],
        axis=-1,
    )


def main():
    backend = toy_backend(seed=0)

    # ------------------------------------------------------------------ stages
    schedule = StageSchedule(num_stages=6, num_timesteps=backend.schedule.num_timesteps)
    print("timestep -> stage mapping (6 stages over 50 timesteps):")
    boundaries = [t for t in range(1, 50) if stage_of(schedule, t) != stage_of(schedule, t - 1)]
    print(f"  stage boundaries at t = {boundaries}")
    print("  stage 5 holds the highest-noise steps (global structure);")
    print("  stage 0 the lowest (fine detail).\n")

    # ------------------------------------------------------------------ dataset
    # one style image + a context caption describing its NON-style content,
    # so the embeddings absorb style rather than subject matter
    image = make_style_image()
    dataset = StyleDataset(
        (StyleImage("waves.png", image),),
        {"waves.png": CaptionRecord("waves.png", "swirling bands of color")},
    )
    bundle = PromptBundle("a painting", "swirling bands of color")
    print(f'training prompts look like: "{bundle.full_prompt("<style_k>")}"\n')

    # ------------------------------------------------------------------ train
    config = TrainConfig(steps=200, stage_count=6, seed=0)
    checkpoint = train(backend, dataset, config)
    losses = checkpoint.metadata["loss_history"]

    print("loss trajectory (window-20 moving average):")
    for start in range(0, 200, 40):
        window = losses[start : start + 20]
        print(f"  steps {start:3d}-{start + 19:3d}: {np.mean(window):.3f}")
    print(f"smoothed drop: {smoothed_loss_drop(losses, 20):.1%}")
    print(f"per-stage update counts: {checkpoint.metadata['stage_update_counts']}")

    path = OUT / "waves.stylecheckpoint.json"
    save(checkpoint, path)
    print(f"\nsaved checkpoint -> {path}")


if __name__ == "__main__":
    main()
