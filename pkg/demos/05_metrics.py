"""The three evaluation metrics and the batch manifest evaluator.

Text and image scores are clamped scaled cosines between embeddings; the style
score compares patchwise Gram (channel-covariance) statistics: five 224x224
patches (corners + center), L layer taps, all 25 ordered patch pairs, and

    style_score = 50 - mean cosine    (lower = closer texture, 49 = identical)

Everything runs offline on toy embedding/feature backends; real CLIP or VGG16
adapters plug in behind the same two-method interfaces.

Run: python3 demos/05_metrics.py
"""

import json
import pathlib

import numpy as np
from PIL import Image

from stagestyle.metrics import (
    MetricBackends,
    evaluate_manifest,
    format_report,
    image_score,
    patch_coordinates,
    read_manifest,
    style_score,
    text_score,
    write_report,
)

OUT = pathlib.Path(__file__).parent / "_out"
OUT.mkdir(exist_ok=True)


def textured(seed: int, size: int = 256) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = rng.uniform(0, 1, (size // 8, size // 8, 3))
    return np.kron(base, np.ones((8, 8, 1)))


def main():
    backends = MetricBackends.toy(seed=0)

    print("patch layout for a 448x448 image (x, y offsets):")
    print(f"  {patch_coordinates(448, 448)}\n")

    # ------------------------------------------------------------- unit scores
    a, b = textured(1), textured(2)
    e_a = backends.image_embedder.embed_image(a)
    e_b = backends.image_embedder.embed_image(b)
    e_text = backends.text_embedder.embed_text("a painting of rough colorful tiles")
    print("alignment scores (clamped 100*cosine):")
    print(f"  image_score(a, a)    = {image_score(e_a, e_a):6.2f}   (identical -> 100)")
    print(f"  image_score(a, b)    = {image_score(e_a, e_b):6.2f}")
    print(f"  text_score(a, text)  = {text_score(e_a, e_text):6.2f}\n")

    constant = np.full((256, 256, 3), 0.6)
    x, y = np.meshgrid(np.linspace(0, 16, 256), np.linspace(0, 16, 256))
    stripes = np.stack([0.5 + 0.5 * np.sin(2 * np.pi * x)] * 3, axis=-1)
    smooth = np.kron(np.random.default_rng(9).uniform(0, 1, (8, 8, 3)), np.ones((32, 32, 1)))
    print("style score (50 - mean patchwise Gram cosine, lower = more similar):")
    print(f"  identical constant images  -> {style_score(constant, constant):.4f}  (floor is 49)")
    print(f"  same kind of noise texture -> {style_score(a, b, backends.feature_extractor):.4f}")
    print(f"  noise vs smooth blocks     -> {style_score(a, smooth, backends.feature_extractor):.4f}")
    print(f"  noise vs hard stripes      -> {style_score(a, stripes, backends.feature_extractor):.4f}\n")

    # --------------------------------------------------------------- manifest
    paths = []
    for i in range(3):
        path = OUT / f"metric_fixture_{i}.png"
        Image.fromarray((textured(10 + i) * 255).astype(np.uint8)).save(path)
        paths.append(path)

    manifest = OUT / "manifest.jsonl"
    rows = [
        {"image_path": str(paths[i]), "prompt": f"a painting of tiles variant {i}", "style_path": str(paths[(i + 1) % 3])}
        for i in range(3)
    ]
    rows.append({"image_path": str(OUT / "does_not_exist.png"), "prompt": "x", "style_path": str(paths[0])})
    manifest.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")

    table = evaluate_manifest(read_manifest(manifest), backends)
    print("manifest evaluation (missing files become row-level errors):")
    print(format_report(table))
    write_report(table, OUT / "report.json")
    print(f"\nwrote {OUT / 'report.json'}")


if __name__ == "__main__":
    main()
