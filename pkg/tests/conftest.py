import numpy as np
import pytest

from stagestyle.backend import IMAGE_SIZE, toy_backend
from stagestyle.prompts import CaptionRecord
from stagestyle.trainer import StyleDataset, StyleImage, TrainConfig, train


def make_style_image(kind: str = "waves", size: int = IMAGE_SIZE) -> np.ndarray:
    """Deterministic procedural RGB test images in [0, 1]."""
    x, y = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size))
    if kind == "waves":
        return np.stack(
            [0.5 + 0.4 * np.sin(8 * x), 0.5 + 0.4 * np.cos(6 * y), 0.5 + 0.3 * np.sin(5 * (x + y))],
            axis=-1,
        )
    if kind == "blobs":
        r = (x - 0.3) ** 2 + (y - 0.6) ** 2
        return np.stack([np.exp(-8 * r), 0.2 + 0.6 * y, 1.0 - np.exp(-4 * r)], axis=-1)
    if kind == "grid":
        pattern = ((np.floor(x * 8) + np.floor(y * 8)) % 2).astype(float)
        return np.stack([pattern, 0.5 * pattern + 0.25, 1.0 - pattern], axis=-1)
    raise ValueError(kind)


def make_dataset(kind: str = "waves", caption: str = "swirling bands of color") -> StyleDataset:
    image_id = f"{kind}.png"
    return StyleDataset(
        (StyleImage(image_id, make_style_image(kind)),),
        {image_id: CaptionRecord(image_id, caption)},
    )


@pytest.fixture(scope="session")
def backend():
    return toy_backend(0)


@pytest.fixture(scope="session")
def dataset():
    return make_dataset()


@pytest.fixture(scope="session")
def quick_checkpoint(backend, dataset):
    """A lightly trained checkpoint shared by sampler/transfer/persistence tests."""
    return train(backend, dataset, TrainConfig(steps=60, stage_count=6, seed=0))
