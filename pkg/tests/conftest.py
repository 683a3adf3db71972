"""Shared fixtures: procedural fixture images, tiny configs, trained states."""

import numpy as np
import pytest

from inkalign.data import ingest, save_image
from inkalign.generator import GeneratorConfig
from inkalign.imagetypes import ImageStack
from inkalign.losses import LossConfig
from inkalign.pipeline import TrainConfig
from inkalign.priors import DegradationConfig

TINY_GEN = GeneratorConfig(
    base_channels=8,
    channel_multipliers=(1, 1, 2, 2),
    latent_channels=4,
    downsample_factor=8,
    input_resolution=32,
)


def make_fixture_image(seed: int, h: int = 80, w: int = 80) -> ImageStack:
    """Smooth, colorful procedural page; deterministic per seed."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    phase = rng.uniform(0, 3, size=3)
    arr = np.stack(
        [
            0.45 + 0.35 * np.sin(4 * xx + phase[0]),
            0.5 + 0.35 * np.cos(3 * yy + phase[1]),
            0.5 + 0.3 * np.sin(2 * (xx + yy) + phase[2]),
        ],
        axis=2,
    )
    return ImageStack(np.clip(arr, 0.02, 0.98))


def tiny_train_config(**overrides) -> TrainConfig:
    defaults = dict(
        learning_rate=1e-3,
        batch_size=2,
        max_steps=10,
        checkpoint_interval=5,
        seed=7,
        resize_to=32,
        crop_size=32,
        disc_base_channels=8,
        loss=LossConfig(lambda_psi_start=10**9),  # gate disabled unless overridden
        generator=TINY_GEN,
        degradation=DegradationConfig(seed=1),
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture()
def fixture_dataset(tmp_path):
    root = tmp_path / "pages"
    root.mkdir()
    for i in range(6):
        save_image(make_fixture_image(i), root / f"page_{i}.png")
    return ingest(root)
