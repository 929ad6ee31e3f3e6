import numpy as np
import pytest

from tilesr import ImageGrid, LatentGrid


@pytest.fixture
def rng():
    return np.random.default_rng(20240915)


def rand_image(rng, height, width, channels=3) -> ImageGrid:
    return ImageGrid(rng.random((height, width, channels)))


def rand_latent(rng, height, width, channels) -> LatentGrid:
    return LatentGrid(rng.standard_normal((height, width, channels)))
