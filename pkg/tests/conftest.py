import numpy as np
import pytest

from dydet.detector.cascade import build_model
from dydet.detector.features import ArchConfig
from dydet.shapes.scene import SceneConfig, generate_scene

# 32x32 images, two levels with 2 and 4 channels; fast enough for finite differences
TINY_ARCH = ArchConfig(image_size=32, num_levels=2, base_channels=2, stem_channels=4, num_classes=3)
TINY_SCENES = SceneConfig(image_size=32, num_objects_range=(1, 3), size_range=(0.2, 0.4))


@pytest.fixture
def tiny_arch():
    return TINY_ARCH


@pytest.fixture
def tiny_scene_config():
    return TINY_SCENES


@pytest.fixture
def tiny_model():
    return build_model(TINY_ARCH, seed=0)


@pytest.fixture
def tiny_scenes():
    return [generate_scene(TINY_SCENES, seed) for seed in range(8)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
