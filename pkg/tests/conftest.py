import numpy as np
import pytest

from capnet.backbone import BackboneConfig
from capnet.bilinear import PoolSpec
from capnet.data import AugmentConfig
from capnet.regions import RegionPolicy
from capnet.training import TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_train_config(mode="B+C+E", **overrides):
    """A configuration small enough for per-test training runs."""
    base = dict(
        mode=mode,
        epochs=1,
        batch_size=4,
        seed=0,
        lr0=0.05,
        momentum=0.9,
        augment=AugmentConfig(rotation_deg=10.0, scale_jitter=0.05,
                              crop_from=18, crop_to=16),
        backbone=BackboneConfig(stages=((4, True), (4, True)),
                                input_size=(16, 16), upsample_to=(6, 6)),
        regions=RegionPolicy(delta=(2, 2), mode="pyramid",
                             pyramid_levels=((1, 2), (2, 2))),
        pool=PoolSpec((2, 2)),
        hidden_size=6,
        clusters=3,
        num_classes=3,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture
def tiny_config():
    return tiny_train_config
