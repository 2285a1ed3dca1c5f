import numpy as np
import pytest
import torch

from drnet import datasets
from drnet.networks import NetworkSpec

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_spec():
    return NetworkSpec(arch="dcgan", in_channels=3, image_size=16,
                       dim_hc=8, dim_hp=3, width_mult=0.125)


@pytest.fixture(scope="session")
def small_digits():
    return datasets.gen_moving_digits(8, 8, seed=11)


@pytest.fixture(scope="session")
def small_shapes():
    return datasets.gen_rotating_shapes(6, 8, num_shape_classes=3, seed=5)


def downscale_dataset(dataset, size):
    """Box-downsample every frame to size x size (powers of two only)."""
    factor = dataset.frame_shape[1] // size
    clips = []
    for clip in dataset.clips:
        T, C, H, W = clip.frames.shape
        small = clip.frames.reshape(T, C, size, factor, size, factor).mean(axis=(3, 5))
        clips.append(datasets.VideoClip(frames=small.astype(np.float32),
                                        content_label=clip.content_label,
                                        clip_id=clip.clip_id))
    return datasets.ClipDataset(clips=clips, num_classes=dataset.num_classes,
                                metadata=dict(dataset.metadata))


@pytest.fixture(scope="session")
def small_digits_16(small_digits):
    return downscale_dataset(small_digits, 16)
