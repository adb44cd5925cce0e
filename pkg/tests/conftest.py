import numpy as np
import pytest
import torch

from platesr.data import DegradationSpec, PatchPair
from platesr.model import SRModel, SRModelConfig


def seeded_pairs(n, scale=8, hr_size=64, seed=0):
    """Random (not plate-like) patch pairs for plumbing tests."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        hr = rng.random((3, hr_size, hr_size))
        from platesr.resample import downscale

        lr = np.clip(downscale(hr, scale), 0.0, 1.0)
        pairs.append(PatchPair(hr=hr, lr=lr, scale=scale, origin=(f"rnd_{i}", (0, 0))))
    return pairs


@pytest.fixture
def degradation_x8():
    return DegradationSpec(scale=8)


@pytest.fixture
def tiny_model():
    torch.manual_seed(0)
    return SRModel(SRModelConfig(base_channels=8, num_rdb=1, rdb_convs=2, growth=4,
                                 ca_reduction=4, scale=4))
