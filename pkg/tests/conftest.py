import numpy as np
import pytest
import torch

from painseeker.dataset import SyntheticConfig, generate_synthetic_dataset


@pytest.fixture(autouse=True, scope="session")
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """3 rats x 8 images, default geometry."""
    out = tmp_path_factory.mktemp("small_synth")
    cfg = SyntheticConfig(n_rats=3, images_per_rat=8, seed=3)
    return generate_synthetic_dataset(out, cfg), cfg


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
