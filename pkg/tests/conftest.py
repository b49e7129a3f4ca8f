import pytest
import torch

from motiondiffuse.dataset import DatasetSpec, synthesize_dataset
from motiondiffuse.denoiser import DenoiserConfig
from motiondiffuse.schedule import build_cosine_schedule
from motiondiffuse.trainer import TextMotionModel


@pytest.fixture(autouse=True)
def _fixed_global_seed():
    torch.manual_seed(1234)


@pytest.fixture(scope="session")
def tiny_model():
    """Untrained small model for sampler/editor contract tests."""
    torch.manual_seed(7)
    cfg = DenoiserConfig(d_model=32, n_layers=2, n_heads=2, d_ff=64,
                         d_motion=12, max_frames=48, d_text=32, dropout=0.0)
    model = TextMotionModel(cfg, vocab=64)
    model.eval()
    return model


@pytest.fixture(scope="session")
def tiny_schedule():
    return build_cosine_schedule(40)


@pytest.fixture(scope="session")
def small_dataset():
    spec = DatasetSpec(samples_per_class=4, length_range=(16, 24), seed=3)
    return synthesize_dataset(spec)
