"""Shared fixtures: a tiny configuration that runs every component on CPU in seconds."""

from collections.abc import Callable

import numpy as np
import pytest
import torch

from src.core.config import (
    AutoencoderSettings,
    ConditioningSettings,
    DataSettings,
    DenoiserSettings,
    PipelineSettings,
    SamplerSettings,
    Settings,
    TrainingSettings,
)
from src.models.autoencoder import ToyAutoencoder
from src.video.clip import VideoClip
from src.video.dataset import ClipDataset
from src.video.synthetic import Sprite, ToySceneSpec, generate_toy_clip


@pytest.fixture(autouse=True)
def _seed() -> None:
    torch.manual_seed(0)


@pytest.fixture
def tiny_settings(tmp_path) -> Settings:
    return Settings(
        output_root=tmp_path / "runs",
        data=DataSettings(
            canvas=(32, 32),
            num_clips=4,
            frames_per_clip=12,
            clip_length=8,
            sprite_size=(4, 8),
            max_speed=2.0,
        ),
        autoencoder=AutoencoderSettings(base_channels=8, batch_size=4, steps=5),
        conditioning=ConditioningSettings(
            context_width=16,
            text_length=4,
            vocab_size=64,
            encoder_input_size=8,
            patch_grid=2,
            num_global_tokens=4,
            extractor_blocks=1,
            extractor_heads=2,
        ),
        denoiser=DenoiserSettings(
            base_width=16,
            channel_mults=(1, 2),
            window=(2, 2),
            num_heads=2,
            norm_groups=4,
            num_frames=8,
            context_width=16,
        ),
        sampler=SamplerSettings(steps=3),
        pipeline=PipelineSettings(context_length=8),
        training=TrainingSettings(
            batch_size=2,
            total_steps={"spatial_inpaint": 3, "base_video": 3, "interp": 3},
            warmup_steps={"spatial_inpaint": 1, "base_video": 1, "interp": 1},
            checkpoint_every=2,
            log_every=1,
        ),
    )


@pytest.fixture
def tiny_dataset(tiny_settings) -> ClipDataset:
    return ClipDataset.synthetic(tiny_settings.data, tiny_settings.autoencoder.downsample_factor)


@pytest.fixture
def tiny_codec(tiny_settings) -> ToyAutoencoder:
    codec = ToyAutoencoder(tiny_settings.autoencoder)
    codec.freeze()
    return codec


def make_clip(num_frames: int = 12, size: int = 32, seed: int = 0) -> VideoClip:
    """A small moving-square clip."""
    spec = ToySceneSpec(
        canvas=(size, size),
        sprites=[Sprite(shape="square", size=6, velocity=(1.5, 0.5), start=(3.0, 10.0))],
        background=(0.2, 0.3, 0.4),
        background_end=(0.6, 0.5, 0.2),
        num_frames=num_frames,
        seed=seed,
    )
    return generate_toy_clip(spec)


def random_clip(num_frames: int, height: int, width: int, seed: int = 0) -> VideoClip:
    rng = np.random.default_rng(seed)
    frames = torch.from_numpy(rng.random((num_frames, height, width, 3)).astype(np.float32))
    return VideoClip(frames, source_id=f"random-{seed}")


def check_parameter_directions(
    function: Callable[[], torch.Tensor],
    module: torch.nn.Module,
    directions: int = 20,
    seed: int = 0,
    step: float = 1e-6,
) -> None:
    """
    Compare autograd parameter gradients of ``function`` with central differences.

    The scalar checked is the output weighted by a fixed random tensor; each random direction
    spans every trainable parameter of ``module`` at once. Run in float64.
    """
    params = [p for p in module.parameters() if p.requires_grad]
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        reference = function()
    weight = torch.randn(reference.shape, generator=generator, dtype=reference.dtype)

    def scalar() -> torch.Tensor:
        return (function() * weight).sum()

    module.zero_grad()
    scalar().backward()
    grads = [torch.zeros_like(p) if p.grad is None else p.grad.detach().clone() for p in params]

    for _ in range(directions):
        direction = [torch.randn(p.shape, generator=generator, dtype=p.dtype) for p in params]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, direction, strict=True))
        originals = [p.detach().clone() for p in params]
        with torch.no_grad():
            for p, d in zip(params, direction, strict=True):
                p.add_(d, alpha=step)
            plus = float(scalar())
            for p, d in zip(params, direction, strict=True):
                p.sub_(d, alpha=2 * step)
            minus = float(scalar())
            for p, original in zip(params, originals, strict=True):
                p.copy_(original)
        numeric = (plus - minus) / (2 * step)
        assert numeric == pytest.approx(analytic, rel=1e-5, abs=1e-5)
