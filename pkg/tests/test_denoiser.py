"""Test the inflated denoiser, its EST modules and the parameter partition."""

import pytest
import torch

from src.core.config import DenoiserSettings
from src.core.exceptions import ContractError
from src.models.conditioning import GlobalTokens, TextCondition
from src.models.denoiser import (
    ESTBlock,
    build_denoiser,
    denoise,
    est_forward,
    freeze_spatial,
    is_trainable_name,
    load_spatial_weights,
    parameter_groups,
    timestep_embedding,
    trainable_parameters,
)

from .conftest import check_parameter_directions


def _est_settings(**overrides) -> DenoiserSettings:
    values = {
        "base_width": 8,
        "channel_mults": (1,),
        "window": (2, 2),
        "num_heads": 2,
        "norm_groups": 4,
        "num_frames": 4,
        "context_width": 8,
    }
    return DenoiserSettings(**{**values, **overrides})


def _randomize(module: torch.nn.Module, scale: float = 0.3) -> None:
    with torch.no_grad():
        for param in module.parameters():
            param.copy_(torch.randn_like(param) * scale)


def _inputs(batch: int = 1, frames: int = 8, dtype=torch.float32):
    z_t = torch.randn(batch, 4, frames, 4, 4, dtype=dtype)
    z_m = torch.randn(batch, 4, frames, 4, 4, dtype=dtype)
    m_down = torch.zeros(batch, 1, frames, 4, 4, dtype=dtype)
    m_down[..., 0] = 1.0
    return z_t, z_m, m_down


def test_zero_initialized_model_equals_spatial_model(tiny_settings):
    """Fresh EST modules are exact identities, so the video model reproduces the image model."""
    spatial_settings = tiny_settings.denoiser.model_copy(update={"temporal": False})
    spatial, _ = build_denoiser(spatial_settings, tiny_settings.conditioning)
    video, _ = build_denoiser(
        tiny_settings.denoiser, tiny_settings.conditioning, spatial_init=spatial.state_dict()
    )
    spatial.eval()
    video.eval()

    z_t, z_m, m_down = _inputs(batch=2)
    timesteps = torch.tensor([10.0, 500.0])
    text = torch.randn(2, 4, 16)
    global_tokens = torch.randn(2, 4, 16)
    with torch.no_grad():
        expected = spatial(z_t, timesteps, text, z_m, m_down)
        actual = video(z_t, timesteps, text, z_m, m_down, global_tokens)
    assert actual.shape == (2, 4, 8, 4, 4)
    assert torch.allclose(actual, expected, atol=1e-6)


def test_parameter_partition(tiny_settings):
    model, groups = build_denoiser(tiny_settings.denoiser, tiny_settings.conditioning)
    trainable = set(groups["trainable_temporal_global"])
    frozen = set(groups["frozen_spatial"])
    assert trainable and frozen and not trainable & frozen
    assert all(".est." in name or name.startswith("global_extractor.") for name in trainable)
    assert {name for name, p in model.named_parameters() if p.requires_grad} == trainable
    assert len(trainable_parameters(model)) == len(trainable)
    assert "unet.down.0.est.z_window.weight" in trainable
    assert "text_embedder.null_tokens" in frozen
    assert "global_extractor.null_tokens" in trainable


def test_trainable_name_rules():
    assert is_trainable_name("unet.mid.est.temporal.conv.weight")
    assert is_trainable_name("global_extractor.queries")
    assert not is_trainable_name("unet.mid.spatial.proj_in.weight")
    assert not is_trainable_name("unet.mid.best.weight")


def test_spatial_model_trains_everything(tiny_settings):
    spatial_settings = tiny_settings.denoiser.model_copy(update={"temporal": False})
    model, groups = build_denoiser(spatial_settings, tiny_settings.conditioning)
    assert all(p.requires_grad for p in model.parameters())
    assert not any(".est." in name for name in groups["frozen_spatial"])

    freeze_spatial(model)
    assert parameter_groups(model)["frozen_spatial"] == [
        name for name, p in model.named_parameters() if not p.requires_grad
    ]


def test_spatial_weights_must_match(tiny_settings):
    model, _ = build_denoiser(tiny_settings.denoiser, tiny_settings.conditioning)
    other_settings = tiny_settings.denoiser.model_copy(update={"base_width": 8})
    other, _ = build_denoiser(other_settings, tiny_settings.conditioning)
    with pytest.raises(ContractError):
        load_spatial_weights(model, other.state_dict())

    state = dict(model.state_dict())
    state.pop("unet.conv_in.weight")
    with pytest.raises(ContractError):
        load_spatial_weights(model, state)


def test_too_many_frames(tiny_settings):
    model, _ = build_denoiser(tiny_settings.denoiser, tiny_settings.conditioning)
    z_t, z_m, m_down = _inputs(frames=9)
    with pytest.raises(ContractError):
        model(z_t, torch.tensor([1.0]), torch.randn(1, 4, 16), z_m, m_down)


def test_input_shape_checks(tiny_settings):
    model, _ = build_denoiser(tiny_settings.denoiser, tiny_settings.conditioning)
    z_t, z_m, m_down = _inputs()
    with pytest.raises(ContractError):
        model(z_t, torch.tensor([1.0]), torch.randn(1, 4, 16), z_m[:, :, :4], m_down)
    with pytest.raises(ContractError):
        model(z_t, torch.tensor([1.0]), torch.randn(1, 4, 16), z_m, m_down[..., :2, :2])


def test_est_block_gradients():
    """The EST block is differentiable end to end once its zero projections are randomized."""
    block = ESTBlock(8, 8, _est_settings()).double()
    _randomize(block)
    x = torch.randn(1, 8, 3, 2, 2, dtype=torch.float64, requires_grad=True)
    context = torch.randn(1, 5, 8, dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda inp: block(inp, context), (x,))


@pytest.mark.parametrize("seed", range(3))
def test_est_block_parameter_gradients(seed):
    """Parameter gradients of the EST block agree with central differences."""
    torch.manual_seed(seed)
    block = ESTBlock(8, 8, _est_settings()).double()
    _randomize(block)
    x = torch.randn(1, 8, 3, 2, 2, dtype=torch.float64)
    context = torch.randn(1, 5, 8, dtype=torch.float64)
    check_parameter_directions(lambda: block(x, context), block, directions=20, seed=seed)


def test_est_temporal_receptive_field():
    """Without window and global attention one EST block sees exactly one kernel of frames."""
    settings = _est_settings(use_window_attention=False, use_global_tokens=False)
    block = ESTBlock(8, 8, settings).double()
    with torch.no_grad():
        block.z_temporal.weight.copy_(torch.randn(8, 8, dtype=torch.float64))
    x = torch.randn(1, 8, 4, 2, 2, dtype=torch.float64)
    perturbed = x.clone()
    perturbed[:, :, 0] += 1.0
    with torch.no_grad():
        diff = (block(perturbed) - block(x)).abs().amax(dim=(0, 1, 3, 4))
    assert (diff[:2] > 0).all()
    assert torch.allclose(diff[2:], torch.zeros(2, dtype=torch.float64), atol=1e-12)


def test_est_forward_single_volume():
    block = ESTBlock(8, 8, _est_settings())
    features = torch.randn(8, 3, 2, 2)
    spatial = torch.nn.Conv2d(8, 8, 1)
    with torch.no_grad():
        out = est_forward(features, block, spatial, context=torch.randn(5, 8))
        expected = spatial(features.permute(1, 0, 2, 3)).permute(1, 0, 2, 3)
    assert torch.allclose(out, expected, atol=1e-6)
    with pytest.raises(ContractError):
        est_forward(torch.randn(1, 8, 3, 2, 2), block)
    with pytest.raises(ContractError):
        est_forward(torch.randn(8, 5, 2, 2), block)


def test_denoise_channel_last(tiny_settings):
    model, _ = build_denoiser(tiny_settings.denoiser, tiny_settings.conditioning)
    model.eval()
    z_t = torch.randn(8, 4, 4, 4)
    m_down = torch.zeros(8, 4, 4, 1)
    text = TextCondition(torch.randn(4, 16))
    global_tokens = GlobalTokens(torch.randn(4, 16))
    with torch.no_grad():
        eps = denoise(z_t, 100.0, text, torch.zeros_like(z_t), m_down, global_tokens, model)
    assert eps.shape == (8, 4, 4, 4)
    with pytest.raises(ContractError):
        denoise(z_t, 100.0, text, z_t, m_down[:, :2], global_tokens, model)


def test_timestep_embedding():
    embedding = timestep_embedding(torch.tensor([0.0, 3.5]), 7)
    assert embedding.shape == (2, 7)
    assert torch.allclose(embedding[0, :3], torch.ones(3))
