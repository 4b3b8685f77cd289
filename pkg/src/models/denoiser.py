"""Inflated latent UNet: frozen per-frame spatial blocks interleaved with trainable EST modules."""

import math
from collections.abc import Mapping

import structlog
import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from src.core.config import ConditioningSettings, DenoiserSettings
from src.core.exceptions import ContractError

from .attention import CrossAttention, SelfAttention, TemporalBlock, WindowAttention3D, zero_module
from .conditioning import GlobalFeatureExtractor, GlobalTokens, PromptEmbedder, TextCondition

logger = structlog.get_logger()

TRAINABLE_MARKERS = (".est.",)
TRAINABLE_PREFIXES = ("global_extractor.",)


def timestep_embedding(
    timesteps: torch.Tensor, dim: int, max_period: float = 10000.0
) -> torch.Tensor:
    """Sinusoidal embedding of (possibly fractional) timesteps, B -> B×dim."""
    half = dim // 2
    dtype = timesteps.dtype if timesteps.is_floating_point() else torch.float32
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=dtype, device=timesteps.device) / half
    )
    args = timesteps.to(dtype)[:, None] * freqs[None]
    embedding = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        embedding = F.pad(embedding, (0, 1))
    return embedding


def _fold_frames(x: torch.Tensor) -> torch.Tensor:
    return rearrange(x, "b c t h w -> (b t) c h w")


def _unfold_frames(x: torch.Tensor, batch: int) -> torch.Tensor:
    return rearrange(x, "(b t) c h w -> b c t h w", b=batch)


class ResBlock2D(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, time_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(groups, in_channels), in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_channels)
        self.norm2 = nn.GroupNorm(groups, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip: nn.Module = nn.Identity()
        if in_channels != out_channels:
            self.skip = nn.Conv2d(in_channels, out_channels, 1)

    def forward(self, x: torch.Tensor, time: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(time))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class SpatialTransformer(nn.Module):
    """Per-frame self-attention, text cross-attention and feed-forward in 1×1 projections."""

    def __init__(self, width: int, context_width: int, heads: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, width)
        self.proj_in = nn.Conv2d(width, width, 1)
        self.norm_self = nn.LayerNorm(width)
        self.self_attn = SelfAttention(width, heads)
        self.norm_cross = nn.LayerNorm(width)
        self.cross_attn = CrossAttention(width, context_width, heads)
        self.norm_ff = nn.LayerNorm(width)
        self.ff = nn.Sequential(nn.Linear(width, 4 * width), nn.GELU(), nn.Linear(4 * width, width))
        self.proj_out = nn.Conv2d(width, width, 1)

    def forward(self, x: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        _, _, height, width = x.shape
        tokens = rearrange(self.proj_in(self.norm(x)), "n c h w -> n (h w) c")
        tokens = tokens + self.self_attn(self.norm_self(tokens))
        tokens = tokens + self.cross_attn(self.norm_cross(tokens), text)
        tokens = tokens + self.ff(self.norm_ff(tokens))
        return x + self.proj_out(rearrange(tokens, "n (h w) c -> n c h w", h=height, w=width))


class ESTBlock(nn.Module):
    """
    Temporal module inserted after a spatial block.

    Computes y = x + Z_1D(T_1D(x)), v = y + Z_W(T_W(y)) and, when conditioning tokens are
    given, v + Z_G(CrossAttn(v, [c; g])). All Z projections start at zero.
    """

    def __init__(
        self,
        width: int,
        context_width: int,
        settings: DenoiserSettings,
    ):
        super().__init__()
        self.num_frames = settings.num_frames
        self.temporal = TemporalBlock(width, settings.num_heads, settings.temporal_kernel)
        self.z_temporal = zero_module(nn.Linear(width, width))

        self.window_attn: WindowAttention3D | None = None
        if settings.use_window_attention:
            self.norm_window = nn.LayerNorm(width)
            self.window_attn = WindowAttention3D(width, settings.num_heads, settings.window)
            self.z_window = zero_module(nn.Linear(width, width))

        self.global_attn: CrossAttention | None = None
        if settings.use_global_tokens:
            self.norm_global = nn.LayerNorm(width)
            self.global_attn = CrossAttention(width, context_width, settings.num_heads)
            self.z_global = zero_module(nn.Linear(width, width))

    @staticmethod
    def _project(linear: nn.Module, x: torch.Tensor) -> torch.Tensor:
        return rearrange(linear(rearrange(x, "b c t h w -> b t h w c")), "b t h w c -> b c t h w")

    def forward(self, x: torch.Tensor, context: torch.Tensor | None = None) -> torch.Tensor:
        if x.shape[2] > self.num_frames:
            raise ContractError(
                f"clip has {x.shape[2]} frames, block supports at most {self.num_frames}"
            )
        y = x + self._project(self.z_temporal, self.temporal(x))

        if self.window_attn is not None:
            normed = self._project(self.norm_window, y)
            y = y + self._project(self.z_window, self.window_attn(normed))

        if self.global_attn is not None and context is not None:
            _, _, num_frames, height, width = y.shape
            tokens = rearrange(y, "b c t h w -> b (t h w) c")
            attended = self.z_global(self.global_attn(self.norm_global(tokens), context))
            y = y + rearrange(attended, "b (t h w) c -> b c t h w", t=num_frames, h=height, w=width)
        return y


class UNetStage(nn.Module):
    """ResBlock, spatial transformer and optional EST at one resolution."""

    def __init__(
        self,
        in_channels: int,
        width: int,
        time_dim: int,
        settings: DenoiserSettings,
    ):
        super().__init__()
        self.res = ResBlock2D(in_channels, width, time_dim, settings.norm_groups)
        self.spatial = SpatialTransformer(
            width, settings.context_width, settings.num_heads, settings.norm_groups
        )
        self.est = ESTBlock(width, settings.context_width, settings) if settings.temporal else None

    def forward(
        self,
        x: torch.Tensor,
        time: torch.Tensor,
        text: torch.Tensor,
        context: torch.Tensor | None,
    ) -> torch.Tensor:
        batch = x.shape[0]
        h = self.spatial(self.res(_fold_frames(x), time), text)
        h = _unfold_frames(h, batch)
        if self.est is not None:
            h = self.est(h, context)
        return h


class DenoiserUNet(nn.Module):
    """
    Latent UNet predicting noise for B×(2c+1)×T×h×w inputs.

    Spatial layers run per frame with T folded into the batch; with ``settings.temporal``
    each stage is followed by an EST module.
    """

    def __init__(self, settings: DenoiserSettings):
        super().__init__()
        self.settings = settings
        widths = settings.widths
        time_dim = 4 * settings.base_width

        self.time_embed = nn.Sequential(
            nn.Linear(settings.base_width, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
        )
        self.conv_in = nn.Conv2d(settings.in_channels, widths[0], 3, padding=1)

        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        previous = widths[0]
        for level, width in enumerate(widths):
            self.down.append(UNetStage(previous, width, time_dim, settings))
            if level < len(widths) - 1:
                self.downsample.append(nn.Conv2d(width, width, 3, stride=2, padding=1))
            previous = width

        self.mid = UNetStage(widths[-1], widths[-1], time_dim, settings)

        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for level in reversed(range(len(widths))):
            self.up.append(UNetStage(previous + widths[level], widths[level], time_dim, settings))
            if level > 0:
                self.upsample.append(nn.Conv2d(widths[level], widths[level - 1], 3, padding=1))
            previous = widths[level - 1] if level > 0 else widths[0]

        self.norm_out = nn.GroupNorm(settings.norm_groups, widths[0])
        self.conv_out = nn.Conv2d(widths[0], settings.latent_channels, 3, padding=1)

    @property
    def min_latent_size(self) -> int:
        return 2 ** (len(self.settings.widths) - 1)

    def forward(
        self,
        x: torch.Tensor,
        timesteps: torch.Tensor,
        text: torch.Tensor,
        global_tokens: torch.Tensor | None = None,
    ) -> torch.Tensor:
        batch, channels, num_frames, height, width = x.shape
        if channels != self.settings.in_channels:
            raise ContractError(
                f"expected {self.settings.in_channels} input channels, got {channels}"
            )
        if height % self.min_latent_size or width % self.min_latent_size:
            raise ContractError(f"latent {height}x{width} not divisible by {self.min_latent_size}")

        time = self.time_embed(timestep_embedding(timesteps, self.settings.base_width).to(x.dtype))
        time = time.repeat_interleave(num_frames, dim=0)
        frame_text = text.repeat_interleave(num_frames, dim=0)

        context = None
        if self.settings.temporal:
            use_global = self.settings.use_global_tokens and global_tokens is not None
            context = torch.cat([text, global_tokens], dim=1) if use_global else text

        h = _unfold_frames(self.conv_in(_fold_frames(x)), batch)
        skips = []
        for level, stage in enumerate(self.down):
            h = stage(h, time, frame_text, context)
            skips.append(h)
            if level < len(self.downsample):
                h = _unfold_frames(self.downsample[level](_fold_frames(h)), batch)

        h = self.mid(h, time, frame_text, context)

        for index, stage in enumerate(self.up):
            h = stage(torch.cat([h, skips.pop()], dim=1), time, frame_text, context)
            if index < len(self.upsample):
                frames = F.interpolate(_fold_frames(h), scale_factor=2.0, mode="nearest")
                h = _unfold_frames(self.upsample[index](frames), batch)

        out = self.conv_out(F.silu(self.norm_out(_fold_frames(h))))
        return _unfold_frames(out, batch)


class GlobalPaintNet(nn.Module):
    """Bundle of the denoising UNet, the prompt embedder and the global feature extractor."""

    def __init__(self, denoiser: DenoiserSettings, conditioning: ConditioningSettings):
        super().__init__()
        if denoiser.context_width != conditioning.context_width:
            raise ContractError("denoiser and conditioning context widths differ")
        self.unet = DenoiserUNet(denoiser)
        self.text_embedder = PromptEmbedder.from_settings(conditioning)
        self.global_extractor = GlobalFeatureExtractor.from_settings(conditioning)

    @property
    def settings(self) -> DenoiserSettings:
        return self.unet.settings

    @property
    def text_null(self) -> torch.Tensor:
        return self.text_embedder.null_tokens

    @property
    def global_null(self) -> torch.Tensor:
        return self.global_extractor.null_tokens

    def forward(
        self,
        z_t: torch.Tensor,
        timesteps: torch.Tensor,
        text: torch.Tensor,
        z_m: torch.Tensor,
        m_down: torch.Tensor,
        global_tokens: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Predict noise; latents are B×c×T×h×w and ``m_down`` is B×1×T×h×w."""
        if z_t.shape != z_m.shape:
            raise ContractError(f"z_t {tuple(z_t.shape)} and z_m {tuple(z_m.shape)} disagree")
        if m_down.shape != (z_t.shape[0], 1, *z_t.shape[2:]):
            raise ContractError(f"mask {tuple(m_down.shape)} not at latent resolution")
        return self.unet(torch.cat([z_t, z_m, m_down], dim=1), timesteps, text, global_tokens)


def is_trainable_name(name: str) -> bool:
    """Temporal modules and the global extractor are trained; everything else stays frozen."""
    return any(marker in f".{name}" for marker in TRAINABLE_MARKERS) or name.startswith(
        TRAINABLE_PREFIXES
    )


def parameter_groups(model: nn.Module) -> dict[str, list[str]]:
    """Partition parameter names into frozen spatial and trainable temporal/global groups."""
    groups: dict[str, list[str]] = {"frozen_spatial": [], "trainable_temporal_global": []}
    for name, _ in model.named_parameters():
        key = "trainable_temporal_global" if is_trainable_name(name) else "frozen_spatial"
        groups[key].append(name)
    return groups


def trainable_parameters(model: nn.Module) -> list[nn.Parameter]:
    return [param for name, param in model.named_parameters() if is_trainable_name(name)]


def freeze_spatial(model: nn.Module) -> nn.Module:
    """Set ``requires_grad`` according to the parameter partition."""
    for name, param in model.named_parameters():
        param.requires_grad_(is_trainable_name(name))
    return model


def load_spatial_weights(model: GlobalPaintNet, state: Mapping[str, torch.Tensor]) -> None:
    """
    Copy every frozen parameter and buffer from a spatial-only state dict.

    Raises:
        ContractError: if a spatial entry is missing, unexpected, or has the wrong shape
    """
    target = model.state_dict()
    spatial_keys = {key for key in target if not is_trainable_name(key)}
    incoming = {key for key in state if not is_trainable_name(key)}

    missing = sorted(spatial_keys - incoming)
    unexpected = sorted(incoming - spatial_keys)
    if missing or unexpected:
        raise ContractError(
            "spatial checkpoint does not match the config: "
            f"missing={missing[:5]} unexpected={unexpected[:5]}"
        )
    for key in spatial_keys:
        if state[key].shape != target[key].shape:
            raise ContractError(
                f"shape mismatch for {key}: {tuple(state[key].shape)} vs {tuple(target[key].shape)}"
            )
    model.load_state_dict({key: state[key] for key in spatial_keys}, strict=False)


def build_denoiser(
    denoiser: DenoiserSettings,
    conditioning: ConditioningSettings,
    spatial_init: Mapping[str, torch.Tensor] | None = None,
) -> tuple[GlobalPaintNet, dict[str, list[str]]]:
    """
    Build the video denoiser bundle, optionally from spatial-only weights.

    Returns:
        The model (spatial parameters frozen when temporal) and its parameter partition
    """
    model = GlobalPaintNet(denoiser, conditioning)
    if spatial_init is not None:
        load_spatial_weights(model, spatial_init)
    if denoiser.temporal:
        freeze_spatial(model)
    groups = parameter_groups(model)
    logger.info(
        "denoiser_built",
        temporal=denoiser.temporal,
        frozen=len(groups["frozen_spatial"]),
        trainable=len(groups["trainable_temporal_global"]),
        parameters=sum(p.numel() for p in model.parameters()),
        spatial_init=spatial_init is not None,
    )
    return model, groups


def est_forward(
    features: torch.Tensor,
    block: ESTBlock,
    spatial: nn.Module | None = None,
    context: torch.Tensor | None = None,
) -> torch.Tensor:
    """
    Apply an optional per-frame spatial module and then an EST block to a C×T×H×W volume.

    ``spatial`` maps N×C×H×W to N×C×H×W and is applied with time folded into the batch.
    """
    if features.ndim != 4:
        raise ContractError(f"expected C×T×H×W features, got shape {tuple(features.shape)}")
    x = features.unsqueeze(0)
    if spatial is not None:
        x = _unfold_frames(spatial(_fold_frames(x)), 1)
    return block(x, None if context is None else context.unsqueeze(0))[0]


def denoise(
    z_t: torch.Tensor,
    timestep: float,
    text: TextCondition,
    z_m: torch.Tensor,
    m_down: torch.Tensor,
    global_tokens: GlobalTokens | None,
    model: GlobalPaintNet,
) -> torch.Tensor:
    """Single-clip noise prediction on channel-last latents (T×h×w×c, mask T×h×w×1)."""
    if m_down.shape[:3] != z_t.shape[:3] or m_down.shape[-1] != 1:
        raise ContractError(f"mask {tuple(m_down.shape)} does not match latents {tuple(z_t.shape)}")

    def channels_first(x: torch.Tensor) -> torch.Tensor:
        return rearrange(x, "t h w c -> 1 c t h w")

    timesteps = torch.full((1,), float(timestep), dtype=z_t.dtype, device=z_t.device)
    g = None if global_tokens is None else global_tokens.tokens.unsqueeze(0)
    eps = model(
        channels_first(z_t),
        timesteps,
        text.tokens.unsqueeze(0),
        channels_first(z_m),
        channels_first(m_down),
        g,
    )
    return rearrange(eps, "1 c t h w -> t h w c")
