"""Per-frame variational autoencoder mapping pixels to the diffusion latent space."""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import structlog
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm.auto import trange

from src.core.config import AutoencoderSettings
from src.core.exceptions import ContractError, TrainingError
from src.video.clip import VideoClip

logger = structlog.get_logger()


@dataclass
class LatentClip:
    """T×h×w×c latent volume; ``scale`` is the constant applied after encoding."""

    values: torch.Tensor
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.values.ndim != 4:
            raise ContractError(
                f"expected T×h×w×c latents, got shape {tuple(self.values.shape)}"
            )
        if not torch.isfinite(self.values).all():
            raise ContractError("latents contain non-finite values")

    @property
    def num_frames(self) -> int:
        return int(self.values.shape[0])

    def channels_first(self) -> torch.Tensor:
        """Latents as c×T×h×w, the denoiser layout."""
        return self.values.permute(3, 0, 1, 2)

    @classmethod
    def from_channels_first(cls, values: torch.Tensor, scale: float = 1.0) -> "LatentClip":
        return cls(values.permute(1, 2, 3, 0).contiguous(), scale=scale)


class LatentCodec(nn.Module, ABC):
    """
    Frame encoder/decoder pair used by the diffusion code.

    Subclasses wrap a concrete autoencoder (the toy VAE below, or pretrained weights).
    """

    downsample_factor: int
    latent_channels: int

    @abstractmethod
    def encode_frames(self, frames: torch.Tensor) -> torch.Tensor:
        """N×3×H×W in [0, 1] to scaled N×c×h×w mean latents."""

    @abstractmethod
    def decode_frames(self, latents: torch.Tensor) -> torch.Tensor:
        """Scaled N×c×h×w latents to N×3×H×W in [0, 1]."""

    @property
    def frozen(self) -> bool:
        return not self.training and not any(p.requires_grad for p in self.parameters())

    def freeze(self) -> "LatentCodec":
        self.eval()
        self.requires_grad_(False)
        return self

    def encode_video(self, frames: torch.Tensor) -> torch.Tensor:
        """B×T×H×W×3 frames to B×c×T×h×w latents."""
        batch, num_frames = frames.shape[:2]
        flat = frames.reshape(batch * num_frames, *frames.shape[2:]).permute(0, 3, 1, 2)
        latents = self.encode_frames(flat)
        latents = latents.reshape(batch, num_frames, *latents.shape[1:])
        return latents.permute(0, 2, 1, 3, 4)

    def decode_video(self, latents: torch.Tensor) -> torch.Tensor:
        """B×c×T×h×w latents to B×T×H×W×3 frames."""
        batch, channels, num_frames, height, width = latents.shape
        flat = latents.permute(0, 2, 1, 3, 4).reshape(batch * num_frames, channels, height, width)
        frames = self.decode_frames(flat).permute(0, 2, 3, 1)
        return frames.reshape(batch, num_frames, *frames.shape[1:])


def _level_widths(base: int, levels: int) -> list[int]:
    return [base * min(2**i, 4) for i in range(levels + 1)]


class ToyAutoencoder(LatentCodec):
    """Small strided-conv VAE; the decoder mirrors the encoder with transposed convs."""

    def __init__(self, settings: AutoencoderSettings):
        super().__init__()
        self.downsample_factor = settings.downsample_factor
        self.latent_channels = settings.latent_channels
        levels = int(math.log2(settings.downsample_factor))
        widths = _level_widths(settings.base_channels, levels)

        encoder: list[nn.Module] = [nn.Conv2d(3, widths[0], 3, padding=1), nn.SiLU()]
        for i in range(levels):
            encoder += [
                nn.Conv2d(widths[i], widths[i + 1], 4, stride=2, padding=1),
                nn.GroupNorm(8, widths[i + 1]),
                nn.SiLU(),
            ]
        encoder.append(nn.Conv2d(widths[-1], 2 * self.latent_channels, 3, padding=1))
        self.encoder = nn.Sequential(*encoder)

        decoder: list[nn.Module] = [
            nn.Conv2d(self.latent_channels, widths[-1], 3, padding=1),
            nn.SiLU(),
        ]
        for i in reversed(range(levels)):
            decoder += [
                nn.ConvTranspose2d(widths[i + 1], widths[i], 4, stride=2, padding=1),
                nn.GroupNorm(8, widths[i]),
                nn.SiLU(),
            ]
        decoder.append(nn.Conv2d(widths[0], 3, 3, padding=1))
        self.decoder = nn.Sequential(*decoder)

        self.register_buffer("latent_scale", torch.tensor(1.0))

    def moments(self, frames: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Unscaled posterior mean and log-variance."""
        mean, logvar = torch.chunk(self.encoder(frames * 2.0 - 1.0), 2, dim=1)
        return mean, logvar.clamp(-30.0, 20.0)

    def encode_frames(self, frames: torch.Tensor) -> torch.Tensor:
        mean, _ = self.moments(frames)
        return mean * self.latent_scale

    def decode_frames(self, latents: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.decoder(latents / self.latent_scale))

    def forward(
        self, frames: torch.Tensor, generator: torch.Generator | None = None
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        mean, logvar = self.moments(frames)
        noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        sample = mean + torch.exp(0.5 * logvar) * noise.to(mean.device)
        return torch.sigmoid(self.decoder(sample)), mean, logvar

    @torch.no_grad()
    def calibrate_scale(self, frames: torch.Tensor, batch_size: int = 64) -> float:
        """Set the latent scale to 1/std of the unscaled mean latents over ``frames``."""
        means = [
            self.moments(frames[i : i + batch_size].permute(0, 3, 1, 2))[0]
            for i in range(0, len(frames), batch_size)
        ]
        std = float(torch.cat(means).std())
        self.latent_scale.fill_(1.0 / max(std, 1e-6))
        return float(self.latent_scale)


def build_codec(settings: AutoencoderSettings) -> LatentCodec:
    """Instantiate the configured codec provider."""
    if settings.provider == "toy":
        return ToyAutoencoder(settings)
    raise ContractError(f"unknown autoencoder provider '{settings.provider}'")


def encode(clip: VideoClip, codec: LatentCodec) -> LatentClip:
    """
    Encode a clip frame by frame.

    Raises:
        ContractError: if the codec is not frozen or the clip size is incompatible
    """
    if not codec.frozen:
        raise ContractError("the autoencoder must be frozen before diffusion use")
    clip.check_divisible(codec.downsample_factor)
    with torch.no_grad():
        latents = codec.encode_frames(clip.channels_first())
    return LatentClip(latents.permute(0, 2, 3, 1).contiguous(), scale=_scale_of(codec))


def decode(latent: LatentClip, codec: LatentCodec) -> VideoClip:
    """Decode latents frame by frame; the output is clamped to [0, 1]."""
    if latent.values.shape[-1] != codec.latent_channels:
        raise ContractError(
            f"latent has {latent.values.shape[-1]} channels, codec expects {codec.latent_channels}"
        )
    with torch.no_grad():
        frames = codec.decode_frames(latent.values.permute(0, 3, 1, 2))
    return VideoClip(frames.permute(0, 2, 3, 1).clamp(0.0, 1.0).contiguous())


def _scale_of(codec: LatentCodec) -> float:
    scale = getattr(codec, "latent_scale", None)
    return float(scale) if scale is not None else 1.0


def reconstruction_psnr(codec: LatentCodec, frames: torch.Tensor, batch_size: int = 64) -> float:
    """PSNR of decode(encode(x)) over N×H×W×3 frames."""
    errors = []
    with torch.no_grad():
        for i in range(0, len(frames), batch_size):
            x = frames[i : i + batch_size].permute(0, 3, 1, 2)
            recon = codec.decode_frames(codec.encode_frames(x)).clamp(0.0, 1.0)
            errors.append(((recon - x) ** 2).flatten())
    mse = float(torch.cat(errors).mean())
    return 10.0 * math.log10(1.0 / max(mse, 1e-12))


def train_autoencoder(
    frames: torch.Tensor,
    settings: AutoencoderSettings,
    held_out: torch.Tensor | None = None,
    seed: int = 0,
    steps: int | None = None,
) -> ToyAutoencoder:
    """
    Train the toy VAE on N×H×W×3 frames, calibrate the latent scale, and freeze it.

    Raises:
        TrainingError: if the loss becomes non-finite
    """
    torch.manual_seed(seed)
    generator = torch.Generator().manual_seed(seed)
    model = ToyAutoencoder(settings)
    optimizer = torch.optim.AdamW(model.parameters(), lr=settings.learning_rate)
    total = steps if steps is not None else settings.steps

    model.train()
    loss_value = float("nan")
    for step in trange(total, desc="autoencoder", disable=total < 50):
        index = torch.randint(len(frames), (settings.batch_size,), generator=generator)
        batch = frames[index].permute(0, 3, 1, 2)
        recon, mean, logvar = model(batch, generator)
        reconstruction = F.mse_loss(recon, batch)
        kl = 0.5 * torch.mean(mean**2 + logvar.exp() - 1.0 - logvar)
        loss = reconstruction + settings.kl_weight * kl

        if not torch.isfinite(loss):
            raise TrainingError(
                "autoencoder loss diverged",
                step=step,
                diagnostics={"reconstruction": float(reconstruction), "kl": float(kl)},
            )
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        loss_value = float(loss)

    scale = model.calibrate_scale(frames)
    model.freeze()

    psnr = reconstruction_psnr(model, held_out) if held_out is not None else None
    logger.info(
        "autoencoder_trained",
        steps=total,
        final_loss=loss_value,
        latent_scale=scale,
        held_out_psnr=psnr,
    )
    if psnr is not None and psnr < settings.min_psnr:
        logger.warning("autoencoder_below_target_psnr", psnr=psnr, target=settings.min_psnr)
    return model
