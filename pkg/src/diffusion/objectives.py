"""Noise-prediction training losses for the image, inpainting, video and interpolation models."""

from collections.abc import Callable
from dataclasses import dataclass, replace

import torch

from src.core.exceptions import ContractError, TrainingError
from src.models.conditioning import drop_conditions_batch, sample_drops

from .schedules import NoiseSchedule, add_noise

# (model input, timestep, text B×L×C, z_m, m_down, global tokens B×M×C) -> eps prediction
EpsPredictor = Callable[
    [torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor | None],
    torch.Tensor,
]


@dataclass
class LatentBatch:
    """
    A training batch in latent space.

    ``z0`` and ``z_m`` are B×c×T×h×w, ``m_down`` is B×1×T×h×w, ``context`` holds the
    B×N×C context tokens used for the global tokens (None when they are not used).
    """

    z0: torch.Tensor
    z_m: torch.Tensor
    m_down: torch.Tensor
    prompts: list[str]
    context: torch.Tensor | None = None

    def __post_init__(self) -> None:
        if self.z0.shape != self.z_m.shape:
            raise ContractError(
                f"z0 {tuple(self.z0.shape)} and z_m {tuple(self.z_m.shape)} disagree"
            )
        if self.m_down.shape != (self.z0.shape[0], 1, *self.z0.shape[2:]):
            raise ContractError(f"mask {tuple(self.m_down.shape)} not at latent resolution")
        if len(self.prompts) != self.z0.shape[0]:
            raise ContractError("one prompt per batch element is required")

    @property
    def num_frames(self) -> int:
        return int(self.z0.shape[2])

    def with_observed_boundaries(self) -> "LatentBatch":
        """Mark the first and last frames fully observed, putting their clean latents in z_m."""
        m_down = self.m_down.clone()
        z_m = self.z_m.clone()
        for frame in (0, self.num_frames - 1):
            m_down[:, :, frame] = 0.0
            z_m[:, :, frame] = self.z0[:, :, frame]
        return replace(self, z_m=z_m, m_down=m_down)


@dataclass
class NoiseDraw:
    """Random draws for one loss evaluation, in drawing order: timesteps, noise, CFG drops."""

    timesteps: torch.Tensor
    eps: torch.Tensor
    dropped: torch.Tensor


class DiffusionObjective:
    """
    Squared-error noise-prediction losses over a :class:`LatentBatch`.

    ``model`` provides the text embedder, the global extractor and their learned null tokens;
    ``predictor`` defaults to the model's forward and can be replaced to test the loss wiring.
    """

    def __init__(
        self,
        model: torch.nn.Module,
        schedule: NoiseSchedule,
        p_drop: float = 0.1,
        predictor: EpsPredictor | None = None,
    ):
        if not 0.0 <= p_drop <= 1.0:
            raise ContractError(f"p_drop must lie in [0, 1], got {p_drop}")
        self.model = model
        self.schedule = schedule
        self.p_drop = p_drop
        self.predictor: EpsPredictor = predictor if predictor is not None else model

    def draw(self, batch: LatentBatch, generator: torch.Generator) -> NoiseDraw:
        size = batch.z0.shape[0]
        timesteps = self.schedule.sample_timesteps(size, generator)
        eps = torch.randn(batch.z0.shape, generator=generator, dtype=batch.z0.dtype)
        eps = eps.to(batch.z0.device)
        dropped = sample_drops(size, self.p_drop, generator)
        return NoiseDraw(timesteps=timesteps, eps=eps, dropped=dropped.to(batch.z0.device))

    def _conditions(
        self, batch: LatentBatch, dropped: torch.Tensor, use_global: bool
    ) -> tuple[torch.Tensor, torch.Tensor]:
        text = self.model.text_embedder(batch.prompts)
        global_null = self.model.global_extractor.null_tokens
        if use_global and batch.context is not None:
            global_tokens = self.model.global_extractor(batch.context)
        else:
            global_tokens = global_null.expand(text.shape[0], -1, -1)
        return drop_conditions_batch(
            text, global_tokens, dropped, self.model.text_embedder.null_tokens, global_null
        )

    def _loss(
        self,
        batch: LatentBatch,
        generator: torch.Generator,
        use_global: bool = True,
        zero_mask: bool = False,
    ) -> torch.Tensor:
        noise = self.draw(batch, generator)
        z_t = add_noise(batch.z0, noise.timesteps, noise.eps, self.schedule)
        model_in, timesteps = self.schedule.model_input(z_t, noise.timesteps.to(z_t.device))

        z_m, m_down = batch.z_m, batch.m_down
        if zero_mask:
            z_m, m_down = torch.zeros_like(z_m), torch.zeros_like(m_down)
        text, global_tokens = self._conditions(batch, noise.dropped, use_global)

        eps_hat = self.predictor(model_in, timesteps, text, z_m, m_down, global_tokens)
        loss = (noise.eps - eps_hat).pow(2).flatten(1).sum(dim=1).mean()
        if not torch.isfinite(loss):
            raise TrainingError(
                "non-finite diffusion loss", step=-1, diagnostics={"loss": float(loss)}
            )
        return loss

    def loss_globalpaint(self, batch: LatentBatch, generator: torch.Generator) -> torch.Tensor:
        """Masked latent diffusion loss conditioned on text and global tokens."""
        return self._loss(batch, generator)

    def loss_inpaint(self, batch: LatentBatch, generator: torch.Generator) -> torch.Tensor:
        """Masked latent diffusion loss with the null global tokens (the spatial pretrain)."""
        return self._loss(batch, generator, use_global=False)

    def loss_ldm(self, batch: LatentBatch, generator: torch.Generator) -> torch.Tensor:
        """Plain text-conditioned latent diffusion loss: no mask channels, null global tokens."""
        return self._loss(batch, generator, use_global=False, zero_mask=True)

    def loss_interp(self, batch: LatentBatch, generator: torch.Generator) -> torch.Tensor:
        """Interpolation loss: the first and last frames are given as clean latents."""
        if batch.num_frames < 3:
            raise ContractError(f"interpolation needs at least 3 frames, got {batch.num_frames}")
        return self._loss(batch.with_observed_boundaries(), generator)
