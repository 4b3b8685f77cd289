"""Deterministic Euler sampler on the Karras σ-grid, with classifier-free guidance."""

import csv
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import structlog
import torch
from tqdm.auto import trange

from src.core.config import SamplerSettings
from src.core.exceptions import ConfigurationError, ContractError, SamplingError

from .schedules import NoiseSchedule

logger = structlog.get_logger()

# eps prediction for a sampler state x = z0 + σ·eps at noise level σ
EpsFunction = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def cfg_combine(eps_cond: torch.Tensor, eps_uncond: torch.Tensor, scale: float) -> torch.Tensor:
    """eps_uncond + scale · (eps_cond − eps_uncond)."""
    if eps_cond.shape != eps_uncond.shape:
        raise ContractError(
            f"guidance branches disagree: {tuple(eps_cond.shape)} vs {tuple(eps_uncond.shape)}"
        )
    if scale == 1.0:
        return eps_cond
    if scale == 0.0:
        return eps_uncond
    return eps_uncond + scale * (eps_cond - eps_uncond)


class GuidedDenoiser:
    """
    Turns the noise-prediction network into an :data:`EpsFunction` with classifier-free guidance.

    The conditional and unconditional branches run as one doubled batch. The unconditional
    branch uses the learned null text and null global tokens.
    """

    def __init__(
        self,
        model: torch.nn.Module,
        schedule: NoiseSchedule,
        text: torch.Tensor,
        z_m: torch.Tensor,
        m_down: torch.Tensor,
        global_tokens: torch.Tensor | None,
        text_null: torch.Tensor,
        global_null: torch.Tensor,
        scale: float,
    ):
        self.model = model
        self.schedule = schedule
        self.scale = scale
        self.z_m = z_m
        self.m_down = m_down
        self.text = text
        self.global_tokens = global_tokens
        batch = text.shape[0]
        self.text_null = text_null.expand(batch, -1, -1)
        self.global_null = global_null.expand(batch, -1, -1)

    @torch.no_grad()
    def __call__(self, x: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
        batch = x.shape[0]
        x_in, t = self.schedule.sampler_input(x, sigma.expand(batch))
        global_cond = self.global_tokens if self.global_tokens is not None else self.global_null
        if self.scale == 1.0:
            return self.model(x_in, t, self.text, self.z_m, self.m_down, global_cond)

        eps = self.model(
            torch.cat([x_in, x_in]),
            torch.cat([t, t]),
            torch.cat([self.text, self.text_null]),
            torch.cat([self.z_m, self.z_m]),
            torch.cat([self.m_down, self.m_down]),
            torch.cat([global_cond, self.global_null]),
        )
        eps_cond, eps_uncond = eps.chunk(2)
        return cfg_combine(eps_cond, eps_uncond, self.scale)


@dataclass
class SamplerTrace:
    """Per-step noise level and latent norm, for debugging sampler runs."""

    rows: list[tuple[int, float, float]] = field(default_factory=list)

    def record(self, step: int, sigma: float, latent: torch.Tensor) -> None:
        self.rows.append((step, sigma, float(latent.float().norm())))

    def to_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["step", "sigma", "latent_norm"])
            writer.writerows(self.rows)
        return path


def sample_euler_edm(
    denoise_fn: EpsFunction,
    shape: tuple[int, ...],
    settings: SamplerSettings,
    schedule: NoiseSchedule,
    generator: torch.Generator,
    dtype: torch.dtype = torch.float32,
    device: torch.device | str = "cpu",
    trace: SamplerTrace | None = None,
) -> torch.Tensor:
    """
    Integrate the probability-flow ODE from σ_max to 0 with Euler steps.

    Returns:
        The final latent tensor of ``shape``

    Raises:
        SamplingError: if the state becomes non-finite
    """
    if settings.stochasticity != 0.0:
        raise ConfigurationError("only the deterministic sampler (stochasticity = 0) is supported")
    sigmas = schedule.sampling_sigmas(settings.steps).to(device)
    x = torch.randn(shape, generator=generator, dtype=dtype).to(device) * sigmas[0].to(dtype)

    for i in trange(len(sigmas) - 1, desc="sampling", disable=settings.steps < 20, leave=False):
        eps = denoise_fn(x, sigmas[i].to(dtype))
        x = x + (sigmas[i + 1] - sigmas[i]).to(dtype) * eps
        if not torch.isfinite(x).all():
            raise SamplingError("non-finite sampler state", step=i)
        if trace is not None:
            trace.record(i, float(sigmas[i + 1]), x)
    return x
