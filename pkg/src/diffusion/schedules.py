"""Noise schedules and the bridge between discrete training steps and continuous noise levels."""

from dataclasses import dataclass

import torch

from src.core.config import DiffusionSettings
from src.core.exceptions import ConfigurationError, ContractError

# log-normal noise-level distribution used when training with the edm parameterization
EDM_P_MEAN = -1.2
EDM_P_STD = 1.2


def karras_sigmas(
    steps: int,
    sigma_min: float,
    sigma_max: float,
    rho: float = 7.0,
    dtype: torch.dtype = torch.float64,
) -> torch.Tensor:
    """Karras noise grid of ``steps`` levels from sigma_max to sigma_min, followed by a zero."""
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    if not 0.0 < sigma_min < sigma_max:
        raise ConfigurationError(f"need 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})")
    ramp = torch.linspace(0, 1, steps, dtype=torch.float64)
    min_inv_rho = sigma_min ** (1 / rho)
    max_inv_rho = sigma_max ** (1 / rho)
    sigmas = (max_inv_rho + ramp * (min_inv_rho - max_inv_rho)) ** rho
    sigmas[0] = sigma_max
    if steps > 1:
        sigmas[-1] = sigma_min
    return torch.cat([sigmas, sigmas.new_zeros(1)]).to(dtype)


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Forward-noising schedule.

    For ``vp_linear``, ``alphas_cumprod`` has ``num_train_steps + 1`` entries with index 0 the clean
    limit (ᾱ = 1); timesteps are integers in 1..num_train_steps. For ``edm``, the timestep is the
    noise level σ itself.
    """

    parameterization: str
    alphas_cumprod: torch.Tensor
    sigma_min: float
    sigma_max: float
    rho: float

    @property
    def num_train_steps(self) -> int:
        return len(self.alphas_cumprod) - 1

    @property
    def train_sigmas(self) -> torch.Tensor:
        """σ(t) = sqrt((1 − ᾱ_t) / ᾱ_t) for t = 1..T (vp only)."""
        alphas = self.alphas_cumprod[1:]
        return ((1 - alphas) / alphas).sqrt()

    def alpha_bar(self, t: torch.Tensor) -> torch.Tensor:
        if self.parameterization != "vp_linear":
            return 1.0 / (1.0 + t.to(torch.float64) ** 2)
        index = t.long()
        out_of_range = (index < 0).any() or (index > self.num_train_steps).any()
        if out_of_range or not torch.equal(index.to(t.dtype), t):
            raise ContractError(f"timesteps must be integers in [0, {self.num_train_steps}]")
        return self.alphas_cumprod.to(t.device)[index]

    def sigma(self, t: torch.Tensor) -> torch.Tensor:
        if self.parameterization == "edm":
            return t.to(torch.float64)
        alpha = self.alpha_bar(t)
        return ((1 - alpha) / alpha).sqrt()

    def sigma_to_t(self, sigma: torch.Tensor) -> torch.Tensor:
        """
        Continuous training timestep for noise level σ by log-σ interpolation (vp only).

        Levels below σ(1) or above σ(T) clamp to the ends of the training range.
        """
        log_sigmas = self.train_sigmas.log().to(sigma.device)
        log_sigma = sigma.to(torch.float64).clamp(min=1e-12).log()
        dists = log_sigma - log_sigmas[:, None]
        low = dists.ge(0).cumsum(dim=0).argmax(dim=0).clamp(max=len(log_sigmas) - 2)
        high = low + 1
        weight = ((log_sigmas[low] - log_sigma) / (log_sigmas[low] - log_sigmas[high])).clamp(0, 1)
        below = log_sigma < log_sigmas[0]
        weight = torch.where(below, torch.zeros_like(weight), weight)
        t = (1 - weight) * low + weight * high
        return (t + 1).view(sigma.shape)

    def sample_timesteps(self, batch: int, generator: torch.Generator) -> torch.Tensor:
        """Training timesteps: uniform integers 1..T for vp, log-normal σ for edm."""
        if self.parameterization == "edm":
            normal = torch.randn(batch, generator=generator, dtype=torch.float64)
            return (EDM_P_MEAN + EDM_P_STD * normal).exp()
        steps = torch.randint(1, self.num_train_steps + 1, (batch,), generator=generator)
        return steps.to(torch.float64)

    def model_input(self, z_t: torch.Tensor, t: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Network input and conditioning timestep for a training-time noisy latent."""
        if self.parameterization == "edm":
            sigma = t.to(torch.float64)
            c_in = (1.0 / (sigma**2 + 1).sqrt()).to(z_t.dtype)
            return z_t * _expand(c_in, z_t), (0.25 * sigma.log()).to(z_t.dtype)
        return z_t, t.to(z_t.dtype)

    def sampler_input(
        self, x: torch.Tensor, sigma: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Network input and timestep for a sampler state x = z0 + σ·eps."""
        sigma = sigma.to(torch.float64)
        c_in = (1.0 / (sigma**2 + 1).sqrt()).to(x.dtype)
        if self.parameterization == "edm":
            t = 0.25 * sigma.clamp(min=1e-12).log()
        else:
            t = self.sigma_to_t(sigma)
        return x * _expand(c_in, x), t.to(x.dtype)

    def sampling_sigmas(self, steps: int) -> torch.Tensor:
        return karras_sigmas(steps, self.sigma_min, self.sigma_max, self.rho)


def _expand(values: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return values.view(-1, *([1] * (like.ndim - 1))) if values.ndim else values


def make_schedule(settings: DiffusionSettings) -> NoiseSchedule:
    """
    Build the configured schedule.

    Raises:
        ConfigurationError: if σ_min >= σ_max or the betas are out of order
    """
    if not 0.0 < settings.sigma_min < settings.sigma_max:
        raise ConfigurationError(
            f"sigma_min ({settings.sigma_min}) must be positive "
            f"and below sigma_max ({settings.sigma_max})"
        )
    betas = torch.linspace(
        settings.beta_start, settings.beta_end, settings.num_train_steps, dtype=torch.float64
    )
    alphas_cumprod = torch.cat(
        [torch.ones(1, dtype=torch.float64), torch.cumprod(1 - betas, dim=0)]
    )
    return NoiseSchedule(
        parameterization=settings.parameterization,
        alphas_cumprod=alphas_cumprod,
        sigma_min=settings.sigma_min,
        sigma_max=settings.sigma_max,
        rho=settings.rho,
    )


def add_noise(
    z0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """
    Forward noising with per-example timesteps ``t`` (shape B, or a scalar).

    vp: √ᾱ_t·z0 + √(1−ᾱ_t)·eps; edm: z0 + σ·eps with t = σ.
    """
    if z0.shape != eps.shape:
        raise ContractError(f"z0 {tuple(z0.shape)} and eps {tuple(eps.shape)} disagree")
    t = torch.as_tensor(t, dtype=torch.float64, device=z0.device)
    if schedule.parameterization == "edm":
        if (t < 0).any():
            raise ContractError("noise level must be non-negative")
        return z0 + _expand(t.to(z0.dtype), z0) * eps
    alpha = schedule.alpha_bar(t)
    signal = _expand(alpha.sqrt().to(z0.dtype), z0)
    noise = _expand((1 - alpha).sqrt().to(z0.dtype), z0)
    return signal * z0 + noise * eps
