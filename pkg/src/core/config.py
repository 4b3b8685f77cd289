"""Application configuration using pydantic-settings."""

import hashlib
import json
import math
from functools import lru_cache
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from .exceptions import ConfigurationError

PROJECT_ROOT = Path(__file__).resolve().parents[2]
DEFAULT_CONFIG_PATH = PROJECT_ROOT / "config" / "default.toml"


class Section(BaseModel):
    """Base for nested config sections: strict about unknown keys."""

    model_config = ConfigDict(extra="forbid", frozen=True)


# -----------------------------------------------------------------------------
# Data and masks
# -----------------------------------------------------------------------------


class DataSettings(Section):
    canvas: tuple[int, int] = (64, 64)
    num_clips: int = Field(default=64, ge=1)
    frames_per_clip: int = Field(default=64, ge=1)
    clip_length: int = Field(default=16, ge=1)
    sprites_per_clip: tuple[int, int] = (1, 3)
    sprite_size: tuple[int, int] = (8, 20)
    max_speed: float = Field(default=3.0, ge=0.0)
    boundary: Literal["bounce", "wrap"] = "bounce"
    fps: int = Field(default=8, ge=1)
    seed: int = 0


class MaskSettings(Section):
    mode_probabilities: dict[str, float] = Field(
        default_factory=lambda: {"periphery": 0.4, "single_edge": 0.1, "dual_edge": 0.5}
    )
    ratio_range: tuple[float, float] = (0.2, 0.8)
    eval_ratios: tuple[float, ...] = (0.25, 0.666)

    @model_validator(mode="after")
    def _check_ranges(self) -> "MaskSettings":
        low, high = self.ratio_range
        if not 0.0 <= low <= high < 1.0:
            raise ValueError(
                f"ratio_range must satisfy 0 <= low <= high < 1, got {self.ratio_range}"
            )
        return self


# -----------------------------------------------------------------------------
# Models
# -----------------------------------------------------------------------------


class AutoencoderSettings(Section):
    provider: Literal["toy"] = "toy"
    downsample_factor: int = 8
    latent_channels: int = 4
    base_channels: int = 32
    kl_weight: float = 1e-6
    learning_rate: float = 1e-3
    batch_size: int = 32
    steps: int = 2000
    min_psnr: float = 30.0

    @field_validator("downsample_factor")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value < 1 or value & (value - 1):
            raise ValueError("downsample_factor must be a power of two")
        return value


class ConditioningSettings(Section):
    context_provider: Literal["toy", "external"] = "toy"
    external_token_dir: Path | None = None
    context_width: int = 64
    text_length: int = 8
    vocab_size: int = 4096
    encoder_input_size: int = 32
    patch_grid: int = 4
    encoder_seed: int = 1234
    num_global_tokens: int = 16
    extractor_blocks: int = 2
    extractor_heads: int = 4
    p_drop: float = Field(default=0.1, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check_shapes(self) -> "ConditioningSettings":
        if self.context_width % self.extractor_heads:
            raise ValueError("context_width must be divisible by extractor_heads")
        if self.encoder_input_size % self.patch_grid:
            raise ValueError("encoder_input_size must be divisible by patch_grid")
        return self


class DenoiserSettings(Section):
    latent_channels: int = 4
    base_width: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 4)
    window: tuple[int, int] = (4, 4)
    num_heads: int = 4
    norm_groups: int = 8
    num_frames: int = 16
    context_width: int = 64
    temporal_kernel: int = 3
    temporal: bool = True
    use_window_attention: bool = True
    use_global_tokens: bool = True

    @property
    def in_channels(self) -> int:
        return 2 * self.latent_channels + 1

    @property
    def widths(self) -> list[int]:
        return [self.base_width * mult for mult in self.channel_mults]

    @model_validator(mode="after")
    def _check_widths(self) -> "DenoiserSettings":
        for width in self.widths:
            if width % self.num_heads or width % self.norm_groups:
                raise ValueError(f"width {width} not divisible by heads/groups")
        if min(self.window) < 1:
            raise ValueError("window dims must be positive")
        if self.temporal_kernel % 2 == 0:
            raise ValueError("temporal_kernel must be odd")
        return self


# -----------------------------------------------------------------------------
# Diffusion and sampling
# -----------------------------------------------------------------------------


class DiffusionSettings(Section):
    parameterization: Literal["vp_linear", "edm"] = "vp_linear"
    num_train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0

    @model_validator(mode="after")
    def _check_sigmas(self) -> "DiffusionSettings":
        if not 0.0 < self.sigma_min < self.sigma_max:
            raise ValueError("sigma_min must be positive and below sigma_max")
        if not 0.0 < self.beta_start < self.beta_end < 1.0:
            raise ValueError("betas must satisfy 0 < beta_start < beta_end < 1")
        return self


class SamplerSettings(Section):
    steps: int = Field(default=50, ge=1)
    cfg_scale: float = Field(default=7.5, ge=0.0)
    ratio_cfg_scales: dict[str, float] = Field(
        default_factory=lambda: {"0.25": 5.0, "0.666": 2.0}
    )
    seed: int = 0
    stochasticity: float = 0.0

    def scale_for_ratio(self, ratio: float) -> float:
        """CFG scale used when evaluating at a given mask ratio."""
        for key, scale in self.ratio_cfg_scales.items():
            if math.isclose(float(key), ratio, abs_tol=1e-9):
                return scale
        return self.cfg_scale


class PipelineSettings(Section):
    context_length: int = Field(default=16, ge=3)
    mode: Literal["hierarchical", "sequential"] = "hierarchical"
    segment_workers: int = Field(default=1, ge=1)


# -----------------------------------------------------------------------------
# Training and evaluation
# -----------------------------------------------------------------------------


class TrainingSettings(Section):
    batch_size: int = Field(default=4, ge=1)
    learning_rates: dict[str, float] = Field(
        default_factory=lambda: {
            "spatial_inpaint": 1e-4,
            "base_video": 2e-5,
            "interp": 2e-5,
        }
    )
    total_steps: dict[str, int] = Field(
        default_factory=lambda: {"spatial_inpaint": 2000, "base_video": 2000, "interp": 500}
    )
    warmup_steps: dict[str, int] = Field(
        default_factory=lambda: {"spatial_inpaint": 1000, "base_video": 1000, "interp": 250}
    )
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    grad_clip_norm: float = 1.0
    checkpoint_every: int = Field(default=500, ge=1)
    log_every: int = Field(default=10, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check_steps(self) -> "TrainingSettings":
        for phase, steps in self.total_steps.items():
            if steps < 1:
                raise ValueError(f"total_steps for '{phase}' must be positive")
            if not 0 <= self.warmup_steps.get(phase, 0) <= steps:
                raise ValueError(f"warmup_steps for '{phase}' must lie in [0, {steps}]")
        return self


class EvaluationSettings(Section):
    ratios: tuple[float, ...] = (0.25, 0.666)
    psnr_cap: float = 99.0
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    seed: int = 0
    # directory with real.npy and generated.npy feature matrices (N×D)
    fvd_features: Path | None = None
    # CSV of precomputed per-clip perceptual distances: clip_id,ratio,lpips
    lpips_distances: Path | None = None


class Settings(BaseSettings):
    """Application settings loaded from environment variables and the TOML config file."""

    model_config = SettingsConfigDict(
        env_prefix="GLOBALPAINT_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="forbid",
        toml_file=DEFAULT_CONFIG_PATH,
    )

    # Application
    app_name: str = "globalpaint"
    output_root: Path = Path("runs")
    device: str = "cpu"
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    log_format: Literal["console", "json"] = "console"

    data: DataSettings = DataSettings()
    masking: MaskSettings = MaskSettings()
    autoencoder: AutoencoderSettings = AutoencoderSettings()
    conditioning: ConditioningSettings = ConditioningSettings()
    denoiser: DenoiserSettings = DenoiserSettings()
    diffusion: DiffusionSettings = DiffusionSettings()
    sampler: SamplerSettings = SamplerSettings()
    pipeline: PipelineSettings = PipelineSettings()
    training: TrainingSettings = TrainingSettings()
    evaluation: EvaluationSettings = EvaluationSettings()

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (
            init_settings,
            env_settings,
            dotenv_settings,
            TomlConfigSettingsSource(settings_cls),
        )

    @model_validator(mode="after")
    def _check_cross_sections(self) -> "Settings":
        factor = self.autoencoder.downsample_factor
        height, width = self.data.canvas
        if height % factor or width % factor:
            raise ValueError(
                f"canvas {self.data.canvas} not divisible by downsample factor {factor}"
            )
        if self.denoiser.context_width != self.conditioning.context_width:
            raise ValueError("denoiser.context_width must equal conditioning.context_width")
        if self.denoiser.latent_channels != self.autoencoder.latent_channels:
            raise ValueError("denoiser.latent_channels must equal autoencoder.latent_channels")
        if self.denoiser.num_frames < self.pipeline.context_length:
            raise ValueError("denoiser.num_frames must cover pipeline.context_length")
        return self

    def config_hash(self) -> str:
        """Stable hash of the resolved configuration."""
        payload = json.dumps(self.snapshot(), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def snapshot(self) -> dict[str, Any]:
        """JSON-compatible dump of all settings."""
        return self.model_dump(mode="json")


def load_settings(config_file: Path | None = None, **overrides: Any) -> Settings:
    """
    Build settings from a specific TOML file.

    Args:
        config_file: TOML file replacing the shipped default file
        overrides: Explicit values with the highest priority

    Returns:
        Validated Settings instance
    """
    try:
        if config_file is None:
            return Settings(**overrides)
        if not config_file.is_file():
            raise ConfigurationError(f"config file not found: {config_file}")

        class FileSettings(Settings):
            model_config = SettingsConfigDict(**{**Settings.model_config, "toml_file": config_file})

        return FileSettings(**overrides)
    except ValidationError as e:
        raise ConfigurationError(str(e)) from e


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return load_settings()
