# GlobalPaint - video outpainting with latent diffusion
from .config import Settings, get_settings, load_settings
from .exceptions import (
    ClipFormatError,
    ClipIOError,
    ClipNotFoundError,
    ConfigurationError,
    ContractError,
    GlobalPaintError,
    MigrationError,
    SamplingError,
    StageError,
    TrainingError,
)

__all__ = [
    "Settings",
    "get_settings",
    "load_settings",
    "ClipFormatError",
    "ClipIOError",
    "ClipNotFoundError",
    "ConfigurationError",
    "ContractError",
    "GlobalPaintError",
    "MigrationError",
    "SamplingError",
    "StageError",
    "TrainingError",
]
