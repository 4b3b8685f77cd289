"""Frozen image encoders that turn observed frame regions into context tokens."""

import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import structlog
import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from src.core.config import ConditioningSettings
from src.core.exceptions import (
    ClipFormatError,
    ClipNotFoundError,
    ConfigurationError,
    ContractError,
)

logger = structlog.get_logger()

TOKEN_FILE_HEADER = struct.Struct("<3i")


@dataclass
class ContextTokens:
    """N×C tokens from all frames; N = T × per_frame_count."""

    tokens: torch.Tensor
    per_frame_count: int

    def __post_init__(self) -> None:
        if self.tokens.ndim != 2:
            raise ContractError(f"expected N×C tokens, got shape {tuple(self.tokens.shape)}")
        if self.tokens.shape[0] % self.per_frame_count:
            raise ContractError("token count is not a multiple of per_frame_count")
        if not torch.isfinite(self.tokens).all():
            raise ContractError("context tokens contain non-finite values")

    @property
    def num_frames(self) -> int:
        return self.tokens.shape[0] // self.per_frame_count


class ContextEncoder(nn.Module, ABC):
    """Abstract frozen encoder producing a fixed number of tokens per frame."""

    provider: str
    tokens_per_frame: int
    width: int

    @abstractmethod
    def encode_frames(
        self,
        frames: torch.Tensor,
        masks: torch.Tensor,
        source_id: str = "",
        frame_indices: list[int] | None = None,
    ) -> torch.Tensor:
        """
        Encode the observed region of each frame.

        Args:
            frames: T×H×W×3 pixels in [0, 1]
            masks: T×H×W binary masks (1 = to synthesize)
            source_id: clip identifier, used by file-backed providers
            frame_indices: positions of ``frames`` in the source clip (default 0..T-1)

        Returns:
            T×tokens_per_frame×width tokens
        """


def largest_observed_rectangle(mask: torch.Tensor) -> tuple[int, int, int, int]:
    """
    Largest axis-aligned rectangle of zeros in an H×W mask, as (top, left, height, width).

    Ties keep the first rectangle found scanning rows top to bottom.
    """
    observed = (mask == 0).cpu().numpy()
    rows, cols = observed.shape
    heights = np.zeros(cols + 1, dtype=np.int64)
    best = (0, 0, 0, 0)
    best_area = 0
    for row in range(rows):
        heights[:cols] = np.where(observed[row], heights[:cols] + 1, 0)
        stack: list[int] = []
        for col in range(cols + 1):
            while stack and heights[stack[-1]] >= heights[col]:
                height = int(heights[stack.pop()])
                left = stack[-1] + 1 if stack else 0
                area = height * (col - left)
                if area > best_area:
                    best_area = area
                    best = (row - height + 1, left, height, col - left)
            stack.append(col)
    if best_area == 0:
        raise ContractError("frame has no observed pixels")
    return best


def crop_observed(frames: torch.Tensor, masks: torch.Tensor, size: int) -> torch.Tensor:
    """Crop each frame to its largest observed rectangle and resize to size×size (T×3×s×s)."""
    crops = []
    boxes: dict[bytes, tuple[int, int, int, int]] = {}
    for frame, mask in zip(frames, masks, strict=True):
        key = mask.to(torch.uint8).cpu().numpy().tobytes()
        if key not in boxes:
            boxes[key] = largest_observed_rectangle(mask)
        top, left, height, width = boxes[key]
        crop = frame[top : top + height, left : left + width].permute(2, 0, 1).unsqueeze(0)
        crops.append(F.interpolate(crop, size=(size, size), mode="bilinear", align_corners=False))
    return torch.cat(crops)


class ToyContextEncoder(ContextEncoder):
    """
    Fixed-seed random patch encoder: a grid of patch tokens plus a mean-pooled class token.

    Stands in for a pretrained image encoder with the same token layout.
    """

    provider = "toy"

    def __init__(self, settings: ConditioningSettings):
        super().__init__()
        self.input_size = settings.encoder_input_size
        self.grid = settings.patch_grid
        self.width = settings.context_width
        self.tokens_per_frame = self.grid * self.grid + 1
        patch = self.input_size // self.grid

        generator = torch.Generator().manual_seed(settings.encoder_seed)
        self.patch_embed = nn.Conv2d(3, self.width, kernel_size=patch, stride=patch)
        self.proj = nn.Linear(self.width, self.width)
        self.norm = nn.LayerNorm(self.width)
        with torch.no_grad():
            for param in self.parameters():
                fan_in = param[0].numel() if param.ndim > 1 else 1
                param.copy_(torch.randn(param.shape, generator=generator) / max(fan_in, 1) ** 0.5)
            self.norm.weight.fill_(1.0)
            self.norm.bias.zero_()
        self.eval()
        self.requires_grad_(False)

    def encode_frames(
        self,
        frames: torch.Tensor,
        masks: torch.Tensor,
        source_id: str = "",
        frame_indices: list[int] | None = None,
    ) -> torch.Tensor:
        crops = crop_observed(frames, masks, self.input_size) * 2.0 - 1.0
        patches = rearrange(self.patch_embed(crops), "t c h w -> t (h w) c")
        patches = self.norm(self.proj(F.gelu(patches)))
        cls = patches.mean(dim=1, keepdim=True)
        return torch.cat([cls, patches], dim=1)


def write_token_file(path: Path, tokens: torch.Tensor) -> None:
    """Write T×P×C tokens: int32 header {T, P, C} then row-major float32 values."""
    num_frames, per_frame, width = tokens.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(TOKEN_FILE_HEADER.pack(num_frames, per_frame, width))
        handle.write(tokens.detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes())


def read_token_file(path: Path) -> torch.Tensor:
    """Read a token file written by :func:`write_token_file`."""
    path = Path(path)
    if not path.is_file():
        raise ClipNotFoundError(f"token file not found: {path}")
    data = path.read_bytes()
    if len(data) < TOKEN_FILE_HEADER.size:
        raise ClipFormatError(f"truncated token header in {path}", offset=len(data))
    num_frames, per_frame, width = TOKEN_FILE_HEADER.unpack_from(data)
    expected = TOKEN_FILE_HEADER.size + 4 * num_frames * per_frame * width
    if min(num_frames, per_frame, width) < 1 or len(data) != expected:
        raise ClipFormatError(
            f"token file {path.name} does not match header {(num_frames, per_frame, width)}",
            offset=min(len(data), expected),
        )
    values = np.frombuffer(data, dtype="<f4", offset=TOKEN_FILE_HEADER.size)
    return torch.from_numpy(values.reshape(num_frames, per_frame, width).astype(np.float32))


class ExternalContextEncoder(ContextEncoder):
    """Reads precomputed per-clip token files named ``<source_id>.tokens``."""

    provider = "external"

    def __init__(self, settings: ConditioningSettings, tokens_per_frame: int):
        super().__init__()
        if settings.external_token_dir is None:
            raise ConfigurationError("conditioning.external_token_dir is required for 'external'")
        self.token_dir = settings.external_token_dir
        self.width = settings.context_width
        self.tokens_per_frame = tokens_per_frame
        self.eval()

    def encode_frames(
        self,
        frames: torch.Tensor,
        masks: torch.Tensor,
        source_id: str = "",
        frame_indices: list[int] | None = None,
    ) -> torch.Tensor:
        tokens = read_token_file(self.token_dir / f"{source_id}.tokens")
        if tokens.shape[1:] != (self.tokens_per_frame, self.width):
            raise ContractError(
                f"token file has layout {tuple(tokens.shape[1:])}, "
                f"expected {(self.tokens_per_frame, self.width)}"
            )
        if frame_indices is None:
            if tokens.shape[0] != frames.shape[0]:
                raise ContractError(
                    f"token file has {tokens.shape[0]} frames, clip has {frames.shape[0]}"
                )
            return tokens
        if len(frame_indices) != frames.shape[0]:
            raise ContractError(
                f"{len(frame_indices)} frame indices given for {frames.shape[0]} frames"
            )
        if any(index < 0 or index >= tokens.shape[0] for index in frame_indices):
            raise ContractError(
                f"frame indices {frame_indices} outside a token file of {tokens.shape[0]} frames"
            )
        return tokens[list(frame_indices)]


def build_context_encoder(settings: ConditioningSettings) -> ContextEncoder:
    """Instantiate the configured context-token provider."""
    if settings.context_provider == "toy":
        return ToyContextEncoder(settings)
    return ExternalContextEncoder(settings, tokens_per_frame=settings.patch_grid**2 + 1)
