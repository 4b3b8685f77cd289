"""Video clip container and geometric transforms."""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from src.core.exceptions import ContractError

DEFAULT_FPS = 8


@dataclass
class VideoClip:
    """
    A T×H×W×3 frame volume with float32 values in [0, 1].

    The fps value is carried as metadata only.
    """

    frames: torch.Tensor
    fps: int = DEFAULT_FPS
    source_id: str = ""

    def __post_init__(self) -> None:
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ContractError(f"expected T×H×W×3 frames, got shape {tuple(self.frames.shape)}")
        if self.frames.shape[0] < 1:
            raise ContractError("a clip needs at least one frame")
        if self.fps < 1:
            raise ContractError(f"fps must be positive, got {self.fps}")
        if not torch.isfinite(self.frames).all():
            raise ContractError("frames contain non-finite values")
        if self.frames.numel() and (self.frames.min() < 0.0 or self.frames.max() > 1.0):
            raise ContractError("frame values must lie in [0, 1]")

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def height(self) -> int:
        return int(self.frames.shape[1])

    @property
    def width(self) -> int:
        return int(self.frames.shape[2])

    def check_divisible(self, factor: int) -> None:
        """Raise if H or W is not a multiple of the autoencoder downsample factor."""
        if self.height % factor or self.width % factor:
            raise ContractError(
                f"clip size {self.height}x{self.width} not divisible by factor {factor}"
            )

    def select(self, indices: list[int] | range) -> "VideoClip":
        """Clip made of the given frame indices."""
        return VideoClip(self.frames[list(indices)], fps=self.fps, source_id=self.source_id)

    def with_frames(self, frames: torch.Tensor) -> "VideoClip":
        """Same metadata, new frame volume (clamped into [0, 1])."""
        return VideoClip(frames.clamp(0.0, 1.0), fps=self.fps, source_id=self.source_id)

    def channels_first(self) -> torch.Tensor:
        """Frames as a T×3×H×W tensor."""
        return self.frames.permute(0, 3, 1, 2)


def center_crop_box(height: int, width: int, target: tuple[int, int]) -> tuple[int, int, int, int]:
    """Largest centered (top, left, h, w) box with the aspect ratio of ``target``."""
    target_h, target_w = target
    if width * target_h > height * target_w:
        crop_h = height
        crop_w = min(width, int(height * target_w / target_h + 0.5))
    else:
        crop_w = width
        crop_h = min(height, int(width * target_h / target_w + 0.5))
    return (height - crop_h) // 2, (width - crop_w) // 2, crop_h, crop_w


def resize_center_crop(
    clip: VideoClip, size: tuple[int, int], downsample_factor: int = 8
) -> VideoClip:
    """
    Center-crop each frame to the target aspect ratio, then bilinearly resize.

    Args:
        clip: Input clip
        size: Target (H', W'), both divisible by ``downsample_factor``
        downsample_factor: Autoencoder spatial factor the output must respect

    Returns:
        Clip of shape T×H'×W'×3
    """
    target_h, target_w = size
    if target_h < 1 or target_w < 1:
        raise ContractError(f"target size must be positive, got {size}")
    if target_h % downsample_factor or target_w % downsample_factor:
        raise ContractError(f"target size {size} not divisible by {downsample_factor}")

    if (clip.height, clip.width) == (target_h, target_w):
        return clip

    top, left, crop_h, crop_w = center_crop_box(clip.height, clip.width, size)
    frames = clip.frames[:, top : top + crop_h, left : left + crop_w, :]
    if (crop_h, crop_w) != (target_h, target_w):
        resized = F.interpolate(
            frames.permute(0, 3, 1, 2),
            size=(target_h, target_w),
            mode="bilinear",
            align_corners=False,
            antialias=crop_h > target_h or crop_w > target_w,
        )
        frames = resized.permute(0, 2, 3, 1)
    return VideoClip(frames.clamp(0.0, 1.0).contiguous(), fps=clip.fps, source_id=clip.source_id)
