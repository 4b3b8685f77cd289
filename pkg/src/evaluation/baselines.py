"""Training-free outpainting baseline used as a reference point for the learned model."""

import torch
import torch.nn.functional as F

from src.core.config import SamplerSettings
from src.masking.masks import MaskVolume
from src.models.context import ContextTokens, largest_observed_rectangle
from src.pipeline.outpainter import composite_known
from src.video.clip import VideoClip


def _reflect_to(frame: torch.Tensor, height: int, width: int, top: int, left: int) -> torch.Tensor:
    """Reflect-pad a 3×h×w crop until it fills height×width with the crop at (top, left)."""
    pads = [left, width - left - frame.shape[-1], top, height - top - frame.shape[-2]]
    out = frame.unsqueeze(0)
    while any(pads):
        # reflection cannot exceed the current size minus one, so grow in rounds
        step = [
            min(pads[0], out.shape[-1] - 1),
            min(pads[1], out.shape[-1] - 1),
            min(pads[2], out.shape[-2] - 1),
            min(pads[3], out.shape[-2] - 1),
        ]
        if not any(step):
            out = F.pad(out, pads, mode="replicate")
            break
        out = F.pad(out, step, mode="reflect")
        pads = [p - s for p, s in zip(pads, step, strict=True)]
    return out[0]


def mirror_pad_frames(clip: VideoClip, mask: MaskVolume) -> VideoClip:
    """Fill each frame by mirroring the largest fully observed rectangle outwards."""
    frames = clip.channels_first()
    filled = []
    for frame, frame_mask in zip(frames, mask.values, strict=True):
        if not frame_mask.any():
            filled.append(frame)
            continue
        top, left, h, w = largest_observed_rectangle(frame_mask)
        crop = frame[:, top : top + h, left : left + w]
        filled.append(_reflect_to(crop, clip.height, clip.width, top, left))
    generated = VideoClip(torch.stack(filled).permute(0, 2, 3, 1).contiguous(), fps=clip.fps)
    return composite_known(generated, clip, mask)


class MirrorPadOutpainter:
    """Outpaint model that ignores prompt, context and seed and mirror-pads each frame."""

    def complete(
        self,
        clip: VideoClip,
        mask: MaskVolume,
        prompt: str,
        context: ContextTokens | None,
        sampler: SamplerSettings,
        seed: int,
    ) -> VideoClip:
        return mirror_pad_frames(clip, mask)
