"""Attention layers shared by the spatial UNet and the temporal EST modules."""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange, repeat

from src.core.exceptions import ContractError


def zero_module(module: nn.Module) -> nn.Module:
    """Zero every parameter of ``module`` in place and return it."""
    for param in module.parameters():
        nn.init.zeros_(param)
    return module


def get_window_size(feature_size: tuple[int, int], window: tuple[int, int]) -> tuple[int, int]:
    """Clamp the window to the feature map so small levels use full attention."""
    return min(window[0], feature_size[0]), min(window[1], feature_size[1])


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    return rearrange(x, "b n (h d) -> b h n d", h=heads)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    return rearrange(x, "b h n d -> b n (h d)")


class WindowAttention3D(nn.Module):
    """
    Multi-head self-attention inside non-overlapping w_h×w_w×T windows.

    Operates on B×C×T×H×W features and returns the attended values before any output
    projection. When the window does not divide H or W, the features are zero-padded
    symmetrically and padded positions are excluded as keys.
    """

    def __init__(self, width: int, heads: int, window: tuple[int, int]):
        super().__init__()
        if width % heads:
            raise ContractError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.window = window
        self.to_qkv = nn.Linear(width, 3 * width, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, _, num_frames, height, width = x.shape
        win_h, win_w = get_window_size((height, width), self.window)
        pad_h = (-height) % win_h
        pad_w = (-width) % win_w
        top, left = pad_h // 2, pad_w // 2

        tokens = rearrange(x, "b c t h w -> b t h w c")
        if pad_h or pad_w:
            tokens = F.pad(tokens, (0, 0, left, pad_w - left, top, pad_h - top))
        padded_h, padded_w = height + pad_h, width + pad_w

        windows = rearrange(
            tokens, "b t (nh wh) (nw ww) c -> (b nh nw) (t wh ww) c", wh=win_h, ww=win_w
        )
        q, k, v = (_split_heads(part, self.heads) for part in self.to_qkv(windows).chunk(3, dim=-1))

        key_mask = None
        if pad_h or pad_w:
            valid = torch.zeros(padded_h, padded_w, dtype=torch.bool, device=x.device)
            valid[top : top + height, left : left + width] = True
            valid = rearrange(valid, "(nh wh) (nw ww) -> (nh nw) (wh ww)", wh=win_h, ww=win_w)
            valid = repeat(valid, "n s -> (b n) 1 1 (t s)", b=batch, t=num_frames)
            key_mask = valid

        out = _merge_heads(F.scaled_dot_product_attention(q, k, v, attn_mask=key_mask))
        out = rearrange(
            out,
            "(b nh nw) (t wh ww) c -> b c t (nh wh) (nw ww)",
            b=batch,
            nh=padded_h // win_h,
            wh=win_h,
            ww=win_w,
            t=num_frames,
        )
        return out[:, :, :, top : top + height, left : left + width]


def windowed_attention_3d(features: torch.Tensor, attention: WindowAttention3D) -> torch.Tensor:
    """Apply windowed attention to a single C×T×H×W volume."""
    if features.ndim != 4:
        raise ContractError(f"expected C×T×H×W features, got shape {tuple(features.shape)}")
    return attention(features.unsqueeze(0))[0]


class SelfAttention(nn.Module):
    """Plain multi-head self-attention over a token sequence, with output projection."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.to_qkv = nn.Linear(width, 3 * width, bias=False)
        self.to_out = nn.Linear(width, width)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = (_split_heads(part, self.heads) for part in self.to_qkv(x).chunk(3, dim=-1))
        return self.to_out(_merge_heads(F.scaled_dot_product_attention(q, k, v)))


class CrossAttention(nn.Module):
    """Queries from features, keys and values from a conditioning token set."""

    def __init__(self, width: int, context_width: int, heads: int):
        super().__init__()
        if width % heads:
            raise ContractError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.context_width = context_width
        self.to_q = nn.Linear(width, width, bias=False)
        self.to_k = nn.Linear(context_width, width, bias=False)
        self.to_v = nn.Linear(context_width, width, bias=False)
        self.to_out = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        if context.shape[-1] != self.context_width:
            raise ContractError(
                f"context width {context.shape[-1]} != cross-attention width {self.context_width}"
            )
        q = _split_heads(self.to_q(x), self.heads)
        k = _split_heads(self.to_k(context), self.heads)
        v = _split_heads(self.to_v(context), self.heads)
        return self.to_out(_merge_heads(F.scaled_dot_product_attention(q, k, v)))


def frame_positions(
    num_frames: int, width: int, device: torch.device | None = None
) -> torch.Tensor:
    """T×C sinusoidal frame-index encoding."""
    half = width // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, device=device) / max(half, 1))
    angles = torch.arange(num_frames, device=device)[:, None] * freqs[None, :]
    encoding = torch.cat([angles.sin(), angles.cos()], dim=-1)
    if width % 2:
        encoding = F.pad(encoding, (0, 1))
    return encoding


class TemporalBlock(nn.Module):
    """
    1D temporal block: a convolution along T at every spatial position, followed by
    temporal self-attention whose output projection starts at zero.

    Normalisation is per position and frame, so the block only mixes frames through the
    convolution and the attention branch.
    """

    def __init__(self, width: int, heads: int, kernel: int = 3):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.conv = nn.Conv1d(width, width, kernel, padding=kernel // 2)
        self.attn_norm = nn.LayerNorm(width)
        self.attn = SelfAttention(width, heads)
        zero_module(self.attn.to_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, _, num_frames, height, width = x.shape
        tokens = rearrange(x, "b c t h w -> (b h w) t c")
        hidden = self.conv(F.silu(self.norm(tokens)).transpose(1, 2)).transpose(1, 2)

        positions = frame_positions(num_frames, hidden.shape[-1], hidden.device).to(hidden.dtype)
        hidden = hidden + self.attn(self.attn_norm(hidden) + positions)
        return rearrange(hidden, "(b h w) t c -> b c t h w", b=batch, h=height, w=width)
