"""Conditioning signals: text embedding, context tokens and compact global tokens."""

import hashlib
import math
from collections.abc import Sequence
from dataclasses import dataclass

import structlog
import torch
import torch.nn as nn
from einops import rearrange

from src.core.config import ConditioningSettings
from src.core.exceptions import ContractError
from src.masking.masks import MaskVolume
from src.video.clip import VideoClip

from .context import ContextEncoder, ContextTokens

logger = structlog.get_logger()

PAD_TOKEN = 0


@dataclass
class TextCondition:
    """L_text×C prompt embedding; ``is_null`` marks the learned unconditional embedding."""

    tokens: torch.Tensor
    is_null: bool = False


@dataclass
class GlobalTokens:
    """M×C compact summary of the context tokens."""

    tokens: torch.Tensor
    is_null: bool = False


class PromptEmbedder(nn.Module):
    """Hashes whitespace-separated words into a learned embedding table (fixed length, padded)."""

    def __init__(self, vocab_size: int, length: int, width: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.length = length
        self.width = width
        self.embedding = nn.Embedding(vocab_size, width, padding_idx=PAD_TOKEN)
        self.position = nn.Parameter(torch.randn(length, width) * 0.02)
        self.null_tokens = nn.Parameter(torch.randn(length, width) * 0.02)

    @classmethod
    def from_settings(cls, settings: ConditioningSettings) -> "PromptEmbedder":
        return cls(settings.vocab_size, settings.text_length, settings.context_width)

    def token_ids(self, text: str) -> list[int]:
        ids = [_hash_word(word, self.vocab_size) for word in text.lower().split()][: self.length]
        return ids + [PAD_TOKEN] * (self.length - len(ids))

    def forward(self, texts: list[str]) -> torch.Tensor:
        """B prompts to B×L×C embeddings; empty prompts map to the null embedding."""
        ids = torch.tensor([self.token_ids(text) for text in texts], device=self.position.device)
        tokens = self.embedding(ids) + self.position
        is_null = torch.tensor([not text.strip() for text in texts], device=tokens.device)
        return torch.where(is_null[:, None, None], self.null_tokens.expand_as(tokens), tokens)


def _hash_word(word: str, vocab_size: int) -> int:
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
    return 1 + int.from_bytes(digest, "little") % (vocab_size - 1)


def embed_prompt(text: str, embedder: PromptEmbedder) -> TextCondition:
    """Embed a single prompt; the empty prompt yields the null condition."""
    with torch.no_grad():
        tokens = embedder([text])[0]
    return TextCondition(tokens, is_null=not text.strip())


def encode_context(
    clip: VideoClip,
    mask: MaskVolume,
    encoder: ContextEncoder,
    frame_indices: Sequence[int] | None = None,
) -> ContextTokens:
    """
    Encode the largest fully observed rectangle of every frame and concatenate over time.

    ``frame_indices`` locates the frames of ``clip`` inside the clip named by its source_id,
    for providers that look tokens up per source frame.

    Raises:
        ContractError: if the encoder is trainable, shapes disagree, or a frame is fully masked
    """
    if encoder.training or any(p.requires_grad for p in encoder.parameters()):
        raise ContractError("the context encoder must be frozen")
    if tuple(clip.frames.shape[:3]) != mask.shape:
        raise ContractError(f"clip {tuple(clip.frames.shape[:3])} and mask {mask.shape} disagree")
    indices = None if frame_indices is None else [int(index) for index in frame_indices]
    if indices is not None and len(indices) != clip.num_frames:
        raise ContractError(f"{len(indices)} frame indices given for {clip.num_frames} frames")
    with torch.no_grad():
        per_frame = encoder.encode_frames(
            clip.frames, mask.values, source_id=clip.source_id, frame_indices=indices
        )
    return ContextTokens(
        rearrange(per_frame, "t p c -> (t p) c").contiguous(),
        per_frame_count=encoder.tokens_per_frame,
    )


class ResamplerBlock(nn.Module):
    """Queries cross-attend to [context; queries], then a feed-forward step; both residual."""

    def __init__(self, width: int, heads: int, ff_mult: int = 4):
        super().__init__()
        if width % heads:
            raise ContractError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.scale = (width // heads) ** -0.5
        self.norm_context = nn.LayerNorm(width)
        self.norm_queries = nn.LayerNorm(width)
        self.to_q = nn.Linear(width, width, bias=False)
        self.to_k = nn.Linear(width, width, bias=False)
        self.to_v = nn.Linear(width, width, bias=False)
        self.to_out = nn.Linear(width, width)
        self.ff = nn.Sequential(
            nn.LayerNorm(width),
            nn.Linear(width, width * ff_mult),
            nn.GELU(),
            nn.Linear(width * ff_mult, width),
        )

    def forward(self, queries: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        x = self.norm_queries(queries)
        kv_input = torch.cat([self.norm_context(context), x], dim=-2)

        q = rearrange(self.to_q(x), "b m (h d) -> b h m d", h=self.heads)
        k = rearrange(self.to_k(kv_input), "b n (h d) -> b h n d", h=self.heads)
        v = rearrange(self.to_v(kv_input), "b n (h d) -> b h n d", h=self.heads)

        weights = torch.softmax(torch.einsum("bhmd,bhnd->bhmn", q, k) * self.scale, dim=-1)
        out = rearrange(torch.einsum("bhmn,bhnd->bhmd", weights, v), "b h m d -> b m (h d)")

        queries = queries + self.to_out(out)
        return queries + self.ff(queries)


class GlobalFeatureExtractor(nn.Module):
    """
    Compresses N context tokens into M learned global tokens.

    No positional encoding is added, so the output is invariant to the order of the context tokens.
    ``null_tokens`` is the learned unconditional replacement used for classifier-free guidance.
    """

    def __init__(self, width: int, num_tokens: int, num_blocks: int = 2, heads: int = 4):
        super().__init__()
        self.width = width
        self.num_tokens = num_tokens
        self.queries = nn.Parameter(torch.randn(num_tokens, width) / math.sqrt(width))
        self.null_tokens = nn.Parameter(torch.randn(num_tokens, width) * 0.02)
        self.blocks = nn.ModuleList(ResamplerBlock(width, heads) for _ in range(num_blocks))

    @classmethod
    def from_settings(cls, settings: ConditioningSettings) -> "GlobalFeatureExtractor":
        return cls(
            settings.context_width,
            settings.num_global_tokens,
            num_blocks=settings.extractor_blocks,
            heads=settings.extractor_heads,
        )

    def forward(self, context: torch.Tensor) -> torch.Tensor:
        """B×N×C context tokens to B×M×C global tokens."""
        if context.shape[-1] != self.width:
            raise ContractError(
                f"context width {context.shape[-1]} != extractor width {self.width}"
            )
        queries = self.queries.unsqueeze(0).expand(context.shape[0], -1, -1)
        for block in self.blocks:
            queries = block(queries, context)
        return queries


def extract_global(context: ContextTokens, extractor: GlobalFeatureExtractor) -> GlobalTokens:
    """Run the extractor on a single clip's context tokens."""
    return GlobalTokens(extractor(context.tokens.unsqueeze(0))[0])


def drop_conditions(
    text: TextCondition,
    global_tokens: GlobalTokens,
    p_drop: float,
    generator: torch.Generator,
    text_null: torch.Tensor,
    global_null: torch.Tensor,
) -> tuple[TextCondition, GlobalTokens]:
    """With probability ``p_drop`` replace both conditions by their learned null versions."""
    if not 0.0 <= p_drop <= 1.0:
        raise ContractError(f"p_drop must lie in [0, 1], got {p_drop}")
    if p_drop == 0.0:
        return text, global_tokens
    if p_drop == 1.0 or float(torch.rand((), generator=generator)) < p_drop:
        return TextCondition(text_null, is_null=True), GlobalTokens(global_null, is_null=True)
    return text, global_tokens


def sample_drops(size: int, p_drop: float, generator: torch.Generator) -> torch.Tensor:
    """B-vector of joint drop decisions, each true with probability ``p_drop``."""
    if not 0.0 <= p_drop <= 1.0:
        raise ContractError(f"p_drop must lie in [0, 1], got {p_drop}")
    return torch.rand(size, generator=generator) < p_drop


def drop_conditions_batch(
    text: torch.Tensor,
    global_tokens: torch.Tensor,
    dropped: torch.Tensor,
    text_null: torch.Tensor,
    global_null: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Replace B×L×C text and B×M×C global tokens by their null versions where ``dropped``."""
    if dropped.shape != (text.shape[0],) or global_tokens.shape[0] != text.shape[0]:
        raise ContractError(
            f"{tuple(dropped.shape)} drop decisions for batches of {text.shape[0]} "
            f"and {global_tokens.shape[0]}"
        )
    keep = dropped.to(text.device)[:, None, None]
    return (
        torch.where(keep, text_null.expand_as(text), text),
        torch.where(keep, global_null.expand_as(global_tokens), global_tokens),
    )
