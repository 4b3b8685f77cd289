from .autoencoder import LatentClip, LatentCodec, ToyAutoencoder, build_codec, decode, encode
from .conditioning import (
    GlobalFeatureExtractor,
    GlobalTokens,
    PromptEmbedder,
    TextCondition,
    drop_conditions,
    embed_prompt,
    encode_context,
    extract_global,
)
from .context import ContextEncoder, ContextTokens, build_context_encoder
from .denoiser import (
    GlobalPaintNet,
    build_denoiser,
    denoise,
    parameter_groups,
    trainable_parameters,
)

__all__ = [
    "LatentClip",
    "LatentCodec",
    "ToyAutoencoder",
    "build_codec",
    "decode",
    "encode",
    "GlobalFeatureExtractor",
    "GlobalTokens",
    "PromptEmbedder",
    "TextCondition",
    "drop_conditions",
    "embed_prompt",
    "encode_context",
    "extract_global",
    "ContextEncoder",
    "ContextTokens",
    "build_context_encoder",
    "GlobalPaintNet",
    "build_denoiser",
    "denoise",
    "parameter_groups",
    "trainable_parameters",
]
