"""Sampling clips, masks and prompts into latent training batches."""

from dataclasses import dataclass

import numpy as np
import structlog
import torch

from src.core.config import Settings
from src.core.exceptions import ConfigurationError
from src.diffusion.objectives import LatentBatch
from src.masking.masks import (
    MaskSpec,
    MaskVolume,
    apply_mask,
    downsample_mask,
    render_mask,
    sample_mask_spec,
)
from src.models.autoencoder import LatentCodec, encode
from src.models.conditioning import encode_context
from src.models.context import ContextEncoder
from src.video.clip import VideoClip
from src.video.dataset import ClipDataset

from .checkpoints import TrainPhase

logger = structlog.get_logger()

MAX_DRAW_ATTEMPTS = 100


@dataclass
class TrainingExample:
    clip: VideoClip
    mask: MaskVolume
    spec: MaskSpec
    prompt: str
    frame_indices: list[int] | None = None


def frames_for_phase(phase: TrainPhase, settings: Settings) -> int:
    """Spatial pretraining uses single frames; the video phases use clip_length frames."""
    return 1 if phase is TrainPhase.SPATIAL_INPAINT else settings.data.clip_length


def draw_training_examples(
    dataset: ClipDataset,
    settings: Settings,
    phase: TrainPhase,
    rng: np.random.Generator,
    batch_size: int | None = None,
) -> list[TrainingExample]:
    """
    Pick clips, a random window of T frames from each, and a sampled mask per clip.

    Clips shorter than T are skipped with a warning. For the interpolation phase the first
    and last frames are left fully observed.
    """
    if len(dataset) == 0:
        raise ConfigurationError("training dataset is empty")
    num_frames = frames_for_phase(phase, settings)
    size = batch_size or settings.training.batch_size

    examples: list[TrainingExample] = []
    attempts = 0
    while len(examples) < size:
        attempts += 1
        if attempts > MAX_DRAW_ATTEMPTS * size:
            raise ConfigurationError(f"no clip in the dataset has the required {num_frames} frames")
        record = dataset[int(rng.integers(len(dataset)))]
        clip = record.clip
        if clip.num_frames < num_frames:
            logger.warning(
                "clip_too_short",
                source_id=clip.source_id,
                frames=clip.num_frames,
                required=num_frames,
            )
            continue

        start = int(rng.integers(0, clip.num_frames - num_frames + 1))
        frame_indices = list(range(start, start + num_frames))
        window = clip.select(frame_indices)
        spec = sample_mask_spec(rng, settings.masking)
        mask = render_mask(spec, num_frames, clip.height, clip.width)
        if phase is TrainPhase.INTERP:
            values = mask.values.clone()
            values[0] = 0.0
            values[-1] = 0.0
            mask = MaskVolume(values)
        examples.append(TrainingExample(window, mask, spec, record.prompt, frame_indices))
    return examples


def encode_examples(
    examples: list[TrainingExample],
    codec: LatentCodec,
    context_encoder: ContextEncoder | None = None,
) -> LatentBatch:
    """Encode clips and masked clips into latents, downsample masks and collect context tokens."""
    z0, z_m, m_down, contexts = [], [], [], []
    for example in examples:
        z0.append(encode(example.clip, codec).channels_first())
        z_m.append(encode(apply_mask(example.clip, example.mask), codec).channels_first())
        m_down.append(downsample_mask(example.mask, codec.downsample_factor).values.unsqueeze(0))
        if context_encoder is not None:
            context = encode_context(
                example.clip, example.mask, context_encoder, example.frame_indices
            )
            contexts.append(context.tokens)

    return LatentBatch(
        z0=torch.stack(z0),
        z_m=torch.stack(z_m),
        m_down=torch.stack(m_down),
        prompts=[example.prompt for example in examples],
        context=torch.stack(contexts) if contexts else None,
    )


def build_training_batch(
    dataset: ClipDataset,
    settings: Settings,
    phase: TrainPhase,
    rng: np.random.Generator,
    codec: LatentCodec,
    context_encoder: ContextEncoder | None = None,
) -> LatentBatch:
    """Draw and encode one batch for ``phase``; context tokens are only used by the video phases."""
    examples = draw_training_examples(dataset, settings, phase, rng)
    encoder = None if phase is TrainPhase.SPATIAL_INPAINT else context_encoder
    return encode_examples(examples, codec, encoder)
