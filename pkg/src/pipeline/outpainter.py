"""Full-video outpainting: key frames first, then interpolation between neighbouring keys."""

from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Protocol

import structlog
import torch

from src.core.config import SamplerSettings
from src.core.exceptions import ContractError, GlobalPaintError, StageError
from src.diffusion.sampling import GuidedDenoiser, sample_euler_edm
from src.diffusion.schedules import NoiseSchedule
from src.masking.masks import MaskVolume, apply_mask, downsample_mask
from src.models.autoencoder import LatentClip, LatentCodec, decode, encode
from src.models.conditioning import encode_context
from src.models.context import ContextEncoder, ContextTokens
from src.models.denoiser import GlobalPaintNet
from src.video.clip import VideoClip

from .planner import HierarchyPlan, Segment, chunk_positions, global_context_indices, plan_hierarchy
from .trace import StageTracer

logger = structlog.get_logger()


@dataclass
class OutpaintRequest:
    clip: VideoClip
    mask: MaskVolume
    prompt: str
    sampler: SamplerSettings
    mode: Literal["hierarchical", "sequential"] = "hierarchical"
    context_length: int = 16

    def __post_init__(self) -> None:
        if tuple(self.clip.frames.shape[:3]) != self.mask.shape:
            raise ContractError(
                f"clip {tuple(self.clip.frames.shape[:3])} and mask {self.mask.shape} disagree"
            )


class OutpaintModel(Protocol):
    """Anything that can complete the masked region of a short clip (at most L frames)."""

    def complete(
        self,
        clip: VideoClip,
        mask: MaskVolume,
        prompt: str,
        context: ContextTokens | None,
        sampler: SamplerSettings,
        seed: int,
    ) -> VideoClip: ...


def composite_known(generated: VideoClip, original: VideoClip, mask: MaskVolume) -> VideoClip:
    """Original pixels where the mask is 0, generated pixels where it is 1."""
    same_shape = generated.frames.shape == original.frames.shape
    if not same_shape or tuple(original.frames.shape[:3]) != mask.shape:
        raise ContractError(
            f"cannot composite {tuple(generated.frames.shape)} onto {tuple(original.frames.shape)} "
            f"with mask {mask.shape}"
        )
    hidden = mask.values.to(torch.bool).unsqueeze(-1)
    frames = torch.where(hidden, generated.frames, original.frames)
    return VideoClip(frames, fps=original.fps, source_id=original.source_id)


class DiffusionOutpainter:
    """Latent-diffusion implementation of :class:`OutpaintModel`."""

    def __init__(
        self,
        model: GlobalPaintNet,
        codec: LatentCodec,
        schedule: NoiseSchedule,
        device: torch.device | str = "cpu",
    ):
        self.model = model.eval()
        self.codec = codec
        self.schedule = schedule
        self.device = torch.device(device)

    @torch.no_grad()
    def complete(
        self,
        clip: VideoClip,
        mask: MaskVolume,
        prompt: str,
        context: ContextTokens | None,
        sampler: SamplerSettings,
        seed: int,
    ) -> VideoClip:
        masked = apply_mask(clip, mask)
        z_m = encode(masked, self.codec).channels_first().unsqueeze(0).to(self.device)
        m_down = downsample_mask(mask, self.codec.downsample_factor).values
        m_down = m_down[None, None].to(self.device)

        text = self.model.text_embedder([prompt])
        global_tokens = None
        if context is not None and self.model.settings.use_global_tokens:
            global_tokens = self.model.global_extractor(context.tokens.unsqueeze(0).to(self.device))

        denoiser = GuidedDenoiser(
            self.model,
            self.schedule,
            text=text,
            z_m=z_m,
            m_down=m_down,
            global_tokens=global_tokens,
            text_null=self.model.text_null,
            global_null=self.model.global_null,
            scale=sampler.cfg_scale,
        )
        generator = torch.Generator().manual_seed(seed)
        latents = sample_euler_edm(
            denoiser, tuple(z_m.shape), sampler, self.schedule, generator, device=self.device
        )
        scale = float(getattr(self.codec, "latent_scale", 1.0))
        latent = LatentClip.from_channels_first(latents[0].cpu(), scale=scale)
        generated = decode(latent, self.codec)
        return composite_known(
            VideoClip(generated.frames, fps=clip.fps, source_id=clip.source_id), clip, mask
        )


def compute_global_context(
    clip: VideoClip, mask: MaskVolume, encoder: ContextEncoder, context_length: int
) -> ContextTokens:
    """Context tokens from up to L frames spread over the whole video."""
    indices = global_context_indices(clip.num_frames, context_length)
    return encode_context(clip.select(indices), mask.select(indices), encoder, indices)


def _run_stage(
    tracer: StageTracer,
    stage: str,
    location: str,
    frames: list[int],
    call: Callable[[], VideoClip],
) -> VideoClip:
    try:
        with tracer.stage(stage, location, frames):
            return call()
    except (GlobalPaintError, RuntimeError) as error:
        raise StageError(stage, location, error) from error


def outpaint_keyframes(
    request: OutpaintRequest,
    plan: HierarchyPlan,
    base_model: OutpaintModel,
    context: ContextTokens | None = None,
    tracer: StageTracer | None = None,
) -> dict[int, torch.Tensor]:
    """
    Complete all key frames with the base model, in chunks of at most L keys.

    Consecutive chunks share one key; the later chunk sees it as a fully observed frame.
    """
    tracer = tracer or StageTracer()
    keys = plan.key_indices
    completed: dict[int, torch.Tensor] = {}

    for chunk_id, positions in enumerate(chunk_positions(len(keys), request.context_length)):
        indices = [keys[p] for p in positions]
        clip = request.clip.select(indices)
        mask_values = request.mask.values[indices].clone()
        frames = clip.frames.clone()
        if chunk_id > 0:
            frames[0] = completed[indices[0]]
            mask_values[0] = 0.0
        clip = clip.with_frames(frames)
        mask = MaskVolume(mask_values)

        seed = request.sampler.seed + chunk_id
        result = _run_stage(
            tracer,
            "keyframes",
            f"chunk {chunk_id}",
            indices,
            lambda clip=clip, mask=mask, seed=seed: base_model.complete(
                clip, mask, request.prompt, context, request.sampler, seed
            ),
        )
        for position, index in enumerate(indices):
            completed.setdefault(index, result.frames[position])

    logger.info("keyframes_completed", keys=len(keys), chunks=tracer.count("keyframes"))
    return completed


def interpolate_segment(
    segment: Segment,
    completed: dict[int, torch.Tensor],
    request: OutpaintRequest,
    interp_model: OutpaintModel,
    context: ContextTokens | None = None,
    tracer: StageTracer | None = None,
) -> dict[int, torch.Tensor]:
    """
    Fill a segment's intermediates; its boundary keys must already be completed.

    Boundary frames enter unmasked, intermediates carry their original mask.
    """
    if segment.is_degenerate:
        return {}
    missing = [key for key in (segment.start_key, segment.end_key) if key not in completed]
    if missing:
        raise ContractError(f"segment boundaries {missing} have not been completed")

    indices = segment.frames
    frames = request.clip.frames[indices].clone()
    frames[0] = completed[segment.start_key]
    frames[-1] = completed[segment.end_key]
    mask_values = request.mask.values[indices].clone()
    mask_values[0] = 0.0
    mask_values[-1] = 0.0
    clip = request.clip.with_frames(frames)
    mask = MaskVolume(mask_values)

    result = _run_stage(
        tracer or StageTracer(),
        "interpolate",
        f"segment {segment.start_key}-{segment.end_key}",
        indices,
        lambda: interp_model.complete(
            clip,
            mask,
            request.prompt,
            context,
            request.sampler,
            request.sampler.seed + segment.start_key,
        ),
    )
    return {index: result.frames[position] for position, index in enumerate(indices[1:-1], start=1)}


def _outpaint_hierarchical(
    request: OutpaintRequest,
    base_model: OutpaintModel,
    interp_model: OutpaintModel,
    context: ContextTokens | None,
    tracer: StageTracer,
    segment_workers: int,
) -> torch.Tensor:
    plan = plan_hierarchy(request.clip.num_frames, request.context_length)
    completed = outpaint_keyframes(request, plan, base_model, context, tracer)

    segments = plan.non_degenerate_segments()

    def run(segment: Segment) -> dict[int, torch.Tensor]:
        return interpolate_segment(segment, completed, request, interp_model, context, tracer)

    if segment_workers > 1 and len(segments) > 1:
        with ThreadPoolExecutor(max_workers=segment_workers) as pool:
            filled = list(pool.map(run, segments))
    else:
        filled = [run(segment) for segment in segments]

    frames = request.clip.frames.clone()
    for index, frame in completed.items():
        frames[index] = frame
    for part in filled:
        for index, frame in part.items():
            frames[index] = frame
    logger.info("segments_completed", segments=len(segments), keys=len(plan.key_indices))
    return frames


def _outpaint_sequential(
    request: OutpaintRequest,
    base_model: OutpaintModel,
    context_encoder: ContextEncoder | None,
    tracer: StageTracer,
) -> torch.Tensor:
    """Left-to-right L-frame chunks, each seeing only its own frames and the completed overlap."""
    frames = request.clip.frames.clone()
    chunks = chunk_positions(request.clip.num_frames, request.context_length)
    for chunk_id, indices in enumerate(chunks):
        chunk_frames = frames[indices].clone()
        mask_values = request.mask.values[indices].clone()
        if chunk_id > 0:
            # overlap frame was completed by the previous chunk
            mask_values[0] = 0.0
        clip = request.clip.with_frames(chunk_frames)
        mask = MaskVolume(mask_values)
        context = None
        if context_encoder is not None:
            context = encode_context(clip, mask, context_encoder, indices)
        seed = request.sampler.seed + chunk_id
        result = _run_stage(
            tracer,
            "sequential",
            f"chunk {chunk_id}",
            indices,
            lambda clip=clip, mask=mask, context=context, seed=seed: base_model.complete(
                clip, mask, request.prompt, context, request.sampler, seed
            ),
        )
        frames[indices] = result.frames
    return frames


def outpaint_video(
    request: OutpaintRequest,
    base_model: OutpaintModel,
    interp_model: OutpaintModel | None = None,
    context_encoder: ContextEncoder | None = None,
    tracer: StageTracer | None = None,
    segment_workers: int = 1,
) -> VideoClip:
    """
    Outpaint a whole video in the requested mode; observed pixels are preserved exactly.

    Raises:
        StageError: wrapping any failure with its stage and chunk or segment
    """
    tracer = tracer or StageTracer()
    if request.mode == "hierarchical":
        if interp_model is None:
            raise ContractError("hierarchical mode needs an interpolation model")
        context = None
        if context_encoder is not None:
            context = compute_global_context(
                request.clip, request.mask, context_encoder, request.context_length
            )
        frames = _outpaint_hierarchical(
            request, base_model, interp_model, context, tracer, segment_workers
        )
    else:
        frames = _outpaint_sequential(request, base_model, context_encoder, tracer)

    generated = VideoClip(
        frames.clamp(0.0, 1.0), fps=request.clip.fps, source_id=request.clip.source_id
    )
    result = composite_known(generated, request.clip, request.mask)
    logger.info(
        "video_outpainted",
        mode=request.mode,
        frames=request.clip.num_frames,
        model_calls=len(tracer.records),
        masked_fraction=request.mask.masked_fraction(),
    )
    return result
