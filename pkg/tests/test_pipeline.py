"""Test hierarchy planning and the outpainting pipeline."""

import json
from dataclasses import dataclass

import pytest
import torch

from src.core.config import SamplerSettings
from src.core.exceptions import ContractError, SamplingError, StageError
from src.diffusion.schedules import make_schedule
from src.masking.masks import MaskVolume, horizontal_eval_spec, render_mask
from src.models.context import (
    ContextTokens,
    ToyContextEncoder,
    build_context_encoder,
    write_token_file,
)
from src.models.denoiser import build_denoiser
from src.pipeline.outpainter import (
    DiffusionOutpainter,
    OutpaintRequest,
    composite_known,
    interpolate_segment,
    outpaint_keyframes,
    outpaint_video,
)
from src.pipeline.planner import (
    Segment,
    chunk_positions,
    global_context_indices,
    plan_hierarchy,
)
from src.pipeline.trace import StageTracer, read_trace
from src.video.clip import VideoClip

from .conftest import make_clip, random_clip


@dataclass
class Call:
    frames: torch.Tensor
    mask: torch.Tensor
    seed: int
    context: ContextTokens | None


class FillModel:
    """Fills the masked region with a seed-dependent gray and records every call."""

    def __init__(self, fail: Exception | None = None):
        self.calls: list[Call] = []
        self.fail = fail

    def complete(self, clip, mask, prompt, context, sampler, seed):
        self.calls.append(Call(clip.frames.clone(), mask.values.clone(), seed, context))
        if self.fail is not None:
            raise self.fail
        fill = torch.full_like(clip.frames, (seed % 7) / 10.0)
        return composite_known(clip.with_frames(fill), clip, mask)


def _request(num_frames: int, context_length: int, mode: str = "hierarchical", size: int = 16):
    clip = random_clip(num_frames, size, size, seed=num_frames)
    mask = render_mask(horizontal_eval_spec(0.25), num_frames, size, size)
    return OutpaintRequest(
        clip=clip,
        mask=mask,
        prompt="red square",
        sampler=SamplerSettings(steps=2, seed=3),
        mode=mode,
        context_length=context_length,
    )


def _observed_equal(result: VideoClip, request: OutpaintRequest) -> bool:
    observed = request.mask.values == 0
    return torch.equal(result.frames[observed], request.clip.frames[observed])


@pytest.mark.parametrize("context_length", range(3, 33))
def test_plan_covers_every_frame(context_length):
    """Keys start at 0, end at K-1, and every segment fits in one model pass."""
    for num_frames in range(2, 201):
        plan = plan_hierarchy(num_frames, context_length)
        keys = plan.key_indices
        assert keys[0] == 0 and keys[-1] == num_frames - 1
        assert all(0 < b - a <= context_length - 1 for a, b in zip(keys, keys[1:], strict=False))
        assert all(len(segment.frames) <= context_length for segment in plan.segments)

        covered = sorted(keys + [i for s in plan.segments for i in s.intermediates])
        assert covered == list(range(num_frames))


def test_plan_for_long_video():
    plan = plan_hierarchy(91, 16)
    assert plan.stride == 15
    assert plan.key_indices == [0, 15, 30, 45, 60, 75, 90]
    assert len(plan.non_degenerate_segments()) == 6
    assert all(len(s.intermediates) == 14 for s in plan.segments)


def test_plan_edge_cases():
    plan = plan_hierarchy(2, 16)
    assert plan.key_indices == [0, 1]
    assert plan.non_degenerate_segments() == []

    assert plan_hierarchy(17, 16).key_indices == [0, 15, 16]
    assert plan_hierarchy(10, 4, stride=2).key_indices == [0, 2, 4, 6, 8, 9]
    for args in ((1, 16), (10, 2), (10, 4, 4), (10, 4, 0)):
        with pytest.raises(ContractError):
            plan_hierarchy(*args)


def test_segment_frames():
    segment = Segment(15, 30)
    assert segment.frames[0] == 15 and segment.frames[-1] == 30
    assert len(segment.intermediates) == 14
    assert Segment(3, 4).is_degenerate


def test_chunk_positions_overlap_by_one():
    assert chunk_positions(7, 16) == [list(range(7))]
    assert chunk_positions(20, 8) == [list(range(0, 8)), list(range(7, 15)), list(range(14, 20))]
    assert chunk_positions(8, 8) == [list(range(8))]
    with pytest.raises(ContractError):
        chunk_positions(0, 8)


def test_global_context_indices():
    indices = global_context_indices(91, 16)
    assert len(indices) == 16
    assert indices[0] == 0 and indices[-1] == 90
    assert global_context_indices(5, 16) == [0, 1, 2, 3, 4]


def test_hierarchical_call_pattern():
    """One key pass for four keys, then one interpolation pass per segment."""
    request = _request(20, 8)
    base, interp = FillModel(), FillModel()
    tracer = StageTracer()
    result = outpaint_video(request, base, interp, tracer=tracer)

    assert [call.frames.shape[0] for call in base.calls] == [4]
    assert sorted(call.frames.shape[0] for call in interp.calls) == [6, 8, 8]
    assert tracer.count("keyframes") == 1 and tracer.count("interpolate") == 3
    assert _observed_equal(result, request)

    masked = request.mask.values.to(torch.bool)
    assert not torch.equal(result.frames[masked], request.clip.frames[masked])


def test_interpolation_boundaries_are_observed_keys():
    request = _request(20, 8)
    base, interp = FillModel(), FillModel()
    outpaint_video(request, base, interp)

    key_fill = (request.sampler.seed % 7) / 10.0
    for call in interp.calls:
        assert call.mask[0].eq(0).all() and call.mask[-1].eq(0).all()
        assert call.mask[1:-1].sum() > 0
        hidden = call.frames[0][request.mask.values[0].to(torch.bool)]
        assert torch.allclose(hidden, torch.full_like(hidden, key_fill))


def test_key_chunks_share_one_completed_frame():
    """Every key chunk after the first starts on the last key of its predecessor, fully observed."""
    request = _request(50, 4)
    base, interp = FillModel(), FillModel()
    plan = plan_hierarchy(50, 4)
    completed = outpaint_keyframes(request, plan, base)

    assert sorted(completed) == plan.key_indices
    assert len(base.calls) == len(chunk_positions(len(plan.key_indices), 4))
    assert base.calls[0].mask[0].sum() > 0
    for previous, call in zip(base.calls, base.calls[1:], strict=False):
        assert call.mask[0].eq(0).all()
        hidden = call.frames[0][request.mask.values[0].to(torch.bool)]
        assert torch.equal(hidden, torch.full_like(hidden, (previous.seed % 7) / 10.0))
    assert [call.seed for call in base.calls] == [3 + i for i in range(len(base.calls))]


def test_sequential_mode():
    request = _request(20, 8, mode="sequential")
    base = FillModel()
    result = outpaint_video(request, base, None)
    assert [call.frames.shape[0] for call in base.calls] == [8, 8, 6]
    assert base.calls[1].mask[0].eq(0).all()
    assert all(call.context is None for call in base.calls)
    assert _observed_equal(result, request)


def test_context_modes(tiny_settings):
    """Hierarchical mode shares one global context; sequential mode encodes each chunk."""
    encoder = ToyContextEncoder(tiny_settings.conditioning)
    request = _request(20, 8, size=32)
    base, interp = FillModel(), FillModel()
    outpaint_video(request, base, interp, encoder)
    contexts = [call.context for call in base.calls + interp.calls]
    assert all(context is contexts[0] for context in contexts)
    assert contexts[0].num_frames == 8

    sequential = _request(20, 8, mode="sequential", size=32)
    base = FillModel()
    outpaint_video(sequential, base, None, encoder)
    assert [call.context.num_frames for call in base.calls] == [8, 8, 6]


@pytest.mark.parametrize("mode", ["hierarchical", "sequential"])
def test_external_context_on_long_video(tiny_settings, tmp_path, mode):
    """File-backed tokens are looked up per source frame when only some frames are encoded."""
    tokens = torch.randn(20, 5, 16)
    write_token_file(tmp_path / "clip_a.tokens", tokens)
    conditioning = tiny_settings.conditioning.model_copy(
        update={"context_provider": "external", "external_token_dir": tmp_path}
    )
    encoder = build_context_encoder(conditioning)
    request = _request(20, 8, mode=mode)
    request.clip.source_id = "clip_a"

    base = FillModel()
    interp = FillModel() if mode == "hierarchical" else None
    result = outpaint_video(request, base, interp, encoder)
    assert _observed_equal(result, request)

    if mode == "hierarchical":
        expected = [global_context_indices(20, 8)] * (len(base.calls) + len(interp.calls))
        contexts = [call.context for call in base.calls + interp.calls]
    else:
        expected = chunk_positions(20, 8)
        contexts = [call.context for call in base.calls]
    assert len(contexts) == len(expected)
    for context, indices in zip(contexts, expected, strict=True):
        assert torch.equal(context.tokens, tokens[indices].reshape(-1, 16))


def test_short_video_without_segments():
    request = _request(2, 8)
    base, interp = FillModel(), FillModel()
    result = outpaint_video(request, base, interp)
    assert len(base.calls) == 1 and interp.calls == []
    assert _observed_equal(result, request)


def test_stage_errors_name_their_location():
    request = _request(20, 8)
    with pytest.raises(StageError) as info:
        outpaint_video(request, FillModel(fail=SamplingError("boom", step=1)), FillModel())
    assert info.value.stage == "keyframes"
    assert info.value.location == "chunk 0"

    with pytest.raises(StageError) as info:
        outpaint_video(request, FillModel(), FillModel(fail=SamplingError("boom", step=0)))
    assert info.value.stage == "interpolate"
    assert info.value.location.startswith("segment ")


def test_runtime_failures_become_stage_errors():
    request = _request(20, 8, mode="sequential")
    failure = RuntimeError("out of memory")
    with pytest.raises(StageError) as info:
        outpaint_video(request, FillModel(fail=failure), None)
    assert info.value.stage == "sequential"
    assert info.value.location == "chunk 0"
    assert info.value.__cause__ is failure
    assert "out of memory" in str(info.value)


def test_hierarchical_needs_interpolation_model():
    with pytest.raises(ContractError):
        outpaint_video(_request(20, 8), FillModel(), None)


def test_interpolation_requires_completed_boundaries():
    request = _request(20, 8)
    with pytest.raises(ContractError):
        interpolate_segment(Segment(0, 7), {0: request.clip.frames[0]}, request, FillModel())
    assert interpolate_segment(Segment(0, 1), {}, request, FillModel()) == {}


def test_parallel_segments_match_serial():
    request = _request(40, 6)
    serial = outpaint_video(request, FillModel(), FillModel(), segment_workers=1)
    parallel = outpaint_video(request, FillModel(), FillModel(), segment_workers=4)
    assert torch.equal(serial.frames, parallel.frames)


def test_trace_file(tmp_path):
    path = tmp_path / "out" / "trace.jsonl"
    tracer = StageTracer(path)
    outpaint_video(_request(20, 8), FillModel(), FillModel(), tracer=tracer)

    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert json.loads(lines[0])["stage"] == "keyframes"
    records = read_trace(path)
    assert [r.frames for r in records] == [r.frames for r in tracer.records]
    assert records[0].frames == [0, 7, 14, 19]


def test_request_validation():
    clip = random_clip(3, 16, 16)
    with pytest.raises(ContractError):
        OutpaintRequest(clip, MaskVolume(torch.zeros(2, 16, 16)), "", SamplerSettings())
    with pytest.raises(ContractError):
        composite_known(clip, random_clip(3, 8, 8), MaskVolume(torch.zeros(3, 16, 16)))


def test_diffusion_outpainter_end_to_end(tiny_settings, tiny_codec):
    """An untrained tiny model runs through both modes and keeps observed pixels."""
    model, _ = build_denoiser(tiny_settings.denoiser, tiny_settings.conditioning)
    outpainter = DiffusionOutpainter(model, tiny_codec, make_schedule(tiny_settings.diffusion))
    encoder = ToyContextEncoder(tiny_settings.conditioning)
    clip = make_clip(num_frames=12)
    mask = render_mask(horizontal_eval_spec(0.25), 12, 32, 32)

    for mode in ("hierarchical", "sequential"):
        request = OutpaintRequest(
            clip=clip,
            mask=mask,
            prompt="red square",
            sampler=SamplerSettings(steps=2, cfg_scale=2.0),
            mode=mode,
            context_length=8,
        )
        result = outpaint_video(request, outpainter, outpainter, encoder)
        assert result.frames.shape == clip.frames.shape
        assert torch.isfinite(result.frames).all()
        assert _observed_equal(result, request)


def test_diffusion_outpainter_is_seeded(tiny_settings, tiny_codec):
    model, _ = build_denoiser(tiny_settings.denoiser, tiny_settings.conditioning)
    outpainter = DiffusionOutpainter(model, tiny_codec, make_schedule(tiny_settings.diffusion))
    clip = make_clip(num_frames=4)
    mask = render_mask(horizontal_eval_spec(0.25), 4, 32, 32)
    sampler = SamplerSettings(steps=2)
    first = outpainter.complete(clip, mask, "red square", None, sampler, seed=1)
    second = outpainter.complete(clip, mask, "red square", None, sampler, seed=1)
    assert torch.equal(first.frames, second.frames)
