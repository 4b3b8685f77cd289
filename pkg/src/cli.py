"""Command-line entry point: make-data, train, outpaint, evaluate and inspect."""

import argparse
import json
import sys
from collections.abc import Sequence
from pathlib import Path

import structlog
import torch

from src.core.config import Settings, load_settings
from src.core.exceptions import ConfigurationError, GlobalPaintError
from src.core.logging import configure_logging
from src.diffusion.schedules import make_schedule
from src.evaluation.baselines import MirrorPadOutpainter
from src.evaluation.evaluator import evaluate_dataset
from src.masking.masks import Edge, MaskMode, MaskSpec, MaskVolume, render_mask, save_mask
from src.models.context import build_context_encoder
from src.pipeline.outpainter import (
    DiffusionOutpainter,
    OutpaintModel,
    OutpaintRequest,
    outpaint_video,
)
from src.pipeline.planner import plan_hierarchy
from src.pipeline.trace import StageTracer, read_trace
from src.training.checkpoints import TrainPhase, checkpoint_path, read_checkpoint_header
from src.training.trainer import load_codec, load_video_model, train_phase
from src.video.clip import VideoClip
from src.video.dataset import ClipDataset
from src.video.io import load_clip, save_clip

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_CONFIG = 2

MASK_MODES = ("horizontal", "periphery", "left", "right", "top", "bottom", "none")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="globalpaint", description="Video outpainting with latent diffusion"
    )
    parser.add_argument("--config", type=Path, help="TOML file replacing config/default.toml")
    commands = parser.add_subparsers(dest="command", required=True)

    make_data = commands.add_parser("make-data", help="generate the synthetic sprite dataset")
    make_data.add_argument("--out", type=Path, help="dataset folder (default: <output_root>/data)")
    make_data.add_argument("--clips", type=int, help="number of clips")

    train = commands.add_parser("train", help="train one phase")
    train.add_argument("--phase", required=True, choices=[phase.value for phase in TrainPhase])
    train.add_argument("--data", type=Path, help="dataset folder (default: synthetic clips)")
    train.add_argument(
        "--run-dir", type=Path, help="checkpoint folder (default: <output_root>/run)"
    )
    train.add_argument("--steps", type=int, help="override the configured number of steps")
    train.add_argument("--resume", type=Path, help="checkpoint to resume from")

    outpaint = commands.add_parser("outpaint", help="outpaint a single video")
    outpaint.add_argument("--input", type=Path, required=True, help="folder of frames")
    outpaint.add_argument("--mask-mode", choices=MASK_MODES, default="horizontal")
    outpaint.add_argument("--ratio", type=float, default=0.25)
    outpaint.add_argument("--mode", choices=["hierarchical", "sequential"])
    outpaint.add_argument("--prompt", help="text prompt (default: folder name)")
    outpaint.add_argument("--checkpoint", type=Path, help="run folder with trained phases")
    outpaint.add_argument("--baseline", choices=["mirror"], help="use a training-free baseline")
    outpaint.add_argument("--out", type=Path, required=True)

    evaluate = commands.add_parser("evaluate", help="evaluate a dataset at the configured ratios")
    evaluate.add_argument("--data", type=Path, required=True)
    evaluate.add_argument("--checkpoint", type=Path, help="run folder with trained phases")
    evaluate.add_argument("--baseline", choices=["mirror"], help="use a training-free baseline")
    evaluate.add_argument("--ratios", type=float, nargs="+")
    evaluate.add_argument("--mode", choices=["hierarchical", "sequential"])
    evaluate.add_argument("--out", type=Path, help="report folder (default: <output_root>/eval)")

    inspect = commands.add_parser("inspect", help="print a hierarchy plan, a trace or a checkpoint")
    inspect.add_argument("--frames", type=int, help="video length K")
    inspect.add_argument("--context", type=int, help="model context length L")
    inspect.add_argument("--trace", type=Path, help="JSON-lines stage trace")
    inspect.add_argument("--checkpoint", type=Path, help="checkpoint file or run folder")
    return parser


def _mask_for(mode: str, ratio: float, clip: VideoClip) -> MaskVolume:
    if mode == "none" or ratio == 0.0:
        return MaskVolume(torch.zeros(clip.num_frames, clip.height, clip.width))
    if mode == "horizontal":
        edges = frozenset((Edge.LEFT, Edge.RIGHT))
        spec = MaskSpec(mode=MaskMode.DUAL_EDGE, edges=edges, ratio=ratio)
    elif mode == "periphery":
        spec = MaskSpec(mode=MaskMode.PERIPHERY, edges=frozenset(Edge), ratio=ratio)
    else:
        spec = MaskSpec(mode=MaskMode.SINGLE_EDGE, edges=frozenset((Edge(mode),)), ratio=ratio)
    return render_mask(spec, clip.num_frames, clip.height, clip.width)


def _require(path: Path) -> Path:
    if not path.is_file():
        raise ConfigurationError(f"checkpoint not found: {path}")
    return path


def load_outpainters(
    settings: Settings, run_dir: Path | None, baseline: str | None, mode: str
) -> tuple[OutpaintModel, OutpaintModel | None]:
    """Base and interpolation models from a run folder, or the baseline for both."""
    if baseline == "mirror":
        model = MirrorPadOutpainter()
        return model, model
    if run_dir is None:
        raise ConfigurationError("--checkpoint (a run folder) or --baseline is required")

    codec = load_codec(_require(checkpoint_path(run_dir, TrainPhase.AUTOENCODER)))
    schedule = make_schedule(settings.diffusion)
    base = load_video_model(
        _require(checkpoint_path(run_dir, TrainPhase.BASE_VIDEO)), settings, TrainPhase.BASE_VIDEO
    )
    base_model = DiffusionOutpainter(base.to(settings.device), codec, schedule, settings.device)
    if mode != "hierarchical":
        return base_model, None
    interp = load_video_model(
        _require(checkpoint_path(run_dir, TrainPhase.INTERP)), settings, TrainPhase.INTERP
    )
    interp_model = DiffusionOutpainter(interp.to(settings.device), codec, schedule, settings.device)
    return base_model, interp_model


def _dataset(settings: Settings, folder: Path | None) -> ClipDataset:
    if folder is not None:
        return ClipDataset.from_directory(folder)
    return ClipDataset.synthetic(settings.data, settings.autoencoder.downsample_factor)


def cmd_make_data(args: argparse.Namespace, settings: Settings) -> int:
    data = settings.data
    if args.clips is not None:
        data = data.model_copy(update={"num_clips": args.clips})
    out = args.out or settings.output_root / "data"
    ClipDataset.synthetic(data, settings.autoencoder.downsample_factor).save(out)
    print(f"wrote {data.num_clips} clips to {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    run_dir = args.run_dir or settings.output_root / "run"
    result = train_phase(
        settings,
        TrainPhase(args.phase),
        _dataset(settings, args.data),
        run_dir,
        resume=args.resume,
        steps=args.steps,
    )
    if result.losses:
        print(f"{args.phase}: {len(result.losses)} steps, final loss {result.losses[-1]:.6f}")
    print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def cmd_outpaint(args: argparse.Namespace, settings: Settings) -> int:
    mode = args.mode or settings.pipeline.mode
    clip = load_clip(args.input, fps=settings.data.fps)
    mask = _mask_for(args.mask_mode, args.ratio, clip)
    base_model, interp_model = load_outpainters(settings, args.checkpoint, args.baseline, mode)
    context_encoder = None if args.baseline else build_context_encoder(settings.conditioning)

    request = OutpaintRequest(
        clip=clip,
        mask=mask,
        prompt=args.prompt if args.prompt is not None else args.input.name.replace("_", " "),
        sampler=settings.sampler.model_copy(
            update={"cfg_scale": settings.sampler.scale_for_ratio(args.ratio)}
        ),
        mode=mode,
        context_length=settings.pipeline.context_length,
    )
    tracer = StageTracer(args.out / "trace.jsonl")
    result = outpaint_video(
        request,
        base_model,
        interp_model,
        context_encoder,
        tracer,
        settings.pipeline.segment_workers,
    )
    save_clip(result, args.out / "frames")
    save_mask(mask, args.out / "mask")
    frames_dir = args.out / "frames"
    print(f"wrote {result.num_frames} frames to {frames_dir} ({len(tracer.records)} model calls)")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, settings: Settings) -> int:
    mode = args.mode or settings.pipeline.mode
    base_model, interp_model = load_outpainters(settings, args.checkpoint, args.baseline, mode)
    context_encoder = None if args.baseline else build_context_encoder(settings.conditioning)
    out = args.out or settings.output_root / "eval"
    report = evaluate_dataset(
        ClipDataset.from_directory(args.data),
        settings,
        base_model,
        interp_model,
        context_encoder,
        ratios=tuple(args.ratios) if args.ratios else None,
        checkpoint_id=args.baseline or str(args.checkpoint),
        out_dir=out,
        mode=mode,
    )
    print(json.dumps(report.summary(), indent=2, sort_keys=True, default=str))
    return EXIT_FAILURES if report.failures else EXIT_OK


def _checkpoint_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    files = [checkpoint_path(path, phase) for phase in TrainPhase]
    found = [file for file in files if file.is_file()]
    if not found:
        raise ConfigurationError(f"no checkpoints under {path}")
    return found


def cmd_inspect(args: argparse.Namespace, settings: Settings) -> int:
    if args.frames is None and args.trace is None and args.checkpoint is None:
        raise ConfigurationError("inspect needs --frames, --trace or --checkpoint")

    if args.frames is not None:
        plan = plan_hierarchy(args.frames, args.context or settings.pipeline.context_length)
        segments = plan.non_degenerate_segments()
        print(f"frames: {plan.num_frames}  context: {plan.context_length}  stride: {plan.stride}")
        print(f"keys ({len(plan.key_indices)}): {plan.key_indices}")
        print(f"segments ({len(segments)}):")
        for segment in segments:
            span = f"{segment.start_key}-{segment.end_key}"
            print(f"  {span}: {len(segment.intermediates)} intermediates")

    if args.trace is not None:
        for record in read_trace(args.trace):
            print(
                f"{record.stage:<12} {record.location:<16} {len(record.frames):>4} frames "
                f"{record.wall_time:.3f}s"
            )

    if args.checkpoint is not None:
        for path in _checkpoint_files(args.checkpoint):
            header = read_checkpoint_header(path)
            print(f"{path}: phase={header['phase']} step={header['step']}")
            for group, names in sorted(header.get("groups", {}).items()):
                print(f"  {group}: {len(names)} tensors")
            counts = header.get("extra", {}).get("parameter_counts")
            if counts:
                for group, count in sorted(counts.items()):
                    print(f"  {group}: {count} parameters")
    return EXIT_OK


COMMANDS = {
    "make-data": cmd_make_data,
    "train": cmd_train,
    "outpaint": cmd_outpaint,
    "evaluate": cmd_evaluate,
    "inspect": cmd_inspect,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI; 0 on success, 1 when failures were recorded, 2 on configuration errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)

    try:
        settings = load_settings(args.config)
    except ConfigurationError as error:
        print(f"configuration error: {error}", file=sys.stderr)
        return EXIT_CONFIG

    configure_logging(settings.log_level, json_output=settings.log_format == "json")
    logger.info("cli_started", command=args.command, output_root=str(settings.output_root))
    try:
        return COMMANDS[args.command](args, settings)
    except ConfigurationError as error:
        logger.error("configuration_error", error=str(error))
        print(f"configuration error: {error}", file=sys.stderr)
        return EXIT_CONFIG
    except GlobalPaintError as error:
        logger.error("command_failed", command=args.command, error=str(error))
        print(f"error: {error}", file=sys.stderr)
        return EXIT_FAILURES


if __name__ == "__main__":
    sys.exit(main())
