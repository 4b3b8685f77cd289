"""Dataset evaluation driver and report writer."""

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import structlog
import torch

from src.core.config import Settings
from src.core.exceptions import ClipFormatError, ClipNotFoundError, GlobalPaintError
from src.masking.masks import MaskVolume, horizontal_eval_spec, render_mask
from src.models.context import ContextEncoder
from src.pipeline.outpainter import OutpaintModel, OutpaintRequest, outpaint_video
from src.pipeline.trace import StageTracer
from src.video.clip import VideoClip
from src.video.dataset import ClipDataset

from .metrics import frechet_distance, load_feature_pair, psnr_value, ssim

logger = structlog.get_logger()

REPORT_VERSION = 1
REPORT_COLUMNS = (
    "clip_id",
    "ratio",
    "psnr",
    "ssim",
    "masked_psnr",
    "masked_ssim",
    "exact_match",
    "lpips",
    "status",
    "error",
)


@dataclass
class MetricRow:
    clip_id: str
    ratio: float
    psnr: float = math.nan
    ssim: float = math.nan
    masked_psnr: float = math.nan
    masked_ssim: float = math.nan
    exact_match: bool = False
    lpips: float = math.nan
    status: str = "ok"
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class MetricReport:
    """Per-clip rows plus the run metadata; aggregates are always recomputed from the rows."""

    rows: list[MetricRow] = field(default_factory=list)
    config_hash: str = ""
    seed: int = 0
    checkpoint_id: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def failures(self) -> list[MetricRow]:
        return [row for row in self.rows if not row.ok]

    def ratios(self) -> list[float]:
        return sorted({row.ratio for row in self.rows})

    def per_ratio_means(self) -> dict[float, dict[str, float]]:
        metrics = ("psnr", "ssim", "masked_psnr", "masked_ssim")
        means = {}
        for ratio in self.ratios():
            rows = [row for row in self.rows if row.ratio == ratio and row.ok]
            means[ratio] = {
                name: (sum(getattr(r, name) for r in rows) / len(rows)) if rows else math.nan
                for name in metrics
            }
        return means

    def overall_means(self) -> dict[str, float]:
        """Average of the per-ratio means, so every ratio weighs equally."""
        per_ratio = self.per_ratio_means()
        if not per_ratio:
            return {}
        names = next(iter(per_ratio.values())).keys()
        return {name: sum(m[name] for m in per_ratio.values()) / len(per_ratio) for name in names}

    def write_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            handle.write(
                f"# globalpaint-report v{REPORT_VERSION} config_hash={self.config_hash} "
                f"seed={self.seed} checkpoint={self.checkpoint_id}\n"
            )
            writer = csv.DictWriter(handle, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                values = asdict(row)
                for name in ("psnr", "ssim", "masked_psnr", "masked_ssim", "lpips"):
                    values[name] = "" if math.isnan(values[name]) else f"{values[name]:.6f}"
                values["exact_match"] = int(row.exact_match)
                writer.writerow(values)
        return path

    def summary(self) -> dict[str, Any]:
        return {
            "version": REPORT_VERSION,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "checkpoint": self.checkpoint_id,
            "clips": len({row.clip_id for row in self.rows}),
            "failures": len(self.failures),
            "per_ratio": {str(ratio): means for ratio, means in self.per_ratio_means().items()},
            "average": self.overall_means(),
            **self.extra,
        }

    def write_summary(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True, default=str) + "\n")
        return path


def read_report_csv(path: Path) -> MetricReport:
    """
    Parse a report written by :meth:`MetricReport.write_csv`.

    Raises:
        ClipFormatError: unknown version line or header
    """
    path = Path(path)
    if not path.is_file():
        raise ClipNotFoundError(f"report not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith(f"# globalpaint-report v{REPORT_VERSION} "):
        raise ClipFormatError(f"{path} is not a version {REPORT_VERSION} report", offset=0)
    meta = dict(item.split("=", 1) for item in lines[0].split()[3:])
    reader = csv.DictReader(lines[1:])
    if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
        raise ClipFormatError(f"unexpected report header in {path}", offset=len(lines[0]) + 1)

    def number(text: str) -> float:
        return float(text) if text else math.nan

    rows = [
        MetricRow(
            clip_id=record["clip_id"],
            ratio=float(record["ratio"]),
            psnr=number(record["psnr"]),
            ssim=number(record["ssim"]),
            masked_psnr=number(record["masked_psnr"]),
            masked_ssim=number(record["masked_ssim"]),
            exact_match=record["exact_match"] == "1",
            lpips=number(record["lpips"]),
            status=record["status"],
            error=record["error"],
        )
        for record in reader
    ]
    return MetricReport(
        rows=rows,
        config_hash=meta.get("config_hash", ""),
        seed=int(meta.get("seed", 0)),
        checkpoint_id=meta.get("checkpoint", ""),
    )


def evaluation_mask(ratio: float, clip: VideoClip, allowed: tuple[float, ...]) -> MaskVolume:
    """Symmetric horizontal mask for ``ratio``; ratio 0 gives an all-observed mask."""
    if ratio == 0.0:
        return MaskVolume(torch.zeros(clip.num_frames, clip.height, clip.width))
    spec = horizontal_eval_spec(ratio, allowed)
    return render_mask(spec, clip.num_frames, clip.height, clip.width)


def score_clip(
    generated: VideoClip, reference: VideoClip, mask: MaskVolume, settings: Settings, ratio: float
) -> MetricRow:
    """Full-frame metrics plus metrics restricted to the synthesized region."""
    config = settings.evaluation
    ssim_args = (config.ssim_window, config.ssim_sigma, config.ssim_k1, config.ssim_k2)
    full = psnr_value(generated, reference, cap=config.psnr_cap)
    full_ssim = ssim(generated, reference, None, *ssim_args)
    if mask.is_empty():
        masked_psnr, masked_ssim = full.db, full_ssim
    else:
        masked_psnr = psnr_value(generated, reference, mask, cap=config.psnr_cap).db
        masked_ssim = ssim(generated, reference, mask, *ssim_args)
    return MetricRow(
        clip_id=reference.source_id,
        ratio=ratio,
        psnr=full.db,
        ssim=full_ssim,
        masked_psnr=masked_psnr,
        masked_ssim=masked_ssim,
        exact_match=full.exact_match,
    )


def _read_lpips(path: Path) -> dict[tuple[str, float], float]:
    if not Path(path).is_file():
        raise ClipNotFoundError(f"LPIPS distance file not found: {path}")
    with Path(path).open(newline="") as handle:
        return {
            (record["clip_id"], round(float(record["ratio"]), 6)): float(record["lpips"])
            for record in csv.DictReader(handle)
        }


def evaluate_dataset(
    dataset: ClipDataset,
    settings: Settings,
    base_model: OutpaintModel,
    interp_model: OutpaintModel | None = None,
    context_encoder: ContextEncoder | None = None,
    ratios: tuple[float, ...] | None = None,
    checkpoint_id: str = "",
    out_dir: Path | None = None,
    mode: str | None = None,
) -> MetricReport:
    """
    Outpaint every clip at every ratio and score it against the original.

    Failures of single clips are recorded as rows with status "failed" and the run continues.
    The CFG scale for each ratio comes from ``sampler.ratio_cfg_scales``.
    """
    ratios = ratios if ratios is not None else settings.evaluation.ratios
    mode = mode or settings.pipeline.mode
    allowed = tuple(settings.evaluation.ratios)
    lpips_file = settings.evaluation.lpips_distances
    lpips = _read_lpips(lpips_file) if lpips_file else {}
    report = MetricReport(
        config_hash=settings.config_hash(),
        seed=settings.evaluation.seed,
        checkpoint_id=checkpoint_id,
    )

    for record in dataset.records:
        clip = record.clip
        for ratio in ratios:
            sampler = settings.sampler.model_copy(
                update={
                    "cfg_scale": settings.sampler.scale_for_ratio(ratio),
                    "seed": settings.evaluation.seed,
                }
            )
            try:
                mask = evaluation_mask(ratio, clip, allowed)
                request = OutpaintRequest(
                    clip=clip,
                    mask=mask,
                    prompt=record.prompt,
                    sampler=sampler,
                    mode=mode,  # type: ignore[arg-type]
                    context_length=settings.pipeline.context_length,
                )
                tracer = StageTracer(
                    out_dir / "traces" / f"{clip.source_id}_{ratio}.jsonl" if out_dir else None
                )
                result = outpaint_video(
                    request,
                    base_model,
                    interp_model,
                    context_encoder,
                    tracer,
                    segment_workers=settings.pipeline.segment_workers,
                )
                row = score_clip(result, clip, mask, settings, ratio)
                row.lpips = lpips.get((clip.source_id, round(ratio, 6)), math.nan)
            except GlobalPaintError as error:
                logger.error(
                    "clip_evaluation_failed", clip_id=clip.source_id, ratio=ratio, error=str(error)
                )
                row = MetricRow(
                    clip_id=clip.source_id, ratio=ratio, status="failed", error=str(error)
                )
            report.rows.append(row)
            logger.info(
                "clip_evaluated",
                clip_id=row.clip_id,
                ratio=ratio,
                psnr=row.psnr,
                masked_psnr=row.masked_psnr,
                status=row.status,
            )

    if settings.evaluation.fvd_features is not None:
        real, generated = load_feature_pair(settings.evaluation.fvd_features)
        report.extra["fvd"] = frechet_distance(real, generated)

    if out_dir is not None:
        report.write_csv(Path(out_dir) / "report.csv")
        report.write_summary(Path(out_dir) / "summary.json")
    logger.info(
        "evaluation_completed",
        clips=len(dataset),
        ratios=list(ratios),
        failures=len(report.failures),
        average=report.overall_means(),
    )
    return report
