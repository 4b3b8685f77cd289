from .baselines import MirrorPadOutpainter, mirror_pad_frames
from .evaluator import MetricReport, MetricRow, evaluate_dataset, read_report_csv, score_clip
from .metrics import frechet_distance, psnr, psnr_value, ssim

__all__ = [
    "MirrorPadOutpainter",
    "mirror_pad_frames",
    "MetricReport",
    "MetricRow",
    "evaluate_dataset",
    "read_report_csv",
    "score_clip",
    "frechet_distance",
    "psnr",
    "psnr_value",
    "ssim",
]
