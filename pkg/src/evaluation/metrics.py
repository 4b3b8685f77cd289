"""PSNR and SSIM over video clips with optional region restriction, and the Fréchet distance."""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from einops import rearrange
from scipy import linalg

from src.core.exceptions import ClipNotFoundError, ContractError
from src.masking.masks import MaskVolume
from src.video.clip import VideoClip

PSNR_CAP = 99.0


@dataclass(frozen=True)
class PSNRValue:
    db: float
    exact_match: bool


def _check_pair(a: VideoClip, b: VideoClip, region: MaskVolume | None) -> None:
    if a.frames.shape != b.frames.shape:
        raise ContractError(
            f"clip shapes differ: {tuple(a.frames.shape)} vs {tuple(b.frames.shape)}"
        )
    if region is not None and region.shape != tuple(a.frames.shape[:3]):
        raise ContractError(
            f"region {region.shape} does not match clip {tuple(a.frames.shape[:3])}"
        )


def psnr_value(
    a: VideoClip, b: VideoClip, region: MaskVolume | None = None, cap: float = PSNR_CAP
) -> PSNRValue:
    """
    10·log10(1 / MSE) over the selected pixels, dynamic range 1.

    Identical inputs give ``cap`` with ``exact_match`` set.

    Raises:
        ContractError: on a shape mismatch or an empty region
    """
    _check_pair(a, b, region)
    diff = (a.frames.double() - b.frames.double()) ** 2
    if region is not None:
        selected = region.values.to(torch.bool)
        if not selected.any():
            raise ContractError("PSNR region selects no pixels")
        diff = diff[selected]
    mse = float(diff.mean())
    if mse == 0.0:
        return PSNRValue(cap, True)
    return PSNRValue(min(10.0 * math.log10(1.0 / mse), cap), False)


def psnr(
    a: VideoClip, b: VideoClip, region: MaskVolume | None = None, cap: float = PSNR_CAP
) -> float:
    return psnr_value(a, b, region, cap).db


def gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """Normalised size×size Gaussian in float64."""
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    kernel = torch.exp(-(coords**2) / (2 * sigma**2))
    kernel = kernel / kernel.sum()
    return torch.outer(kernel, kernel)


def ssim_map(
    a: torch.Tensor,
    b: torch.Tensor,
    window: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
) -> torch.Tensor:
    """
    SSIM at every valid window center of N×H×W single-channel images, N×(H−w+1)×(W−w+1).

    Population (not sample) covariances, dynamic range 1.
    """
    if a.shape[-1] < window or a.shape[-2] < window:
        raise ContractError(
            f"frames {tuple(a.shape[-2:])} are smaller than the {window}x{window} window"
        )
    kernel = gaussian_window(window, sigma)[None, None]
    x = a.double().unsqueeze(1)
    y = b.double().unsqueeze(1)

    def blur(values: torch.Tensor) -> torch.Tensor:
        return F.conv2d(values, kernel)

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x**2
    var_y = blur(y * y) - mu_y**2
    cov = blur(x * y) - mu_x * mu_y
    c1, c2 = k1**2, k2**2
    numerator = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    values = numerator / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
    return values.squeeze(1)


def ssim(
    a: VideoClip,
    b: VideoClip,
    region: MaskVolume | None = None,
    window: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
) -> float:
    """
    Mean SSIM over frames, channels and window centers.

    With ``region`` only window centers inside the region are averaged.

    Raises:
        ContractError: shape mismatch, frames smaller than the window, or no center in the region
    """
    _check_pair(a, b, region)
    x = rearrange(a.frames, "t h w c -> (t c) h w")
    y = rearrange(b.frames, "t h w c -> (t c) h w")
    values = ssim_map(x, y, window, sigma, k1, k2)
    if region is None:
        return float(values.mean())

    pad = (window - 1) // 2
    _, height, width = region.shape
    centers = region.values[:, pad : height - pad, pad : width - pad].to(torch.bool)
    centers = centers.repeat_interleave(a.frames.shape[-1], dim=0)
    if not centers.any():
        raise ContractError("SSIM region contains no valid window center")
    return float(values[centers].mean())


def frechet_distance(real: np.ndarray, generated: np.ndarray) -> float:
    """
    Fréchet distance between Gaussians fitted to two N×D feature sets.

    Raises:
        ContractError: if the feature dimensions differ or fewer than two samples are given
    """
    if real.ndim != 2 or generated.ndim != 2 or real.shape[1] != generated.shape[1]:
        raise ContractError(f"feature sets {real.shape} and {generated.shape} are not comparable")
    if len(real) < 2 or len(generated) < 2:
        raise ContractError("at least two feature vectors per set are required")

    mu_r, mu_g = real.mean(axis=0), generated.mean(axis=0)
    cov_r = np.atleast_2d(np.cov(real, rowvar=False))
    cov_g = np.atleast_2d(np.cov(generated, rowvar=False))
    covmean = linalg.sqrtm(cov_r @ cov_g)
    if not np.isfinite(covmean).all():
        offset = np.eye(cov_r.shape[0]) * 1e-6
        covmean = linalg.sqrtm((cov_r + offset) @ (cov_g + offset))
    covmean = np.real(covmean)
    diff = mu_r - mu_g
    return float(diff @ diff + np.trace(cov_r) + np.trace(cov_g) - 2.0 * np.trace(covmean))


def load_feature_pair(directory: Path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``real.npy`` and ``generated.npy`` from an externally produced feature folder."""
    directory = Path(directory)
    paths = [directory / "real.npy", directory / "generated.npy"]
    for path in paths:
        if not path.is_file():
            raise ClipNotFoundError(f"feature file not found: {path}")
    real, generated = (np.load(path).astype(np.float64) for path in paths)
    return real, generated
