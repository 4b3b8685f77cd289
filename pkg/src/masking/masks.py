"""Outpainting masks: sampling, rendering, application and latent downsampling."""

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import structlog
import torch
import torch.nn.functional as F
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.config import MaskSettings
from src.core.exceptions import ConfigurationError, ContractError
from src.video.clip import VideoClip

logger = structlog.get_logger()


class MaskMode(str, Enum):
    """Border layouts used for training and evaluation masks."""

    PERIPHERY = "periphery"
    SINGLE_EDGE = "single_edge"
    DUAL_EDGE = "dual_edge"


class Edge(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    TOP = "top"
    BOTTOM = "bottom"


VERTICAL_EDGES = (Edge.LEFT, Edge.RIGHT)
HORIZONTAL_EDGES = (Edge.TOP, Edge.BOTTOM)

# dual-edge layouts: opposite vertical pair, opposite horizontal pair, or a corner pair
DUAL_EDGE_CATEGORIES: tuple[tuple[frozenset[Edge], ...], ...] = (
    (frozenset(VERTICAL_EDGES),),
    (frozenset(HORIZONTAL_EDGES),),
    tuple(frozenset((v, h)) for v in VERTICAL_EDGES for h in HORIZONTAL_EDGES),
)

EVAL_RATIOS = (0.25, 0.666)


class MaskSpec(BaseModel):
    """
    Parameters of a border mask.

    ``ratio`` is the total masked-area fraction of each frame.
    """

    model_config = ConfigDict(frozen=True)

    mode: MaskMode
    edges: frozenset[Edge]
    ratio: float = Field(ge=0.0, lt=1.0)
    per_frame_constant: bool = True

    @model_validator(mode="after")
    def _check_edges(self) -> "MaskSpec":
        count = len(self.edges)
        if self.mode is MaskMode.SINGLE_EDGE and count != 1:
            raise ValueError("single_edge masks need exactly one edge")
        if self.mode is MaskMode.DUAL_EDGE and count != 2:
            raise ValueError("dual_edge masks need exactly two edges")
        if self.mode is MaskMode.PERIPHERY and count != 4:
            raise ValueError("periphery masks cover all four edges")
        if not self.per_frame_constant:
            raise ValueError("only per-frame constant masks are supported")
        return self


@dataclass
class MaskVolume:
    """Binary T×H×W volume, 1 = region to synthesize."""

    values: torch.Tensor

    def __post_init__(self) -> None:
        if self.values.ndim != 3:
            raise ContractError(f"expected a T×H×W mask, got shape {tuple(self.values.shape)}")
        if not torch.all((self.values == 0) | (self.values == 1)):
            raise ContractError("mask values must be 0 or 1")

    @property
    def shape(self) -> tuple[int, int, int]:
        t, h, w = self.values.shape
        return int(t), int(h), int(w)

    def select(self, indices: list[int] | range) -> "MaskVolume":
        return MaskVolume(self.values[list(indices)])

    def masked_fraction(self) -> float:
        return float(self.values.float().mean())

    def is_empty(self) -> bool:
        return not bool(self.values.any())


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def sample_mask_spec(rng: np.random.Generator, config: MaskSettings) -> MaskSpec:
    """
    Draw a training mask spec: mode by configured probabilities, ratio ~ U[low, high].

    Raises:
        ConfigurationError: if the mode probabilities do not sum to 1
    """
    modes = [MaskMode(name) for name in config.mode_probabilities]
    probabilities = np.asarray(list(config.mode_probabilities.values()), dtype=np.float64)
    if abs(probabilities.sum() - 1.0) > 1e-9 or (probabilities < 0).any():
        raise ConfigurationError(
            "mask mode probabilities must be non-negative and sum to 1, "
            f"got {config.mode_probabilities}"
        )

    mode = modes[int(rng.choice(len(modes), p=probabilities))]
    ratio = float(rng.uniform(*config.ratio_range))

    if mode is MaskMode.PERIPHERY:
        edges = frozenset(Edge)
    elif mode is MaskMode.SINGLE_EDGE:
        edges = frozenset((list(Edge)[int(rng.integers(4))],))
    else:
        category = DUAL_EDGE_CATEGORIES[int(rng.integers(len(DUAL_EDGE_CATEGORIES)))]
        edges = category[int(rng.integers(len(category)))]

    return MaskSpec(mode=mode, edges=edges, ratio=ratio)


def horizontal_eval_spec(ratio: float, allowed: tuple[float, ...] = EVAL_RATIOS) -> MaskSpec:
    """Symmetric left/right evaluation mask masking ``ratio`` of the width in total."""
    if not any(math.isclose(ratio, a, abs_tol=1e-9) for a in allowed):
        raise ConfigurationError(f"unknown evaluation ratio {ratio}; allowed: {allowed}")
    return MaskSpec(mode=MaskMode.DUAL_EDGE, edges=frozenset(VERTICAL_EDGES), ratio=ratio)


def edge_widths(spec: MaskSpec, height: int, width: int) -> dict[Edge, int]:
    """
    Number of masked columns/rows per edge.

    Opposite pairs split round(r·D) with the left/top side taking the extra line. Layouts that
    mask both axes use a per-axis fraction s = 1 - sqrt(1 - r), so that the masked area is r.
    """
    widths = {edge: 0 for edge in Edge}
    if spec.ratio == 0.0:
        return widths

    vertical = [e for e in VERTICAL_EDGES if e in spec.edges]
    horizontal = [e for e in HORIZONTAL_EDGES if e in spec.edges]
    both_axes = bool(vertical and horizontal)
    axis_fraction = 1.0 - math.sqrt(1.0 - spec.ratio) if both_axes else spec.ratio

    for edges, extent in ((vertical, width), (horizontal, height)):
        if not edges:
            continue
        total = _round_half_up(axis_fraction * extent)
        if len(edges) == 2:
            widths[edges[0]] = total - total // 2
            widths[edges[1]] = total // 2
        else:
            widths[edges[0]] = total

    for edge in spec.edges:
        if widths[edge] < 1:
            raise ConfigurationError(
                f"ratio {spec.ratio} leaves edge '{edge.value}' empty on a {height}x{width} frame"
            )
    across = widths[Edge.LEFT] + widths[Edge.RIGHT]
    down = widths[Edge.TOP] + widths[Edge.BOTTOM]
    if across >= width or down >= height:
        raise ConfigurationError(f"ratio {spec.ratio} leaves no observed pixels")
    return widths


def render_mask(spec: MaskSpec, num_frames: int, height: int, width: int) -> MaskVolume:
    """Render a spec to a T×H×W volume, constant over time."""
    if min(num_frames, height, width) < 1:
        raise ContractError(f"mask dims must be positive, got {(num_frames, height, width)}")

    widths = edge_widths(spec, height, width)
    frame = torch.zeros(height, width, dtype=torch.float32)
    if widths[Edge.LEFT]:
        frame[:, : widths[Edge.LEFT]] = 1.0
    if widths[Edge.RIGHT]:
        frame[:, width - widths[Edge.RIGHT] :] = 1.0
    if widths[Edge.TOP]:
        frame[: widths[Edge.TOP], :] = 1.0
    if widths[Edge.BOTTOM]:
        frame[height - widths[Edge.BOTTOM] :, :] = 1.0
    return MaskVolume(frame.expand(num_frames, height, width).clone())


def apply_mask(clip: VideoClip, mask: MaskVolume) -> VideoClip:
    """Zero out the to-synthesize region: x ⊙ (1 − m)."""
    if tuple(clip.frames.shape[:3]) != mask.shape:
        raise ContractError(f"clip {tuple(clip.frames.shape[:3])} and mask {mask.shape} disagree")
    hidden = mask.values.to(torch.bool).unsqueeze(-1)
    frames = torch.where(hidden, torch.zeros_like(clip.frames), clip.frames)
    return VideoClip(frames, fps=clip.fps, source_id=clip.source_id)


def downsample_mask(mask: MaskVolume, factor: int) -> MaskVolume:
    """A latent cell is 1 iff any pixel it covers is 1."""
    _, height, width = mask.shape
    if factor < 1 or height % factor or width % factor:
        raise ContractError(f"mask {height}x{width} not divisible by factor {factor}")
    pooled = F.max_pool2d(mask.values.unsqueeze(1).float(), kernel_size=factor, stride=factor)
    return MaskVolume(pooled.squeeze(1))


def save_mask(mask: MaskVolume, directory: Path) -> list[Path]:
    """Export a mask as one 1-bit PNG per frame."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, frame in enumerate(mask.values.to(torch.bool).cpu().numpy()):
        path = directory / f"{index:06d}.png"
        Image.fromarray(frame).convert("1").save(path)
        paths.append(path)
    logger.debug("mask_saved", directory=str(directory), frames=len(paths))
    return paths
