"""Frame-folder I/O: one 8-bit RGB PNG per frame."""

from pathlib import Path

import numpy as np
import structlog
import torch
from PIL import Image

from src.core.exceptions import ClipFormatError, ClipIOError, ClipNotFoundError

from .clip import DEFAULT_FPS, VideoClip

logger = structlog.get_logger()

FRAME_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


def list_frame_files(directory: Path) -> list[Path]:
    """Image files in a folder, lexicographically ordered."""
    if not directory.is_dir():
        raise ClipNotFoundError(f"frame folder not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES)


def load_clip(
    directory: Path,
    frame_range: tuple[int, int] | None = None,
    fps: int = DEFAULT_FPS,
) -> VideoClip:
    """
    Load a folder of frames as a clip.

    Args:
        directory: Folder with lexicographically ordered frames of identical size
        frame_range: Optional (start, end) slice over the ordered files

    Returns:
        VideoClip with values normalized to [0, 1]
    """
    directory = Path(directory)
    files = list_frame_files(directory)
    if not files:
        raise ClipNotFoundError(f"no frames in {directory}")
    if frame_range is not None:
        start, end = frame_range
        files = files[start:end]
        if not files:
            raise ClipNotFoundError(f"frame range {frame_range} selects no frames in {directory}")

    frames: list[np.ndarray] = []
    for path in files:
        with Image.open(path) as image:
            array = np.asarray(image.convert("RGB"), dtype=np.uint8)
        if frames and array.shape != frames[0].shape:
            raise ClipFormatError(
                f"{path.name} has size {array.shape[:2]}, expected {frames[0].shape[:2]}"
            )
        frames.append(array)

    volume = torch.from_numpy(np.stack(frames)).to(torch.float32) / 255.0
    logger.debug("clip_loaded", directory=str(directory), frames=len(frames))
    return VideoClip(volume, fps=fps, source_id=directory.name)


def to_uint8(frames: torch.Tensor) -> np.ndarray:
    """Quantize [0, 1] floats to 8-bit with round-half-up."""
    scaled = torch.floor(frames.detach().cpu().to(torch.float64).clamp(0.0, 1.0) * 255.0 + 0.5)
    return scaled.to(torch.uint8).numpy()


def save_clip(clip: VideoClip, directory: Path) -> list[Path]:
    """
    Write one zero-padded PNG per frame (000000.png, 000001.png, ...).

    Raises:
        ClipIOError: if the folder or a frame cannot be written
    """
    directory = Path(directory)
    pixels = to_uint8(clip.frames)
    written: list[Path] = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for index, frame in enumerate(pixels):
            path = directory / f"{index:06d}.png"
            Image.fromarray(frame).save(path)
            written.append(path)
    except OSError as e:
        raise ClipIOError(f"cannot write frames to {directory}: {e}") from e

    logger.debug("clip_saved", directory=str(directory), frames=len(written))
    return written
