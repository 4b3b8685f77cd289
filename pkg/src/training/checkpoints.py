"""
Checkpoint container.

Layout: magic ``GPCK``, uint32 format version, uint32 header length (little endian), a UTF-8
JSON header, then a ``torch.save`` payload with the state dicts. The header is validated
before the payload is touched.
"""

import io
import json
import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import structlog
import torch
from tenacity import (
    RetryError,
    retry,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from src.core.exceptions import (
    ClipFormatError,
    ClipIOError,
    ClipNotFoundError,
    ConfigurationError,
    MigrationError,
)

logger = structlog.get_logger()

MAGIC = b"GPCK"
FORMAT_VERSION = 1
PREAMBLE = struct.Struct("<4sII")
SUFFIX = ".gpck"


class TrainPhase(str, Enum):
    AUTOENCODER = "autoencoder"
    SPATIAL_INPAINT = "spatial_inpaint"
    BASE_VIDEO = "base_video"
    INTERP = "interp"


@dataclass
class Checkpoint:
    phase: TrainPhase
    step: int
    model_state: dict[str, torch.Tensor]
    optimizer_state: dict[str, Any] | None = None
    config: dict[str, Any] = field(default_factory=dict)
    groups: dict[str, list[str]] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def header(self) -> dict[str, Any]:
        return {
            "phase": self.phase.value,
            "step": self.step,
            "config": self.config,
            "groups": self.groups,
            "extra": self.extra,
            "has_optimizer": self.optimizer_state is not None,
        }


def checkpoint_path(run_dir: Path, phase: TrainPhase, step: int | None = None) -> Path:
    name = "final" if step is None else f"step_{step:07d}"
    return Path(run_dir) / phase.value / f"{name}{SUFFIX}"


def _encode(checkpoint: Checkpoint) -> bytes:
    header = json.dumps(checkpoint.header(), sort_keys=True, default=str).encode("utf-8")
    payload = io.BytesIO()
    torch.save({"model": checkpoint.model_state, "optimizer": checkpoint.optimizer_state}, payload)
    return PREAMBLE.pack(MAGIC, checkpoint.version, len(header)) + header + payload.getvalue()


@retry(
    retry=retry_if_exception_type(OSError),
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.1, max=1),
)
def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> Path:
    """
    Write a checkpoint atomically, retrying transient filesystem failures.

    Raises:
        ClipIOError: if the file still cannot be written
    """
    path = Path(path)
    try:
        _write_atomic(path, _encode(checkpoint))
    except RetryError as error:
        cause = error.last_attempt.exception()
        raise ClipIOError(f"cannot write checkpoint {path}: {cause}") from cause
    logger.info(
        "checkpoint_saved", path=str(path), phase=checkpoint.phase.value, step=checkpoint.step
    )
    return path


def _read_header(data: bytes, path: Path) -> tuple[dict[str, Any], int, int]:
    if len(data) < PREAMBLE.size:
        raise ClipFormatError(f"truncated checkpoint {path}", offset=len(data))
    magic, version, header_length = PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise ClipFormatError(f"{path} is not a checkpoint file", offset=0)
    if version != FORMAT_VERSION:
        raise MigrationError(found=version, expected=FORMAT_VERSION)
    end = PREAMBLE.size + header_length
    if len(data) < end:
        raise ClipFormatError(f"truncated checkpoint header in {path}", offset=len(data))
    try:
        header = json.loads(data[PREAMBLE.size : end].decode("utf-8"))
        TrainPhase(header["phase"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, ValueError) as error:
        raise ClipFormatError(
            f"corrupt checkpoint header in {path}: {error}", offset=PREAMBLE.size
        ) from error
    return header, version, end


def _read_bytes(path: Path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise ClipNotFoundError(f"checkpoint not found: {path}")
    return path.read_bytes()


def read_checkpoint_header(path: Path) -> dict[str, Any]:
    """Header of a checkpoint without deserialising its tensors."""
    path = Path(path)
    return _read_header(_read_bytes(path), path)[0]


def load_checkpoint(path: Path, map_location: str | torch.device = "cpu") -> Checkpoint:
    """
    Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        ClipNotFoundError: missing file
        MigrationError: format version differs from this reader
        ClipFormatError: wrong magic or corrupt header/payload
    """
    path = Path(path)
    data = _read_bytes(path)
    header, version, offset = _read_header(data, path)
    try:
        payload = torch.load(
            io.BytesIO(data[offset:]), map_location=map_location, weights_only=True
        )
        model_state = payload["model"]
    except Exception as error:  # torch raises several unrelated types for corrupt pickles
        raise ClipFormatError(
            f"corrupt checkpoint payload in {path}: {error}", offset=offset
        ) from error

    return Checkpoint(
        phase=TrainPhase(header["phase"]),
        step=int(header["step"]),
        model_state=model_state,
        optimizer_state=payload.get("optimizer"),
        config=header.get("config", {}),
        groups=header.get("groups", {}),
        extra=header.get("extra", {}),
        version=version,
    )


def check_phase_transition(source: TrainPhase, target: TrainPhase) -> None:
    """
    Allow resuming a phase from its own checkpoint, and starting interpolation from base_video.

    Raises:
        ConfigurationError: for any other cross-phase load
    """
    if source is target or (source is TrainPhase.BASE_VIDEO and target is TrainPhase.INTERP):
        return
    raise ConfigurationError(
        f"cannot initialise phase '{target.value}' from a '{source.value}' checkpoint"
    )
