"""Key-frame planning for long videos processed L frames at a time."""

from dataclasses import dataclass

import numpy as np

from src.core.exceptions import ContractError


@dataclass(frozen=True)
class Segment:
    """Frames strictly between two neighbouring key frames."""

    start_key: int
    end_key: int

    @property
    def intermediates(self) -> list[int]:
        return list(range(self.start_key + 1, self.end_key))

    @property
    def frames(self) -> list[int]:
        """Boundary keys and intermediates, in order."""
        return list(range(self.start_key, self.end_key + 1))

    @property
    def is_degenerate(self) -> bool:
        return self.end_key - self.start_key < 2


@dataclass(frozen=True)
class HierarchyPlan:
    num_frames: int
    context_length: int
    stride: int
    key_indices: list[int]
    segments: list[Segment]

    def non_degenerate_segments(self) -> list[Segment]:
        return [segment for segment in self.segments if not segment.is_degenerate]


def plan_hierarchy(
    num_frames: int, context_length: int, stride: int | None = None
) -> HierarchyPlan:
    """
    Key frames every ``stride`` frames (default L − 1) plus the last frame.

    Raises:
        ContractError: if K < 2, L < 3 or the stride cannot fit a segment in one pass
    """
    if num_frames < 2:
        raise ContractError(f"need at least 2 frames, got {num_frames}")
    if context_length < 3:
        raise ContractError(f"context length must be >= 3, got {context_length}")
    stride = context_length - 1 if stride is None else stride
    if not 1 <= stride <= context_length - 1:
        raise ContractError(f"stride {stride} does not fit context length {context_length}")

    keys = list(range(0, num_frames, stride))
    if keys[-1] != num_frames - 1:
        keys.append(num_frames - 1)
    segments = [Segment(start, end) for start, end in zip(keys, keys[1:], strict=False)]
    return HierarchyPlan(
        num_frames=num_frames,
        context_length=context_length,
        stride=stride,
        key_indices=keys,
        segments=segments,
    )


def chunk_positions(count: int, context_length: int) -> list[list[int]]:
    """
    Split positions 0..count-1 into chunks of at most L; each chunk after the first starts on the
    last position of the previous one.
    """
    if count < 1:
        raise ContractError("nothing to chunk")
    chunks = []
    start = 0
    while True:
        chunks.append(list(range(start, min(start + context_length, count))))
        if start + context_length >= count:
            break
        start += context_length - 1
    return chunks


def global_context_indices(num_frames: int, context_length: int) -> list[int]:
    """Up to L frame indices spread uniformly over the whole video."""
    count = min(num_frames, context_length)
    return sorted({int(i) for i in np.floor(np.linspace(0, num_frames - 1, count) + 0.5)})
