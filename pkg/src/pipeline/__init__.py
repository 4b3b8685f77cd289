from .outpainter import (
    DiffusionOutpainter,
    OutpaintModel,
    OutpaintRequest,
    composite_known,
    interpolate_segment,
    outpaint_keyframes,
    outpaint_video,
)
from .planner import HierarchyPlan, Segment, chunk_positions, plan_hierarchy
from .trace import StageTracer, read_trace

__all__ = [
    "DiffusionOutpainter",
    "OutpaintModel",
    "OutpaintRequest",
    "composite_known",
    "interpolate_segment",
    "outpaint_keyframes",
    "outpaint_video",
    "HierarchyPlan",
    "Segment",
    "chunk_positions",
    "plan_hierarchy",
    "StageTracer",
    "read_trace",
]
