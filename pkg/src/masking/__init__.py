from .masks import (
    Edge,
    MaskMode,
    MaskSpec,
    MaskVolume,
    apply_mask,
    downsample_mask,
    edge_widths,
    horizontal_eval_spec,
    render_mask,
    sample_mask_spec,
    save_mask,
)

__all__ = [
    "Edge",
    "MaskMode",
    "MaskSpec",
    "MaskVolume",
    "apply_mask",
    "downsample_mask",
    "edge_widths",
    "horizontal_eval_spec",
    "render_mask",
    "sample_mask_spec",
    "save_mask",
]
