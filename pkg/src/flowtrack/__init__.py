"""Flow-driven tracking-by-detection with a synthetic-scene oracle and metrics."""

from flowtrack.primitives import (
    BBox,
    BinaryMask,
    Detection,
    FlowField,
    FrameMasks,
    box_iou,
    mask_iou,
    sample_flow,
    tight_box,
)

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "BinaryMask",
    "Detection",
    "FlowField",
    "FrameMasks",
    "box_iou",
    "mask_iou",
    "sample_flow",
    "tight_box",
    "__version__",
]
