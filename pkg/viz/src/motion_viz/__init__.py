"""Offline stick-figure renderer for joint-position sidecar files.

Consumes ``*.pos.json`` sidecars (``{"fps": float, "positions":
frames x 24 x 3}``) and produces GIF animations or horizontal strip
images. No coupling to any model or checkpoint format.
"""

from .render import (
    BONES,
    NUM_JOINTS,
    RenderSpec,
    SidecarError,
    load_sidecar,
    project_points,
    render,
    select_frames,
)

__all__ = [
    "BONES",
    "NUM_JOINTS",
    "RenderSpec",
    "SidecarError",
    "load_sidecar",
    "project_points",
    "render",
    "select_frames",
]
