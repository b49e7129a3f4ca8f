"""Stick-figure rendering from joint-position sidecars.

Sidecar schema::

    {"fps": <float>, "positions": [[[x, y, z] x 24] x frames]}

Joints follow the SMPL ordering (pelvis, hips, spine, knees, ... hands);
``BONES`` lists the parent-child segments drawn between them. The renderer
is deterministic: no RNG, and identical inputs produce identical files.

Frame selection with ``stride=k`` keeps indices ``0, k, 2k, ...`` — the
first frame is always rendered, the last only when its index is a multiple
of ``k``. A 1-frame sidecar or ``stride >= frames`` therefore yields
exactly one rendered pose.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

NUM_JOINTS = 24

# SMPL joint order:
#  0 pelvis, 1 l_hip, 2 r_hip, 3 spine1, 4 l_knee, 5 r_knee, 6 spine2,
#  7 l_ankle, 8 r_ankle, 9 spine3, 10 l_foot, 11 r_foot, 12 neck,
# 13 l_collar, 14 r_collar, 15 head, 16 l_shoulder, 17 r_shoulder,
# 18 l_elbow, 19 r_elbow, 20 l_wrist, 21 r_wrist, 22 l_hand, 23 r_hand
PARENTS = (
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17,
    18, 19, 20, 21,
)

BONES = tuple((p, j) for j, p in enumerate(PARENTS) if p >= 0)


class SidecarError(ValueError):
    """Raised when a sidecar file is missing, malformed, or mis-shaped."""


@dataclass(frozen=True)
class RenderSpec:
    """What to render and how.

    input:  sidecar path
    output: image/animation path (format from the file extension)
    stride: render every k-th frame, k >= 1
    elev / azim: orthographic view angles in degrees
    strip:  lay rendered frames out horizontally in one PNG instead of
            animating them
    """

    input: str | Path
    output: str | Path
    stride: int = 1
    elev: float = 15.0
    azim: float = -60.0
    strip: bool = False

    def __post_init__(self):
        if self.stride < 1:
            raise SidecarError(f"stride must be >= 1, got {self.stride}")


def load_sidecar(path: str | Path) -> tuple[np.ndarray, float]:
    """Read a sidecar file into (positions (F, 24, 3), fps)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise SidecarError(f"cannot read sidecar {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SidecarError(f"sidecar {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "positions" not in payload:
        raise SidecarError(f"sidecar {path} has no 'positions' key")
    try:
        positions = np.asarray(payload["positions"], dtype=np.float64)
    except ValueError as exc:
        raise SidecarError(f"sidecar {path}: ragged positions array") from exc
    if positions.ndim != 3 or positions.shape[2] != 3:
        raise SidecarError(
            f"sidecar {path}: positions must be frames x joints x 3, "
            f"got shape {positions.shape}")
    if positions.shape[1] != NUM_JOINTS:
        raise SidecarError(
            f"sidecar {path}: expected {NUM_JOINTS} joints per frame, "
            f"got {positions.shape[1]}")
    if positions.shape[0] < 1:
        raise SidecarError(f"sidecar {path}: no frames")
    if not np.isfinite(positions).all():
        raise SidecarError(f"sidecar {path}: non-finite joint positions")
    fps = float(payload.get("fps", 20.0))
    if fps <= 0:
        raise SidecarError(f"sidecar {path}: fps must be positive, got {fps}")
    return positions, fps


def select_frames(n_frames: int, stride: int) -> list[int]:
    """Indices 0, stride, 2*stride, ... below n_frames."""
    if stride < 1:
        raise SidecarError(f"stride must be >= 1, got {stride}")
    return list(range(0, n_frames, stride))


def project_points(points: np.ndarray, elev: float, azim: float) -> np.ndarray:
    """Orthographic projection of (..., 3) world points onto (..., 2) screen.

    The camera is built by rotating the world by ``azim`` degrees about the
    vertical (y) axis, then ``elev`` degrees about the screen's horizontal
    axis, and dropping the depth coordinate. Screen x grows right, screen y
    grows up.
    """
    a = math.radians(azim)
    e = math.radians(elev)
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    u = x * math.cos(a) - z * math.sin(a)          # screen right
    w = x * math.sin(a) + z * math.cos(a)          # toward the camera
    v = y * math.cos(e) - w * math.sin(e)          # screen up
    return np.stack([u, v], axis=-1)


def _fade_alpha(i: int, n: int) -> float:
    """Alpha for the i-th of n rendered poses: old faint, recent opaque."""
    if n <= 1:
        return 1.0
    return 0.25 + 0.75 * i / (n - 1)


def _draw_pose(ax, pts2d: np.ndarray, color, alpha: float) -> None:
    for parent, child in BONES:
        seg = pts2d[[parent, child]]
        ax.plot(seg[:, 0], seg[:, 1], color=color, alpha=alpha, linewidth=1.5)
    ax.scatter(pts2d[:, 0], pts2d[:, 1], s=6, color=color, alpha=alpha,
               zorder=3)


def _bounds(coords: np.ndarray, margin: float = 0.05):
    lo = coords.reshape(-1, 2).min(axis=0)
    hi = coords.reshape(-1, 2).max(axis=0)
    span = float(max((hi - lo).max(), 1e-6))
    pad = margin * span
    return lo - pad, hi + pad, span


def strip_figure(positions: np.ndarray, spec: RenderSpec):
    """Build the strip figure; returns (figure, screen coords (F', 24, 2)).

    Rendered poses are offset horizontally in time order with a temporal
    alpha fade and a color ramp, so motion reads left to right.
    """
    idx = select_frames(positions.shape[0], spec.stride)
    frames = positions[idx]
    base = project_points(frames, spec.elev, spec.azim)
    _, _, span = _bounds(base)
    spacing = 0.7 * span
    coords = base.copy()
    coords[..., 0] += spacing * np.arange(len(idx))[:, None]

    lo, hi, _ = _bounds(coords)
    width = max(2.0, min(24.0, 0.02 * (hi[0] - lo[0]) / max(hi[1] - lo[1], 1e-6) * 100))
    fig, ax = plt.subplots(figsize=(width, 2.4), dpi=100)
    cmap = plt.get_cmap("viridis")
    for i in range(len(idx)):
        frac = i / max(len(idx) - 1, 1)
        _draw_pose(ax, coords[i], cmap(frac), _fade_alpha(i, len(idx)))
    ax.set_xlim(lo[0], hi[0])
    ax.set_ylim(lo[1], hi[1])
    ax.set_aspect("equal")
    ax.axis("off")
    fig.tight_layout(pad=0.2)
    return fig, coords


def _render_strip(positions: np.ndarray, spec: RenderSpec) -> None:
    fig, _ = strip_figure(positions, spec)
    try:
        fig.savefig(spec.output)
    finally:
        plt.close(fig)


def _frame_image(pts2d: np.ndarray, lo, hi) -> Image.Image:
    fig, ax = plt.subplots(figsize=(3.2, 3.2), dpi=100)
    try:
        _draw_pose(ax, pts2d, "tab:blue", 1.0)
        ax.set_xlim(lo[0], hi[0])
        ax.set_ylim(lo[1], hi[1])
        ax.set_aspect("equal")
        ax.axis("off")
        fig.tight_layout(pad=0.2)
        fig.canvas.draw()
        rgba = np.asarray(fig.canvas.buffer_rgba())
        return Image.fromarray(rgba).convert("P", palette=Image.ADAPTIVE)
    finally:
        plt.close(fig)


def _render_animation(positions: np.ndarray, fps: float,
                      spec: RenderSpec) -> None:
    idx = select_frames(positions.shape[0], spec.stride)
    coords = project_points(positions[idx], spec.elev, spec.azim)
    lo, hi, _ = _bounds(coords)
    images = [_frame_image(coords[i], lo, hi) for i in range(len(idx))]
    duration = max(int(round(1000.0 * spec.stride / fps)), 20)
    images[0].save(spec.output, save_all=True, append_images=images[1:],
                   duration=duration, loop=0)


def render(spec: RenderSpec) -> Path:
    """Render the sidecar named by the spec; returns the output path."""
    positions, fps = load_sidecar(spec.input)
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    if spec.strip:
        _render_strip(positions, spec)
    else:
        _render_animation(positions, fps, spec)
    return out
