"""Pose and motion representation: 147-dim pose vectors, 6D rotation math,
forward kinematics over a fixed 24-joint skeleton, and motion file IO.

A pose packs the root translation (3 values, meters) followed by 24 joint
rotations in the 6D representation (first two columns of the rotation
matrix), 3 + 24*6 = 147 values total. Joint rotations are relative to the
parent joint; joint ordering follows the standard SMPL index order and is
fixed for this engine (documented in DEFAULT_PARENTS below).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import torch

from .errors import DimensionError, ParseError, ValidationError

NUM_JOINTS = 24
POSE_DIM = 3 + NUM_JOINTS * 6  # 147
DEFAULT_FPS = 20.0

# SMPL joint order:
#  0 pelvis, 1 l_hip, 2 r_hip, 3 spine1, 4 l_knee, 5 r_knee, 6 spine2,
#  7 l_ankle, 8 r_ankle, 9 spine3, 10 l_foot, 11 r_foot, 12 neck,
# 13 l_collar, 14 r_collar, 15 head, 16 l_shoulder, 17 r_shoulder,
# 18 l_elbow, 19 r_elbow, 20 l_wrist, 21 r_wrist, 22 l_hand, 23 r_hand
DEFAULT_PARENTS = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17,
    18, 19, 20, 21,
]

# Bone offsets in meters for a roughly human-proportioned figure. Only used
# for metrics and visualization, so proportions matter more than realism.
DEFAULT_OFFSETS = [
    [0.00, 0.00, 0.00],    # pelvis (root)
    [0.09, -0.07, 0.00],   # l_hip
    [-0.09, -0.07, 0.00],  # r_hip
    [0.00, 0.12, 0.00],    # spine1
    [0.00, -0.40, 0.00],   # l_knee
    [0.00, -0.40, 0.00],   # r_knee
    [0.00, 0.13, 0.00],    # spine2
    [0.00, -0.42, 0.00],   # l_ankle
    [0.00, -0.42, 0.00],   # r_ankle
    [0.00, 0.06, 0.00],    # spine3
    [0.00, -0.06, 0.13],   # l_foot
    [0.00, -0.06, 0.13],   # r_foot
    [0.00, 0.21, 0.00],    # neck
    [0.08, 0.12, 0.00],    # l_collar
    [-0.08, 0.12, 0.00],   # r_collar
    [0.00, 0.09, 0.00],    # head
    [0.11, 0.02, 0.00],    # l_shoulder
    [-0.11, 0.02, 0.00],   # r_shoulder
    [0.26, 0.00, 0.00],    # l_elbow
    [-0.26, 0.00, 0.00],   # r_elbow
    [0.25, 0.00, 0.00],    # l_wrist
    [-0.25, 0.00, 0.00],   # r_wrist
    [0.08, 0.00, 0.00],    # l_hand
    [-0.08, 0.00, 0.00],   # r_hand
]


@dataclass(frozen=True)
class Skeleton:
    """Kinematic tree: parent indices (-1 for the root) and bone offsets."""

    parents: tuple
    offsets: torch.Tensor  # (J, 3) float64

    def __post_init__(self):
        if len(self.parents) != self.offsets.shape[0]:
            raise DimensionError("parents and offsets disagree on joint count")
        for j, p in enumerate(self.parents):
            if p >= j:
                raise ValidationError("parents must precede children in index order")


def default_skeleton() -> Skeleton:
    return Skeleton(
        parents=tuple(DEFAULT_PARENTS),
        offsets=torch.tensor(DEFAULT_OFFSETS, dtype=torch.float64),
    )


@dataclass(frozen=True)
class Pose:
    root_translation: torch.Tensor  # (3,)
    joint_rotations: torch.Tensor   # (24, 6)

    def to_vector(self) -> torch.Tensor:
        return torch.cat([self.root_translation.reshape(3),
                          self.joint_rotations.reshape(NUM_JOINTS * 6)])

    @classmethod
    def from_vector(cls, v: torch.Tensor) -> "Pose":
        if v.shape != (POSE_DIM,):
            raise DimensionError(f"pose vector must have shape ({POSE_DIM},), got {tuple(v.shape)}")
        return cls(v[:3], v[3:].reshape(NUM_JOINTS, 6))


@dataclass
class MotionSequence:
    """frames x D tensor with a valid length; frames beyond valid_len are padding."""

    data: torch.Tensor
    valid_len: int = -1
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        if self.data.ndim != 2:
            raise DimensionError("motion data must be 2-D (frames x dims)")
        if self.valid_len < 0:
            self.valid_len = self.data.shape[0]
        if self.valid_len > self.data.shape[0]:
            raise DimensionError("valid_len exceeds frame count")
        if self.fps <= 0:
            raise ValidationError("fps must be positive")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    def valid(self) -> torch.Tensor:
        return self.data[: self.valid_len]

    def with_data(self, data: torch.Tensor) -> "MotionSequence":
        if data.shape != self.data.shape:
            raise DimensionError("replacement data must keep the same shape")
        return replace(self, data=data)


# ---------------------------------------------------------------------------
# 6D rotation representation


def _normalize(v: torch.Tensor, eps: float = 1e-12):
    n = torch.linalg.norm(v, dim=-1, keepdim=True)
    return v / torch.clamp(n, min=eps), n.squeeze(-1)


def rot6d_to_matrix(r: torch.Tensor) -> torch.Tensor:
    """Gram-Schmidt recovery of a rotation matrix from its first two columns.

    Accepts (..., 6). Degenerate inputs (zero or parallel vectors) fall back
    to an identity-style completion with a warning instead of raising.
    """
    if r.shape[-1] != 6:
        raise DimensionError(f"6D rotation input must end in dim 6, got {tuple(r.shape)}")
    a1, a2 = r[..., 0:3], r[..., 3:6]
    b1, n1 = _normalize(a1)
    degenerate1 = n1 < 1e-8
    if bool(degenerate1.any()):
        warnings.warn("degenerate 6D rotation (zero first vector); using identity completion")
        e1 = torch.zeros_like(b1)
        e1[..., 0] = 1.0
        b1 = torch.where(degenerate1.unsqueeze(-1), e1, b1)
    proj = (a2 * b1).sum(dim=-1, keepdim=True)
    u2 = a2 - proj * b1
    b2, n2 = _normalize(u2)
    degenerate2 = n2 < 1e-8
    if bool(degenerate2.any()):
        warnings.warn("degenerate 6D rotation (parallel vectors); using identity completion")
        # Pick the coordinate axis least aligned with b1 and re-orthogonalize.
        fallback = torch.zeros_like(b1)
        least = torch.argmin(b1.abs(), dim=-1, keepdim=True)
        fallback.scatter_(-1, least, 1.0)
        fb = fallback - (fallback * b1).sum(dim=-1, keepdim=True) * b1
        fb, _ = _normalize(fb)
        b2 = torch.where(degenerate2.unsqueeze(-1), fb, b2)
    b3 = torch.linalg.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def matrix_to_rot6d(R: torch.Tensor, tol: float = 1e-6) -> torch.Tensor:
    """First two columns of a rotation matrix, flattened to (..., 6)."""
    if R.shape[-2:] != (3, 3):
        raise DimensionError(f"expected (..., 3, 3) matrices, got {tuple(R.shape)}")
    eye = torch.eye(3, dtype=R.dtype, device=R.device)
    err = torch.linalg.norm(R.transpose(-1, -2) @ R - eye, dim=(-2, -1))
    if bool((err > tol).any()):
        raise ValidationError(f"input is not a rotation matrix (orthonormality error {float(err.max()):.3e})")
    if bool((torch.linalg.det(R) < 0).any()):
        raise ValidationError("input has negative determinant (reflection, not rotation)")
    return torch.cat([R[..., :, 0], R[..., :, 1]], dim=-1)


def axis_angle_to_matrix(axis: torch.Tensor, angle: torch.Tensor) -> torch.Tensor:
    """Rodrigues' formula; axis (..., 3) need not be unit length, angle (...)."""
    axis, _ = _normalize(axis)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = torch.zeros_like(x)
    K = torch.stack([
        torch.stack([zero, -z, y], dim=-1),
        torch.stack([z, zero, -x], dim=-1),
        torch.stack([-y, x, zero], dim=-1),
    ], dim=-2)
    eye = torch.eye(3, dtype=axis.dtype, device=axis.device).expand(K.shape)
    s = torch.sin(angle)[..., None, None]
    c = torch.cos(angle)[..., None, None]
    return eye + s * K + (1 - c) * (K @ K)


# ---------------------------------------------------------------------------
# Forward kinematics


def forward_kinematics(pose: Pose, skel: Skeleton) -> torch.Tensor:
    """Global joint positions (J, 3); rotations compose down the tree."""
    J = len(skel.parents)
    rots = rot6d_to_matrix(pose.joint_rotations.to(skel.offsets.dtype))
    pos = torch.zeros(J, 3, dtype=skel.offsets.dtype)
    glob = torch.zeros(J, 3, 3, dtype=skel.offsets.dtype)
    for j, p in enumerate(skel.parents):
        if p < 0:
            pos[j] = pose.root_translation.to(skel.offsets.dtype)
            glob[j] = rots[j]
        else:
            pos[j] = pos[p] + glob[p] @ skel.offsets[j]
            glob[j] = glob[p] @ rots[j]
    return pos


def motion_joint_positions(m: MotionSequence, skel: Skeleton | None = None) -> torch.Tensor:
    """FK per valid frame: (valid_len, J, 3)."""
    skel = skel or default_skeleton()
    frames = []
    for f in range(m.valid_len):
        frames.append(forward_kinematics(Pose.from_vector(m.data[f]), skel))
    return torch.stack(frames) if frames else torch.zeros(0, len(skel.parents), 3)


# ---------------------------------------------------------------------------
# Motion file IO
#
# Schema: {"fps": number, "dims": int, "valid_len": int, "frames": [[...]]}.
# "frames" rows all have length "dims"; rows beyond valid_len are padding.


def save_motion(m: MotionSequence, path) -> None:
    payload = {
        "fps": m.fps,
        "dims": m.dims,
        "valid_len": m.valid_len,
        "frames": m.data.to(torch.float64).tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_motion(path, expected_dims: int | None = POSE_DIM) -> MotionSequence:
    """Load a motion JSON file; pass expected_dims=None to accept any width."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}") from e
    if not isinstance(payload, dict):
        raise ParseError(f"{path}: / must be a JSON object")
    if "frames" not in payload:
        raise ParseError(f"{path}: /frames is required")
    frames = payload["frames"]
    if not isinstance(frames, list) or not all(isinstance(r, list) for r in frames):
        raise ParseError(f"{path}: /frames must be a list of rows")
    dims = payload.get("dims")
    if dims is None:
        dims = len(frames[0]) if frames else (expected_dims or 0)
    if expected_dims is not None and dims != expected_dims:
        raise ParseError(
            f"{path}: /dims is {dims}, expected {expected_dims} "
            f"(pass a matching dims override to accept other widths)")
    for i, row in enumerate(frames):
        if len(row) != dims:
            raise ParseError(f"{path}: /frames/{i} has length {len(row)}, expected {dims}")
    if "fps" in payload:
        fps = float(payload["fps"])
    else:
        warnings.warn(f"{path}: missing fps, defaulting to {DEFAULT_FPS}")
        fps = DEFAULT_FPS
    valid_len = int(payload.get("valid_len", len(frames)))
    if not (0 <= valid_len <= len(frames)):
        raise ParseError(f"{path}: /valid_len out of range")
    data = torch.tensor(frames, dtype=torch.float64).reshape(len(frames), dims)
    return MotionSequence(data=data, valid_len=valid_len, fps=fps)


def load_annotations(path) -> list[dict]:
    """Annotation JSONL: one {"motion": file, "text": prompt} per line."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
            if "motion" not in rec or "text" not in rec:
                raise ParseError(f"{path}:{lineno}: record needs 'motion' and 'text' keys")
            records.append(rec)
    return records
