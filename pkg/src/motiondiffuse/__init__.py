"""Text-conditioned diffusion engine for variable-length 3D human pose
sequences: training, DDPM/DDIM sampling with classifier-free guidance,
mask-based editing, and a full evaluation-metric suite."""

from .denoiser import DenoiserConfig, DenoiserOutput, MotionDenoiser
from .diffusion import (LossBreakdown, PosteriorGaussian, diffuse, loss_terms,
                        mean_from_epsilon, posterior, variance_from_v)
from .editor import EditMask, edit, inbetween_mask, joint_mask, prediction_mask
from .motion import (MotionSequence, Pose, Skeleton, default_skeleton,
                     forward_kinematics, load_motion, matrix_to_rot6d,
                     rot6d_to_matrix, save_motion)
from .sampler import SampleSpec, guided_epsilon, respace, sample
from .schedule import DiffusionSchedule, build_cosine_schedule
from .text import EmbeddingFileEncoder, TextContext, ToyTextEncoder
from .trainer import TextMotionModel, TrainConfig, Trainer, load_model

__all__ = [
    "DenoiserConfig", "DenoiserOutput", "MotionDenoiser",
    "LossBreakdown", "PosteriorGaussian", "diffuse", "loss_terms",
    "mean_from_epsilon", "posterior", "variance_from_v",
    "EditMask", "edit", "inbetween_mask", "joint_mask", "prediction_mask",
    "MotionSequence", "Pose", "Skeleton", "default_skeleton",
    "forward_kinematics", "load_motion", "matrix_to_rot6d", "rot6d_to_matrix",
    "save_motion",
    "SampleSpec", "guided_epsilon", "respace", "sample",
    "DiffusionSchedule", "build_cosine_schedule",
    "EmbeddingFileEncoder", "TextContext", "ToyTextEncoder",
    "TextMotionModel", "TrainConfig", "Trainer", "load_model",
]
