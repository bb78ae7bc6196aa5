"""2D-to-3D pose lifting with prototype memory, verifiable end to end."""

from .autodiff import (DimensionError, NumericError, TapeError, Tensor,
                       backward, no_grad)
from .model import ModelConfig, PoseLiftModel, pose_loss
from .skeleton import (BoneConstraints, Camera, PoseSequence, Skeleton,
                       default_skeleton, generate_corpus,
                       generate_synthetic_sequence, normalize_inputs)
from .train import TrainSettings, evaluate_checkpoint, train

__all__ = [
    "BoneConstraints", "Camera", "DimensionError", "ModelConfig",
    "NumericError", "PoseLiftModel", "PoseSequence", "Skeleton", "TapeError",
    "Tensor", "TrainSettings", "backward", "default_skeleton",
    "evaluate_checkpoint", "generate_corpus", "generate_synthetic_sequence",
    "no_grad", "normalize_inputs", "pose_loss", "train",
]

__version__ = "0.1.0"
