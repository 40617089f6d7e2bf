"""Learning-based trajectory refinement: network, features, training."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .estimator import TrajectoryOptimizer
from .features import FrameFeatures, build_neighborhoods, extract_features
from .layers import (
    BidirectionalCrossAttention,
    MultiheadAttention,
    PointTokenEncoder,
    SelfAttentionBlock,
    sinusoidal_encoding,
)
from .model import RefinerConfig, TrajectoryRefiner, refine_trajectory
from .train import (
    TrainConfig,
    TrainItem,
    desk_train_config,
    load_training_items,
    read_loss_curve,
    train,
    write_loss_curve,
)

__all__ = [
    "BidirectionalCrossAttention",
    "CheckpointError",
    "FrameFeatures",
    "MultiheadAttention",
    "PointTokenEncoder",
    "RefinerConfig",
    "SelfAttentionBlock",
    "TrainConfig",
    "TrainItem",
    "TrajectoryOptimizer",
    "TrajectoryRefiner",
    "build_neighborhoods",
    "desk_train_config",
    "extract_features",
    "load_checkpoint",
    "load_training_items",
    "read_loss_curve",
    "refine_trajectory",
    "save_checkpoint",
    "sinusoidal_encoding",
    "train",
    "write_loss_curve",
]
